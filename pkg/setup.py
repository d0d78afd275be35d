#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Copyright 2026 The Splat4D Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Splat4D setup file."""

import sys

try:
  from setuptools import find_packages, setup
except ImportError:
  from distutils.core import find_packages, setup

import splat4d

version_tuple = (sys.version_info[0], sys.version_info[1])
if version_tuple < (3, 8):
  print((
      'Unsupported Python version: {0:s}, version 3.8 or higher '
      'required.').format(sys.version))
  sys.exit(1)

sys.path.insert(0, '.')

SPLAT4D_DESCRIPTION = (
    'Splat4D is a differentiable 4D Gaussian splatting library and tool for '
    'reconstructing dynamic scenes from posed RGB-D video.')

requirements = []
with open('requirements.txt', 'r') as f:
  requirements = f.read().splitlines()
setup(
    name='Splat4D',
    version=splat4d.__version__,
    description=SPLAT4D_DESCRIPTION,
    long_description=SPLAT4D_DESCRIPTION,
    license='Apache License, Version 2.0',
    maintainer='Splat4D development team',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
    ],
    packages=find_packages(),
    package_data={'splat4d.config': ['config_template.toml']},
    data_files=[
        ('share/doc/splat4d', ['README.md']),
    ],
    install_requires=requirements,
    extras_require={
        'dev': ['mock', 'pytest', 'yapf', 'coverage']
    },
    entry_points={'console_scripts': ['splat4d=splat4d.s4dcli:main']},
    python_requires='>=3.8',
)
