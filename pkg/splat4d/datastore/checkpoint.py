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
"""Binary checkpoints of Gaussian clouds.

Layout (little-endian):
  header   magic b'SP4D', u32 version (major << 16 | minor), u64 count,
           u32 SH degree, u32 temporal degree, f64 period,
           u32 active SH degree, u64 training iteration
  records  count fixed-stride rows of f64: mu (4), q_left (4), q_right (4),
           log_s (4), opacity logit, SH coefficients, phases
  trailer  u32 CRC32 of header and records
"""

import logging
import os
import struct
import zlib

import numpy as np

from splat4d.model.appearance import AppearanceConfig
from splat4d.model.gaussian_field import GaussianCloud, PARAMETER_GROUPS

MAGIC = b'SP4D'
VERSION_MAJOR = 1
VERSION_MINOR = 0
VERSION = VERSION_MAJOR << 16 | VERSION_MINOR
HEADER = struct.Struct('<4sIQIIdIQ')
TRAILER = struct.Struct('<I')

log = logging.getLogger('splat4d.checkpoint')


class CheckpointError(RuntimeError):
  """Raised for unreadable checkpoints."""


class CheckpointVersionError(CheckpointError):
  """Raised for checkpoints written by a newer major version."""


class CheckpointTruncatedError(CheckpointError):
  """Raised when a checkpoint is shorter than its header claims."""


class CheckpointChecksumError(CheckpointError):
  """Raised when the CRC32 trailer does not match."""


class Checkpoint():
  """A loaded checkpoint.

  Attributes:
    cloud (GaussianCloud): Gaussians.
    iteration (int): Training iteration at save time.
    version (int): Format version of the file.
  """

  def __init__(self, cloud, iteration=0, version=VERSION):
    self.cloud = cloud
    self.iteration = iteration
    self.version = version


def _widths(config):
  return {
      'mu': 4,
      'q_left': 4,
      'q_right': 4,
      'log_s': 4,
      'opacity_logit': 1,
      'sh': config.num_coeffs * 3,
      'phases': config.temporal_degree
  }


def encode(cloud, iteration=0):
  """Serializes a cloud to checkpoint bytes."""
  config = cloud.config
  count = len(cloud)
  header = HEADER.pack(
      MAGIC, VERSION, count, config.sh_degree, config.temporal_degree,
      config.period, cloud.active_sh_degree, iteration)
  widths = _widths(config)
  records = np.concatenate([
      getattr(cloud, name).reshape(count, widths[name])
      for name in PARAMETER_GROUPS
  ], axis=1)
  body = header + np.ascontiguousarray(records, dtype='<f8').tobytes()
  return body + TRAILER.pack(zlib.crc32(body))


def decode(data, source='<bytes>'):
  """Parses checkpoint bytes.

  Args:
    data (bytes): File contents.
    source (str): Name used in error messages.

  Returns:
    Checkpoint: The decoded checkpoint.

  Raises:
    CheckpointError: On a bad magic number or inconsistent header.
    CheckpointVersionError: On a newer major version.
    CheckpointTruncatedError: If the file ends inside the header or records.
    CheckpointChecksumError: If the trailer does not match the contents.
  """
  if len(data) < HEADER.size + TRAILER.size:
    raise CheckpointTruncatedError(
        'Checkpoint {0:s} is truncated ({1:d} bytes)'.format(source, len(data)))
  (magic, version, count, sh_degree, temporal_degree, period, active_degree,
   iteration) = HEADER.unpack_from(data)
  if magic != MAGIC:
    raise CheckpointError('{0:s} is not a checkpoint'.format(source))
  if version >> 16 > VERSION_MAJOR:
    raise CheckpointVersionError(
        'Checkpoint {0:s} has version {1:d}.{2:d}, newest supported is '
        '{3:d}.x'.format(source, version >> 16, version & 0xffff,
                         VERSION_MAJOR))
  body = data[:-TRAILER.size]
  (checksum,) = TRAILER.unpack_from(data, len(data) - TRAILER.size)
  if zlib.crc32(body) != checksum:
    raise CheckpointChecksumError(
        'Checkpoint {0:s} failed its checksum'.format(source))

  try:
    config = AppearanceConfig(sh_degree, temporal_degree, period)
  except ValueError as e:
    raise CheckpointError(
        'Checkpoint {0:s} has an invalid appearance config'.format(
            source)) from e
  widths = _widths(config)
  stride = sum(widths.values())
  expected = HEADER.size + 8 * stride * count
  if len(body) != expected:
    raise CheckpointTruncatedError(
        'Checkpoint {0:s} holds {1:d} bytes of records, expected {2:d}'.format(
            source, len(body) - HEADER.size, expected - HEADER.size))
  if count:
    records = np.frombuffer(
        body, dtype='<f8', offset=HEADER.size).astype(np.float64).reshape(
            count, stride)
  else:
    records = np.zeros((0, stride))
  arrays = {}
  column = 0
  for name in PARAMETER_GROUPS:
    block = records[:, column:column + widths[name]]
    column += widths[name]
    if name == 'opacity_logit':
      arrays[name] = block[:, 0]
    elif name == 'sh':
      arrays[name] = block.reshape(count, config.num_coeffs, 3)
    else:
      arrays[name] = block
  cloud = GaussianCloud(config, active_sh_degree=active_degree, **arrays)
  return Checkpoint(cloud, iteration, version)


def save_checkpoint(cloud, path, iteration=0):
  """Writes a checkpoint file.

  Args:
    cloud (GaussianCloud): Gaussians.
    path (str): Output file.
    iteration (int): Training iteration stored in the header.
  """
  data = encode(cloud, iteration)
  directory = os.path.dirname(os.path.abspath(path))
  os.makedirs(directory, exist_ok=True)
  with open(path, 'wb') as output:
    output.write(data)
  log.debug('Saved {0:d} Gaussians to {1:s}'.format(len(cloud), path))


def read_checkpoint(path):
  """Loads a checkpoint with its metadata."""
  try:
    with open(path, 'rb') as checkpoint_file:
      data = checkpoint_file.read()
  except OSError as e:
    raise CheckpointError(
        'Could not read checkpoint {0:s}: {1!s}'.format(path, e)) from e
  return decode(data, path)


def load_checkpoint(path):
  """Loads the cloud stored in a checkpoint file."""
  return read_checkpoint(path).cloud
