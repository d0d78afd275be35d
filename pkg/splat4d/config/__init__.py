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
"""Splat4D Config."""

import copy
import logging
import os

try:
  import tomllib
except ModuleNotFoundError:
  import tomli as tomllib
import tomli_w

CONFIG_FILE = '.splat4d.toml'
# Look in homedir first, then the package dir
CONFIG_PATH = [
    os.path.expanduser('~'),
    os.path.dirname(os.path.abspath(__file__)),
]
# Environment fallbacks: variable -> (section, key)
CONFIG_ENV = {
    'SP4D_THREADS': ('renderer', 'threads'),
    'SP4D_SEED': ('train', 'seed'),
}
TEMPLATE_FILE = os.path.join(
    os.path.dirname(os.path.abspath(__file__)), 'config_template.toml')
RESOLVED_CONFIG_FILE = 'config.toml'

DEFAULTS = {
    'train': {
        'iterations': 3000,
        'learning_rate': 1.6e-3,
        'lr_position': 1.0,
        'lr_position_final': 0.01,
        'lr_rotor': 0.1,
        'lr_scales': 0.5,
        'lr_opacity': 5.0,
        'lr_sh': 0.05,
        'lr_phases': 0.05,
        'densify_interval': 100,
        'densify_until': 0.5,
        'grad_threshold': 2e-4,
        'prune_opacity': 0.005,
        'split_fraction': 0.01,
        'warmup': 500,
        'sh_unlock_interval': 1000,
        'eval_interval': 500,
        'log_interval': 100,
        'init_frames': 4,
        'init_points': 2000,
        'seed': 0,
    },
    'losses': {
        'lambda_ssim': 0.2,
        'lambda_enac': 0.05,
        'lambda_depth': 0.1,
        'alpha_threshold': 0.5,
        'enac_detach_depth': False,
    },
    'appearance': {
        'sh_degree': 3,
        'temporal_degree': 2,
        'period': 1.0,
    },
    'renderer': {
        'tile_size': 16,
        'dilation': 0.3,
        'cull_threshold': 1e-4,
        'support_sigma': 6.0,
        'alpha_epsilon': 1e-6,
        'threads': 1,
    },
    'dataset': {
        'path': '',
        'split_every': 8,
    },
    'synthetic': {
        'gaussians': 200,
        'motion': 'oscillating',
        'width': 64,
        'height': 64,
        'frames': 20,
        'orbit_degrees': 15.0,
        'distance': 3.0,
        'amplitude': 0.15,
        'segments': 8,
        'tool_mask': False,
    },
    'output': {
        'directory': 'splat4d_output',
    },
}

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')

log = logging.getLogger('splat4d.config')


class ConfigError(ValueError):
  """Raised for unknown keys or badly typed values."""


def _check_value(section, key, value):
  """Validates a value against the type of its default.

  Returns:
    The value, with ints widened to float where the default is a float.
  """
  default = DEFAULTS[section][key]
  name = '{0:s}.{1:s}'.format(section, key)
  if isinstance(default, bool):
    valid = isinstance(value, bool)
  elif isinstance(default, int):
    valid = isinstance(value, int) and not isinstance(value, bool)
  elif isinstance(default, float):
    valid = isinstance(value, (int, float)) and not isinstance(value, bool)
    value = float(value) if valid else value
  else:
    valid = isinstance(value, str)
  if not valid:
    raise ConfigError('{0:s} expects {1:s}, got {2!r}'.format(
        name, type(default).__name__, value))
  return value


def coerce_value(section, key, text):
  """Converts a command-line string to the type of a config key.

  Args:
    section (str): Config section.
    key (str): Key within the section.
    text (str): Raw value.

  Returns:
    The typed value.

  Raises:
    ConfigError: If the key is unknown or the text does not parse.
  """
  if section not in DEFAULTS or key not in DEFAULTS[section]:
    raise ConfigError('Unknown config key {0:s}.{1:s}'.format(section, key))
  default = DEFAULTS[section][key]
  try:
    if isinstance(default, bool):
      lowered = text.strip().lower()
      if lowered in _TRUE:
        return True
      if lowered in _FALSE:
        return False
      raise ValueError('not a boolean')
    if isinstance(default, int):
      return int(text)
    if isinstance(default, float):
      return float(text)
  except ValueError as e:
    raise ConfigError('Bad value {0!r} for {1:s}.{2:s}: {3!s}'.format(
        text, section, key, e)) from e
  return text


def merge(config, values, source):
  """Merges parsed TOML tables into a config in place.

  Raises:
    ConfigError: On unknown sections, unknown keys or wrong types.
  """
  for section, table in values.items():
    if section not in DEFAULTS:
      raise ConfigError('Unknown config section [{0:s}] in {1:s}'.format(
          section, source))
    if not isinstance(table, dict):
      raise ConfigError('[{0:s}] in {1:s} must be a table'.format(
          section, source))
    for key, value in table.items():
      if key not in DEFAULTS[section]:
        raise ConfigError('Unknown config key {0:s}.{1:s} in {2:s}'.format(
            section, key, source))
      config[section][key] = _check_value(section, key, value)
  return config


def parse_override(override):
  """Splits 'section.key=value' into its parts."""
  name, separator, text = override.partition('=')
  parts = name.strip().split('.')
  if not separator or len(parts) != 2:
    raise ConfigError(
        'Overrides must look like section.key=value, got {0!r}'.format(
            override))
  return parts[0], parts[1], text.strip()


def find_config_file():
  """Returns the first config file in the default locations, or None."""
  for path in CONFIG_PATH:
    candidate = os.path.join(path, CONFIG_FILE)
    if os.path.exists(candidate):
      return candidate
  return None


def load_config(config_file=None, overrides=None):
  """Finds the Splat4D config file and loads it.

  Values come from the defaults, then the config file (the given path, else
  the first .splat4d.toml in CONFIG_PATH), then environment fallbacks for
  keys the file leaves unset, then the overrides.

  Args:
    config_file (str): Full path to a config file.
    overrides (list[str]): 'section.key=value' strings.

  Returns:
    dict: One table per section.

  Raises:
    ConfigError: If the file is unreadable or holds unknown or badly typed
        keys, or an override is malformed.
  """
  config = copy.deepcopy(DEFAULTS)
  from_file = {}
  if not config_file:
    log.debug('No config file specified. Looking in default locations.')
    config_file = find_config_file()
  if config_file:
    log.debug('Loading config from {0:s}'.format(config_file))
    try:
      with open(config_file, 'rb') as config_handle:
        from_file = tomllib.load(config_handle)
    except OSError as e:
      raise ConfigError('Could not load config file {0:s}: {1!s}'.format(
          config_file, e)) from e
    except tomllib.TOMLDecodeError as e:
      raise ConfigError('Malformed config file {0:s}: {1!s}'.format(
          config_file, e)) from e
    merge(config, from_file, config_file)
  else:
    log.debug('Config file not found. Using defaults.')

  for variable, (section, key) in CONFIG_ENV.items():
    text = os.environ.get(variable)
    if text and key not in from_file.get(section, {}):
      config[section][key] = coerce_value(section, key, text)

  for override in overrides or []:
    section, key, text = parse_override(override)
    config[section][key] = coerce_value(section, key, text)
  return config


def write_config(config, path):
  """Writes a resolved config as TOML."""
  with open(path, 'wb') as config_handle:
    tomli_w.dump(config, config_handle)
