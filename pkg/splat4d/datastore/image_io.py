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
"""Image readers and writers: 8-bit color, 16-bit depth, PFM and masks."""

import struct

import numpy as np
from PIL import Image
from PIL import PngImagePlugin

# Depth PNGs store millimeters.
DEPTH_PNG_SCALE = 1000.0
# gAMA chunk value for 1 / 2.2 in units of 1e-5.
SRGB_GAMMA = 45455


class ImageFormatError(ValueError):
  """Raised for unreadable or malformed image files."""


def _srgb_info():
  info = PngImagePlugin.PngInfo()
  info.add(b'sRGB', b'\x00')
  info.add(b'gAMA', struct.pack('>I', SRGB_GAMMA))
  return info


def to_uint8(image):
  """Quantizes a [0, 1] image to 8 bits."""
  return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_color(path):
  """Reads a PNG as float RGB in [0, 1] (H, W, 3)."""
  try:
    with Image.open(path) as image:
      rgb = np.asarray(image.convert('RGB'), dtype=np.float64)
  except (OSError, ValueError) as e:
    raise ImageFormatError(
        'Could not read image {0:s}: {1!s}'.format(str(path), e)) from e
  return rgb / 255.0


def write_color(path, rgb):
  """Writes float RGB in [0, 1] as an 8-bit sRGB PNG."""
  Image.fromarray(to_uint8(rgb)).save(
      path, format='PNG', pnginfo=_srgb_info())


def write_normal(path, normals):
  """Writes unit normals mapped n -> 0.5 n + 0.5."""
  write_color(path, 0.5 * np.asarray(normals) + 0.5)


def write_gray(path, values):
  """Writes a [0, 1] single-channel image as 8-bit PNG."""
  Image.fromarray(to_uint8(values)).save(path, format='PNG')


def read_mask(path):
  """Reads a mask PNG; nonzero pixels are True."""
  try:
    with Image.open(path) as image:
      values = np.asarray(image.convert('L'))
  except (OSError, ValueError) as e:
    raise ImageFormatError(
        'Could not read mask {0:s}: {1!s}'.format(str(path), e)) from e
  return values > 0


def write_mask(path, mask):
  """Writes a boolean mask as a 0/255 PNG."""
  values = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
  Image.fromarray(values).save(path, format='PNG')


def read_depth_png(path):
  """Reads a 16-bit millimeter depth PNG as meters; 0 stays invalid."""
  try:
    with Image.open(path) as image:
      values = np.asarray(image, dtype=np.float64)
  except (OSError, ValueError) as e:
    raise ImageFormatError(
        'Could not read depth {0:s}: {1!s}'.format(str(path), e)) from e
  if values.ndim != 2:
    raise ImageFormatError(
        'Depth image {0:s} must have one channel'.format(str(path)))
  return values / DEPTH_PNG_SCALE


def write_depth_png(path, depth):
  """Writes meters as a 16-bit millimeter PNG."""
  millimeters = np.round(np.clip(depth, 0.0, 65.535) * DEPTH_PNG_SCALE)
  Image.fromarray(millimeters.astype(np.uint16)).save(path, format='PNG')


def read_pfm(path):
  """Reads a PFM file.

  Args:
    path (str): File path.

  Returns:
    np.ndarray: (H, W) for 'Pf' or (H, W, 3) for 'PF', float64, top row first.

  Raises:
    ImageFormatError: On a malformed header or short data.
  """
  with open(path, 'rb') as pfm:
    try:
      kind = pfm.readline().strip()
      width, height = (int(v) for v in pfm.readline().split())
      scale = float(pfm.readline().strip())
    except ValueError as e:
      raise ImageFormatError(
          'Malformed PFM header in {0:s}'.format(str(path))) from e
    data = pfm.read()
  if kind == b'PF':
    channels = 3
  elif kind == b'Pf':
    channels = 1
  else:
    raise ImageFormatError('Not a PFM file: {0:s}'.format(str(path)))
  dtype = '<f4' if scale < 0 else '>f4'
  count = width * height * channels
  if len(data) < 4 * count:
    raise ImageFormatError('Truncated PFM data in {0:s}'.format(str(path)))
  values = np.frombuffer(data, dtype=dtype, count=count).astype(np.float64)
  shape = (height, width) if channels == 1 else (height, width, 3)
  return np.flipud(values.reshape(shape)).copy()


def write_pfm(path, image):
  """Writes a (H, W) or (H, W, 3) float image as little-endian PFM."""
  image = np.asarray(image, dtype=np.float64)
  kind = 'Pf' if image.ndim == 2 else 'PF'
  height, width = image.shape[:2]
  header = '{0:s}\n{1:d} {2:d}\n-1.0\n'.format(kind, width, height)
  with open(path, 'wb') as pfm:
    pfm.write(header.encode('ascii'))
    pfm.write(np.flipud(image).astype('<f4').tobytes())


def read_depth(path):
  """Reads depth in meters from a .pfm or 16-bit .png file."""
  if str(path).lower().endswith('.pfm'):
    return read_pfm(path)
  return read_depth_png(path)
