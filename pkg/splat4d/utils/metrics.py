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
"""Image quality metrics: SSIM (with its gradient), PSNR and normal error."""

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 100.0


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
  """Normalized 1D Gaussian taps."""
  offsets = np.arange(size) - (size - 1) / 2.0
  taps = np.exp(-0.5 * offsets * offsets / (sigma * sigma))
  return taps / np.sum(taps)


def _blur(image, taps):
  """Separable zero-padded filtering over the two image axes."""
  blurred = ndimage.correlate1d(image, taps, axis=0, mode='constant', cval=0.0)
  return ndimage.correlate1d(blurred, taps, axis=1, mode='constant', cval=0.0)


def _pixel_weights(shape, mask):
  """Per-entry averaging weights over valid pixels and channels."""
  height, width, channels = shape
  if mask is None:
    mask = np.ones((height, width), dtype=bool)
  mask = np.asarray(mask, dtype=bool)
  count = np.count_nonzero(mask) * channels
  weights = np.repeat(mask[..., None].astype(np.float64), channels, axis=2)
  return weights, count


def _as_image(image):
  image = np.asarray(image, dtype=np.float64)
  if image.ndim == 2:
    image = image[..., None]
  return image


class SSIMCache():
  """Local statistics kept by ssim_map for ssim_backward."""

  def __init__(self, x, y, mu_x, mu_y, a1, a2, b1, b2, value, taps):
    self.x = x
    self.y = y
    self.mu_x = mu_x
    self.mu_y = mu_y
    self.a1 = a1
    self.a2 = a2
    self.b1 = b1
    self.b2 = b2
    self.value = value
    self.taps = taps


def ssim_map(x, y):
  """Per-pixel SSIM between two images.

  Args:
    x (np.ndarray): Image (H, W) or (H, W, C), the differentiated argument.
    y (np.ndarray): Reference image with the same shape.

  Returns:
    Tuple of (SSIM map (H, W, C), SSIMCache).
  """
  x = _as_image(x)
  y = _as_image(y)
  if x.shape != y.shape:
    raise ValueError('SSIM shape mismatch: {0!s} vs {1!s}'.format(
        x.shape, y.shape))
  taps = gaussian_window()
  mu_x = _blur(x, taps)
  mu_y = _blur(y, taps)
  sigma_xx = _blur(x * x, taps) - mu_x * mu_x
  sigma_yy = _blur(y * y, taps) - mu_y * mu_y
  sigma_xy = _blur(x * y, taps) - mu_x * mu_y
  a1 = 2.0 * mu_x * mu_y + SSIM_C1
  a2 = 2.0 * sigma_xy + SSIM_C2
  b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
  b2 = sigma_xx + sigma_yy + SSIM_C2
  value = (a1 * a2) / (b1 * b2)
  return value, SSIMCache(x, y, mu_x, mu_y, a1, a2, b1, b2, value, taps)


def ssim_map_backward(grad_map, cache):
  """Gradient of a scalar w.r.t. x given its gradient w.r.t. the SSIM map."""
  grad_map = _as_image(grad_map)
  denominator = cache.b1 * cache.b2
  grad_mu_x = (
      2.0 * cache.mu_y * (cache.a2 - cache.a1) / denominator -
      cache.value * 2.0 * cache.mu_x * (1.0 / cache.b1 - 1.0 / cache.b2))
  grad_exx = -cache.value / cache.b2
  grad_exy = 2.0 * cache.a1 / denominator
  taps = cache.taps
  return (
      _blur(grad_map * grad_mu_x, taps) +
      2.0 * cache.x * _blur(grad_map * grad_exx, taps) +
      cache.y * _blur(grad_map * grad_exy, taps))


def ssim(x, y, mask=None):
  """Mean SSIM over valid pixels.

  Args:
    x (np.ndarray): Image (H, W, C).
    y (np.ndarray): Reference image.
    mask (np.ndarray): Optional boolean (H, W) of pixels to average over.

  Returns:
    float: Mean SSIM, 1.0 for an empty mask.
  """
  value, _ = ssim_map(x, y)
  weights, count = _pixel_weights(value.shape, mask)
  if not count:
    return 1.0
  return float(np.sum(value * weights) / count)


def ssim_backward(x, y, mask=None):
  """Mean SSIM and its gradient w.r.t. x.

  Returns:
    Tuple of (float, np.ndarray shaped like x).
  """
  shape = np.shape(x)
  value, cache = ssim_map(x, y)
  weights, count = _pixel_weights(value.shape, mask)
  if not count:
    return 1.0, np.zeros(shape)
  grad = ssim_map_backward(weights / count, cache)
  return float(np.sum(value * weights) / count), grad.reshape(shape)


def mse(x, y, mask=None):
  """Mean squared error over valid pixels and channels."""
  x = _as_image(x)
  y = _as_image(y)
  weights, count = _pixel_weights(x.shape, mask)
  if not count:
    return 0.0
  diff = x - y
  return float(np.sum(diff * diff * weights) / count)


def psnr(x, y, mask=None, max_value=1.0):
  """Peak signal-to-noise ratio in dB, capped at PSNR_CAP.

  Args:
    x (np.ndarray): Image in [0, max_value].
    y (np.ndarray): Reference image.
    mask (np.ndarray): Optional boolean (H, W) of pixels to include.
    max_value (float): Peak signal value.

  Returns:
    float: PSNR, PSNR_CAP for identical images.
  """
  error = mse(x, y, mask)
  if error <= 0.0:
    return PSNR_CAP
  return float(min(10.0 * np.log10(max_value * max_value / error), PSNR_CAP))


def angular_error(normals, reference, mask=None):
  """Mean angle in degrees between two unit normal maps.

  Args:
    normals (np.ndarray): Normals (H, W, 3).
    reference (np.ndarray): Reference normals (H, W, 3).
    mask (np.ndarray): Optional boolean (H, W) of pixels to include.

  Returns:
    float: Mean angle, NaN when no pixel is included.
  """
  normals = np.asarray(normals, dtype=np.float64)
  reference = np.asarray(reference, dtype=np.float64)
  if mask is None:
    mask = np.ones(normals.shape[:2], dtype=bool)
  mask = np.asarray(mask, dtype=bool)
  if not np.any(mask):
    return float('nan')
  cosines = np.clip(np.sum(normals[mask] * reference[mask], axis=-1), -1.0, 1.0)
  return float(np.degrees(np.mean(np.arccos(cosines))))
