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
"""Training objectives and their gradients.

The total loss of a frame is the photometric render loss (L1 mixed with
D-SSIM, plus optional depth L1) and the normal alignment term, which
compares normals derived from the rendered depth with the composited
Gaussian normals.
"""

import logging

import numpy as np

from splat4d.model.gaussian_field import PARAMETER_GROUPS
from splat4d.utils import metrics
from splat4d.utils import renderer

log = logging.getLogger('splat4d.losses')


class LossShapeError(ValueError):
  """Raised when targets do not match the rendered frame."""


class GradientError(RuntimeError):
  """Raised when a backward pass produces a non-finite gradient.

  Attributes:
    group (str): Parameter group holding the bad entry.
    index (int): Offending Gaussian index.
  """

  def __init__(self, group, index):
    super().__init__(
        'Non-finite gradient in {0:s} of Gaussian {1:d}'.format(group, index))
    self.group = group
    self.index = index


class LossWeights():
  """Weights of the loss terms.

  Attributes:
    ssim (float): D-SSIM share of the photometric loss.
    enac (float): Weight of the normal alignment term.
    depth (float): Weight of the depth L1 term.
    alpha_threshold (float): Coverage above which normal alignment applies.
    enac_detach_depth (bool): Treat depth-derived normals as constants.
  """

  def __init__(
      self, ssim=0.2, enac=0.05, depth=0.1, alpha_threshold=0.5,
      enac_detach_depth=False):
    self.ssim = float(ssim)
    self.enac = float(enac)
    self.depth = float(depth)
    self.alpha_threshold = float(alpha_threshold)
    self.enac_detach_depth = bool(enac_detach_depth)
    for name in ('ssim', 'enac', 'depth', 'alpha_threshold'):
      value = getattr(self, name)
      if not np.isfinite(value) or value < 0.0:
        raise ValueError(
            'Loss weight {0:s} must be finite and nonnegative, got {1!s}'.format(
                name, value))
    if self.ssim > 1.0:
      raise ValueError('Loss weight ssim must be at most 1')

  @classmethod
  def from_config(cls, section):
    """Builds weights from the [losses] config table."""
    return cls(
        ssim=section['lambda_ssim'], enac=section['lambda_enac'],
        depth=section['lambda_depth'],
        alpha_threshold=section['alpha_threshold'],
        enac_detach_depth=section['enac_detach_depth'])

  def replace(self, **kwargs):
    """Returns a copy with some weights changed."""
    values = dict(vars(self))
    values.update(kwargs)
    return LossWeights(**values)


class FrameTargets():
  """Supervision for one frame.

  Attributes:
    color (np.ndarray): Target RGB in [0, 1] (H, W, 3).
    depth (np.ndarray): Optional target depth (H, W); zero marks invalid.
    tool_mask (np.ndarray): Optional boolean (H, W); True pixels are ignored.
  """

  def __init__(self, color, depth=None, tool_mask=None):
    self.color = np.asarray(color, dtype=np.float64)
    self.depth = None if depth is None else np.asarray(depth, dtype=np.float64)
    self.tool_mask = (
        None if tool_mask is None else np.asarray(tool_mask, dtype=bool))

  def validate(self, height, width):
    """Checks every target against the frame size.

    Raises:
      LossShapeError: On any mismatch.
    """
    expected = {
        'color': (height, width, 3),
        'depth': (height, width),
        'tool_mask': (height, width)
    }
    for name, shape in expected.items():
      value = getattr(self, name)
      if value is not None and value.shape != shape:
        raise LossShapeError(
            'Target {0:s} has shape {1!s}, expected {2!s}'.format(
                name, value.shape, shape))

  @property
  def valid(self):
    """Pixels that take part in the photometric losses."""
    if self.tool_mask is None:
      return np.ones(self.color.shape[:2], dtype=bool)
    return ~self.tool_mask


class GradientBuffer():
  """Per-Gaussian partial derivatives of the loss.

  Attributes:
    mu, q_left, q_right, log_s, opacity_logit, sh, phases (np.ndarray):
        Gradients shaped like the matching cloud arrays.
    screen_mean (np.ndarray): Gradient w.r.t. projected means (N, 2).
    visible (np.ndarray): Gaussians that reached the image (N,).
  """

  def __init__(self, grads):
    for name in PARAMETER_GROUPS:
      setattr(self, name, grads[name])
    count = grads['mu'].shape[0]
    self.screen_mean = grads.get('screen_mean', np.zeros((count, 2)))
    self.visible = grads.get('visible', np.zeros(count, dtype=bool))

  @classmethod
  def zeros_like(cls, cloud):
    return cls({
        name: np.zeros_like(value) for name, value in cloud.parameters().items()
    })

  def __len__(self):
    return self.mu.shape[0]

  @property
  def rotor(self):
    """Rotor gradient as (N, 8): left then right quaternion."""
    return np.concatenate([self.q_left, self.q_right], axis=1)

  def items(self):
    """Yields (group name, gradient array) pairs."""
    for name in PARAMETER_GROUPS:
      yield name, getattr(self, name)

  def scaled_add(self, other, scale=1.0):
    """Returns self + scale * other."""
    combined = {
        name: value + scale * getattr(other, name) for name, value in self.items()
    }
    combined['screen_mean'] = self.screen_mean + scale * other.screen_mean
    combined['visible'] = self.visible | other.visible
    return GradientBuffer(combined)

  def check_finite(self):
    """Raises GradientError naming the first non-finite entry."""
    for name, value in self.items():
      if not value.size:
        continue
      bad = ~np.isfinite(value.reshape(value.shape[0], -1))
      if np.any(bad):
        index = int(np.flatnonzero(np.any(bad, axis=1))[0])
        raise GradientError(name, index)


class DepthNormalCache():
  """Intermediates of normals_from_depth for its backward pass."""

  def __init__(self, rays, right, down, cross, length, sign, valid):
    self.rays = rays
    self.right = right
    self.down = down
    self.cross = cross
    self.length = length
    self.sign = sign
    self.valid = valid


def _pixel_rays(cam):
  """Camera-frame rays K^-1 (u, v, 1) for every pixel center (H, W, 3)."""
  rows, cols = np.indices((cam.height, cam.width), dtype=np.float64)
  return np.stack([(cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy,
                   np.ones_like(rows)], axis=-1)


def normals_from_depth_with_cache(depth, cam):
  """normals_from_depth that also returns the backward cache."""
  depth = np.asarray(depth, dtype=np.float64)
  if depth.shape != (cam.height, cam.width):
    raise LossShapeError('Depth has shape {0!s}, expected {1!s}'.format(
        depth.shape, (cam.height, cam.width)))
  rays = _pixel_rays(cam)
  points = depth[..., None] * rays
  positive = depth > 0.0

  valid = np.zeros(depth.shape, dtype=bool)
  valid[1:-1, 1:-1] = (
      positive[1:-1, 1:-1] & positive[1:-1, 2:] & positive[1:-1, :-2] &
      positive[2:, 1:-1] & positive[:-2, 1:-1])
  right = np.zeros(points.shape)
  down = np.zeros(points.shape)
  right[1:-1, 1:-1] = points[1:-1, 2:] - points[1:-1, :-2]
  down[1:-1, 1:-1] = points[2:, 1:-1] - points[:-2, 1:-1]
  cross = np.cross(right, down)
  length = np.linalg.norm(cross, axis=-1)
  valid &= length > 0.0
  safe_length = np.where(valid, length, 1.0)
  # Flip toward the camera.
  sign = np.where(np.sum(cross * points, axis=-1) > 0.0, -1.0, 1.0)
  normals = np.where(
      valid[..., None], sign[..., None] * cross / safe_length[..., None], 0.0)
  return normals, valid, DepthNormalCache(
      rays, right, down, cross, safe_length, sign, valid)


def normals_from_depth(depth, cam):
  """Normals of the surface seen in a depth map.

  Args:
    depth (np.ndarray): Camera-space depth (H, W); zero marks invalid.
    cam (Camera): Intrinsics used for back-projection.

  Returns:
    Tuple of (unit normals facing the camera (H, W, 3), validity (H, W)).
  """
  normals, valid, _ = normals_from_depth_with_cache(depth, cam)
  return normals, valid


def normals_from_depth_backward(grad_normals, cache):
  """Gradient w.r.t. depth given the gradient w.r.t. the depth normals."""
  grad_normals = np.where(cache.valid[..., None], grad_normals, 0.0)
  unit = cache.cross / cache.length[..., None]
  radial = np.sum(unit * grad_normals, axis=-1, keepdims=True)
  grad_cross = (
      cache.sign[..., None] * (grad_normals - unit * radial) /
      cache.length[..., None])
  grad_right = np.cross(cache.down, grad_cross)
  grad_down = np.cross(grad_cross, cache.right)

  grad_points = np.zeros(grad_normals.shape)
  grad_points[1:-1, 2:] += grad_right[1:-1, 1:-1]
  grad_points[1:-1, :-2] -= grad_right[1:-1, 1:-1]
  grad_points[2:, 1:-1] += grad_down[1:-1, 1:-1]
  grad_points[:-2, 1:-1] -= grad_down[1:-1, 1:-1]
  return np.sum(grad_points * cache.rays, axis=-1)


def enac_loss(n_depth, n_gauss, mask):
  """Mean L1 distance between two normal maps over masked pixels.

  Args:
    n_depth (np.ndarray): Depth-derived normals (H, W, 3).
    n_gauss (np.ndarray): Composited Gaussian normals (H, W, 3).
    mask (np.ndarray): Boolean (H, W) of pixels to compare.

  Returns:
    float: Loss in [0, 6], zero for an empty mask.
  """
  mask = np.asarray(mask, dtype=bool)
  count = np.count_nonzero(mask)
  if not count:
    return 0.0
  diff = np.abs(np.asarray(n_depth) - np.asarray(n_gauss))
  return float(np.sum(diff[mask]) / count)


def enac_loss_backward(n_depth, n_gauss, mask):
  """Returns (gradient w.r.t. n_depth, gradient w.r.t. n_gauss)."""
  mask = np.asarray(mask, dtype=bool)
  count = np.count_nonzero(mask)
  grad = np.zeros(np.shape(n_depth))
  if count:
    grad[mask] = np.sign(n_depth[mask] - n_gauss[mask]) / count
  return grad, -grad


def enac_mask(buffers, depth_valid, weights):
  """Pixels where the normal alignment term applies."""
  return (buffers.alpha > weights.alpha_threshold) & depth_valid


def _check_weights(weights):
  return weights if weights is not None else LossWeights()


def render_loss_terms(buffers, targets, weights=None):
  """Photometric loss terms and their gradients w.r.t. the buffers.

  Args:
    buffers (RenderBuffers): Rendered frame.
    targets (FrameTargets): Supervision.
    weights (LossWeights): Term weights.

  Returns:
    Tuple of (dict of term values, gradient w.r.t. color, gradient w.r.t.
        depth or None).

  Raises:
    LossShapeError: If the targets do not match the frame.
  """
  weights = _check_weights(weights)
  height, width = buffers.alpha.shape
  targets.validate(height, width)
  valid = targets.valid
  count = np.count_nonzero(valid)

  terms = {'l1': 0.0, 'ssim': 1.0, 'depth': 0.0}
  grad_color = np.zeros(buffers.color.shape)
  grad_depth = None
  if count:
    diff = buffers.color - targets.color
    terms['l1'] = float(np.sum(np.abs(diff)[valid]) / (3 * count))
    grad_color[valid] = (1.0 - weights.ssim) * np.sign(diff[valid]) / (
        3 * count)
    if weights.ssim > 0.0:
      terms['ssim'], grad_ssim = metrics.ssim_backward(
          buffers.color, targets.color, valid)
      grad_color -= weights.ssim * grad_ssim
    else:
      terms['ssim'] = metrics.ssim(buffers.color, targets.color, valid)

  if targets.depth is not None and weights.depth > 0.0:
    depth_valid = valid & (targets.depth > 0.0)
    depth_count = np.count_nonzero(depth_valid)
    if depth_count:
      depth_diff = buffers.depth - targets.depth
      terms['depth'] = float(np.sum(np.abs(depth_diff)[depth_valid]) /
                             depth_count)
      grad_depth = np.zeros(buffers.depth.shape)
      grad_depth[depth_valid] = (
          weights.depth * np.sign(depth_diff[depth_valid]) / depth_count)

  terms['render'] = (
      (1.0 - weights.ssim) * terms['l1'] + weights.ssim *
      (1.0 - terms['ssim']) + weights.depth * terms['depth'])
  return terms, grad_color, grad_depth


def render_loss(buffers, targets, weights=None):
  """(1 - l_ssim) L1 + l_ssim (1 - SSIM) + l_depth depth L1 on valid pixels."""
  terms, _, _ = render_loss_terms(buffers, targets, weights)
  return terms['render']


def total_loss(render, enac, weights=None):
  """Render loss plus the weighted normal alignment term."""
  weights = _check_weights(weights)
  return render + weights.enac * enac


def _frame_terms(buffers, cam, targets, weights, with_grads):
  terms, grad_color, grad_depth = render_loss_terms(buffers, targets, weights)
  n_depth, depth_valid, cache = normals_from_depth_with_cache(
      buffers.depth, cam)
  mask = enac_mask(buffers, depth_valid, weights)
  terms['enac'] = enac_loss(n_depth, buffers.normal, mask)
  terms['total'] = total_loss(terms['render'], terms['enac'], weights)
  if not with_grads:
    return terms, None

  grad_normal = None
  if weights.enac > 0.0 and np.any(mask):
    grad_n_depth, grad_n_gauss = enac_loss_backward(
        n_depth, buffers.normal, mask)
    grad_normal = weights.enac * grad_n_gauss
    if not weights.enac_detach_depth:
      grad_enac_depth = weights.enac * normals_from_depth_backward(
          grad_n_depth, cache)
      grad_depth = (
          grad_enac_depth if grad_depth is None else grad_depth +
          grad_enac_depth)
  return terms, (grad_color, grad_depth, grad_normal)


def evaluate(cloud, cam, targets, weights=None, options=None):
  """Renders a frame and returns its loss terms without gradients.

  Returns:
    dict: l1, ssim, depth, render, enac and total.
  """
  weights = _check_weights(weights)
  buffers = renderer.render(cloud, cam, options)
  terms, _ = _frame_terms(buffers, cam, targets, weights, False)
  return terms


def backward(cloud, cam, targets, weights=None, options=None,
             return_terms=False):
  """Total loss of a frame and its analytic gradient.

  Args:
    cloud (GaussianCloud): Gaussians.
    cam (Camera): View, its timestamp selects the time slice.
    targets (FrameTargets): Supervision.
    weights (LossWeights): Term weights.
    options (RenderOptions): Renderer settings.
    return_terms (bool): Also return the individual loss terms.

  Returns:
    Tuple of (total loss, GradientBuffer), plus the terms dict when
        return_terms is set.

  Raises:
    GradientError: If any partial derivative is not finite.
  """
  weights = _check_weights(weights)
  buffers, context = renderer.render_with_context(cloud, cam, options)
  terms, (grad_color, grad_depth, grad_normal) = _frame_terms(
      buffers, cam, targets, weights, True)
  grads = GradientBuffer(renderer.render_backward(
      context, grad_color=grad_color, grad_depth=grad_depth,
      grad_normal=grad_normal))
  grads.check_finite()
  log.debug('Loss {0:.6f} (render {1:.6f}, enac {2:.6f})'.format(
      terms['total'], terms['render'], terms['enac']))
  if return_terms:
    return terms['total'], grads, terms
  return terms['total'], grads
