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
"""Tile-based splatting renderer with an analytic backward pass.

Rendering conditions every Gaussian on the camera timestamp, projects the
result to a screen-space ellipse, sorts the ellipses by camera depth and
alpha-composites color, depth, normal and coverage front to back. Pixel
(row i, column j) has its center at (u, v) = (j, i).
"""

from concurrent.futures import ThreadPoolExecutor
import logging

import numpy as np
from scipy.special import expit

from splat4d.model import appearance
from splat4d.model import gaussian_field
from splat4d.model import geometry

MAX_WEIGHT = 0.99
TRANSMITTANCE_FLOOR = 1e-4
# Effective opacity below which a culled splat moves no buffer by 1e-6.
CULL_OPACITY = 1e-9
NORMAL_GAP = 1e-9
EIGEN_GAP_DAMPING = 1e-12
ORTHONORMAL_TOLERANCE = 1e-6

# Composited per-splat features: color (3), coverage, depth, normal (3).
NUM_FEATURES = 8

log = logging.getLogger('splat4d.renderer')


class CameraError(ValueError):
  """Raised for invalid camera intrinsics or extrinsics."""


class Camera():
  """Pinhole camera in the OpenCV convention (x right, y down, z forward).

  Attributes:
    fx (float): Focal length along x in pixels.
    fy (float): Focal length along y in pixels.
    cx (float): Principal point x in pixels.
    cy (float): Principal point y in pixels.
    width (int): Image width in pixels.
    height (int): Image height in pixels.
    rotation (np.ndarray): World-to-camera rotation (3, 3).
    translation (np.ndarray): World-to-camera translation (3,).
    near (float): Near clip distance.
    far (float): Far clip distance.
    timestamp (float): Normalized time of the view, in [0, 1].
  """

  def __init__(
      self, fx, fy, cx, cy, width, height, rotation=None, translation=None,
      near=0.01, far=100.0, timestamp=0.0):
    self.fx = float(fx)
    self.fy = float(fy)
    self.cx = float(cx)
    self.cy = float(cy)
    self.width = int(width)
    self.height = int(height)
    self.rotation = np.eye(3) if rotation is None else np.array(
        rotation, dtype=np.float64)
    self.translation = np.zeros(3) if translation is None else np.array(
        translation, dtype=np.float64)
    self.near = float(near)
    self.far = float(far)
    self.timestamp = float(timestamp)
    self.validate()

  def validate(self):
    """Checks the camera invariants.

    Raises:
      CameraError: If any invariant is violated.
    """
    if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
      raise CameraError('Camera extrinsics must be a 3x3 rotation and 3-vector')
    if not (np.all(np.isfinite(self.rotation)) and
            np.all(np.isfinite(self.translation))):
      raise CameraError('Camera extrinsics must be finite')
    error = np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3)))
    if error > ORTHONORMAL_TOLERANCE:
      raise CameraError(
          'Camera rotation is not orthonormal (error {0:.2e})'.format(error))
    if not (self.fx > 0 and self.fy > 0):
      raise CameraError('Focal lengths must be positive')
    if not (self.near > 0 and self.far > self.near):
      raise CameraError(
          'Clip range must satisfy 0 < near < far, got ({0!s}, {1!s})'.format(
              self.near, self.far))
    if self.width < 1 or self.height < 1:
      raise CameraError('Image size must be positive')
    if not 0.0 <= self.timestamp <= 1.0:
      raise CameraError(
          'Timestamp must lie in [0, 1], got {0!s}'.format(self.timestamp))

  @classmethod
  def look_at(cls, eye, target, down=(0.0, 1.0, 0.0), **kwargs):
    """Builds a camera at eye looking towards target.

    Args:
      eye (array-like): Camera center in world coordinates.
      target (array-like): Point on the optical axis.
      down (array-like): World direction that maps to image down.
      **kwargs: Intrinsics and clip range passed to the constructor.

    Returns:
      Camera: The posed camera.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(np.asarray(down, dtype=np.float64), forward)
    right /= np.linalg.norm(right)
    below = np.cross(forward, right)
    rotation = np.stack([right, below, forward])
    return cls(rotation=rotation, translation=-rotation @ eye, **kwargs)

  @property
  def center(self):
    """Camera center in world coordinates."""
    return -self.rotation.T @ self.translation

  @property
  def intrinsics(self):
    """3x3 intrinsic matrix."""
    return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy],
                     [0.0, 0.0, 1.0]])

  def with_timestamp(self, timestamp):
    """Returns a copy of the camera at another time."""
    return Camera(
        self.fx, self.fy, self.cx, self.cy, self.width, self.height,
        self.rotation, self.translation, self.near, self.far, timestamp)


class RenderOptions():
  """Renderer settings.

  Attributes:
    tile_size (int): Tile edge in pixels.
    dilation (float): Screen-space low-pass added to cov2 (pixels^2).
    cull_threshold (float): Temporal weight below which Gaussians are skipped
        once their effective opacity is also under CULL_OPACITY.
    support_sigma (float): Half extent, in standard deviations, of the box
        outside which a splat's weight is zero.
    reject_sigma (float): Off-screen rejection radius in standard deviations.
    alpha_epsilon (float): Coverage below which depth and normal are zero.
    threads (int): Worker threads for tiles.
    tiled (bool): False renders every splat over the whole image without
        binning or temporal culling.
  """

  def __init__(
      self, tile_size=16, dilation=0.3, cull_threshold=1e-4, support_sigma=6.0,
      reject_sigma=3.0, alpha_epsilon=1e-6, threads=1, tiled=True):
    self.tile_size = int(tile_size)
    self.dilation = float(dilation)
    self.cull_threshold = float(cull_threshold)
    self.support_sigma = float(support_sigma)
    self.reject_sigma = float(reject_sigma)
    self.alpha_epsilon = float(alpha_epsilon)
    self.threads = max(1, int(threads))
    self.tiled = tiled

  @classmethod
  def from_config(cls, section):
    """Builds options from the [renderer] config table."""
    return cls(
        tile_size=section['tile_size'], dilation=section['dilation'],
        cull_threshold=section['cull_threshold'],
        support_sigma=section['support_sigma'],
        alpha_epsilon=section['alpha_epsilon'], threads=section['threads'])

  def naive(self):
    """Returns a copy that disables binning and temporal culling."""
    return RenderOptions(
        self.tile_size, self.dilation, self.cull_threshold, self.support_sigma,
        self.reject_sigma, self.alpha_epsilon, self.threads, tiled=False)


class Splat2D():
  """Screen-space footprint of one conditioned Gaussian.

  Attributes:
    mean2 (np.ndarray): Center in pixels.
    cov2 (np.ndarray): Packed covariance (xx, xy, yy) in pixels^2.
    inv_cov2 (np.ndarray): Packed inverse covariance (a, b, c).
    depth (float): Camera-space z.
    color (np.ndarray): RGB.
    normal_cam (np.ndarray): Unit normal in the camera frame.
    eff_opacity (float): Opacity times temporal weight.
    parent_index (int): Source Gaussian index.
  """

  def __init__(
      self, mean2, cov2, inv_cov2, depth, color, normal_cam, eff_opacity,
      parent_index=0):
    self.mean2 = np.asarray(mean2, dtype=np.float64)
    self.cov2 = np.asarray(cov2, dtype=np.float64)
    self.inv_cov2 = np.asarray(inv_cov2, dtype=np.float64)
    self.depth = float(depth)
    self.color = np.asarray(color, dtype=np.float64)
    self.normal_cam = np.asarray(normal_cam, dtype=np.float64)
    self.eff_opacity = float(eff_opacity)
    self.parent_index = int(parent_index)

  @classmethod
  def from_conic(
      cls, mean2, inv_cov2, depth, color, eff_opacity, normal_cam=(0, 0, -1),
      parent_index=0):
    """Builds a splat from its inverse covariance."""
    cov2 = geometry.pack_sym(np.linalg.inv(geometry.unpack_sym(inv_cov2)))
    return cls(
        mean2, cov2, inv_cov2, depth, color, normal_cam, eff_opacity,
        parent_index)


class SplatBatch():
  """Depth-sorted structure-of-arrays splats of one view."""

  def __init__(
      self, parent, mean2, cov2, conic, depth, color, normal, eff_opacity):
    order = np.lexsort((parent, depth))
    self.order = order
    self.parent = np.asarray(parent, dtype=np.int64)[order]
    self.mean2 = mean2[order]
    self.cov2 = cov2[order]
    self.conic = conic[order]
    self.depth = depth[order]
    self.color = color[order]
    self.normal = normal[order]
    self.eff_opacity = eff_opacity[order]
    self.features = np.concatenate([
        self.color, np.ones((len(order), 1)), self.depth[:, None], self.normal
    ], axis=1)

  @classmethod
  def from_splats(cls, splats):
    """Builds a batch from Splat2D records."""
    if not splats:
      return cls(
          np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 3)),
          np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)),
          np.zeros(0))
    return cls(
        np.array([s.parent_index for s in splats]),
        np.stack([s.mean2 for s in splats]),
        np.stack([s.cov2 for s in splats]),
        np.stack([s.inv_cov2 for s in splats]),
        np.array([s.depth for s in splats]),
        np.stack([s.color for s in splats]),
        np.stack([s.normal_cam for s in splats]),
        np.array([s.eff_opacity for s in splats]))

  def __len__(self):
    return self.parent.shape[0]


class RenderBuffers():
  """Per-pixel render outputs.

  Attributes:
    color (np.ndarray): RGB (H, W, 3).
    depth (np.ndarray): Alpha-normalized depth (H, W), 0 where empty.
    normal (np.ndarray): Unit camera-frame normals (H, W, 3), 0 where empty.
    alpha (np.ndarray): Accumulated coverage (H, W) in [0, 1].
  """

  def __init__(self, color, depth, normal, alpha):
    self.color = color
    self.depth = depth
    self.normal = normal
    self.alpha = alpha

  @classmethod
  def zeros(cls, height, width):
    """Empty buffers."""
    return cls(
        np.zeros((height, width, 3)), np.zeros((height, width)),
        np.zeros((height, width, 3)), np.zeros((height, width)))


class _Projection():
  """Batched projection results and the values its backward pass needs."""

  def __init__(self, points, jacobian, transform, mean2, cov2, conic, keep):
    self.points = points
    self.jacobian = jacobian
    self.transform = transform
    self.mean2 = mean2
    self.cov2 = cov2
    self.conic = conic
    self.keep = keep


def _project_batch(mu3, cov3, cam, options):
  """EWA projection of conditioned Gaussians."""
  count = mu3.shape[0]
  rotation = cam.rotation
  points = mu3 @ rotation.T + cam.translation
  x, y, z = points[:, 0], points[:, 1], points[:, 2]
  in_range = (z > cam.near) & (z < cam.far)
  inv_z = 1.0 / np.where(in_range, z, 1.0)
  mean2 = np.stack([cam.fx * x * inv_z + cam.cx, cam.fy * y * inv_z + cam.cy],
                   axis=-1)
  jacobian = np.zeros((count, 2, 3))
  jacobian[:, 0, 0] = cam.fx * inv_z
  jacobian[:, 0, 2] = -cam.fx * x * inv_z**2
  jacobian[:, 1, 1] = cam.fy * inv_z
  jacobian[:, 1, 2] = -cam.fy * y * inv_z**2
  transform = jacobian @ rotation
  cov2 = transform @ cov3 @ np.swapaxes(transform, -1, -2)
  cov2 = 0.5 * (cov2 + np.swapaxes(cov2, -1, -2)) + options.dilation * np.eye(2)
  det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1]**2
  conic = np.stack([cov2[:, 1, 1], -cov2[:, 0, 1], cov2[:, 0, 0]],
                   axis=-1) / det[:, None]
  extent = options.reject_sigma * np.sqrt(
      np.stack([cov2[:, 0, 0], cov2[:, 1, 1]], axis=-1))
  on_image = (
      (mean2[:, 0] + extent[:, 0] >= -0.5) &
      (mean2[:, 0] - extent[:, 0] <= cam.width - 0.5) &
      (mean2[:, 1] + extent[:, 1] >= -0.5) &
      (mean2[:, 1] - extent[:, 1] <= cam.height - 0.5))
  keep = in_range & on_image
  return _Projection(points, jacobian, transform, mean2, cov2, conic, keep)


class _NormalCache():
  """Eigen decomposition and orientation of Gaussian normals."""

  def __init__(self, values, vectors, sign, degenerate, rays, ray_norm):
    self.values = values
    self.vectors = vectors
    self.sign = sign
    self.degenerate = degenerate
    self.rays = rays
    self.ray_norm = ray_norm


def _gaussian_normals(cov3, points, rotation):
  """Camera-facing shortest-axis normals of conditioned Gaussians."""
  values, vectors = geometry.eig_sym3(cov3)
  normals = vectors[:, :, 0] @ rotation.T
  degenerate = (values[:, 1] - values[:, 0]) <= NORMAL_GAP * values[:, 2]
  ray_norm = np.linalg.norm(points, axis=1)
  rays = points / ray_norm[:, None]
  normals = np.where(degenerate[:, None], -rays, normals)
  sign = np.where(np.sum(normals * points, axis=1) > 0, -1.0, 1.0)
  normals = normals * sign[:, None]
  return normals, _NormalCache(values, vectors, sign, degenerate, rays,
                               ray_norm)


def _gaussian_normals_backward(grad_normals, cache, rotation):
  """Returns gradients (cov3 (K, 3, 3), camera points (K, 3))."""
  grad = grad_normals * cache.sign[:, None]
  grad_axis = grad @ rotation
  values, vectors = cache.values, cache.vectors
  smallest = vectors[:, :, 0]
  damping = EIGEN_GAP_DAMPING * np.abs(values[:, 2])
  grad_cov = np.zeros((grad.shape[0], 3, 3))
  for j in (1, 2):
    other = vectors[:, :, j]
    gap = np.minimum(values[:, 0] - values[:, j], -damping)
    gap = np.where(gap == 0.0, -np.finfo(np.float64).tiny, gap)
    coefficient = np.sum(grad_axis * other, axis=1) / gap
    outer = other[:, :, None] * smallest[:, None, :]
    grad_cov += coefficient[:, None, None] * 0.5 * (
        outer + np.swapaxes(outer, -1, -2))
  grad_cov[cache.degenerate] = 0.0
  radial = np.sum(cache.rays * grad, axis=1, keepdims=True)
  grad_points = -(grad - cache.rays * radial) / cache.ray_norm[:, None]
  grad_points[~cache.degenerate] = 0.0
  return grad_cov, grad_points


def gaussian_normal(conditioned, cam):
  """Camera-frame normal of a conditioned Gaussian.

  The normal is the eigenvector of the smallest eigenvalue of cov3, rotated
  into the camera frame and oriented towards the camera. Near-isotropic
  covariances return the negated view ray.

  Args:
    conditioned (ConditionedGaussian3D): Time slice of a Gaussian.
    cam (Camera): View.

  Returns:
    np.ndarray: Unit 3-vector.
  """
  points = (cam.rotation @ conditioned.mu3 + cam.translation)[None]
  normals, _ = _gaussian_normals(conditioned.cov3[None], points, cam.rotation)
  return normals[0]


def project(conditioned, cam, color, normal=None, opacity=1.0, options=None):
  """Projects one conditioned Gaussian to a screen-space splat.

  Args:
    conditioned (ConditionedGaussian3D): Time slice of a Gaussian.
    cam (Camera): View.
    color (array-like): RGB of the splat.
    normal (array-like): Camera-frame normal, computed when omitted.
    opacity (float): Base opacity; the temporal weight is applied here.
    options (RenderOptions): Dilation and rejection settings.

  Returns:
    Splat2D or None when the Gaussian is clipped or off screen.
  """
  options = options or RenderOptions()
  projection = _project_batch(
      conditioned.mu3[None], conditioned.cov3[None], cam, options)
  if not projection.keep[0]:
    return None
  if normal is None:
    normal = gaussian_normal(conditioned, cam)
  return Splat2D(
      projection.mean2[0], geometry.pack_sym(projection.cov2[0]),
      projection.conic[0], projection.points[0, 2], color, normal,
      opacity * conditioned.temporal_weight, conditioned.parent_index)


def _tiles(cam, options):
  """Row-major tile rectangles (y0, y1, x0, x1)."""
  if not options.tiled:
    return [(0, cam.height, 0, cam.width)]
  size = options.tile_size
  return [(y0, min(y0 + size, cam.height), x0, min(x0 + size, cam.width))
          for y0 in range(0, cam.height, size)
          for x0 in range(0, cam.width, size)]


def _bin(batch, tiles, options):
  """Indices (in depth order) of the splats overlapping each tile."""
  if not options.tiled:
    return [np.arange(len(batch))]
  radius = _support_radius(batch, options.support_sigma)
  low = batch.mean2 - radius
  high = batch.mean2 + radius
  bins = []
  for y0, y1, x0, x1 in tiles:
    overlap = ((high[:, 0] >= x0) & (low[:, 0] <= x1 - 1) &
               (high[:, 1] >= y0) & (low[:, 1] <= y1 - 1))
    bins.append(np.flatnonzero(overlap))
  return bins


class _TileState():
  """Per-tile compositing intermediates."""

  def __init__(self, dx, dy, gauss, raw, weight, before, included, contrib):
    self.dx = dx
    self.dy = dy
    self.gauss = gauss
    self.raw = raw
    self.weight = weight
    self.before = before
    self.included = included
    self.contrib = contrib


def _support_radius(batch, support_sigma):
  """Half extents of each splat's bounding box, (K, 2)."""
  return support_sigma * np.sqrt(
      np.stack([batch.cov2[:, 0], batch.cov2[:, 2]], axis=-1))


def _tile_state(batch, ids, tile, support_sigma):
  y0, y1, x0, x1 = tile
  ys, xs = np.mgrid[y0:y1, x0:x1]
  xs = xs.reshape(-1).astype(np.float64)
  ys = ys.reshape(-1).astype(np.float64)
  mean2 = batch.mean2[ids]
  conic = batch.conic[ids]
  radius = _support_radius(batch, support_sigma)[ids]
  dx = xs[None, :] - mean2[:, 0:1]
  dy = ys[None, :] - mean2[:, 1:2]
  power = -0.5 * (
      conic[:, 0:1] * dx * dx + 2.0 * conic[:, 1:2] * dx * dy +
      conic[:, 2:3] * dy * dy)
  # Weights are truncated to the support box in every code path.
  inside = (np.abs(dx) <= radius[:, 0:1]) & (np.abs(dy) <= radius[:, 1:2])
  gauss = np.where(inside, np.exp(power), 0.0)
  raw = batch.eff_opacity[ids][:, None] * gauss
  weight = np.minimum(raw, MAX_WEIGHT)
  after = np.cumprod(1.0 - weight, axis=0)
  included = after >= TRANSMITTANCE_FLOOR
  before = np.ones_like(after)
  before[1:] = after[:-1]
  contrib = np.where(included, weight * before, 0.0)
  return _TileState(dx, dy, gauss, raw, weight, before, included, contrib)


def _composite_tile(batch, ids, tile, support_sigma):
  """Composited features of one tile, shape (tile pixels, NUM_FEATURES)."""
  if not len(ids):
    y0, y1, x0, x1 = tile
    return np.zeros(((y1 - y0) * (x1 - x0), NUM_FEATURES))
  state = _tile_state(batch, ids, tile, support_sigma)
  return state.contrib.T @ batch.features[ids]


def _composite_tile_backward(batch, ids, tile, grad_out, support_sigma):
  """Per-splat gradients of one tile.

  Returns:
    Tuple of gradients (features, eff_opacity, mean2, conic) for ids.
  """
  state = _tile_state(batch, ids, tile, support_sigma)
  features = batch.features[ids]
  conic = batch.conic[ids]
  projected = features @ grad_out.T
  share = state.contrib * projected
  behind = np.cumsum(share[::-1], axis=0)[::-1] - share
  grad_weight = state.before * projected - behind / (1.0 - state.weight)
  grad_weight = np.where(
      state.included & (state.raw < MAX_WEIGHT), grad_weight, 0.0)
  grad_features = state.contrib @ grad_out
  grad_eff = np.sum(grad_weight * state.gauss, axis=1)
  grad_power = grad_weight * state.raw
  dx, dy = state.dx, state.dy
  grad_mean = np.stack([
      np.sum(grad_power * (conic[:, 0:1] * dx + conic[:, 1:2] * dy), axis=1),
      np.sum(grad_power * (conic[:, 1:2] * dx + conic[:, 2:3] * dy), axis=1),
  ], axis=-1)
  grad_conic = np.stack([
      np.sum(grad_power * -0.5 * dx * dx, axis=1),
      np.sum(grad_power * -dx * dy, axis=1),
      np.sum(grad_power * -0.5 * dy * dy, axis=1),
  ], axis=-1)
  return grad_features, grad_eff, grad_mean, grad_conic


def _map_tiles(function, jobs, threads):
  """Runs function over jobs, results in job order."""
  if threads > 1 and len(jobs) > 1:
    with ThreadPoolExecutor(max_workers=threads) as executor:
      return list(executor.map(lambda job: function(*job), jobs))
  return [function(*job) for job in jobs]


def _composite(batch, cam, options):
  """Composites a splat batch into a feature image (H, W, NUM_FEATURES)."""
  tiles = _tiles(cam, options)
  bins = _bin(batch, tiles, options)
  outputs = _map_tiles(
      lambda ids, tile: _composite_tile(
          batch, ids, tile, options.support_sigma),
      list(zip(bins, tiles)), options.threads)
  accumulated = np.zeros((cam.height, cam.width, NUM_FEATURES))
  for (y0, y1, x0, x1), output in zip(tiles, outputs):
    accumulated[y0:y1, x0:x1] = output.reshape(y1 - y0, x1 - x0, NUM_FEATURES)
  return accumulated, tiles, bins


def _finalize(accumulated, options):
  """Turns composited features into render buffers."""
  alpha = accumulated[..., 3]
  valid = alpha > options.alpha_epsilon
  safe_alpha = np.where(valid, alpha, 1.0)
  depth = np.where(valid, accumulated[..., 4] / safe_alpha, 0.0)
  raw_normal = accumulated[..., 5:8]
  length = np.linalg.norm(raw_normal, axis=-1)
  normal_valid = valid & (length > 0.0)
  normal = np.where(
      normal_valid[..., None],
      raw_normal / np.where(length > 0.0, length, 1.0)[..., None], 0.0)
  return RenderBuffers(
      accumulated[..., 0:3].copy(), depth, normal, np.minimum(alpha, 1.0))


def _finalize_backward(accumulated, buffers, options, grad_color, grad_depth,
                       grad_normal, grad_alpha=None):
  """Gradient w.r.t. the composited feature image."""
  alpha = accumulated[..., 3]
  valid = alpha > options.alpha_epsilon
  safe_alpha = np.where(valid, alpha, 1.0)
  length = np.linalg.norm(accumulated[..., 5:8], axis=-1)
  normal_valid = valid & (length > 0.0)
  safe_length = np.where(length > 0.0, length, 1.0)

  grad = np.zeros(accumulated.shape)
  if grad_color is not None:
    grad[..., 0:3] = grad_color
  if grad_alpha is not None:
    grad[..., 3] = np.where(alpha < 1.0, grad_alpha, 0.0)
  if grad_depth is not None:
    grad[..., 3] -= np.where(valid, grad_depth * buffers.depth / safe_alpha, 0.0)
    grad[..., 4] = np.where(valid, grad_depth / safe_alpha, 0.0)
  if grad_normal is not None:
    radial = np.sum(buffers.normal * grad_normal, axis=-1, keepdims=True)
    grad[..., 5:8] = np.where(
        normal_valid[..., None],
        (grad_normal - buffers.normal * radial) / safe_length[..., None], 0.0)
  return grad


def rasterize(splats, cam, options=None):
  """Composites screen-space splats into render buffers.

  Args:
    splats (list[Splat2D]|SplatBatch): Splats projected for cam.
    cam (Camera): View.
    options (RenderOptions): Tiling and threading settings.

  Returns:
    RenderBuffers: Composited outputs.
  """
  options = options or RenderOptions()
  batch = splats if isinstance(splats, SplatBatch) else SplatBatch.from_splats(
      list(splats))
  if not len(batch):
    return RenderBuffers.zeros(cam.height, cam.width)
  accumulated, _, _ = _composite(batch, cam, options)
  return _finalize(accumulated, options)


class RenderContext():
  """Everything render_backward needs from a forward pass.

  Attributes:
    cloud (GaussianCloud): Rendered cloud.
    camera (Camera): View.
    options (RenderOptions): Settings used.
    buffers (RenderBuffers): Forward outputs.
  """

  def __init__(self, cloud, camera, options):
    self.cloud = cloud
    self.camera = camera
    self.options = options
    self.buffers = None
    self.cov_cache = None
    self.cond_cache = None
    self.active = np.zeros(0, dtype=np.int64)
    self.kept = np.zeros(0, dtype=np.int64)
    self.cov3 = None
    self.projection = None
    self.normal_cache = None
    self.color_cache = None
    self.dirs = None
    self.dir_norm = None
    self.opacity = None
    self.temporal_weight = None
    self.batch = None
    self.accumulated = None
    self.tiles = None
    self.bins = None


def render_with_context(cloud, cam, options=None):
  """Renders a cloud and keeps the intermediates for the backward pass.

  Args:
    cloud (GaussianCloud): Gaussians.
    cam (Camera): View, its timestamp selects the time slice.
    options (RenderOptions): Renderer settings.

  Returns:
    Tuple of (RenderBuffers, RenderContext).
  """
  options = options or RenderOptions()
  context = RenderContext(cloud, cam, options)
  t = cam.timestamp
  if not len(cloud):
    context.buffers = RenderBuffers.zeros(cam.height, cam.width)
    return context.buffers, context

  cov4, context.cov_cache = cloud.covariance()
  if options.tiled:
    dt = t - cloud.mu[:, 3]
    weights = np.exp(-0.5 * dt * dt / cov4[:, 3, 3])
    opacity = expit(cloud.opacity_logit)
    culled = ((weights < options.cull_threshold) &
              (opacity * weights < CULL_OPACITY))
    context.active = np.flatnonzero(~culled)
  else:
    context.active = np.arange(len(cloud))
  active = context.active
  mu3, cov3, temporal_weight, context.cond_cache = (
      gaussian_field.condition_batch(cloud.mu[active], cov4[active], t))
  projection = _project_batch(mu3, cov3, cam, options)
  kept = np.flatnonzero(projection.keep)
  context.kept = kept
  context.projection = projection
  if not len(kept):
    context.buffers = RenderBuffers.zeros(cam.height, cam.width)
    return context.buffers, context

  parents = active[kept]
  offsets = mu3[kept] - cam.center
  context.dir_norm = np.linalg.norm(offsets, axis=1)
  context.dirs = offsets / context.dir_norm[:, None]
  colors, context.color_cache = appearance.eval_colors(
      cloud.sh[parents], cloud.phases[parents], t, context.dirs, cloud.config,
      cloud.active_sh_degree)
  context.cov3 = cov3[kept]
  normals, context.normal_cache = _gaussian_normals(
      context.cov3, projection.points[kept], cam.rotation)
  context.opacity = expit(cloud.opacity_logit[parents])
  context.temporal_weight = temporal_weight[kept]
  eff_opacity = context.opacity * context.temporal_weight

  batch = SplatBatch(
      parents, projection.mean2[kept], geometry.pack_sym(projection.cov2[kept]),
      projection.conic[kept], projection.points[kept, 2], colors, normals,
      eff_opacity)
  context.batch = batch
  context.accumulated, context.tiles, context.bins = _composite(
      batch, cam, options)
  context.buffers = _finalize(context.accumulated, options)
  log.debug('Rendered {0:d} of {1:d} Gaussians at t={2:.4f}'.format(
      len(kept), len(cloud), t))
  return context.buffers, context


def render(cloud, cam, options=None):
  """Renders a cloud at the camera's timestamp.

  Args:
    cloud (GaussianCloud): Gaussians.
    cam (Camera): View.
    options (RenderOptions): Renderer settings.

  Returns:
    RenderBuffers: Color, depth, normal and alpha.
  """
  buffers, _ = render_with_context(cloud, cam, options)
  return buffers


def render_naive(cloud, cam, options=None):
  """Reference renderer: one tile, every splat, no temporal culling."""
  return render(cloud, cam, (options or RenderOptions()).naive())


def render_backward(
    context, grad_color=None, grad_depth=None, grad_normal=None,
    grad_alpha=None):
  """Pulls buffer gradients back to every learnable array of the cloud.

  Args:
    context (RenderContext): Forward intermediates.
    grad_color (np.ndarray): Gradient w.r.t. color (H, W, 3).
    grad_depth (np.ndarray): Gradient w.r.t. depth (H, W).
    grad_normal (np.ndarray): Gradient w.r.t. normals (H, W, 3).
    grad_alpha (np.ndarray): Gradient w.r.t. alpha (H, W).

  Returns:
    dict: Gradients keyed by parameter group, plus 'screen_mean' (N, 2) and
        'visible' (N,) for densification statistics.
  """
  cloud = context.cloud
  count = len(cloud)
  grads = {
      name: np.zeros_like(value)
      for name, value in cloud.parameters().items()
  }
  grads['screen_mean'] = np.zeros((count, 2))
  grads['visible'] = np.zeros(count, dtype=bool)
  if context.batch is None:
    return grads

  cam = context.camera
  options = context.options
  batch = context.batch
  grad_accumulated = _finalize_backward(
      context.accumulated, context.buffers, options, grad_color, grad_depth,
      grad_normal, grad_alpha)

  size = len(batch)
  grad_features = np.zeros((size, NUM_FEATURES))
  grad_eff = np.zeros(size)
  grad_mean2 = np.zeros((size, 2))
  grad_conic = np.zeros((size, 3))
  jobs = []
  for ids, (y0, y1, x0, x1) in zip(context.bins, context.tiles):
    if len(ids):
      tile_grad = grad_accumulated[y0:y1, x0:x1].reshape(-1, NUM_FEATURES)
      jobs.append((ids, (y0, y1, x0, x1), tile_grad))
  results = _map_tiles(
      lambda ids, tile, tile_grad: _composite_tile_backward(
          batch, ids, tile, tile_grad, options.support_sigma), jobs,
      options.threads)
  for (ids, _, _), (g_features, g_eff, g_mean, g_conic) in zip(jobs, results):
    np.add.at(grad_features, ids, g_features)
    np.add.at(grad_eff, ids, g_eff)
    np.add.at(grad_mean2, ids, g_mean)
    np.add.at(grad_conic, ids, g_conic)

  # Back to kept (unsorted) order.
  unsorted = np.empty_like(batch.order)
  unsorted[batch.order] = np.arange(size)
  grad_features = grad_features[unsorted]
  grad_eff = grad_eff[unsorted]
  grad_mean2 = grad_mean2[unsorted]
  grad_conic = grad_conic[unsorted]

  kept = context.kept
  projection = context.projection
  rotation = cam.rotation
  points = projection.points[kept]
  conic = projection.conic[kept]
  transform = projection.transform[kept]

  # Conic to 2D covariance.
  inverse = geometry.unpack_sym(conic)
  grad_inverse = np.stack([
      np.stack([grad_conic[:, 0], 0.5 * grad_conic[:, 1]], axis=-1),
      np.stack([0.5 * grad_conic[:, 1], grad_conic[:, 2]], axis=-1),
  ], axis=-2)
  grad_cov2 = -inverse @ grad_inverse @ inverse

  # 2D covariance to 3D covariance and the projection Jacobian.
  grad_cov3 = np.swapaxes(transform, -1, -2) @ grad_cov2 @ transform
  grad_transform = 2.0 * grad_cov2 @ transform @ context.cov3
  grad_jacobian = grad_transform @ rotation.T

  x, y = points[:, 0], points[:, 1]
  inv_z = 1.0 / points[:, 2]
  fx, fy = cam.fx, cam.fy
  grad_points = np.zeros_like(points)
  grad_points[:, 0] = (
      grad_mean2[:, 0] * fx * inv_z - grad_jacobian[:, 0, 2] * fx * inv_z**2)
  grad_points[:, 1] = (
      grad_mean2[:, 1] * fy * inv_z - grad_jacobian[:, 1, 2] * fy * inv_z**2)
  grad_points[:, 2] = (
      -grad_mean2[:, 0] * fx * x * inv_z**2 -
      grad_mean2[:, 1] * fy * y * inv_z**2 -
      grad_jacobian[:, 0, 0] * fx * inv_z**2 -
      grad_jacobian[:, 1, 1] * fy * inv_z**2 +
      2.0 * grad_jacobian[:, 0, 2] * fx * x * inv_z**3 +
      2.0 * grad_jacobian[:, 1, 2] * fy * y * inv_z**3 + grad_features[:, 4])

  grad_normal_cov, grad_normal_points = _gaussian_normals_backward(
      grad_features[:, 5:8], context.normal_cache, rotation)
  grad_cov3 += grad_normal_cov
  grad_points += grad_normal_points
  grad_mu3 = grad_points @ rotation

  grad_sh, grad_phases, grad_dirs = appearance.eval_colors_backward(
      grad_features[:, 0:3], context.color_cache)
  radial = np.sum(context.dirs * grad_dirs, axis=1, keepdims=True)
  grad_mu3 += (grad_dirs - context.dirs * radial) / context.dir_norm[:, None]

  opacity = context.opacity
  grad_logit = grad_eff * context.temporal_weight * opacity * (1.0 - opacity)
  grad_weight = grad_eff * opacity

  active = context.active
  parents = active[kept]
  active_mu3 = np.zeros((len(active), 3))
  active_cov3 = np.zeros((len(active), 3, 3))
  active_weight = np.zeros(len(active))
  active_mu3[kept] = grad_mu3
  active_cov3[kept] = grad_cov3
  active_weight[kept] = grad_weight
  grad_mu_active, grad_cov4_active = gaussian_field.condition_backward(
      active_mu3, active_cov3, active_weight, context.cond_cache)

  grad_cov4 = np.zeros((count, 4, 4))
  grad_cov4[active] = grad_cov4_active
  grads['q_left'], grads['q_right'], grads['log_s'] = (
      geometry.covariance_backward(grad_cov4, context.cov_cache))
  grads['mu'][active] = grad_mu_active
  grads['opacity_logit'][parents] = grad_logit
  grads['sh'][parents] = grad_sh
  grads['phases'][parents] = grad_phases
  grads['screen_mean'][parents] = grad_mean2
  grads['visible'][parents] = True
  return grads
