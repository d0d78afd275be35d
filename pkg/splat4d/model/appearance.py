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
"""Time-evolving view-dependent color.

Color is expanded in a separable basis: real spherical harmonics over the
view direction times a sinusoid in time. Temporal index n = 0 is the constant
term; n >= 1 uses sin(2 pi n t / T + phase_n). Coefficients are stored as an
array of shape ((N_t + 1) * (L + 1)^2, 3) with row n * (L + 1)^2 + l^2 + l + m.
"""

import logging

import numpy as np

MAX_SH_DEGREE = 3
UNIT_TOLERANCE = 1e-6

# Real spherical harmonic constants.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792, 0.31539156525252005, 0.5462742152960396)
SH_C3 = (
    0.5900435899266435, 2.890611442640554, 0.4570457994644658,
    0.3731763325901154, 1.445305721320277)

log = logging.getLogger('splat4d.appearance')


class AppearanceError(ValueError):
  """Raised for out-of-range harmonic indices or non-unit directions."""


class AppearanceConfig():
  """Truncation orders of the color basis.

  Attributes:
    sh_degree (int): Maximum spherical harmonic degree L.
    temporal_degree (int): Number of temporal harmonics N_t.
    period (float): Temporal period T in normalized time.
  """

  def __init__(self, sh_degree=3, temporal_degree=2, period=1.0):
    if not 0 <= sh_degree <= MAX_SH_DEGREE:
      raise AppearanceError(
          'SH degree must be in [0, {0:d}], got {1:d}'.format(
              MAX_SH_DEGREE, sh_degree))
    if temporal_degree < 0:
      raise AppearanceError(
          'Temporal degree must be non-negative, got {0:d}'.format(
              temporal_degree))
    if not period > 0:
      raise AppearanceError('Period must be positive, got {0!s}'.format(period))
    self.sh_degree = int(sh_degree)
    self.temporal_degree = int(temporal_degree)
    self.period = float(period)

  @classmethod
  def from_config(cls, section):
    """Builds the appearance config from the [appearance] config table."""
    return cls(section['sh_degree'], section['temporal_degree'],
               section['period'])

  @property
  def num_sh(self):
    """Number of spherical harmonic functions, (L + 1)^2."""
    return (self.sh_degree + 1)**2

  @property
  def num_coeffs(self):
    """Number of coefficient rows per Gaussian."""
    return (self.temporal_degree + 1) * self.num_sh

  def __eq__(self, other):
    return (
        isinstance(other, AppearanceConfig) and
        self.sh_degree == other.sh_degree and
        self.temporal_degree == other.temporal_degree and
        self.period == other.period)


class AppearanceCoeffs():
  """Color coefficients of a single Gaussian.

  Attributes:
    k (np.ndarray): Coefficients ((N_t + 1) * (L + 1)^2, 3).
    phases (np.ndarray): Temporal phases (N_t,).
    config (AppearanceConfig): Truncation orders and period.
  """

  def __init__(self, config, k=None, phases=None):
    self.config = config
    if k is None:
      k = np.zeros((config.num_coeffs, 3))
    if phases is None:
      phases = np.zeros(config.temporal_degree)
    self.k = np.array(k, dtype=np.float64)
    self.phases = np.array(phases, dtype=np.float64)
    if self.k.shape != (config.num_coeffs, 3):
      raise AppearanceError(
          'Expected coefficients of shape {0!s}, got {1!s}'.format(
              (config.num_coeffs, 3), self.k.shape))
    if self.phases.shape != (config.temporal_degree,):
      raise AppearanceError(
          'Expected {0:d} phases, got {1!s}'.format(
              config.temporal_degree, self.phases.shape))

  @property
  def period(self):
    """Temporal period T."""
    return self.config.period

  def index(self, n, l, m):
    """Row of coefficient (n, l, m)."""
    return n * self.config.num_sh + l * l + l + m


def sh_index(l, m):
  """Flat index of the real harmonic (l, m)."""
  return l * l + l + m


def _check_directions(dirs):
  norms = np.linalg.norm(dirs, axis=-1)
  if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
    raise AppearanceError('View directions must be unit vectors')


def sh_basis(dirs, degree):
  """Evaluates all real spherical harmonics up to a degree.

  Args:
    dirs (np.ndarray): Unit directions (N, 3).
    degree (int): Maximum degree, at most MAX_SH_DEGREE.

  Returns:
    np.ndarray: Basis values (N, (degree + 1)^2).
  """
  dirs = np.asarray(dirs, dtype=np.float64)
  x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
  columns = [np.full_like(x, SH_C0)]
  if degree >= 1:
    columns += [SH_C1 * y, SH_C1 * z, SH_C1 * x]
  if degree >= 2:
    xx, yy, zz = x * x, y * y, z * z
    columns += [
        SH_C2[0] * x * y,
        SH_C2[0] * y * z,
        SH_C2[1] * (2.0 * zz - xx - yy),
        SH_C2[0] * x * z,
        SH_C2[2] * (xx - yy),
    ]
  if degree >= 3:
    columns += [
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[2] * x * (4.0 * zz - xx - yy),
        SH_C3[4] * z * (xx - yy),
        SH_C3[0] * x * (xx - 3.0 * yy),
    ]
  return np.stack(columns, axis=-1)


def sh_basis_backward(dirs, grad_basis, degree):
  """Gradient of sh_basis w.r.t. the direction components.

  The basis functions are treated as homogeneous polynomials in (x, y, z).

  Args:
    dirs (np.ndarray): Directions (N, 3).
    grad_basis (np.ndarray): Gradient w.r.t. the basis (N, (degree + 1)^2).
    degree (int): Maximum degree.

  Returns:
    np.ndarray: Gradient w.r.t. dirs (N, 3).
  """
  x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
  zero = np.zeros_like(x)
  # Partials (d/dx, d/dy, d/dz) per basis function.
  partials = [(zero, zero, zero)]
  if degree >= 1:
    c = np.full_like(x, SH_C1)
    partials += [(zero, c, zero), (zero, zero, c), (c, zero, zero)]
  if degree >= 2:
    a, b, c = SH_C2
    partials += [
        (a * y, a * x, zero),
        (zero, a * z, a * y),
        (-2.0 * b * x, -2.0 * b * y, 4.0 * b * z),
        (a * z, zero, a * x),
        (2.0 * c * x, -2.0 * c * y, zero),
    ]
  if degree >= 3:
    a, b, c, d, e = SH_C3
    xx, yy, zz = x * x, y * y, z * z
    partials += [
        (6.0 * a * x * y, a * (3.0 * xx - 3.0 * yy), zero),
        (b * y * z, b * x * z, b * x * y),
        (-2.0 * c * x * y, c * (4.0 * zz - xx - 3.0 * yy), 8.0 * c * y * z),
        (-6.0 * d * x * z, -6.0 * d * y * z,
         d * (6.0 * zz - 3.0 * xx - 3.0 * yy)),
        (c * (4.0 * zz - 3.0 * xx - yy), -2.0 * c * x * y, 8.0 * c * x * z),
        (2.0 * e * x * z, -2.0 * e * y * z, e * (xx - yy)),
        (a * (3.0 * xx - 3.0 * yy), -6.0 * a * x * y, zero),
    ]
  grad = np.zeros_like(dirs)
  for column, (dx, dy, dz) in enumerate(partials):
    weight = grad_basis[:, column]
    grad[:, 0] += weight * dx
    grad[:, 1] += weight * dy
    grad[:, 2] += weight * dz
  return grad


def eval_sh(l, m, direction):
  """Evaluates one real spherical harmonic.

  Args:
    l (int): Degree, 0 <= l <= MAX_SH_DEGREE.
    m (int): Order, -l <= m <= l.
    direction (array-like): Unit 3-vector.

  Returns:
    float: Y_l^m(direction).

  Raises:
    AppearanceError: On an invalid index or non-unit direction.
  """
  if not 0 <= l <= MAX_SH_DEGREE or abs(m) > l:
    raise AppearanceError(
        'Unsupported spherical harmonic (l={0:d}, m={1:d})'.format(l, m))
  direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
  _check_directions(direction)
  return float(sh_basis(direction, l)[0, sh_index(l, m)])


def temporal_factors(times, phases, period):
  """Temporal basis values for every n.

  Args:
    times (np.ndarray): Times, broadcastable to (N,).
    phases (np.ndarray): Phases (N, N_t).
    period (float): Temporal period.

  Returns:
    Tuple of (factors (N, N_t + 1), angles (N, N_t)).
  """
  phases = np.asarray(phases, dtype=np.float64)
  frequencies = 2.0 * np.pi * np.arange(1, phases.shape[-1] + 1) / period
  angles = np.asarray(times, dtype=np.float64)[..., None] * frequencies + phases
  ones = np.ones(angles.shape[:-1] + (1,))
  return np.concatenate([ones, np.sin(angles)], axis=-1), angles


def eval_basis(n, l, m, t, direction, phases, period=1.0):
  """Evaluates one spherindrical basis function.

  Args:
    n (int): Temporal index, 0 <= n <= len(phases).
    l (int): Degree.
    m (int): Order.
    t (float): Normalized time.
    direction (array-like): Unit 3-vector.
    phases (array-like): Phases for n = 1..N_t.
    period (float): Temporal period.

  Returns:
    float: Basis value.
  """
  phases = np.asarray(phases, dtype=np.float64)
  if not 0 <= n <= phases.shape[0]:
    raise AppearanceError('Unsupported temporal index {0:d}'.format(n))
  spatial = eval_sh(l, m, direction)
  if n == 0:
    return spatial
  return spatial * float(np.sin(2.0 * np.pi * n * t / period + phases[n - 1]))


class ColorCache():
  """Intermediate values of color evaluation kept for the backward pass."""

  def __init__(self, dirs, spatial, temporal, angles, basis, pre, coeffs,
               degree, config):
    self.dirs = dirs
    self.spatial = spatial
    self.temporal = temporal
    self.angles = angles
    self.basis = basis
    self.pre = pre
    self.coeffs = coeffs
    self.degree = degree
    self.config = config


def eval_colors(coeffs, phases, t, dirs, config, active_degree=None):
  """Batched color evaluation.

  Args:
    coeffs (np.ndarray): Coefficients (N, num_coeffs, 3).
    phases (np.ndarray): Phases (N, N_t).
    t (float): Normalized time.
    dirs (np.ndarray): Unit view directions (N, 3).
    config (AppearanceConfig): Truncation orders.
    active_degree (int): Highest SH degree in use, defaults to config's.

  Returns:
    Tuple of (rgb (N, 3), ColorCache).
  """
  if active_degree is None:
    active_degree = config.sh_degree
  active_degree = min(active_degree, config.sh_degree)
  count = coeffs.shape[0]
  spatial = np.zeros((count, config.num_sh))
  spatial[:, :(active_degree + 1)**2] = sh_basis(dirs, active_degree)
  temporal, angles = temporal_factors(
      np.full(count, float(t)), phases, config.period)
  basis = (temporal[:, :, None] * spatial[:, None, :]).reshape(count, -1)
  pre = 0.5 + np.einsum('nb,nbc->nc', basis, coeffs)
  rgb = np.maximum(pre, 0.0)
  cache = ColorCache(
      dirs, spatial, temporal, angles, basis, pre, coeffs, active_degree,
      config)
  return rgb, cache


def eval_colors_backward(grad_rgb, cache):
  """Gradients of eval_colors.

  Args:
    grad_rgb (np.ndarray): Gradient w.r.t. colors (N, 3).
    cache (ColorCache): Values saved by eval_colors.

  Returns:
    Tuple of gradients (coeffs (N, num_coeffs, 3), phases (N, N_t),
    dirs (N, 3)).
  """
  config = cache.config
  count = grad_rgb.shape[0]
  grad_pre = np.where(cache.pre > 0.0, grad_rgb, 0.0)
  grad_coeffs = cache.basis[:, :, None] * grad_pre[:, None, :]
  grad_basis = np.einsum('nbc,nc->nb', cache.coeffs, grad_pre).reshape(
      count, config.temporal_degree + 1, config.num_sh)
  grad_spatial = np.einsum('nts,nt->ns', grad_basis, cache.temporal)
  grad_temporal = np.einsum('nts,ns->nt', grad_basis, cache.spatial)
  grad_phases = grad_temporal[:, 1:] * np.cos(cache.angles)
  active = (cache.degree + 1)**2
  grad_dirs = sh_basis_backward(
      cache.dirs, grad_spatial[:, :active], cache.degree)
  return grad_coeffs, grad_phases, grad_dirs


def eval_color(coeffs, t, view_dir, active_degree=None):
  """Color of one Gaussian seen along a view direction at time t.

  Args:
    coeffs (AppearanceCoeffs): Coefficients and phases.
    t (float): Normalized time.
    view_dir (array-like): Unit 3-vector.
    active_degree (int): Highest SH degree in use.

  Returns:
    np.ndarray: RGB triple, non-negative.
  """
  view_dir = np.asarray(view_dir, dtype=np.float64).reshape(1, 3)
  _check_directions(view_dir)
  rgb, _ = eval_colors(
      coeffs.k[None], coeffs.phases[None], t, view_dir, coeffs.config,
      active_degree)
  return rgb[0]


def fit_coeffs(times, dirs, rgb, config, phases=None):
  """Least-squares coefficients reproducing sampled colors.

  The fit targets the pre-activation value, so samples are assumed to lie
  in the non-clamped range.

  Args:
    times (np.ndarray): Sample times (S,).
    dirs (np.ndarray): Unit sample directions (S, 3).
    rgb (np.ndarray): Sampled colors (S, 3).
    config (AppearanceConfig): Truncation orders.
    phases (np.ndarray): Fixed phases (N_t,), zeros by default.

  Returns:
    Tuple of (AppearanceCoeffs, residual RMSE).
  """
  if phases is None:
    phases = np.zeros(config.temporal_degree)
  times = np.asarray(times, dtype=np.float64)
  dirs = np.asarray(dirs, dtype=np.float64)
  rgb = np.asarray(rgb, dtype=np.float64)
  spatial = sh_basis(dirs, config.sh_degree)
  temporal, _ = temporal_factors(
      times, np.broadcast_to(phases, (times.shape[0], config.temporal_degree)),
      config.period)
  design = (temporal[:, :, None] * spatial[:, None, :]).reshape(
      times.shape[0], -1)
  k, _, _, _ = np.linalg.lstsq(design, rgb - 0.5, rcond=None)
  residual = design @ k - (rgb - 0.5)
  rmse = float(np.sqrt(np.mean(residual**2)))
  log.debug('Fitted {0:d} coefficients, RMSE {1:.3e}'.format(k.shape[0], rmse))
  return AppearanceCoeffs(config, k, phases), rmse
