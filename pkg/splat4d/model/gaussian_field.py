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
"""4D Gaussian primitives and their time-conditioned 3D slices."""

import logging

import numpy as np
from scipy.special import expit

from splat4d.model import geometry
from splat4d.model.appearance import AppearanceCoeffs, AppearanceConfig
from splat4d.model.geometry import Rotor4, Scales4

DEFAULT_CULL_THRESHOLD = 1e-4

# Learnable arrays of a cloud, in checkpoint and optimizer order.
PARAMETER_GROUPS = (
    'mu', 'q_left', 'q_right', 'log_s', 'opacity_logit', 'sh', 'phases')

log = logging.getLogger('splat4d.gaussian_field')


class Gaussian4D():
  """A single space-time Gaussian.

  Attributes:
    mu (np.ndarray): Mean (x, y, z, t).
    rotor (Rotor4): 4D rotation.
    scales (Scales4): 4D scales.
    opacity_logit (float): Opacity before the sigmoid.
    sh_coeffs (AppearanceCoeffs): Color coefficients and phases.
    grad_accum (float): Accumulated screen-space gradient norm.
  """

  def __init__(
      self, mu, rotor, scales, opacity_logit, sh_coeffs, grad_accum=0.0):
    self.mu = np.array(mu, dtype=np.float64)
    self.rotor = rotor
    self.scales = scales
    self.opacity_logit = float(opacity_logit)
    self.sh_coeffs = sh_coeffs
    self.grad_accum = grad_accum

  @property
  def opacity(self):
    """Opacity in (0, 1)."""
    return float(expit(self.opacity_logit))

  def covariance(self):
    """Returns the 4x4 covariance."""
    return geometry.build_cov4(self.rotor, self.scales)


class ConditionedGaussian3D():
  """A Gaussian4D sliced at a fixed time.

  Attributes:
    mu3 (np.ndarray): Conditional spatial mean.
    cov3 (np.ndarray): Conditional spatial covariance (3, 3).
    temporal_weight (float): Unnormalized temporal marginal in (0, 1].
    parent_index (int): Index of the source Gaussian in its cloud.
  """

  def __init__(self, mu3, cov3, temporal_weight, parent_index=0):
    self.mu3 = mu3
    self.cov3 = cov3
    self.temporal_weight = temporal_weight
    self.parent_index = parent_index


class ConditionCache():
  """Intermediate values of conditioning kept for the backward pass."""

  def __init__(self, cov_xt, cov_tt, dt, weight, floored):
    self.cov_xt = cov_xt
    self.cov_tt = cov_tt
    self.dt = dt
    self.weight = weight
    self.floored = floored


def condition_batch(mu, cov4, t):
  """Conditions a batch of 4D Gaussians on time t.

  Args:
    mu (np.ndarray): Means (N, 4).
    cov4 (np.ndarray): Covariances (N, 4, 4).
    t (float): Normalized time.

  Returns:
    Tuple of (mu3 (N, 3), cov3 (N, 3, 3), temporal weights (N,),
    ConditionCache).
  """
  cov_xt = cov4[:, :3, 3]
  cov_tt = cov4[:, 3, 3]
  dt = t - mu[:, 3]
  gain = cov_xt / cov_tt[:, None]
  mu3 = mu[:, :3] + gain * dt[:, None]
  cov3 = cov4[:, :3, :3] - cov_xt[:, :, None] * gain[:, None, :]
  cov3 = 0.5 * (cov3 + np.swapaxes(cov3, -1, -2))
  floored = geometry.floor_diagonal(cov3)
  weight = np.exp(-0.5 * dt * dt / cov_tt)
  return mu3, cov3, weight, ConditionCache(cov_xt, cov_tt, dt, weight, floored)


def condition_backward(grad_mu3, grad_cov3, grad_weight, cache):
  """Pulls conditioned gradients back to the 4D mean and covariance.

  Args:
    grad_mu3 (np.ndarray): Gradient w.r.t. mu3 (N, 3).
    grad_cov3 (np.ndarray): Gradient w.r.t. cov3 (N, 3, 3).
    grad_weight (np.ndarray): Gradient w.r.t. temporal weights (N,).
    cache (ConditionCache): Values saved by condition_batch.

  Returns:
    Tuple of gradients (mu (N, 4), cov4 (N, 4, 4)).
  """
  cov_xt, cov_tt, dt, weight = cache.cov_xt, cache.cov_tt, cache.dt, cache.weight
  grad_c3 = 0.5 * (grad_cov3 + np.swapaxes(grad_cov3, -1, -2))
  index = np.arange(3)
  grad_c3[:, index, index] *= ~cache.floored
  mean_proj = np.sum(grad_mu3 * cov_xt, axis=1)
  cov_proj = np.einsum('ni,nij,nj->n', cov_xt, grad_c3, cov_xt)
  weight_term = grad_weight * weight * dt / cov_tt

  grad_mu = np.zeros((grad_mu3.shape[0], 4))
  grad_mu[:, :3] = grad_mu3
  grad_mu[:, 3] = -mean_proj / cov_tt + weight_term
  grad_xt = (
      grad_mu3 * (dt / cov_tt)[:, None] -
      2.0 * np.einsum('nij,nj->ni', grad_c3, cov_xt) / cov_tt[:, None])
  grad_tt = (
      -mean_proj * dt / cov_tt**2 + cov_proj / cov_tt**2 +
      0.5 * weight_term * dt / cov_tt)

  grad_cov4 = np.zeros((grad_mu3.shape[0], 4, 4))
  grad_cov4[:, :3, :3] = grad_c3
  grad_cov4[:, :3, 3] = 0.5 * grad_xt
  grad_cov4[:, 3, :3] = 0.5 * grad_xt
  grad_cov4[:, 3, 3] = grad_tt
  return grad_mu, grad_cov4


def condition_at_time(gaussian, t, parent_index=0):
  """Slices a Gaussian4D at time t.

  Args:
    gaussian (Gaussian4D): Source Gaussian.
    t (float): Normalized time.
    parent_index (int): Index recorded on the result.

  Returns:
    ConditionedGaussian3D: Conditional mean, covariance and temporal weight.
  """
  cov4 = gaussian.covariance()
  mu3, cov3, weight, _ = condition_batch(gaussian.mu[None], cov4[None], t)
  return ConditionedGaussian3D(mu3[0], cov3[0], float(weight[0]), parent_index)


def effective_opacity(gaussian, t):
  """Opacity scaled by the temporal marginal at time t."""
  return gaussian.opacity * condition_at_time(gaussian, t).temporal_weight


class GaussianCloud():
  """Structure-of-arrays collection of Gaussian4D primitives.

  Attributes:
    config (AppearanceConfig): Color basis shared by all Gaussians.
    mu (np.ndarray): Means (N, 4).
    q_left (np.ndarray): Raw left quaternions (N, 4).
    q_right (np.ndarray): Raw right quaternions (N, 4).
    log_s (np.ndarray): Log scales (N, 4).
    opacity_logit (np.ndarray): Opacity logits (N,).
    sh (np.ndarray): Color coefficients (N, num_coeffs, 3).
    phases (np.ndarray): Temporal phases (N, N_t).
    active_sh_degree (int): Highest SH degree used for rendering.
    grad_accum (np.ndarray): Summed screen-space mean gradient norms (N,).
    grad_denom (np.ndarray): Number of accumulated views per Gaussian (N,).
  """

  def __init__(
      self, config=None, mu=None, q_left=None, q_right=None, log_s=None,
      opacity_logit=None, sh=None, phases=None, active_sh_degree=None):
    """Initialise the cloud; omitted arrays default to an empty cloud."""
    self.config = config or AppearanceConfig()
    count = 0 if mu is None else np.asarray(mu).shape[0]
    identity = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    self.mu = self._array(mu, (count, 4))
    self.q_left = self._array(q_left, (count, 4), identity)
    self.q_right = self._array(q_right, (count, 4), identity)
    self.log_s = self._array(log_s, (count, 4))
    self.opacity_logit = self._array(opacity_logit, (count,))
    self.sh = self._array(sh, (count, self.config.num_coeffs, 3))
    self.phases = self._array(phases, (count, self.config.temporal_degree))
    if active_sh_degree is None:
      active_sh_degree = self.config.sh_degree
    self.active_sh_degree = int(active_sh_degree)
    self.reset_densification_stats()

  @staticmethod
  def _array(value, shape, default=None):
    if value is None:
      return np.zeros(shape) if default is None else default.copy()
    array = np.array(value, dtype=np.float64)
    if array.shape != shape:
      raise ValueError(
          'Expected array of shape {0!s}, got {1!s}'.format(shape, array.shape))
    return array

  @classmethod
  def from_gaussians(cls, gaussians, config=None):
    """Builds a cloud from Gaussian4D records."""
    if config is None:
      config = gaussians[0].sh_coeffs.config if gaussians else None
    if not gaussians:
      return cls(config)
    return cls(
        config,
        mu=np.stack([g.mu for g in gaussians]),
        q_left=np.stack([g.rotor.q_left for g in gaussians]),
        q_right=np.stack([g.rotor.q_right for g in gaussians]),
        log_s=np.stack([g.scales.log_s for g in gaussians]),
        opacity_logit=np.array([g.opacity_logit for g in gaussians]),
        sh=np.stack([g.sh_coeffs.k for g in gaussians]),
        phases=np.stack([g.sh_coeffs.phases for g in gaussians]))

  def __len__(self):
    return self.mu.shape[0]

  def __getitem__(self, index):
    return Gaussian4D(
        self.mu[index], Rotor4(self.q_left[index], self.q_right[index]),
        Scales4(self.log_s[index]), self.opacity_logit[index],
        AppearanceCoeffs(self.config, self.sh[index], self.phases[index]),
        float(self.grad_accum[index]))

  def parameters(self):
    """Returns the learnable arrays keyed by group name."""
    return {name: getattr(self, name) for name in PARAMETER_GROUPS}

  def opacity(self):
    """Opacities in (0, 1)."""
    return expit(self.opacity_logit)

  def scales(self):
    """Linear scales (N, 4)."""
    return np.exp(self.log_s)

  def covariance(self):
    """Returns (covariances (N, 4, 4), CovarianceCache)."""
    return geometry.covariance_from_params(self.q_left, self.q_right, self.log_s)

  def temporal_weights(self, t):
    """Temporal marginal of every Gaussian at time t."""
    cov, _ = self.covariance()
    dt = t - self.mu[:, 3]
    return np.exp(-0.5 * dt * dt / cov[:, 3, 3])

  def normalize_rotors(self):
    """Rescales the rotor quaternions to unit norm in place."""
    self.q_left, _ = geometry.normalize_quaternions(self.q_left)
    self.q_right, _ = geometry.normalize_quaternions(self.q_right)

  def reset_densification_stats(self):
    """Clears the screen-space gradient accumulators."""
    self.grad_accum = np.zeros(len(self))
    self.grad_denom = np.zeros(len(self))

  def add_densification_stats(self, screen_grad, visible):
    """Accumulates screen-space mean gradient norms of visible Gaussians.

    Args:
      screen_grad (np.ndarray): Gradient w.r.t. the projected means (N, 2).
      visible (np.ndarray): Boolean visibility mask (N,).
    """
    self.grad_accum[visible] += np.linalg.norm(screen_grad[visible], axis=1)
    self.grad_denom[visible] += 1.0

  def take(self, indices):
    """Returns a new cloud holding the given rows, statistics included."""
    indices = np.asarray(indices, dtype=np.int64)
    cloud = GaussianCloud(
        self.config, **{
            name: getattr(self, name)[indices] for name in PARAMETER_GROUPS
        }, active_sh_degree=self.active_sh_degree)
    cloud.grad_accum = self.grad_accum[indices]
    cloud.grad_denom = self.grad_denom[indices]
    return cloud

  def concat(self, other):
    """Returns a new cloud with other's rows appended."""
    cloud = GaussianCloud(
        self.config, **{
            name: np.concatenate([getattr(self, name), getattr(other, name)])
            for name in PARAMETER_GROUPS
        }, active_sh_degree=self.active_sh_degree)
    cloud.grad_accum = np.concatenate([self.grad_accum, other.grad_accum])
    cloud.grad_denom = np.concatenate([self.grad_denom, other.grad_denom])
    return cloud

  def copy(self):
    """Returns a deep copy."""
    return self.take(np.arange(len(self)))


def cull_by_time(cloud, t, threshold=DEFAULT_CULL_THRESHOLD):
  """Indices of Gaussians whose temporal weight reaches a threshold.

  Args:
    cloud (GaussianCloud): Gaussians.
    t (float): Normalized time.
    threshold (float): Weight threshold in (0, 1).

  Returns:
    np.ndarray: Sorted indices with temporal weight >= threshold.

  Raises:
    ValueError: If the threshold is outside (0, 1).
  """
  if not 0.0 < threshold < 1.0:
    raise ValueError(
        'Cull threshold must be in (0, 1), got {0!s}'.format(threshold))
  if not len(cloud):
    return np.zeros(0, dtype=np.int64)
  return np.flatnonzero(cloud.temporal_weights(t) >= threshold)
