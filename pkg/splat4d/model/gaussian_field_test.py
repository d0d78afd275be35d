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
"""Tests for the Gaussian field."""

import unittest

import numpy as np

from splat4d.model import gaussian_field
from splat4d.model.appearance import AppearanceCoeffs, AppearanceConfig
from splat4d.model.gaussian_field import Gaussian4D, GaussianCloud
from splat4d.model.geometry import Rotor4, Scales4

CONFIG = AppearanceConfig(1, 1, 1.0)


def _gaussian(rng=None, mu=(0.0, 0.0, 0.0, 0.5), scales=(1, 1, 1, 1),
              opacity_logit=0.0):
  if rng is None:
    rotor = Rotor4()
  else:
    rotor = Rotor4(rng.normal(size=4), rng.normal(size=4))
  return Gaussian4D(
      mu, rotor, Scales4.from_scales(scales), opacity_logit,
      AppearanceCoeffs(CONFIG))


def _random_cloud(rng, count):
  return GaussianCloud(
      CONFIG, mu=rng.normal(size=(count, 4)),
      q_left=rng.normal(size=(count, 4)), q_right=rng.normal(size=(count, 4)),
      log_s=rng.uniform(-1.0, 0.3, size=(count, 4)),
      opacity_logit=rng.normal(size=count),
      sh=rng.normal(size=(count, CONFIG.num_coeffs, 3)),
      phases=rng.normal(size=(count, 1)))


class ConditioningTest(unittest.TestCase):
  """Tests for time conditioning."""

  def test_diagonal(self):
    """Test zero space-time covariance leaves the spatial part unchanged."""
    gaussian = _gaussian(mu=(1.0, 2.0, 3.0, 0.2), scales=(0.5, 1.0, 2.0, 0.3))
    conditioned = gaussian_field.condition_at_time(gaussian, 0.7)
    np.testing.assert_allclose(conditioned.mu3, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(conditioned.cov3, np.diag([0.25, 1.0, 4.0]))
    self.assertAlmostEqual(
        conditioned.temporal_weight, np.exp(-0.25 / (2 * 0.09)), places=12)

  def test_weight_at_mean(self):
    """Test the temporal weight is exactly one at t = mu_t."""
    gaussian = _gaussian(np.random.default_rng(0), mu=(0, 0, 0, 0.4))
    self.assertEqual(
        gaussian_field.condition_at_time(gaussian, 0.4).temporal_weight, 1.0)

  def test_weight_symmetric(self):
    """Test the temporal weight is symmetric about mu_t."""
    gaussian = _gaussian(np.random.default_rng(1), mu=(0, 0, 0, 0.5))
    before = gaussian_field.condition_at_time(gaussian, 0.3).temporal_weight
    after = gaussian_field.condition_at_time(gaussian, 0.7).temporal_weight
    self.assertAlmostEqual(before, after, places=14)
    self.assertLess(before, 1.0)

  def test_grid_moment_oracle(self):
    """Test conditional moments against a dense grid."""
    rng = np.random.default_rng(2)
    axis = np.linspace(-1.0, 1.0, 41)
    offsets = np.stack(np.meshgrid(axis, axis, axis, indexing='ij'),
                       axis=-1).reshape(-1, 3)
    for _ in range(100):
      gaussian = _gaussian(
          rng, mu=rng.normal(size=4), scales=rng.uniform(0.5, 1.5, size=4))
      cov4 = gaussian.covariance()
      t = gaussian.mu[3] + 0.5 * np.sqrt(cov4[3, 3]) * rng.uniform(-1, 1)
      conditioned = gaussian_field.condition_at_time(gaussian, t)

      half_width = 7.0 * np.sqrt(np.diag(cov4)[:3])
      points = gaussian.mu[:3] + offsets * half_width
      deltas = np.concatenate(
          [points - gaussian.mu[:3],
           np.full((points.shape[0], 1), t - gaussian.mu[3])], axis=1)
      forms = np.einsum('pi,ij,pj->p', deltas, np.linalg.inv(cov4), deltas)
      density = np.exp(-0.5 * (forms - forms.min()))
      density /= density.sum()
      mean = density @ points
      centered = points - mean
      cov = (centered * density[:, None]).T @ centered

      scale = np.max(np.abs(conditioned.cov3))
      np.testing.assert_allclose(
          conditioned.mu3, mean, atol=1e-3 * np.max(half_width))
      np.testing.assert_allclose(conditioned.cov3, cov, atol=1e-3 * scale)

  def test_density_factorization(self):
    """Test p(x, t) = temporal weight * conditional density."""
    rng = np.random.default_rng(3)
    for _ in range(20):
      gaussian = _gaussian(
          rng, mu=rng.normal(size=4), scales=rng.uniform(0.3, 1.5, size=4))
      cov4 = gaussian.covariance()
      for _ in range(5):
        x = gaussian.mu[:3] + rng.normal(size=3)
        t = gaussian.mu[3] + rng.normal() * 0.5
        delta = np.append(x - gaussian.mu[:3], t - gaussian.mu[3])
        joint = np.exp(-0.5 * delta @ np.linalg.solve(cov4, delta))
        conditioned = gaussian_field.condition_at_time(gaussian, t)
        spatial = x - conditioned.mu3
        factored = conditioned.temporal_weight * np.exp(
            -0.5 * spatial @ np.linalg.solve(conditioned.cov3, spatial))
        self.assertLess(abs(joint - factored), 1e-10 * max(joint, 1e-300))

  def test_no_inflation(self):
    """Test conditioning never inflates spatial covariance."""
    rng = np.random.default_rng(4)
    for _ in range(20):
      gaussian = _gaussian(rng, scales=rng.uniform(0.2, 2.0, size=4))
      cov4 = gaussian.covariance()
      cov3 = gaussian_field.condition_at_time(gaussian, 0.9).cov3
      self.assertLessEqual(
          np.linalg.eigvalsh(cov3).max(),
          np.linalg.eigvalsh(cov4[:3, :3]).max() + 1e-9)

  def test_backward(self):
    """Test conditioning gradients against central differences."""
    rng = np.random.default_rng(5)
    cloud = _random_cloud(rng, 3)
    cov4, _ = cloud.covariance()
    mu = cloud.mu
    weights = [rng.normal(size=(3, 3)), rng.normal(size=(3, 3, 3)),
               rng.normal(size=3)]

    def objective(m, c):
      outputs = gaussian_field.condition_batch(m, c, 0.2)[:3]
      return sum(np.sum(w * o) for w, o in zip(weights, outputs))

    _, _, _, cache = gaussian_field.condition_batch(mu, cov4, 0.2)
    grad_mu, grad_cov = gaussian_field.condition_backward(*weights, cache)
    for flat in range(mu.size):
      plus, minus = mu.copy(), mu.copy()
      plus.flat[flat] += 1e-6
      minus.flat[flat] -= 1e-6
      numeric = (objective(plus, cov4) - objective(minus, cov4)) / 2e-6
      self.assertAlmostEqual(grad_mu.flat[flat], numeric, delta=1e-5)
    for n in range(3):
      for i in range(4):
        for j in range(i, 4):
          plus, minus = cov4.copy(), cov4.copy()
          for array, sign in ((plus, 1.0), (minus, -1.0)):
            array[n, i, j] += sign * 1e-6
            if i != j:
              array[n, j, i] += sign * 1e-6
          numeric = (objective(mu, plus) - objective(mu, minus)) / 2e-6
          analytic = grad_cov[n, i, j] * (1.0 if i == j else 2.0)
          self.assertAlmostEqual(analytic, numeric, delta=1e-5)


class OpacityTest(unittest.TestCase):
  """Tests for effective opacity and temporal culling."""

  def test_saturated(self):
    """Test a large logit at t = mu_t approaches one."""
    gaussian = _gaussian(opacity_logit=40.0)
    self.assertAlmostEqual(
        gaussian_field.effective_opacity(gaussian, 0.5), 1.0, places=12)

  def test_product(self):
    """Test opacity times temporal weight."""
    gaussian = _gaussian(opacity_logit=np.log(4.0))
    t = 0.5 + np.sqrt(2.0 * np.log(2.0))
    self.assertAlmostEqual(
        gaussian_field.effective_opacity(gaussian, t), 0.4, places=12)

  def test_far_from_mean(self):
    """Test six temporal sigmas away is negligible."""
    gaussian = _gaussian(scales=(1, 1, 1, 0.1))
    self.assertLess(
        gaussian_field.effective_opacity(gaussian, 0.5 + 0.6),
        1e-7 * gaussian.opacity)

  def test_cull_all(self):
    """Test every Gaussian survives at its own mean time."""
    rng = np.random.default_rng(6)
    cloud = _random_cloud(rng, 8)
    cloud.mu[:, 3] = 0.3
    np.testing.assert_array_equal(
        gaussian_field.cull_by_time(cloud, 0.3, 1e-4), np.arange(8))

  def test_cull_empty(self):
    """Test a Gaussian ten sigmas away is culled."""
    cloud = GaussianCloud.from_gaussians([_gaussian(scales=(1, 1, 1, 0.01))])
    self.assertEqual(len(gaussian_field.cull_by_time(cloud, 0.6, 1e-4)), 0)
    self.assertEqual(len(gaussian_field.cull_by_time(GaussianCloud(), 0.6)), 0)

  def test_cull_mixed(self):
    """Test culling matches directly recomputed weights."""
    rng = np.random.default_rng(7)
    cloud = _random_cloud(rng, 50)
    cloud.log_s[:, 3] = np.log(0.05)
    cloud.mu[:, 3] = rng.uniform(size=50)
    expected = [
        i for i in range(50)
        if gaussian_field.condition_at_time(cloud[i], 0.5).temporal_weight >=
        1e-3
    ]
    np.testing.assert_array_equal(
        gaussian_field.cull_by_time(cloud, 0.5, 1e-3), expected)

  def test_cull_threshold(self):
    """Test the threshold must lie strictly inside (0, 1)."""
    with self.assertRaises(ValueError):
      gaussian_field.cull_by_time(GaussianCloud(), 0.5, 0.0)


class GaussianCloudTest(unittest.TestCase):
  """Tests for the structure-of-arrays cloud."""

  def test_records(self):
    """Test building from records and reading them back."""
    gaussians = [_gaussian(mu=(i, 0, 0, 0.5)) for i in range(3)]
    cloud = GaussianCloud.from_gaussians(gaussians)
    self.assertEqual(len(cloud), 3)
    np.testing.assert_array_equal(cloud[2].mu, [2, 0, 0, 0.5])
    self.assertAlmostEqual(cloud[1].opacity, 0.5)
    np.testing.assert_allclose(cloud[0].covariance(), np.eye(4))

  def test_empty(self):
    """Test an empty cloud has consistent shapes."""
    cloud = GaussianCloud(CONFIG)
    self.assertEqual(len(cloud), 0)
    self.assertEqual(cloud.sh.shape, (0, CONFIG.num_coeffs, 3))
    self.assertEqual(cloud.phases.shape, (0, 1))

  def test_take_concat(self):
    """Test row selection and concatenation keep statistics aligned."""
    rng = np.random.default_rng(8)
    cloud = _random_cloud(rng, 5)
    cloud.grad_accum[:] = np.arange(5)
    subset = cloud.take([4, 1])
    np.testing.assert_array_equal(subset.mu, cloud.mu[[4, 1]])
    np.testing.assert_array_equal(subset.grad_accum, [4, 1])
    joined = subset.concat(cloud)
    self.assertEqual(len(joined), 7)
    np.testing.assert_array_equal(joined.grad_accum, [4, 1, 0, 1, 2, 3, 4])
    copied = cloud.copy()
    copied.mu[0, 0] = 99.0
    self.assertNotEqual(cloud.mu[0, 0], 99.0)

  def test_identity_rotors_independent(self):
    """Test default rotors do not share storage."""
    cloud = GaussianCloud(CONFIG, mu=np.zeros((2, 4)))
    cloud.q_left[0, 0] = 2.0
    self.assertEqual(cloud.q_right[0, 0], 1.0)

  def test_densification_stats(self):
    """Test accumulation of screen-space gradient norms."""
    cloud = GaussianCloud(CONFIG, mu=np.zeros((3, 4)))
    cloud.add_densification_stats(
        np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]]),
        np.array([True, False, True]))
    np.testing.assert_array_equal(cloud.grad_accum, [5.0, 0.0, 2.0])
    np.testing.assert_array_equal(cloud.grad_denom, [1.0, 0.0, 1.0])


if __name__ == '__main__':
  unittest.main()
