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
"""Tests for the splatting renderer."""

import unittest

import numpy as np
from scipy.special import logit

from splat4d.model import gaussian_field
from splat4d.model import geometry
from splat4d.model.appearance import AppearanceConfig
from splat4d.model.gaussian_field import ConditionedGaussian3D, GaussianCloud
from splat4d.utils import renderer
from splat4d.utils.renderer import (
    Camera, CameraError, RenderOptions, Splat2D)

CONFIG = AppearanceConfig(2, 1, 1.0)


def _camera(size=64, focal=60.0, timestamp=0.5):
  return Camera(
      focal, focal, (size - 1) / 2.0, (size - 1) / 2.0, size, size,
      timestamp=timestamp)


def _random_cloud(rng, count, focal=60.0, size=64, t=0.5):
  z = rng.uniform(3.0, 8.0, size=count)
  half = 0.6 * (size / 2.0) / focal
  xy = rng.uniform(-half, half, size=(count, 2)) * z[:, None]
  # Either well inside the temporal window or far outside it.
  sigma_t = rng.uniform(0.1, 0.5, size=count)
  far = rng.uniform(size=count) < 0.2
  dt = np.where(far, 10.0, rng.uniform(-2.0, 2.0, size=count)) * sigma_t
  log_s = np.concatenate([
      np.log(rng.uniform(0.02, 0.3, size=(count, 3))),
      np.log(sigma_t)[:, None]
  ], axis=1)
  sh = np.zeros((count, CONFIG.num_coeffs, 3))
  sh[:, 0] = rng.normal(scale=0.5, size=(count, 3))
  sh[:, 1:CONFIG.num_sh] = rng.normal(scale=0.05, size=(count, 8, 3))
  return GaussianCloud(
      CONFIG, mu=np.column_stack([xy, z, t - dt]),
      log_s=log_s, opacity_logit=rng.normal(scale=1.5, size=count), sh=sh)


class CameraTest(unittest.TestCase):
  """Tests for the camera model."""

  def test_invalid(self):
    """Test invariant checks."""
    with self.assertRaises(CameraError):
      Camera(-1, 1, 0, 0, 4, 4)
    with self.assertRaises(CameraError):
      Camera(1, 1, 0, 0, 4, 4, near=1.0, far=0.5)
    with self.assertRaises(CameraError):
      Camera(1, 1, 0, 0, 4, 4, rotation=np.diag([1.0, 1.0, 1.1]))
    for timestamp in (-0.01, 1.01, float('nan')):
      with self.assertRaises(ValueError):
        Camera(1, 1, 0, 0, 4, 4, timestamp=timestamp)
    Camera(1, 1, 0, 0, 4, 4, timestamp=1.0)

  def test_look_at(self):
    """Test the look-at construction in the OpenCV convention."""
    cam = Camera.look_at(
        (0, 0, -4), (0, 0, 0), fx=10, fy=10, cx=2, cy=2, width=4, height=4)
    np.testing.assert_allclose(cam.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(cam.center, [0, 0, -4], atol=1e-12)
    side = Camera.look_at(
        (4, 0, 0), (0, 0, 0), fx=10, fy=10, cx=2, cy=2, width=4, height=4)
    np.testing.assert_allclose(
        side.rotation @ np.array([0.0, 0.0, 0.0]) + side.translation,
        [0, 0, 4], atol=1e-12)


class ProjectionTest(unittest.TestCase):
  """Tests for EWA projection."""

  def test_on_axis(self):
    """Test the hand-evaluated on-axis projection."""
    cam = Camera(100, 100, 50, 40, 100, 80)
    conditioned = ConditionedGaussian3D(
        np.array([0.0, 0.0, 1.0]), 1e-4 * np.eye(3), 1.0)
    splat = renderer.project(conditioned, cam, (1, 1, 1))
    np.testing.assert_allclose(splat.mean2, [50, 40])
    np.testing.assert_allclose(splat.cov2, [1.3, 0.0, 1.3])
    self.assertEqual(splat.depth, 1.0)

  def test_clipped(self):
    """Test Gaussians behind the near plane are rejected."""
    cam = Camera(100, 100, 50, 40, 100, 80, near=0.5)
    conditioned = ConditionedGaussian3D(
        np.array([0.0, 0.0, 0.4]), 1e-4 * np.eye(3), 1.0)
    self.assertIsNone(renderer.project(conditioned, cam, (1, 1, 1)))
    offscreen = ConditionedGaussian3D(
        np.array([50.0, 0.0, 1.0]), 1e-4 * np.eye(3), 1.0)
    self.assertIsNone(renderer.project(offscreen, cam, (1, 1, 1)))

  def test_monte_carlo(self):
    """Test the affine approximation against sampled projections."""
    rng = np.random.default_rng(0)
    cam = Camera(200, 200, 100, 100, 200, 200)
    rotor = geometry.Rotor4(rng.normal(size=4), rng.normal(size=4))
    cov3 = geometry.build_cov4(
        rotor, geometry.Scales4.from_scales((0.02, 0.05, 0.03, 1.0)))[:3, :3]
    mu3 = np.array([0.3, -0.2, 5.0])
    splat = renderer.project(
        ConditionedGaussian3D(mu3, cov3, 1.0), cam, (1, 1, 1),
        options=RenderOptions(dilation=0.0))
    samples = rng.multivariate_normal(mu3, cov3, size=200000)
    pixels = np.stack([
        cam.fx * samples[:, 0] / samples[:, 2] + cam.cx,
        cam.fy * samples[:, 1] / samples[:, 2] + cam.cy
    ], axis=1)
    sampled = np.cov(pixels.T)
    expected = geometry.unpack_sym(splat.cov2)
    self.assertLess(
        np.max(np.abs(sampled - expected)), 0.05 * np.max(np.abs(expected)))

  def test_gaussian_normal(self):
    """Test the flat-axis normal faces the camera."""
    cam = _camera()
    flat = ConditionedGaussian3D(
        np.array([0.0, 0.0, 5.0]), np.diag([1.0, 1.0, 1e-4]), 1.0)
    np.testing.assert_allclose(
        renderer.gaussian_normal(flat, cam), [0, 0, -1], atol=1e-12)

  def test_isotropic_normal(self):
    """Test the tie-break returns the negated view ray."""
    cam = _camera()
    mu3 = np.array([1.0, 2.0, 5.0])
    normal = renderer.gaussian_normal(
        ConditionedGaussian3D(mu3, np.eye(3), 1.0), cam)
    np.testing.assert_allclose(normal, -mu3 / np.linalg.norm(mu3))

  def test_normal_covariance(self):
    """Test normals rotate with the Gaussian."""
    rng = np.random.default_rng(1)
    cam = _camera()
    cov3 = np.diag([0.5, 0.2, 0.01])
    mu3 = np.array([0.0, 0.0, 5.0])
    base = renderer.gaussian_normal(ConditionedGaussian3D(mu3, cov3, 1.0), cam)
    for _ in range(5):
      q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
      rotated = renderer.gaussian_normal(
          ConditionedGaussian3D(mu3, q @ cov3 @ q.T, 1.0), cam)
      self.assertAlmostEqual(abs(rotated @ (q @ base)), 1.0, places=10)


class RasterizeTest(unittest.TestCase):
  """Tests for compositing."""

  def test_single_splat(self):
    """Test one opaque splat at a pixel center."""
    cam = _camera(size=8)
    splat = Splat2D.from_conic((3.0, 4.0), (1.0, 0.0, 1.0), 2.5, (0.2, 0.4, 0.6),
                               0.99)
    buffers = renderer.rasterize([splat], cam)
    np.testing.assert_allclose(buffers.color[4, 3], [0.198, 0.396, 0.594])
    self.assertAlmostEqual(buffers.alpha[4, 3], 0.99)
    self.assertAlmostEqual(buffers.depth[4, 3], 2.5)
    np.testing.assert_allclose(buffers.normal[4, 3], [0, 0, -1])

  def test_two_splats(self):
    """Test the hand-evaluated two-splat composite."""
    cam = _camera(size=8)
    front = Splat2D.from_conic((2.0, 2.0), (1.0, 0.0, 1.0), 1.0, (1, 0, 0), 0.5)
    back = Splat2D.from_conic((2.0, 2.0), (1.0, 0.0, 1.0), 2.0, (0, 1, 0), 0.5)
    buffers = renderer.rasterize([back, front], cam)
    np.testing.assert_array_equal(buffers.color[2, 2], [0.5, 0.25, 0.0])
    self.assertEqual(buffers.alpha[2, 2], 0.75)
    self.assertEqual(buffers.depth[2, 2], 4.0 / 3.0)

  def test_empty(self):
    """Test no splats give zero buffers."""
    buffers = renderer.rasterize([], _camera(size=4))
    self.assertFalse(np.any(buffers.color))
    self.assertFalse(np.any(buffers.alpha))
    self.assertFalse(np.any(buffers.depth))

  def test_permutation_invariance(self):
    """Test input order does not matter."""
    rng = np.random.default_rng(2)
    cam = _camera(size=16)
    splats = [
        Splat2D.from_conic(
            rng.uniform(0, 15, size=2), (0.2, 0.05, 0.3), rng.uniform(1, 5),
            rng.uniform(size=3), rng.uniform(0.1, 0.9), parent_index=i)
        for i in range(12)
    ]
    splats[3].depth = splats[7].depth
    reference = renderer.rasterize(splats, cam)
    for seed in range(3):
      order = np.random.default_rng(seed).permutation(12)
      shuffled = renderer.rasterize([splats[i] for i in order], cam)
      np.testing.assert_array_equal(shuffled.color, reference.color)
      np.testing.assert_array_equal(shuffled.depth, reference.depth)


class RenderTest(unittest.TestCase):
  """Tests for end-to-end rendering."""

  def test_empty_cloud(self):
    """Test an empty cloud renders zeros."""
    buffers = renderer.render(GaussianCloud(CONFIG), _camera(size=8))
    self.assertFalse(np.any(buffers.color))

  def test_all_culled(self):
    """Test a cloud outside its temporal window renders zeros."""
    cloud = GaussianCloud(
        CONFIG, mu=[[0.0, 0.0, 5.0, 0.0]],
        log_s=[[0.0, 0.0, 0.0, np.log(0.01)]], opacity_logit=[3.0])
    buffers = renderer.render(cloud, _camera(size=8, timestamp=1.0))
    self.assertFalse(np.any(buffers.alpha))

  def test_faint_but_opaque(self):
    """Test an opaque splat just under the temporal threshold still renders."""
    weight = 5e-5
    dt = 0.1 * np.sqrt(-2.0 * np.log(weight))
    cloud = GaussianCloud(
        CONFIG, mu=[[0.0, 0.0, 5.0, 0.5 - dt]],
        log_s=[[np.log(0.2), np.log(0.2), np.log(0.2), np.log(0.1)]],
        opacity_logit=[6.0])
    cam = _camera()
    self.assertLess(weight, RenderOptions().cull_threshold)
    tiled = renderer.render(cloud, cam)
    naive = renderer.render_naive(cloud, cam)
    self.assertGreater(tiled.alpha[31, 31], 1e-5)
    for name in ('color', 'depth', 'normal', 'alpha'):
      np.testing.assert_allclose(
          getattr(tiled, name), getattr(naive, name), rtol=0, atol=1e-6)

  def test_static_time_invariance(self):
    """Test a static scene renders identically at both ends of time."""
    rng = np.random.default_rng(3)
    cloud = _random_cloud(rng, 30)
    cloud.mu[:, 3] = 0.5
    cloud.log_s[:, 3] = np.log(1e4)
    first = renderer.render(cloud, _camera(timestamp=0.0))
    last = renderer.render(cloud, _camera(timestamp=1.0))
    np.testing.assert_array_equal(first.color, last.color)
    np.testing.assert_array_equal(first.depth, last.depth)

  def test_naive_equivalence(self):
    """Test the tiled renderer against the all-pairs renderer."""
    rng = np.random.default_rng(4)
    cam = _camera()
    for _ in range(50):
      cloud = _random_cloud(rng, int(rng.integers(1, 200)))
      tiled = renderer.render(cloud, cam)
      naive = renderer.render_naive(cloud, cam)
      self.assertTrue(np.all((tiled.alpha >= 0) & (tiled.alpha <= 1)))
      for name in ('color', 'depth', 'normal', 'alpha'):
        np.testing.assert_allclose(
            getattr(tiled, name), getattr(naive, name), rtol=0, atol=1e-6)

  def test_parallel_equals_serial(self):
    """Test threaded tiles are bitwise identical to serial ones."""
    rng = np.random.default_rng(5)
    cloud = _random_cloud(rng, 120)
    cam = _camera()
    serial = renderer.render(cloud, cam, RenderOptions(threads=1))
    parallel = renderer.render(cloud, cam, RenderOptions(threads=4))
    for name in ('color', 'depth', 'normal', 'alpha'):
      np.testing.assert_array_equal(
          getattr(serial, name), getattr(parallel, name))

  def test_alpha_monotone(self):
    """Test adding a translucent splat never lowers coverage."""
    rng = np.random.default_rng(6)
    cloud = _random_cloud(rng, 10)
    cloud.opacity_logit[:] = logit(0.2)
    extra = _random_cloud(rng, 1)
    extra.opacity_logit[:] = logit(0.2)
    cam = _camera()
    before = renderer.render(cloud, cam)
    after = renderer.render(cloud.concat(extra), cam)
    self.assertTrue(np.all(after.alpha >= before.alpha - 1e-15))

  def test_time_slice_consistency(self):
    """Test a 4D render equals the explicitly conditioned static render."""
    rng = np.random.default_rng(7)
    count = 6
    t = 0.4
    cloud = GaussianCloud(
        CONFIG, mu=np.column_stack([
            rng.uniform(-0.3, 0.3, size=(count, 2)),
            rng.uniform(3, 5, size=count),
            rng.uniform(0.3, 0.5, size=count)
        ]), q_left=rng.normal(size=(count, 4)),
        q_right=rng.normal(size=(count, 4)),
        log_s=np.log(rng.uniform(0.05, 0.2, size=(count, 4))),
        opacity_logit=rng.normal(size=count))
    cloud.sh[:, :CONFIG.num_sh] = rng.normal(scale=0.2, size=(count, 9, 3))
    cam = _camera(timestamp=t)
    static = GaussianCloud(CONFIG, mu=np.zeros((count, 4)), sh=cloud.sh)
    for i in range(count):
      conditioned = gaussian_field.condition_at_time(cloud[i], t)
      values, vectors = np.linalg.eigh(conditioned.cov3)
      if np.linalg.det(vectors) < 0:
        vectors[:, 0] *= -1.0
      rotation = np.eye(4)
      rotation[:3, :3] = vectors
      rotor = geometry.matrix_to_rotor(rotation)
      static.mu[i] = np.append(conditioned.mu3, t)
      static.q_left[i] = rotor.q_left
      static.q_right[i] = rotor.q_right
      static.log_s[i] = np.log(np.sqrt(np.append(values, 1.0)))
      static.opacity_logit[i] = logit(
          cloud[i].opacity * conditioned.temporal_weight)
    dynamic = renderer.render(cloud, cam)
    sliced = renderer.render(static, cam)
    np.testing.assert_allclose(dynamic.color, sliced.color, atol=1e-8)
    np.testing.assert_allclose(dynamic.alpha, sliced.alpha, atol=1e-8)

  def test_backward_position(self):
    """Test render gradients of a linear loss against central differences."""
    rng = np.random.default_rng(8)
    cloud = _random_cloud(rng, 3, size=16, focal=15.0)
    cloud.mu[:, 3] = 0.5
    cam = _camera(size=16, focal=15.0)
    weights = rng.normal(size=(16, 16, 3))

    def objective(c):
      return np.sum(weights * renderer.render(c, cam).color)

    _, context = renderer.render_with_context(cloud, cam)
    grads = renderer.render_backward(context, grad_color=weights)
    for index in np.ndindex(3, 3):
      plus, minus = cloud.copy(), cloud.copy()
      plus.mu[index] += 1e-6
      minus.mu[index] -= 1e-6
      numeric = (objective(plus) - objective(minus)) / 2e-6
      self.assertAlmostEqual(
          grads['mu'][index], numeric, delta=1e-4 * max(1.0, abs(numeric)))


if __name__ == '__main__':
  unittest.main()
