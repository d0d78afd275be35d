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
"""Tests for the training objectives."""

import unittest

import numpy as np

from splat4d.model.gaussian_field import GaussianCloud
from splat4d.utils import gradient_checker
from splat4d.utils import losses
from splat4d.utils.losses import (
    FrameTargets, GradientBuffer, GradientError, LossShapeError, LossWeights)
from splat4d.utils.renderer import Camera, RenderBuffers


def _camera(height=8, width=8):
  return Camera(10.0, 10.0, (width - 1) / 2.0, (height - 1) / 2.0, width,
                height)


def _buffers(color, depth=None, normal=None, alpha=None):
  height, width = color.shape[:2]
  return RenderBuffers(
      color, np.zeros((height, width)) if depth is None else depth,
      np.zeros((height, width, 3)) if normal is None else normal,
      np.ones((height, width)) if alpha is None else alpha)


class DepthNormalTest(unittest.TestCase):
  """Tests for normals derived from depth."""

  def test_fronto_parallel(self):
    """Test a constant-depth plane faces the camera."""
    cam = _camera()
    normals, valid = losses.normals_from_depth(np.full((8, 8), 2.0), cam)
    self.assertEqual(np.count_nonzero(valid), 36)
    self.assertFalse(np.any(valid[0]) or np.any(valid[:, -1]))
    np.testing.assert_allclose(normals[valid], np.tile([0, 0, -1], (36, 1)),
                               atol=1e-12)
    self.assertFalse(np.any(normals[~valid]))

  def test_tilted_plane(self):
    """Test a plane tilted 45 degrees about the x-axis."""
    cam = _camera()
    rows = np.indices((8, 8))[0].astype(np.float64)
    depth = 3.0 / (1.0 + (rows - cam.cy) / cam.fy)
    normals, valid = losses.normals_from_depth(depth, cam)
    expected = np.array([0.0, -1.0, -1.0]) / np.sqrt(2.0)
    np.testing.assert_allclose(
        normals[valid], np.tile(expected, (np.count_nonzero(valid), 1)),
        atol=1e-12)

  def test_invalid_pixel(self):
    """Test an invalid pixel masks its four neighbors."""
    cam = _camera()
    depth = np.full((8, 8), 2.0)
    depth[4, 4] = 0.0
    _, valid = losses.normals_from_depth(depth, cam)
    for row, col in ((4, 4), (3, 4), (5, 4), (4, 3), (4, 5)):
      self.assertFalse(valid[row, col])
    self.assertTrue(valid[3, 3])
    self.assertEqual(np.count_nonzero(valid), 31)

  def test_shape(self):
    """Test the depth map must match the camera."""
    with self.assertRaises(LossShapeError):
      losses.normals_from_depth(np.ones((4, 4)), _camera())

  def test_backward(self):
    """Test the depth-normal gradient against central differences."""
    rng = np.random.default_rng(0)
    cam = _camera(6, 7)
    depth = 2.0 + 0.3 * rng.uniform(size=(6, 7))
    weights = rng.normal(size=(6, 7, 3))
    _, _, cache = losses.normals_from_depth_with_cache(depth, cam)
    grad = losses.normals_from_depth_backward(weights, cache)
    for flat in range(depth.size):
      saved = depth.flat[flat]
      depth.flat[flat] = saved + 1e-6
      plus = np.sum(weights * losses.normals_from_depth(depth, cam)[0])
      depth.flat[flat] = saved - 1e-6
      minus = np.sum(weights * losses.normals_from_depth(depth, cam)[0])
      depth.flat[flat] = saved
      self.assertAlmostEqual(grad.flat[flat], (plus - minus) / 2e-6, delta=1e-6)


class EnacTest(unittest.TestCase):
  """Tests for the normal alignment term."""

  def test_identical(self):
    """Test identical maps give zero."""
    normals = np.tile([0.0, 0.6, -0.8], (4, 4, 1))
    self.assertEqual(
        losses.enac_loss(normals, normals, np.ones((4, 4), dtype=bool)), 0.0)

  def test_antipodal(self):
    """Test opposite normals give exactly two."""
    n_depth = np.tile([0.0, 0.0, -1.0], (4, 4, 1))
    self.assertEqual(
        losses.enac_loss(n_depth, -n_depth, np.ones((4, 4), dtype=bool)), 2.0)

  def test_empty_mask(self):
    """Test an empty mask gives zero."""
    rng = np.random.default_rng(1)
    self.assertEqual(
        losses.enac_loss(
            rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3, 3)),
            np.zeros((3, 3), dtype=bool)), 0.0)

  def test_recomputation(self):
    """Test random maps against a per-pixel loop."""
    rng = np.random.default_rng(2)
    n_depth = rng.normal(size=(5, 6, 3))
    n_depth /= np.linalg.norm(n_depth, axis=-1, keepdims=True)
    n_gauss = rng.normal(size=(5, 6, 3))
    n_gauss /= np.linalg.norm(n_gauss, axis=-1, keepdims=True)
    mask = rng.uniform(size=(5, 6)) > 0.4
    total = 0.0
    for row in range(5):
      for col in range(6):
        if mask[row, col]:
          total += np.sum(np.abs(n_depth[row, col] - n_gauss[row, col]))
    value = losses.enac_loss(n_depth, n_gauss, mask)
    self.assertAlmostEqual(value, total / np.count_nonzero(mask), places=12)
    self.assertLessEqual(value, 6.0)


class RenderLossTest(unittest.TestCase):
  """Tests for the photometric loss."""

  def setUp(self):
    rng = np.random.default_rng(3)
    self.color = rng.uniform(0.1, 0.8, size=(12, 12, 3))

  def test_identical(self):
    """Test a perfect render has zero loss."""
    self.assertEqual(
        losses.render_loss(_buffers(self.color), FrameTargets(self.color)), 0.0)

  def test_offset(self):
    """Test a uniform offset under pure L1."""
    weights = LossWeights(ssim=0.0, depth=0.0)
    value = losses.render_loss(
        _buffers(self.color + 0.05), FrameTargets(self.color), weights)
    self.assertAlmostEqual(value, 0.05, places=12)

  def test_components(self):
    """Test the mix against direct metric calls."""
    rng = np.random.default_rng(4)
    rendered = np.clip(self.color + rng.normal(scale=0.1, size=(12, 12, 3)),
                       0.0, 1.0)
    depth = rng.uniform(1.0, 2.0, size=(12, 12))
    target_depth = depth + 0.25
    target_depth[0] = 0.0
    tool_mask = np.zeros((12, 12), dtype=bool)
    tool_mask[5:7, 5:7] = True
    weights = LossWeights(ssim=0.2, depth=0.1)
    value = losses.render_loss(
        _buffers(rendered, depth=depth),
        FrameTargets(self.color, target_depth, tool_mask), weights)
    valid = ~tool_mask
    l1 = np.mean(np.abs(rendered - self.color)[valid])
    ssim = losses.metrics.ssim(rendered, self.color, valid)
    self.assertAlmostEqual(
        value, 0.8 * l1 + 0.2 * (1.0 - ssim) + 0.1 * 0.25, places=12)

  def test_tool_mask(self):
    """Test tool pixels do not contribute."""
    tool_mask = np.zeros((12, 12), dtype=bool)
    tool_mask[:3] = True
    corrupted = self.color.copy()
    corrupted[:3] = 0.0
    weights = LossWeights(ssim=0.0)
    self.assertEqual(
        losses.render_loss(
            _buffers(corrupted), FrameTargets(self.color, tool_mask=tool_mask),
            weights), 0.0)

  def test_shape_mismatch(self):
    """Test mismatched targets are rejected."""
    with self.assertRaises(LossShapeError):
      losses.render_loss(_buffers(self.color), FrameTargets(self.color[:5]))
    with self.assertRaises(LossShapeError):
      losses.render_loss(
          _buffers(self.color), FrameTargets(self.color, depth=np.ones((3, 3))))

  def test_color_gradient(self):
    """Test the color gradient against central differences."""
    rng = np.random.default_rng(5)
    rendered = self.color + rng.normal(scale=0.1, size=(12, 12, 3))
    targets = FrameTargets(self.color)
    _, grad, _ = losses.render_loss_terms(_buffers(rendered), targets)
    for flat in range(0, rendered.size, 11):
      saved = rendered.flat[flat]
      rendered.flat[flat] = saved + 1e-7
      plus = losses.render_loss(_buffers(rendered), targets)
      rendered.flat[flat] = saved - 1e-7
      minus = losses.render_loss(_buffers(rendered), targets)
      rendered.flat[flat] = saved
      self.assertAlmostEqual(grad.flat[flat], (plus - minus) / 2e-7, delta=1e-6)


class TotalLossTest(unittest.TestCase):
  """Tests for the combined objective."""

  def test_arithmetic(self):
    """Test the weighted sum."""
    self.assertAlmostEqual(
        losses.total_loss(0.1, 0.2, LossWeights(enac=0.05)), 0.11, places=15)
    self.assertEqual(losses.total_loss(0.1, 0.2, LossWeights(enac=0.0)), 0.1)

  def test_weights(self):
    """Test weight validation."""
    with self.assertRaises(ValueError):
      LossWeights(enac=-1.0)
    with self.assertRaises(ValueError):
      LossWeights(depth=float('nan'))
    with self.assertRaises(ValueError):
      LossWeights(ssim=1.5)

  def test_linearity(self):
    """Test the total gradient is linear in the alignment weight."""
    cloud, cam, targets, weights = gradient_checker.build_fixture(5, seed=1)
    values = []
    buffers = []
    for enac in (0.0, 1.0, 2.0):
      value, grads = losses.backward(
          cloud, cam, targets, weights.replace(enac=enac))
      values.append(value)
      buffers.append(grads)
    self.assertAlmostEqual(
        values[2] - values[1], values[1] - values[0], places=12)
    expected = buffers[0].scaled_add(
        buffers[1].scaled_add(buffers[0], -1.0), 2.0)
    for (name, actual), (_, predicted) in zip(buffers[2].items(),
                                              expected.items()):
      np.testing.assert_allclose(actual, predicted, rtol=1e-9, atol=1e-12,
                                 err_msg=name)

  def test_detach_depth(self):
    """Test detaching changes only the depth path of the gradient."""
    cloud, cam, targets, weights = gradient_checker.build_fixture(3, seed=2)
    weights = weights.replace(enac=1.0)
    value, attached = losses.backward(cloud, cam, targets, weights)
    detached_value, detached = losses.backward(
        cloud, cam, targets, weights.replace(enac_detach_depth=True))
    self.assertEqual(value, detached_value)
    np.testing.assert_array_equal(attached.sh, detached.sh)
    self.assertFalse(np.allclose(attached.mu, detached.mu))


class BackwardTest(unittest.TestCase):
  """Tests for the full backward pass."""

  def test_evaluate_matches_backward(self):
    """Test the forward-only terms agree with the backward pass."""
    cloud, cam, targets, weights = gradient_checker.build_fixture(4, seed=3)
    value, _, terms = losses.backward(
        cloud, cam, targets, weights, return_terms=True)
    evaluated = losses.evaluate(cloud, cam, targets, weights)
    self.assertEqual(value, evaluated['total'])
    self.assertEqual(terms, evaluated)
    self.assertGreater(terms['enac'], 0.0)

  def test_empty_cloud(self):
    """Test an empty cloud gives empty gradients."""
    _, cam, targets, weights = gradient_checker.build_fixture(1)
    value, grads = losses.backward(GaussianCloud(), cam, targets, weights)
    self.assertGreater(value, 0.0)
    self.assertEqual(len(grads), 0)

  def test_transparent_cloud(self):
    """Test a fully transparent cloud has vanishing gradients."""
    cloud, cam, targets, weights = gradient_checker.build_fixture(4, seed=4)
    cloud.opacity_logit[:] = -60.0
    _, grads = losses.backward(cloud, cam, targets, weights)
    for name, value in grads.items():
      np.testing.assert_allclose(value, 0.0, atol=1e-20, err_msg=name)

  def test_single_gaussian_gradient(self):
    """Test every entry of a single Gaussian at 4x4 pixels."""
    cloud, cam, targets, weights = gradient_checker.build_fixture(
        1, size=4, seed=5)
    report = gradient_checker.check_gradients(
        cloud, cam, targets, weights, max_samples=1000)
    self.assertTrue(report.passed, report.to_text())

  def test_check_finite(self):
    """Test a non-finite entry is reported with its Gaussian index."""
    cloud, _, _, _ = gradient_checker.build_fixture(3)
    grads = GradientBuffer.zeros_like(cloud)
    grads.log_s[2, 1] = np.nan
    with self.assertRaises(GradientError) as error:
      grads.check_finite()
    self.assertEqual(error.exception.index, 2)
    self.assertEqual(error.exception.group, 'log_s')

  def test_rotor_view(self):
    """Test the rotor gradient concatenates both quaternions."""
    cloud, _, _, _ = gradient_checker.build_fixture(2)
    grads = GradientBuffer.zeros_like(cloud)
    grads.q_right[1, 2] = 3.0
    self.assertEqual(grads.rotor.shape, (3, 8))
    self.assertEqual(grads.rotor[1, 6], 3.0)


if __name__ == '__main__':
  unittest.main()
