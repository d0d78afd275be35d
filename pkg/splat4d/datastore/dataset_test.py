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
"""Tests for dataset loading and saving."""

import os
import tempfile
import unittest

import numpy as np

from splat4d.datastore import dataset
from splat4d.datastore import image_io
from splat4d.datastore.dataset import DatasetError, Frame, SceneDataset
from splat4d.utils.renderer import Camera


def _camera(t, width=6, height=4):
  eye = (np.sin(t), 0.0, -3.0)
  return Camera.look_at(
      eye, (0.0, 0.0, 0.0), fx=5.0, fy=5.0, cx=2.5, cy=1.5, width=width,
      height=height, timestamp=t)


def _frames(count, rng, depth=True, masks=False):
  frames = []
  for index in range(count):
    t = index / max(count - 1.0, 1.0)
    frames.append(Frame(
        index, rng.uniform(size=(4, 6, 3)), _camera(t),
        rng.uniform(2.0, 4.0, size=(4, 6)) if depth else None,
        rng.uniform(size=(4, 6)) > 0.7 if masks else None))
  return frames


class SceneDatasetTest(unittest.TestCase):
  """Tests for SceneDataset."""

  def setUp(self):
    self.rng = np.random.default_rng(0)

  def test_split(self):
    """Test every eighth frame is held out."""
    scene = SceneDataset(_frames(17, self.rng, depth=False))
    val = scene.split('val')
    train = scene.split('train')
    self.assertEqual([f.index for f in val], [7, 15])
    self.assertEqual(len(train), 15)
    self.assertNotIn(7, [f.index for f in train])
    np.testing.assert_array_equal(val.bounds, scene.bounds)
    self.assertEqual(len(scene.split('all')), 17)
    with self.assertRaises(DatasetError):
      scene.split('test')

  def test_timestamp_order(self):
    """Test timestamps must strictly increase."""
    frames = _frames(3, self.rng)
    frames[2].camera = frames[1].camera
    with self.assertRaises(DatasetError):
      SceneDataset(frames)

  def test_missing_pose(self):
    """Test frames need a camera."""
    frames = _frames(2, self.rng)
    frames[1].camera = None
    with self.assertRaises(DatasetError):
      SceneDataset(frames)

  def test_shape_mismatch(self):
    """Test depth and camera sizes must match the image."""
    frames = _frames(2, self.rng)
    frames[0].depth = np.ones((3, 6))
    with self.assertRaises(DatasetError):
      SceneDataset(frames)
    frames = _frames(2, self.rng)
    frames[1].camera = _camera(1.0, width=7)
    with self.assertRaises(DatasetError):
      SceneDataset(frames)

  def test_bounds(self):
    """Test bounds enclose the back-projected depth."""
    frames = _frames(2, self.rng)
    scene = SceneDataset(frames)
    world, pixels = dataset.back_project(frames[0].depth, frames[0].camera)
    self.assertEqual(len(world), 24)
    self.assertEqual(pixels.shape, (24, 2))
    self.assertTrue(np.all(world >= scene.bounds[0] - 1e-12))
    self.assertTrue(np.all(world <= scene.bounds[1] + 1e-12))
    self.assertGreater(scene.extent, 0.0)

  def test_bounds_without_depth(self):
    """Test the fallback box contains the cameras."""
    scene = SceneDataset(_frames(2, self.rng, depth=False))
    for frame in scene:
      center = frame.camera.center
      self.assertTrue(np.all(center >= scene.bounds[0] - 1e-12))
      self.assertTrue(np.all(center <= scene.bounds[1] + 1e-12))

  def test_back_project(self):
    """Test back-projected points reproject onto their pixels."""
    frame = _frames(1, self.rng)[0]
    mask = np.zeros((4, 6), dtype=bool)
    mask[1, 2] = True
    world, pixels = dataset.back_project(frame.depth, frame.camera, mask)
    np.testing.assert_array_equal(pixels, [[1, 2]])
    camera = frame.camera
    point = camera.rotation @ world[0] + camera.translation
    self.assertAlmostEqual(point[2], frame.depth[1, 2], places=12)
    self.assertAlmostEqual(
        camera.fx * point[0] / point[2] + camera.cx, 2.0, places=12)
    self.assertAlmostEqual(
        camera.fy * point[1] / point[2] + camera.cy, 1.0, places=12)


class LoadSaveTest(unittest.TestCase):
  """Tests for the on-disk layout."""

  def setUp(self):
    self.tmp = tempfile.TemporaryDirectory()
    self.rng = np.random.default_rng(1)

  def tearDown(self):
    self.tmp.cleanup()

  def test_save_load(self):
    """Test a saved dataset loads with the same cameras and images."""
    scene = SceneDataset(_frames(9, self.rng, masks=True), name='toy')
    dataset.save_dataset(scene, self.tmp.name)
    self.assertTrue(
        os.path.exists(os.path.join(self.tmp.name, 'images', '000008.png')))
    loaded = dataset.load_dataset(self.tmp.name, threads=2)
    self.assertEqual(len(loaded), 9)
    self.assertTrue(loaded.has_depth)
    self.assertTrue(loaded.has_masks)
    for original, frame in zip(scene, loaded):
      np.testing.assert_allclose(
          frame.color, original.color, atol=0.5 / 255.0 + 1e-12)
      np.testing.assert_allclose(
          frame.depth, original.depth.astype(np.float32))
      np.testing.assert_array_equal(frame.tool_mask, original.tool_mask)
      np.testing.assert_allclose(
          frame.camera.rotation, original.camera.rotation, atol=1e-15)
      np.testing.assert_allclose(
          frame.camera.translation, original.camera.translation, atol=1e-15)
      self.assertAlmostEqual(frame.timestamp, original.timestamp, places=15)
      self.assertEqual(frame.camera.fx, 5.0)

  def test_load_split(self):
    """Test load_dataset applies the split."""
    dataset.save_dataset(
        SceneDataset(_frames(8, self.rng, depth=False)), self.tmp.name)
    val = dataset.load_dataset(self.tmp.name, split='val')
    self.assertEqual([f.index for f in val], [7])
    self.assertFalse(val.has_depth)

  def test_missing_times(self):
    """Test timestamps default to an even spacing."""
    dataset.save_dataset(
        SceneDataset(_frames(3, self.rng, depth=False)), self.tmp.name)
    os.remove(os.path.join(self.tmp.name, dataset.TIMES_FILE))
    loaded = dataset.load_dataset(self.tmp.name)
    self.assertEqual([f.timestamp for f in loaded], [0.0, 0.5, 1.0])

  def test_missing_poses(self):
    """Test a dataset without poses is rejected."""
    dataset.save_dataset(
        SceneDataset(_frames(2, self.rng, depth=False)), self.tmp.name)
    os.remove(os.path.join(self.tmp.name, dataset.POSES_FILE))
    with self.assertRaises(DatasetError):
      dataset.load_dataset(self.tmp.name)

  def test_pose_count(self):
    """Test the pose file must have one row per image."""
    dataset.save_dataset(
        SceneDataset(_frames(2, self.rng, depth=False)), self.tmp.name)
    path = os.path.join(self.tmp.name, dataset.POSES_FILE)
    with open(path, 'r') as poses:
      first = poses.readline()
    with open(path, 'w') as poses:
      poses.write(first)
    with self.assertRaises(DatasetError):
      dataset.load_dataset(self.tmp.name)

  def test_missing_images(self):
    """Test a directory without images is rejected."""
    with self.assertRaises(DatasetError):
      dataset.load_dataset(self.tmp.name)

  def test_camera_path(self):
    """Test the saved camera path reproduces the frame cameras."""
    scene = SceneDataset(_frames(3, self.rng, depth=False))
    dataset.save_dataset(scene, self.tmp.name)
    cameras = dataset.load_camera_path(
        os.path.join(self.tmp.name, dataset.CAMERA_PATH_FILE))
    self.assertEqual(len(cameras), 3)
    for frame, camera in zip(scene, cameras):
      self.assertEqual(camera.timestamp, frame.timestamp)
      self.assertEqual((camera.width, camera.height), (6, 4))
      np.testing.assert_array_equal(camera.rotation, frame.camera.rotation)
      np.testing.assert_array_equal(
          camera.translation, frame.camera.translation)

  def test_camera_path_errors(self):
    """Test malformed camera paths name the file."""
    path = os.path.join(self.tmp.name, 'path.txt')
    with open(path, 'w') as path_file:
      path_file.write('0.5 1 0 0 0\n')
    with self.assertRaisesRegex(DatasetError, 'path.txt'):
      dataset.load_camera_path(path)
    with self.assertRaises(DatasetError):
      dataset.load_camera_path(os.path.join(self.tmp.name, 'absent.txt'))
    row = [0.0] + [2.0] * 12 + [5.0, 5.0, 2.5, 1.5, 6.0, 4.0]
    with open(path, 'w') as path_file:
      path_file.write(' '.join(str(v) for v in row) + '\n')
    with self.assertRaises(DatasetError):
      dataset.load_camera_path(path)
    identity = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]
    row = [1.5] + identity + [5.0, 5.0, 2.5, 1.5, 6.0, 4.0]
    with open(path, 'w') as path_file:
      path_file.write(' '.join(str(v) for v in row) + '\n')
    with self.assertRaisesRegex(DatasetError, 'Timestamp'):
      dataset.load_camera_path(path)

  def test_sample_camera_path(self):
    """Test the sample camera path in test_data loads."""
    path = os.path.join(
        os.path.dirname(__file__), '..', '..', 'test_data', 'camera_path.txt')
    cameras = dataset.load_camera_path(path)
    self.assertEqual([c.timestamp for c in cameras],
                     [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(cameras[0].center, (0.0, 0.0, -3.0))
    self.assertEqual((cameras[0].width, cameras[0].height), (32, 32))

  def test_poses_bounds(self):
    """Test LLFF poses are converted to world-to-camera extrinsics."""
    os.makedirs(os.path.join(self.tmp.name, 'images'))
    image_io.write_color(
        os.path.join(self.tmp.name, 'images', '000000.png'),
        np.zeros((4, 6, 3)))
    pose = np.zeros((3, 5))
    pose[:, 0] = (0.0, 1.0, 0.0)
    pose[:, 1] = (1.0, 0.0, 0.0)
    pose[:, 2] = (0.0, 0.0, -1.0)
    pose[:, 3] = (0.0, 0.0, -3.0)
    pose[:, 4] = (4.0, 6.0, 5.0)
    row = np.concatenate([pose.reshape(-1), [1.0, 10.0]])[None]
    np.save(os.path.join(self.tmp.name, dataset.POSES_BOUNDS_FILE), row)
    loaded = dataset.load_dataset(self.tmp.name)
    camera = loaded[0].camera
    np.testing.assert_allclose(camera.rotation, np.eye(3))
    np.testing.assert_allclose(camera.translation, (0.0, 0.0, 3.0))
    self.assertEqual((camera.fx, camera.cx, camera.cy), (5.0, 3.0, 2.0))


if __name__ == '__main__':
  unittest.main()
