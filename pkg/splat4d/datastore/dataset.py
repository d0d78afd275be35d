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
"""Scene datasets in the EndoNeRF-style directory layout.

A dataset directory holds:
  images/%06d.png   8-bit color frames.
  depth/%06d.png    Optional 16-bit millimeter depth, or depth/%06d.pfm in
                    meters. Zero marks invalid depth.
  masks/%06d.png    Optional tool masks; nonzero pixels are excluded.
  poses.txt         One row per frame: 12 row-major world-to-camera extrinsic
                    values followed by fx fy cx cy. poses_bounds.npy in the
                    LLFF layout is read when poses.txt is absent.
  times.txt         Optional, one timestamp per frame; normalized to [0, 1].
"""

from concurrent.futures import ThreadPoolExecutor
import logging
import os

import numpy as np

from splat4d.datastore import image_io
from splat4d.utils.losses import FrameTargets
from splat4d.utils.renderer import Camera, CameraError

FRAME_PATTERN = '{0:06d}'
IMAGES_DIR = 'images'
DEPTH_DIR = 'depth'
MASKS_DIR = 'masks'
POSES_FILE = 'poses.txt'
POSES_BOUNDS_FILE = 'poses_bounds.npy'
TIMES_FILE = 'times.txt'
CAMERA_PATH_FILE = 'camera_path.txt'
# t, 3x4 extrinsic, fx fy cx cy width height
CAMERA_PATH_COLUMNS = 19
# Every SPLIT_EVERY-th frame is held out (index % SPLIT_EVERY == SPLIT_EVERY-1).
SPLIT_EVERY = 8
# Bounding box depth used when no depth maps exist.
FALLBACK_DEPTH = 5.0

log = logging.getLogger('splat4d.dataset')


class DatasetError(RuntimeError):
  """Raised for missing or malformed dataset input."""


class Frame():
  """One observation.

  Attributes:
    index (int): Position in the full sequence.
    color (np.ndarray): RGB in [0, 1] (H, W, 3).
    depth (np.ndarray): Depth in meters (H, W), or None.
    tool_mask (np.ndarray): True for tool pixels (H, W), or None.
    camera (Camera): Pose and intrinsics, timestamped.
  """

  def __init__(self, index, color, camera, depth=None, tool_mask=None):
    self.index = index
    self.color = color
    self.camera = camera
    self.depth = depth
    self.tool_mask = tool_mask

  @property
  def timestamp(self):
    return self.camera.timestamp

  @property
  def targets(self):
    """Supervision for the loss functions."""
    return FrameTargets(self.color, self.depth, self.tool_mask)


class SceneDataset():
  """Ordered frames with shared intrinsics.

  Attributes:
    frames (list[Frame]): Frames in time order.
    bounds (np.ndarray): Scene bounding box (2, 3), min then max corner.
    name (str): Label for logs.
  """

  def __init__(self, frames, bounds=None, name='scene'):
    self.frames = list(frames)
    self.name = name
    self.validate()
    self.bounds = (
        compute_bounds(self.frames)
        if bounds is None else np.asarray(bounds, dtype=np.float64))

  def __len__(self):
    return len(self.frames)

  def __iter__(self):
    return iter(self.frames)

  def __getitem__(self, index):
    return self.frames[index]

  def validate(self):
    """Checks frame sizes, poses and timestamp order.

    Raises:
      DatasetError: If any invariant is violated.
    """
    if not self.frames:
      return
    if any(frame.camera is None for frame in self.frames):
      raise DatasetError('Dataset {0:s} has frames without poses'.format(
          self.name))
    shape = self.frames[0].color.shape
    for frame in self.frames:
      if frame.color.shape != shape:
        raise DatasetError(
            'Frame {0:d} has shape {1!s}, expected {2!s}'.format(
                frame.index, frame.color.shape, shape))
      for name in ('depth', 'tool_mask'):
        extra = getattr(frame, name)
        if extra is not None and extra.shape != shape[:2]:
          raise DatasetError('Frame {0:d} {1:s} has shape {2!s}'.format(
              frame.index, name, extra.shape))
      camera = frame.camera
      if (camera.height, camera.width) != shape[:2]:
        raise DatasetError(
            'Frame {0:d} camera is {1:d}x{2:d}, image is {3:d}x{4:d}'.format(
                frame.index, camera.width, camera.height, shape[1], shape[0]))
    times = np.array([frame.timestamp for frame in self.frames])
    if np.any(np.diff(times) <= 0.0):
      raise DatasetError('Timestamps of {0:s} are not strictly increasing'.format(
          self.name))

  @property
  def has_depth(self):
    return any(frame.depth is not None for frame in self.frames)

  @property
  def has_masks(self):
    return any(frame.tool_mask is not None for frame in self.frames)

  @property
  def extent(self):
    """Diagonal length of the bounding box."""
    return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

  def split(self, split='train', every=SPLIT_EVERY):
    """Selects the train or validation frames.

    Args:
      split (str): 'train', 'val' or 'all'.
      every (int): Hold out one frame in every `every` (8 gives 7:1).

    Returns:
      SceneDataset: Subset sharing this dataset's bounds.

    Raises:
      DatasetError: On an unknown split name.
    """
    if split == 'all':
      frames = self.frames
    elif split == 'val':
      frames = [f for f in self.frames if f.index % every == every - 1]
    elif split == 'train':
      frames = [f for f in self.frames if f.index % every != every - 1]
    else:
      raise DatasetError('Unknown split: {0:s}'.format(split))
    return SceneDataset(
        frames, self.bounds, name='{0:s}/{1:s}'.format(self.name, split))


def back_project(depth, camera, mask=None):
  """World points of valid depth pixels.

  Args:
    depth (np.ndarray): Depth in meters (H, W).
    camera (Camera): View that produced the depth.
    mask (np.ndarray): Optional boolean (H, W) restricting the pixels.

  Returns:
    Tuple of (world points (M, 3), pixel (row, col) indices (M, 2)).
  """
  valid = depth > 0.0
  if mask is not None:
    valid &= mask
  rows, cols = np.nonzero(valid)
  z = depth[rows, cols]
  points = np.stack([
      (cols - camera.cx) / camera.fx * z, (rows - camera.cy) / camera.fy * z, z
  ], axis=1)
  world = (points - camera.translation) @ camera.rotation
  return world, np.stack([rows, cols], axis=1)


def compute_bounds(frames):
  """Bounding box of the observed surface.

  Depth maps are back-projected when present; otherwise the box spans the
  camera centers and their image corners at FALLBACK_DEPTH.
  """
  if not frames:
    return np.zeros((2, 3))
  points = []
  for frame in frames:
    if frame.depth is not None:
      world, _ = back_project(frame.depth, frame.camera)
      points.append(world)
  if not points or not sum(len(p) for p in points):
    for frame in frames:
      camera = frame.camera
      corners = np.array([[0.0, 0.0], [camera.width - 1.0, 0.0],
                          [0.0, camera.height - 1.0],
                          [camera.width - 1.0, camera.height - 1.0]])
      depth = np.zeros((camera.height, camera.width))
      depth[corners[:, 1].astype(int), corners[:, 0].astype(int)] = (
          FALLBACK_DEPTH)
      world, _ = back_project(depth, camera)
      points.append(world)
      points.append(camera.center[None])
  points = np.concatenate(points)
  return np.stack([points.min(axis=0), points.max(axis=0)])


def _read_poses(path, count):
  """Reads cameras from poses.txt or poses_bounds.npy."""
  text_path = os.path.join(path, POSES_FILE)
  npy_path = os.path.join(path, POSES_BOUNDS_FILE)
  if os.path.exists(text_path):
    try:
      rows = np.loadtxt(text_path, dtype=np.float64, ndmin=2)
    except ValueError as e:
      raise DatasetError(
          'Malformed pose file {0:s}: {1!s}'.format(text_path, e)) from e
    if rows.shape[1] != 16:
      raise DatasetError(
          'Malformed pose file {0:s}: expected 16 values per row, got '
          '{1:d}'.format(text_path, rows.shape[1]))
    poses = [(row[:12].reshape(3, 4), row[12:16]) for row in rows]
    source = text_path
  elif os.path.exists(npy_path):
    try:
      rows = np.load(npy_path).astype(np.float64)
      llff = rows[:, :15].reshape(-1, 3, 5)
    except (OSError, ValueError) as e:
      raise DatasetError(
          'Malformed pose file {0:s}: {1!s}'.format(npy_path, e)) from e
    poses = []
    for pose in llff:
      # LLFF columns are (down, right, back) camera axes in world space.
      camera_to_world = np.stack([pose[:, 1], pose[:, 0], -pose[:, 2]], axis=1)
      rotation = camera_to_world.T
      translation = -rotation @ pose[:, 3]
      height, width, focal = pose[:, 4]
      extrinsic = np.column_stack([rotation, translation])
      poses.append((extrinsic, np.array([focal, focal, width / 2.0,
                                         height / 2.0])))
    source = npy_path
  else:
    raise DatasetError('No {0:s} or {1:s} in {2:s}'.format(
        POSES_FILE, POSES_BOUNDS_FILE, path))
  if len(poses) != count:
    raise DatasetError('Pose file {0:s} has {1:d} rows for {2:d} images'.format(
        source, len(poses), count))
  return poses, source


def _read_times(path, count):
  times_path = os.path.join(path, TIMES_FILE)
  if not os.path.exists(times_path):
    return np.linspace(0.0, 1.0, count) if count > 1 else np.zeros(count)
  try:
    times = np.loadtxt(times_path, dtype=np.float64, ndmin=1)
  except ValueError as e:
    raise DatasetError(
        'Malformed times file {0:s}: {1!s}'.format(times_path, e)) from e
  if times.shape != (count,):
    raise DatasetError('Times file {0:s} has {1:d} values for {2:d} images'.format(
        times_path, times.size, count))
  span = times.max() - times.min()
  if span <= 0.0:
    return np.zeros(count)
  return (times - times.min()) / span


def _find_optional(directory, stem, extensions):
  for extension in extensions:
    candidate = os.path.join(directory, stem + extension)
    if os.path.exists(candidate):
      return candidate
  return None


def load_dataset(path, split='all', every=SPLIT_EVERY, threads=1):
  """Loads a dataset directory.

  Args:
    path (str): Dataset root.
    split (str): 'train', 'val' or 'all'.
    every (int): Validation stride (8 for a 7:1 split).
    threads (int): Worker threads for reading frames.

  Returns:
    SceneDataset: The requested split.

  Raises:
    DatasetError: If images or poses are missing or malformed.
  """
  images_dir = os.path.join(path, IMAGES_DIR)
  if not os.path.isdir(images_dir):
    raise DatasetError('Dataset images not found: {0:s}'.format(images_dir))
  stems = sorted(
      os.path.splitext(name)[0]
      for name in os.listdir(images_dir)
      if name.lower().endswith('.png'))
  if not stems:
    raise DatasetError('No PNG frames in {0:s}'.format(images_dir))
  poses, pose_source = _read_poses(path, len(stems))
  times = _read_times(path, len(stems))
  depth_dir = os.path.join(path, DEPTH_DIR)
  masks_dir = os.path.join(path, MASKS_DIR)

  def read_frame(index):
    stem = stems[index]
    color = image_io.read_color(os.path.join(images_dir, stem + '.png'))
    extrinsic, (fx, fy, cx, cy) = poses[index]
    try:
      camera = Camera(
          fx, fy, cx, cy, color.shape[1], color.shape[0], extrinsic[:, :3],
          extrinsic[:, 3], timestamp=times[index])
    except CameraError as e:
      raise DatasetError('Bad pose {0:d} in {1:s}: {2!s}'.format(
          index, pose_source, e)) from e
    depth_path = _find_optional(depth_dir, stem, ('.pfm', '.png'))
    mask_path = _find_optional(masks_dir, stem, ('.png',))
    depth = image_io.read_depth(depth_path) if depth_path else None
    mask = image_io.read_mask(mask_path) if mask_path else None
    return Frame(index, color, camera, depth, mask)

  with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
    frames = list(executor.map(read_frame, range(len(stems))))
  dataset = SceneDataset(frames, name=os.path.basename(os.path.normpath(path)))
  log.info('Loaded {0:d} frames from {1:s} (depth: {2!s}, masks: {3!s})'.format(
      len(frames), path, dataset.has_depth, dataset.has_masks))
  return dataset.split(split, every)


def save_dataset(dataset, path):
  """Writes a dataset in the documented layout.

  Color is written as 8-bit PNG, depth as PFM in meters.
  """
  images_dir = os.path.join(path, IMAGES_DIR)
  os.makedirs(images_dir, exist_ok=True)
  if dataset.has_depth:
    os.makedirs(os.path.join(path, DEPTH_DIR), exist_ok=True)
  if dataset.has_masks:
    os.makedirs(os.path.join(path, MASKS_DIR), exist_ok=True)
  pose_rows = []
  for number, frame in enumerate(dataset.frames):
    stem = FRAME_PATTERN.format(number)
    image_io.write_color(os.path.join(images_dir, stem + '.png'), frame.color)
    if frame.depth is not None:
      image_io.write_pfm(
          os.path.join(path, DEPTH_DIR, stem + '.pfm'), frame.depth)
    if frame.tool_mask is not None:
      image_io.write_mask(
          os.path.join(path, MASKS_DIR, stem + '.png'), frame.tool_mask)
    camera = frame.camera
    pose_rows.append(np.concatenate([
        np.column_stack([camera.rotation, camera.translation]).reshape(-1),
        [camera.fx, camera.fy, camera.cx, camera.cy]
    ]))
  np.savetxt(os.path.join(path, POSES_FILE), np.array(pose_rows), fmt='%.17g')
  np.savetxt(
      os.path.join(path, TIMES_FILE),
      np.array([frame.timestamp for frame in dataset.frames]), fmt='%.17g')
  write_camera_path(
      [frame.camera for frame in dataset.frames],
      os.path.join(path, CAMERA_PATH_FILE))
  log.info('Wrote {0:d} frames to {1:s}'.format(len(dataset), path))


def load_camera_path(path):
  """Reads views from a camera path file.

  Each row holds t, the 3x4 world-to-camera extrinsic row-major, then
  fx fy cx cy width height.

  Args:
    path (str): Camera path file.

  Returns:
    list[Camera]: Timestamped views in file order.

  Raises:
    DatasetError: If the file is missing or malformed.
  """
  try:
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
  except (OSError, ValueError) as e:
    raise DatasetError(
        'Could not read camera path {0:s}: {1!s}'.format(path, e)) from e
  if rows.shape[1] != CAMERA_PATH_COLUMNS:
    raise DatasetError(
        'Malformed camera path {0:s}: expected {1:d} values per row, got '
        '{2:d}'.format(path, CAMERA_PATH_COLUMNS, rows.shape[1]))
  cameras = []
  for number, row in enumerate(rows):
    extrinsic = row[1:13].reshape(3, 4)
    fx, fy, cx, cy, width, height = row[13:]
    try:
      cameras.append(Camera(
          fx, fy, cx, cy, int(width), int(height), extrinsic[:, :3],
          extrinsic[:, 3], timestamp=row[0]))
    except CameraError as e:
      raise DatasetError('Bad view {0:d} in {1:s}: {2!s}'.format(
          number, path, e)) from e
  return cameras


def write_camera_path(cameras, path):
  """Writes views in the camera path format."""
  rows = [
      np.concatenate([[camera.timestamp],
                      np.column_stack([camera.rotation,
                                       camera.translation]).reshape(-1),
                      [camera.fx, camera.fy, camera.cx, camera.cy,
                       camera.width, camera.height]]) for camera in cameras
  ]
  np.savetxt(path, np.array(rows).reshape(-1, CAMERA_PATH_COLUMNS),
             fmt='%.17g')
