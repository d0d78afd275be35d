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
"""Synthetic dynamic scenes rendered from a ground-truth cloud.

Particles sit on a wavy sheet in front of an orbiting camera. Their motion
is encoded in the 4D covariances themselves: a Gaussian whose space-time
covariance is sheared by a velocity v moves with v when conditioned on t.
"""

import logging

import numpy as np
from scipy.special import logit

from splat4d.datastore.dataset import Frame, SceneDataset
from splat4d.model import geometry
from splat4d.model.appearance import SH_C0, AppearanceConfig
from splat4d.model.gaussian_field import GaussianCloud
from splat4d.utils import renderer
from splat4d.utils.renderer import Camera

MOTIONS = ('static', 'oscillating', 'shearing')
STATIC_TIME_SCALE = 1e4
SHEARING_TIME_SCALE = 10.0
# Temporal scale of an oscillation segment, relative to the segment length.
SEGMENT_OVERLAP = 0.6
# Extra segments on each side of [0, 1] so both ends see the same neighbors.
SEGMENT_PADDING = 4
SEGMENT_OPACITY = 0.5
PARTICLE_OPACITY = 0.8
TOOL_COLOR = (0.75, 0.75, 0.78)

log = logging.getLogger('splat4d.synthetic')


class SyntheticSpec():
  """Parameters of a synthetic scene.

  Attributes:
    gaussians (int): Number of particles.
    motion (str): 'static', 'oscillating' or 'shearing'.
    width (int): Image width.
    height (int): Image height.
    frames (int): Number of frames, timestamps evenly spaced over [0, 1].
    orbit_degrees (float): Camera swing amplitude; the angle is
        orbit * sin(2 pi t).
    distance (float): Camera distance from the origin.
    amplitude (float): Motion amplitude in scene units.
    segments (int): Oscillation segments per unit time.
    tool_mask (bool): Paint a moving tool and emit its mask.
    seed (int): Random seed.
    appearance (AppearanceConfig): Color basis of the cloud.
  """

  def __init__(
      self, gaussians=200, motion='oscillating', width=64, height=64,
      frames=20, orbit_degrees=15.0, distance=3.0, amplitude=0.15, segments=8,
      tool_mask=False, seed=0, appearance=None):
    if motion not in MOTIONS:
      raise ValueError('Unknown motion {0:s}, expected one of {1!s}'.format(
          motion, MOTIONS))
    if gaussians < 0 or frames < 1 or segments < 1:
      raise ValueError('Synthetic counts must be positive')
    self.gaussians = int(gaussians)
    self.motion = motion
    self.width = int(width)
    self.height = int(height)
    self.frames = int(frames)
    self.orbit_degrees = float(orbit_degrees)
    self.distance = float(distance)
    self.amplitude = float(amplitude)
    self.segments = int(segments)
    self.tool_mask = bool(tool_mask)
    self.seed = int(seed)
    self.appearance = appearance or AppearanceConfig(1, 1, 1.0)

  @classmethod
  def from_config(cls, section, appearance=None, seed=0):
    """Builds a spec from the [synthetic] config table."""
    return cls(
        gaussians=section['gaussians'], motion=section['motion'],
        width=section['width'], height=section['height'],
        frames=section['frames'], orbit_degrees=section['orbit_degrees'],
        distance=section['distance'], amplitude=section['amplitude'],
        segments=section['segments'], tool_mask=section['tool_mask'],
        seed=seed, appearance=appearance)

  @property
  def timestamps(self):
    if self.frames == 1:
      return np.zeros(1)
    return np.arange(self.frames) / (self.frames - 1.0)


def covariance_to_params(cov4):
  """Rotor quaternions and log-scales reproducing a 4D covariance.

  Args:
    cov4 (np.ndarray): Symmetric positive definite matrix (4, 4).

  Returns:
    Tuple of (q_left, q_right, log_s).
  """
  values, vectors = np.linalg.eigh(cov4)
  if np.linalg.det(vectors) < 0.0:
    vectors[:, 0] = -vectors[:, 0]
  rotor = geometry.matrix_to_rotor(vectors)
  return rotor.q_left, rotor.q_right, 0.5 * np.log(values)


def sheared_covariance(cov3, velocity, time_scale):
  """Space-time covariance of a blob moving with a constant velocity."""
  shear = np.eye(4)
  shear[:3, 3] = velocity
  base = np.zeros((4, 4))
  base[:3, :3] = cov3
  base[3, 3] = time_scale * time_scale
  return shear @ base @ shear.T


def _sheet(rng, count, half):
  """Positions, orientations and colors of particles on a wavy sheet."""
  xy = rng.uniform(-half, half, size=(count, 2))
  x, y = xy[:, 0], xy[:, 1]
  z = 0.1 * np.sin(np.pi * x) * np.cos(np.pi * y)
  positions = np.column_stack([xy, z])
  slope_x = 0.1 * np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)
  slope_y = -0.1 * np.pi * np.sin(np.pi * x) * np.sin(np.pi * y)
  normals = np.column_stack([-slope_x, -slope_y, np.ones(count)])
  normals /= np.linalg.norm(normals, axis=1, keepdims=True)
  rotations = np.zeros((count, 3, 3))
  for i, normal in enumerate(normals):
    tangent = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    tangent /= np.linalg.norm(tangent)
    rotations[i] = np.column_stack([tangent, np.cross(normal, tangent), normal])
  colors = np.clip(
      np.column_stack([
          0.5 + 0.35 * np.sin(3.0 * x + 1.0),
          0.5 + 0.35 * np.sin(3.0 * y + 2.0),
          0.5 + 0.3 * np.cos(2.0 * (x + y))
      ]) + rng.normal(scale=0.05, size=(count, 3)), 0.05, 0.95)
  return positions, rotations, colors


def build_ground_truth(spec):
  """Builds the ground-truth cloud of a synthetic scene.

  Returns:
    Tuple of (GaussianCloud, bounds (2, 3)).
  """
  rng = np.random.default_rng(spec.seed)
  config = spec.appearance
  count = spec.gaussians
  half = 0.8
  positions, rotations, colors = _sheet(rng, count, half)
  sigma = 1.2 * 2.0 * half / np.sqrt(max(count, 1))
  spatial = np.array([sigma, sigma, 0.25 * sigma])
  directions = rng.normal(size=(count, 2))
  directions /= np.linalg.norm(directions, axis=1, keepdims=True)
  directions = np.column_stack([directions, np.zeros(count)])

  records = []
  for i in range(count):
    cov3 = rotations[i] @ np.diag(spatial**2) @ rotations[i].T
    if spec.motion == 'static':
      samples = [(np.append(positions[i], 0.5),
                  sheared_covariance(cov3, np.zeros(3), STATIC_TIME_SCALE),
                  PARTICLE_OPACITY)]
    elif spec.motion == 'shearing':
      velocity = spec.amplitude * np.array([positions[i, 1] / half, 0.0, 0.0])
      samples = [(np.append(positions[i], 0.5),
                  sheared_covariance(cov3, velocity, SHEARING_TIME_SCALE),
                  PARTICLE_OPACITY)]
    else:
      samples = []
      time_scale = SEGMENT_OVERLAP / spec.segments
      for j in range(-SEGMENT_PADDING, spec.segments + SEGMENT_PADDING):
        center = (j + 0.5) / spec.segments
        phase = 2.0 * np.pi * center
        mean = positions[i] + spec.amplitude * np.sin(phase) * directions[i]
        velocity = (
            spec.amplitude * 2.0 * np.pi * np.cos(phase) * directions[i])
        samples.append((np.append(mean, center),
                        sheared_covariance(cov3, velocity, time_scale),
                        SEGMENT_OPACITY))
    for mean, cov4, opacity in samples:
      records.append((i, mean, covariance_to_params(cov4), opacity))

  total = len(records)
  sh = np.zeros((total, config.num_coeffs, 3))
  mu = np.zeros((total, 4))
  q_left = np.zeros((total, 4))
  q_right = np.zeros((total, 4))
  log_s = np.zeros((total, 4))
  opacity = np.zeros(total)
  for row, (particle, mean, (left, right, scales), alpha) in enumerate(records):
    mu[row] = mean
    q_left[row] = left
    q_right[row] = right
    log_s[row] = scales
    opacity[row] = alpha
    sh[row, 0] = (colors[particle] - 0.5) / SH_C0
  cloud = GaussianCloud(
      config, mu=mu, q_left=q_left, q_right=q_right, log_s=log_s,
      opacity_logit=logit(opacity), sh=sh)

  margin = spec.amplitude + 3.0 * sigma
  bounds = np.array([[-half - margin, -half - margin, -0.1 - margin],
                     [half + margin, half + margin, 0.1 + margin]])
  return cloud, bounds


def orbit_camera(spec, t):
  """Camera of the orbit at normalized time t."""
  angle = np.radians(spec.orbit_degrees) * np.sin(2.0 * np.pi * t)
  eye = spec.distance * np.array([np.sin(angle), 0.0, -np.cos(angle)])
  focal = 1.2 * spec.width
  return Camera.look_at(
      eye, (0.0, 0.0, 0.0), fx=focal, fy=focal, cx=(spec.width - 1) / 2.0,
      cy=(spec.height - 1) / 2.0, width=spec.width, height=spec.height,
      timestamp=t)


def tool_mask(spec, t):
  """A vertical bar sweeping across the upper half of the image."""
  column = spec.width * (0.25 + 0.5 * t)
  cols = np.arange(spec.width)
  bar = np.abs(cols - column) < max(1.0, spec.width / 20.0)
  mask = np.zeros((spec.height, spec.width), dtype=bool)
  mask[:spec.height // 2] = bar[None, :]
  return mask


def make_synthetic(spec, options=None):
  """Renders a synthetic dataset from its ground-truth cloud.

  Args:
    spec (SyntheticSpec): Scene parameters.
    options (RenderOptions): Renderer settings.

  Returns:
    Tuple of (SceneDataset, ground-truth GaussianCloud).
  """
  cloud, bounds = build_ground_truth(spec)
  frames = []
  for index, t in enumerate(spec.timestamps):
    camera = orbit_camera(spec, t)
    buffers = renderer.render(cloud, camera, options)
    color = buffers.color
    mask = None
    if spec.tool_mask:
      mask = tool_mask(spec, t)
      color = np.where(mask[..., None], np.array(TOOL_COLOR), color)
    frames.append(Frame(index, color, camera, buffers.depth, mask))
  log.info('Synthetic {0:s} scene: {1:d} particles, {2:d} Gaussians, '
           '{3:d} frames'.format(spec.motion, spec.gaussians, len(cloud),
                                 len(frames)))
  return SceneDataset(frames, bounds, name='synthetic-' + spec.motion), cloud
