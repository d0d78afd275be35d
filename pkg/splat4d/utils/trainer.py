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
"""Optimization of Gaussian clouds against a dataset."""

import csv
from datetime import datetime
import logging
import time

import numpy as np
from scipy.special import expit, logit

from splat4d.datastore import dataset as scene_dataset
from splat4d.datastore.dataset import DatasetError
from splat4d.model import geometry
from splat4d.model.appearance import SH_C0, AppearanceConfig
from splat4d.model.gaussian_field import GaussianCloud, PARAMETER_GROUPS
from splat4d.utils import losses
from splat4d.utils import metrics
from splat4d.utils import renderer

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-15
SPLIT_CHILDREN = 2
SPLIT_SCALE_DIVISOR = 1.6
INIT_TIME_SCALE = 0.5
INIT_OPACITY = 0.1
INIT_SCALE_FLOOR = 1e-4
METRICS_COLUMNS = (
    'iteration', 'total', 'render', 'l1', 'ssim', 'depth', 'enac', 'val_psnr',
    'val_ssim', 'gaussian_count')
TIMING_COLUMNS = ('iteration', 'wall_ms')
LOSS_TERMS = ('total', 'render', 'l1', 'ssim', 'depth', 'enac')

log = logging.getLogger('splat4d.trainer')


class OptimizerError(RuntimeError):
  """Raised when an optimizer update is not finite."""


class TrainConfig():
  """Training options.

  Attributes:
    iterations (int): Optimization steps; 0 only initializes.
    learning_rate (float): Base learning rate.
    lr_position, lr_rotor, lr_scales, lr_opacity, lr_sh, lr_phases (float):
        Per-group multipliers of the base rate.
    lr_position_final (float): Position multiplier reached at the last
        iteration, approached exponentially.
    densify_interval (int): Iterations between densification passes.
    densify_until (float): Fraction of the iterations after which the cloud
        is no longer densified.
    grad_threshold (float): Mean screen-space gradient norm above which a
        Gaussian is cloned or split.
    prune_opacity (float): Opacity below which a Gaussian is removed.
    split_fraction (float): Spatial scale, as a fraction of the scene
        extent, from which Gaussians are split instead of cloned.
    warmup (int): Iterations before the first densification.
    sh_unlock_interval (int): Iterations between SH degree increments.
    eval_interval (int): Iterations between validation passes.
    log_interval (int): Iterations between progress messages.
    init_frames (int): Frames back-projected for the initial cloud.
    init_points (int): Number of initial Gaussians.
    seed (int): Seed of every random choice made while training.
  """

  def __init__(
      self, iterations=3000, learning_rate=1.6e-3, lr_position=1.0,
      lr_position_final=0.01, lr_rotor=0.1, lr_scales=0.5, lr_opacity=5.0,
      lr_sh=0.05, lr_phases=0.05, densify_interval=100, densify_until=0.5,
      grad_threshold=2e-4, prune_opacity=0.005, split_fraction=0.01,
      warmup=500, sh_unlock_interval=1000, eval_interval=500, log_interval=100,
      init_frames=4, init_points=2000, seed=0):
    self.iterations = int(iterations)
    self.learning_rate = float(learning_rate)
    self.lr_position = float(lr_position)
    self.lr_position_final = float(lr_position_final)
    self.lr_rotor = float(lr_rotor)
    self.lr_scales = float(lr_scales)
    self.lr_opacity = float(lr_opacity)
    self.lr_sh = float(lr_sh)
    self.lr_phases = float(lr_phases)
    self.densify_interval = int(densify_interval)
    self.densify_until = float(densify_until)
    self.grad_threshold = float(grad_threshold)
    self.prune_opacity = float(prune_opacity)
    self.split_fraction = float(split_fraction)
    self.warmup = int(warmup)
    self.sh_unlock_interval = int(sh_unlock_interval)
    self.eval_interval = int(eval_interval)
    self.log_interval = int(log_interval)
    self.init_frames = int(init_frames)
    self.init_points = int(init_points)
    self.seed = int(seed)
    self.validate()

  @classmethod
  def from_config(cls, section):
    """Builds training options from the [train] config table."""
    return cls(**section)

  def validate(self):
    """Checks ranges.

    Raises:
      ValueError: On negative iterations or non-positive thresholds.
    """
    if self.iterations < 0:
      raise ValueError('Iterations must be non-negative, got {0:d}'.format(
          self.iterations))
    positive = (
        'learning_rate', 'lr_position', 'lr_position_final', 'lr_rotor',
        'lr_scales', 'lr_opacity', 'lr_sh', 'lr_phases', 'densify_interval',
        'grad_threshold', 'prune_opacity', 'split_fraction',
        'sh_unlock_interval', 'eval_interval', 'log_interval', 'init_frames',
        'init_points')
    for name in positive:
      value = getattr(self, name)
      if not (np.isfinite(value) and value > 0):
        raise ValueError('{0:s} must be positive, got {1!s}'.format(
            name, value))
    if not 0.0 <= self.densify_until <= 1.0:
      raise ValueError('densify_until must be in [0, 1], got {0!s}'.format(
          self.densify_until))

  def multipliers(self):
    """Learning-rate multiplier of every parameter group."""
    return {
        'mu': self.lr_position,
        'q_left': self.lr_rotor,
        'q_right': self.lr_rotor,
        'log_s': self.lr_scales,
        'opacity_logit': self.lr_opacity,
        'sh': self.lr_sh,
        'phases': self.lr_phases
    }


def learning_rates(config, iteration):
  """Learning rate of every group at an iteration.

  The position rate decays exponentially from lr_position to
  lr_position_final over the run; the other groups are constant.
  """
  rates = {
      name: config.learning_rate * multiplier
      for name, multiplier in config.multipliers().items()
  }
  progress = min(iteration / max(config.iterations - 1, 1), 1.0)
  decay = (config.lr_position_final / config.lr_position)**progress
  rates['mu'] *= decay
  return rates


class OptimizerState():
  """Adam moments, row-aligned with the cloud.

  Attributes:
    first (dict): First moments keyed by group.
    second (dict): Second moments keyed by group.
    step (int): Number of updates applied.
  """

  def __init__(self, first, second, step=0):
    self.first = first
    self.second = second
    self.step = step

  @classmethod
  def zeros_like(cls, cloud):
    first = {
        name: np.zeros_like(value) for name, value in cloud.parameters().items()
    }
    second = {name: np.zeros_like(value) for name, value in first.items()}
    return cls(first, second)

  def __len__(self):
    return self.first['mu'].shape[0]

  def take(self, indices):
    """Returns the state of the given rows."""
    indices = np.asarray(indices, dtype=np.int64)
    return OptimizerState(
        {name: value[indices] for name, value in self.first.items()},
        {name: value[indices] for name, value in self.second.items()},
        self.step)

  def extend(self, count):
    """Returns the state with count zero rows appended."""

    def grow(value):
      return np.concatenate([value, np.zeros((count,) + value.shape[1:])])

    return OptimizerState(
        {name: grow(value) for name, value in self.first.items()},
        {name: grow(value) for name, value in self.second.items()}, self.step)


def adam_update(
    param, grad, first, second, step, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
    epsilon=ADAM_EPSILON):
  """One bias-corrected Adam update.

  Args:
    param (np.ndarray): Current values.
    grad (np.ndarray): Gradient.
    first (np.ndarray): First moment.
    second (np.ndarray): Second moment.
    step (int): 1-based index of this update.
    lr (float): Learning rate.

  Returns:
    Tuple of (new values, first moment, second moment).
  """
  first = beta1 * first + (1.0 - beta1) * grad
  second = beta2 * second + (1.0 - beta2) * grad * grad
  first_hat = first / (1.0 - beta1**step)
  second_hat = second / (1.0 - beta2**step)
  return param - lr * first_hat / (np.sqrt(second_hat) + epsilon), first, second


def step(cloud, state, grads, config, iteration=None):
  """Applies one Adam step to every parameter group in place.

  Args:
    cloud (GaussianCloud): Parameters to update.
    state (OptimizerState): Moments, updated in place.
    grads (GradientBuffer): Loss gradient.
    config (TrainConfig): Learning rates.
    iteration (int): Schedule position; defaults to the step count.

  Returns:
    Tuple of (cloud, state).

  Raises:
    OptimizerError: If an updated parameter is not finite.
  """
  if len(state) != len(cloud) or len(grads) != len(cloud):
    raise OptimizerError(
        'Optimizer state has {0:d} rows and gradients {1:d} for {2:d} '
        'Gaussians'.format(len(state), len(grads), len(cloud)))
  if iteration is None:
    iteration = state.step
  state.step += 1
  rates = learning_rates(config, iteration)
  for name, grad in grads.items():
    value, first, second = adam_update(
        getattr(cloud, name), grad, state.first[name], state.second[name],
        state.step, rates[name])
    if not np.all(np.isfinite(value)):
      raise OptimizerError(
          'Non-finite update of {0:s} at step {1:d}'.format(name, state.step))
    setattr(cloud, name, value)
    state.first[name] = first
    state.second[name] = second
  cloud.normalize_rotors()
  return cloud, state


def split_offsets(cloud, indices, rng, children=SPLIT_CHILDREN):
  """Samples child positions of split Gaussians around their parents.

  Returns:
    np.ndarray: Offsets (len(indices), children, 4) drawn from each parent's
        4D Gaussian.
  """
  indices = np.asarray(indices, dtype=np.int64)
  rotation = geometry.rotor_matrices(
      cloud.q_left[indices], cloud.q_right[indices])
  scales = np.exp(cloud.log_s[indices])
  noise = rng.standard_normal((len(indices), children, 4))
  return np.einsum('nij,nkj->nki', rotation, noise * scales[:, None, :])


def densify_and_prune(cloud, state, config, extent, rng):
  """Clones, splits and prunes Gaussians from accumulated statistics.

  Args:
    cloud (GaussianCloud): Gaussians with densification statistics.
    state (OptimizerState): Moments row-aligned with cloud.
    config (TrainConfig): Thresholds.
    extent (float): Scene extent for the split size threshold.
    rng (np.random.Generator): Source of split positions.

  Returns:
    Tuple of (cloud, state, dict with cloned, split and pruned counts).
  """
  mean_grad = np.where(
      cloud.grad_denom > 0, cloud.grad_accum / np.maximum(cloud.grad_denom, 1.0),
      0.0)
  candidates = mean_grad > config.grad_threshold
  spatial = np.exp(cloud.log_s[:, :3]).max(axis=1)
  small = spatial < config.split_fraction * extent
  cloned = np.flatnonzero(candidates & small)
  split = np.flatnonzero(candidates & ~small)

  grown = cloud.concat(cloud.take(cloned))
  if len(split):
    children = cloud.take(np.repeat(split, SPLIT_CHILDREN))
    offsets = split_offsets(cloud, split, rng)
    children.mu = children.mu + offsets.reshape(-1, 4)
    children.log_s = children.log_s - np.log(SPLIT_SCALE_DIVISOR)
    grown = grown.concat(children)
  added = len(grown) - len(cloud)

  keep = expit(grown.opacity_logit) >= config.prune_opacity
  keep[split] = False
  pruned = int(len(grown) - keep.sum() - len(split))
  indices = np.flatnonzero(keep)
  result = grown.take(indices)
  result.reset_densification_stats()
  new_state = state.extend(added).take(indices)
  summary = {'cloned': len(cloned), 'split': len(split), 'pruned': pruned}
  log.debug('Densified: {0!s}, {1:d} Gaussians'.format(summary, len(result)))
  return result, new_state, summary


def _initial_cloud(appearance, positions, colors, times, spatial_scales):
  count = len(positions)
  log_s = np.zeros((count, 4))
  log_s[:, :3] = np.log(np.maximum(spatial_scales, INIT_SCALE_FLOOR))[:, None]
  log_s[:, 3] = np.log(INIT_TIME_SCALE)
  sh = np.zeros((count, appearance.num_coeffs, 3))
  sh[:, 0] = (colors - 0.5) / SH_C0
  return GaussianCloud(
      appearance, mu=np.column_stack([positions, times]), log_s=log_s,
      opacity_logit=np.full(count, logit(INIT_OPACITY)), sh=sh,
      active_sh_degree=0)


def _project_colors(frame, points):
  """Colors of the frame pixels under world points, mid gray if unseen."""
  camera = frame.camera
  local = points @ camera.rotation.T + camera.translation
  colors = np.full((len(points), 3), 0.5)
  front = local[:, 2] > camera.near
  z = np.where(front, local[:, 2], 1.0)
  cols = np.round(camera.fx * local[:, 0] / z + camera.cx).astype(np.int64)
  rows = np.round(camera.fy * local[:, 1] / z + camera.cy).astype(np.int64)
  inside = (front & (cols >= 0) & (cols < camera.width) & (rows >= 0) &
            (rows < camera.height))
  colors[inside] = frame.color[rows[inside], cols[inside]]
  return colors


def initialize_cloud(dataset, config, appearance, rng):
  """Seeds the initial cloud.

  With depth maps, a stratified pixel subset of the first frames is
  back-projected; otherwise Gaussians are placed uniformly in the scene
  bounding box and colored from the first frame.

  Args:
    dataset (SceneDataset): Training frames.
    config (TrainConfig): init_frames and init_points.
    appearance (AppearanceConfig): Color basis.
    rng (np.random.Generator): Random source.

  Returns:
    GaussianCloud: Near-static Gaussians (s_t = 0.5) at opacity 0.1.
  """
  frames = [f for f in dataset.frames if f.depth is not None]
  frames = frames[:config.init_frames]
  if frames:
    per_frame = max(1, config.init_points // len(frames))
    positions, colors, times, scales = [], [], [], []
    for frame in frames:
      valid = frame.depth > 0.0
      if frame.tool_mask is not None:
        valid &= ~frame.tool_mask
      count = int(valid.sum())
      if not count:
        continue
      stride = max(1, int(np.floor(np.sqrt(count / per_frame))))
      offset = rng.integers(stride, size=2)
      rows, cols = np.indices(valid.shape)
      grid = (rows % stride == offset[0]) & (cols % stride == offset[1])
      world, pixels = scene_dataset.back_project(
          frame.depth, frame.camera, valid & grid)
      if len(world) > per_frame:
        chosen = np.sort(rng.choice(len(world), per_frame, replace=False))
        world, pixels = world[chosen], pixels[chosen]
      depth = frame.depth[pixels[:, 0], pixels[:, 1]]
      positions.append(world)
      colors.append(frame.color[pixels[:, 0], pixels[:, 1]])
      times.append(np.full(len(world), frame.timestamp))
      scales.append(0.5 * stride * depth / frame.camera.fx)
    if positions:
      cloud = _initial_cloud(
          appearance, np.concatenate(positions), np.concatenate(colors),
          np.concatenate(times), np.concatenate(scales))
      log.info('Initialized {0:d} Gaussians from depth of {1:d} frames'.format(
          len(cloud), len(frames)))
      return cloud

  low, high = dataset.bounds
  count = config.init_points
  positions = rng.uniform(low, high, size=(count, 3))
  times = rng.uniform(0.0, 1.0, size=count)
  colors = _project_colors(dataset.frames[0], positions)
  spacing = np.full(count, 0.5 * dataset.extent / np.cbrt(count))
  cloud = _initial_cloud(appearance, positions, colors, times, spacing)
  log.info('Initialized {0:d} Gaussians uniformly in the scene box'.format(
      len(cloud)))
  return cloud


def evaluate(cloud, dataset, options=None, quantize=False):
  """Renders every frame and scores it.

  Tool pixels are excluded and rendered colors clipped to [0, 1]. With
  quantize set, renders are rounded to 8 bits like the stored images.

  Returns:
    list[dict]: frame, timestamp, psnr and ssim per frame.
  """
  results = []
  for frame in dataset:
    buffers = renderer.render(cloud, frame.camera, options)
    color = np.clip(buffers.color, 0.0, 1.0)
    if quantize:
      color = np.round(color * 255.0) / 255.0
    valid = None if frame.tool_mask is None else ~frame.tool_mask
    results.append({
        'frame': frame.index,
        'timestamp': frame.timestamp,
        'psnr': metrics.psnr(color, frame.color, valid),
        'ssim': metrics.ssim(color, frame.color, valid)
    })
  return results


def summarize(results):
  """Mean PSNR and SSIM of per-frame results."""
  if not results:
    return {'psnr': float('nan'), 'ssim': float('nan')}
  return {
      'psnr': float(np.mean([r['psnr'] for r in results])),
      'ssim': float(np.mean([r['ssim'] for r in results]))
  }


class MetricsLog():
  """Per-iteration losses, validation scores and timings."""

  def __init__(self):
    self.rows = []
    self.timings = []

  def __len__(self):
    return len(self.rows)

  def add(self, iteration, count, terms=None, validation=None, wall_ms=None):
    row = {'iteration': iteration, 'gaussian_count': count}
    for name in LOSS_TERMS:
      row[name] = None if terms is None else terms[name]
    row['val_psnr'] = None if validation is None else validation['psnr']
    row['val_ssim'] = None if validation is None else validation['ssim']
    self.rows.append(row)
    if wall_ms is not None:
      self.timings.append({'iteration': iteration, 'wall_ms': wall_ms})

  def validation(self):
    """(iteration, psnr, ssim) of the rows that were evaluated."""
    return [(r['iteration'], r['val_psnr'], r['val_ssim'])
            for r in self.rows
            if r['val_psnr'] is not None]

  @staticmethod
  def _format(value):
    if value is None:
      return ''
    if isinstance(value, (int, np.integer)):
      return str(int(value))
    return '%.17g' % value

  def _write(self, path, columns, rows):
    with open(path, 'w', newline='') as csv_file:
      writer = csv.writer(csv_file)
      writer.writerow(columns)
      for row in rows:
        writer.writerow([self._format(row[name]) for name in columns])

  def write_metrics(self, path):
    """Writes the deterministic metrics CSV."""
    self._write(path, METRICS_COLUMNS, self.rows)

  def write_timing(self, path):
    """Writes wall-clock times per iteration."""
    self._write(path, TIMING_COLUMNS, self.timings)


class Trainer():
  """Fits a Gaussian cloud to a dataset.

  Attributes:
    config (TrainConfig): Optimization options.
    weights (LossWeights): Loss term weights.
    options (RenderOptions): Renderer settings.
    appearance (AppearanceConfig): Color basis of new clouds.
    train_set (SceneDataset): Frames sampled for updates.
    val_set (SceneDataset): Frames scored at eval intervals.
    checkpoint_callback (callable): Called with (cloud, iteration) after
        every validation pass.
  """

  def __init__(
      self, dataset, config=None, weights=None, options=None, appearance=None,
      split_every=scene_dataset.SPLIT_EVERY, checkpoint_callback=None):
    """Initialise the trainer."""
    if not len(dataset):
      raise DatasetError('Cannot train on an empty dataset')
    if any(frame.camera is None for frame in dataset):
      raise DatasetError('Dataset {0:s} has frames without poses'.format(
          dataset.name))
    self.config = config or TrainConfig()
    self.weights = weights or losses.LossWeights()
    self.options = options or renderer.RenderOptions()
    self.appearance = appearance or AppearanceConfig()
    self.train_set = dataset.split('train', split_every)
    self.val_set = dataset.split('val', split_every)
    if not len(self.train_set):
      self.train_set = dataset
    if not len(self.val_set):
      self.val_set = self.train_set
    self.checkpoint_callback = checkpoint_callback
    self.rng = np.random.default_rng(self.config.seed)
    self.metrics = MetricsLog()

  def _validate(self, cloud, iteration):
    scores = summarize(evaluate(cloud, self.val_set, self.options))
    log.info(
        'Validation at iteration {0:d}: PSNR {1:.3f} dB, SSIM {2:.4f}'.format(
            iteration, scores['psnr'], scores['ssim']))
    if self.checkpoint_callback:
      self.checkpoint_callback(cloud, iteration)
    return scores

  def _densify_active(self, iteration):
    return iteration < self.config.densify_until * self.config.iterations

  def run(self, cloud=None):
    """Runs the optimization.

    Args:
      cloud (GaussianCloud): Starting cloud; initialized from the data when
          omitted.

    Returns:
      Tuple of (trained GaussianCloud, MetricsLog).
    """
    config = self.config
    log.info('* Initializing: %s', datetime.now())
    if cloud is None:
      cloud = initialize_cloud(
          self.train_set, config, self.appearance, self.rng)
    else:
      cloud = cloud.copy()
    if not config.iterations:
      log.info('No iterations requested; returning the initial cloud.')
      return cloud, self.metrics

    state = OptimizerState.zeros_like(cloud)
    extent = self.train_set.extent
    log.info('* Training: %s', datetime.now())
    for iteration in range(config.iterations):
      started = time.perf_counter()
      validation = None
      if iteration % config.eval_interval == 0:
        validation = self._validate(cloud, iteration)

      frame = self.train_set[int(self.rng.integers(len(self.train_set)))]
      _, grads, terms = losses.backward(
          cloud, frame.camera, frame.targets, self.weights, self.options,
          return_terms=True)
      if self._densify_active(iteration):
        cloud.add_densification_stats(grads.screen_mean, grads.visible)
      step(cloud, state, grads, config, iteration)

      done = iteration + 1
      if (self._densify_active(iteration) and done > config.warmup and
          done % config.densify_interval == 0):
        cloud, state, _ = densify_and_prune(
            cloud, state, config, extent, self.rng)
      if (done % config.sh_unlock_interval == 0 and
          cloud.active_sh_degree < cloud.config.sh_degree):
        cloud.active_sh_degree += 1
        log.info('SH degree {0:d} unlocked at iteration {1:d}'.format(
            cloud.active_sh_degree, done))
      wall_ms = 1000.0 * (time.perf_counter() - started)
      self.metrics.add(iteration, len(cloud), terms, validation, wall_ms)
      if done % config.log_interval == 0:
        log.info('Iteration {0:d}/{1:d}: loss {2:.6f}, {3:d} Gaussians'.format(
            done, config.iterations, terms['total'], len(cloud)))

    self.metrics.add(
        config.iterations, len(cloud),
        validation=self._validate(cloud, config.iterations))
    log.info('* Training complete: %s', datetime.now())
    return cloud, self.metrics


def train(dataset, config=None, **kwargs):
  """Trains a cloud on a dataset; see Trainer for the keyword arguments.

  Returns:
    Tuple of (trained GaussianCloud, MetricsLog).
  """
  return Trainer(dataset, config, **kwargs).run()
