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
"""Finite-difference verification of the analytic backward pass."""

import json
import logging

import numpy as np
from scipy.special import logit
from tabulate import tabulate

from splat4d.model.appearance import AppearanceConfig
from splat4d.model.gaussian_field import GaussianCloud
from splat4d.utils import losses
from splat4d.utils.losses import FrameTargets, LossWeights
from splat4d.utils.renderer import Camera

DEFAULT_STEP = 1e-4
RELATIVE_GATE = 1e-3
ABSOLUTE_FLOOR = 1e-7
# One-sided differences at STEP / KINK_REFINEMENT replace the central one
# only when the step straddles a clamp, support edge or L1 kink.
KINK_REFINEMENT = 16.0
FIXTURE_SIZES = (1, 20)

REPORT_GROUPS = ('mu', 'rotor', 'log_s', 'opacity_logit', 'sh', 'phases')

log = logging.getLogger('splat4d.gradient_checker')


def relative_error(analytic, numeric):
  """|a - n| / max(|a|, |n|, floor), with the floor set by the absolute gate."""
  scale = max(abs(analytic), abs(numeric), ABSOLUTE_FLOOR / RELATIVE_GATE)
  return abs(analytic - numeric) / scale


class GroupResult():
  """Worst-case agreement for one parameter group.

  Attributes:
    group (str): Parameter group.
    max_rel_err (float): Largest relative error over checked entries.
    argmax (int): Gaussian index of the worst entry, -1 if none checked.
    checked (int): Number of entries compared.
  """

  def __init__(self, group, max_rel_err=0.0, argmax=-1, checked=0):
    self.group = group
    self.max_rel_err = max_rel_err
    self.argmax = argmax
    self.checked = checked

  @property
  def passed(self):
    return self.max_rel_err <= RELATIVE_GATE

  def to_dict(self):
    return {
        'group': self.group,
        'max_rel_err': self.max_rel_err,
        'argmax': self.argmax,
        'checked': self.checked,
        'passed': self.passed
    }


class GradientReport():
  """Gradient check outcome for one scene.

  Attributes:
    name (str): Scene label.
    results (list[GroupResult]): One entry per parameter group.
  """

  def __init__(self, name, results):
    self.name = name
    self.results = results

  @property
  def passed(self):
    return all(result.passed for result in self.results)

  @property
  def failed_groups(self):
    return [result.group for result in self.results if not result.passed]

  def to_dict(self):
    return {
        'fixture': self.name,
        'passed': self.passed,
        'groups': [result.to_dict() for result in self.results]
    }

  def to_json(self):
    return json.JSONEncoder().encode(self.to_dict())

  def to_text(self):
    table = [{
        'Group': result.group,
        'Max rel. error': '{0:.3e}'.format(result.max_rel_err),
        'Gaussian': result.argmax,
        'Checked': result.checked,
        'Status': 'ok' if result.passed else 'FAIL'
    } for result in self.results]
    return '{0:s}\n\n{1:s}\n'.format(
        self.name, tabulate(table, headers='keys', tablefmt='simple'))


def _group_arrays(cloud, group):
  """Arrays backing a report group and their column split."""
  if group == 'rotor':
    return [cloud.q_left, cloud.q_right]
  return [getattr(cloud, group)]


def _analytic_group(grads, group):
  if group == 'rotor':
    return grads.rotor
  return getattr(grads, group)


def _entry(arrays, count, flat):
  """Maps a flat index of the (N, ...) group view to (array, flat, gaussian)."""
  width = sum(array.size for array in arrays) // max(count, 1)
  gaussian, column = divmod(flat, width)
  for array in arrays:
    array_width = array.size // count
    if column < array_width:
      return array, gaussian * array_width + column, gaussian
    column -= array_width
  raise IndexError('Entry {0:d} out of range'.format(flat))


def _kink_slopes(objective, array, offset, saved, base, plus, minus, h):
  """One-sided slopes valid at the base point when the step straddles a kink.

  A kink shows as forward and backward slopes at h that disagree. The base
  point lies on the side whose slope at h / KINK_REFINEMENT matches its
  slope at h, so only that side's slope is returned; both are returned when
  the kink sits at the base point itself. Smooth curvature makes neither side
  linear and returns nothing, leaving the central difference in force.

  Returns:
    list[float]: Admissible slopes, empty when no kink is detected.
  """
  forward = (plus - base) / h
  backward = (base - minus) / h
  if relative_error(forward, backward) <= RELATIVE_GATE:
    return []
  small = h / KINK_REFINEMENT
  array.flat[offset] = saved + small
  forward_small = (objective() - base) / small
  array.flat[offset] = saved - small
  backward_small = (base - objective()) / small
  array.flat[offset] = saved
  slopes = []
  if relative_error(forward_small, forward) <= RELATIVE_GATE:
    slopes.append(forward_small)
  if relative_error(backward_small, backward) <= RELATIVE_GATE:
    slopes.append(backward_small)
  return slopes


def check_gradients(
    cloud, cam, targets, weights=None, h=DEFAULT_STEP, options=None,
    max_samples=None, seed=0, corrupt=None, name='scene'):
  """Compares the analytic gradient with central finite differences.

  Args:
    cloud (GaussianCloud): Gaussians; restored to its original values.
    cam (Camera): View.
    targets (FrameTargets): Supervision.
    weights (LossWeights): Term weights.
    h (float): Finite-difference step.
    options (RenderOptions): Renderer settings.
    max_samples (int): Entries checked per group, sampled with the seed;
        every entry is checked when None.
    seed (int): Sampling seed.
    corrupt (str): Report group whose analytic gradient is deliberately
        perturbed before comparison.
    name (str): Scene label for the report.

  Returns:
    GradientReport: Per-group maximum relative error.
  """
  weights = weights or LossWeights()
  rng = np.random.default_rng(seed)
  base, grads = losses.backward(cloud, cam, targets, weights, options)
  count = len(cloud)

  def objective():
    return losses.evaluate(cloud, cam, targets, weights, options)['total']

  results = []
  for group in REPORT_GROUPS:
    analytic = _analytic_group(grads, group).reshape(-1).copy()
    if group == corrupt:
      analytic = 1.5 * analytic + 1e-3
    arrays = _group_arrays(cloud, group)
    entries = np.arange(analytic.size)
    if max_samples is not None and analytic.size > max_samples:
      entries = np.sort(rng.choice(analytic.size, max_samples, replace=False))
    result = GroupResult(group, checked=len(entries))
    for flat in entries:
      array, offset, gaussian = _entry(arrays, count, int(flat))
      saved = array.flat[offset]
      array.flat[offset] = saved + h
      plus = objective()
      array.flat[offset] = saved - h
      minus = objective()
      error = relative_error(analytic[flat], (plus - minus) / (2.0 * h))
      if error > RELATIVE_GATE:
        slopes = _kink_slopes(
            objective, array, offset, saved, base, plus, minus, h)
        if slopes:
          error = min(relative_error(analytic[flat], s) for s in slopes)
      array.flat[offset] = saved
      if error > result.max_rel_err or result.argmax < 0:
        result.max_rel_err = float(error)
        result.argmax = gaussian
    log.debug('{0:s}/{1:s}: max relative error {2:.3e}'.format(
        name, group, result.max_rel_err))
    results.append(result)
  return GradientReport(name, results)


def build_fixture(count, size=16, seed=0, config=None):
  """Random test scene for gradient checks.

  Foreground Gaussians float in front of a wide, nearly opaque backdrop so
  that depth, normals and coverage are defined over the whole image.

  Args:
    count (int): Foreground Gaussians.
    size (int): Image edge in pixels.
    seed (int): Random seed.
    config (AppearanceConfig): Color basis; the default basis when omitted.

  Returns:
    Tuple of (GaussianCloud, Camera, FrameTargets, LossWeights).
  """
  rng = np.random.default_rng(seed)
  config = config or AppearanceConfig()
  focal = 1.25 * size
  cam = Camera(
      focal, focal, (size - 1) / 2.0, (size - 1) / 2.0, size, size,
      timestamp=0.5)

  z = rng.uniform(2.0, 4.0, size=count)
  xy = rng.uniform(-0.3, 0.3, size=(count, 2)) * z[:, None]
  mu = np.column_stack([xy, z, 0.5 + rng.uniform(-0.3, 0.3, size=count)])
  log_s = np.column_stack([
      np.log(rng.uniform(0.05, 0.25, size=(count, 3))),
      np.log(rng.uniform(0.3, 1.0, size=count))
  ])
  sh = np.zeros((count, config.num_coeffs, 3))
  sh[:, 0] = rng.normal(scale=0.5, size=(count, 3))
  sh[:, 1:] = rng.normal(scale=0.05, size=(count, config.num_coeffs - 1, 3))
  foreground = GaussianCloud(
      config, mu=mu, q_left=rng.normal(size=(count, 4)),
      q_right=rng.normal(size=(count, 4)), log_s=log_s,
      opacity_logit=logit(rng.uniform(0.2, 0.6, size=count)), sh=sh,
      phases=rng.uniform(0.0, 2.0 * np.pi, size=(count, config.temporal_degree)))

  backdrop_sh = np.zeros((1, config.num_coeffs, 3))
  backdrop_sh[0, 0] = rng.normal(scale=0.3, size=3)
  backdrop = GaussianCloud(
      config, mu=[[0.0, 0.0, 5.0, 0.5]],
      log_s=[np.log([4.0, 4.0, 0.05, 10.0])], opacity_logit=[logit(0.9)],
      sh=backdrop_sh)
  cloud = foreground.concat(backdrop)

  tool_mask = np.zeros((size, size), dtype=bool)
  tool_mask[1:4, size - 4:size - 1] = True
  targets = FrameTargets(
      rng.uniform(size=(size, size, 3)),
      depth=rng.uniform(3.0, 5.0, size=(size, size)), tool_mask=tool_mask)
  return cloud, cam, targets, LossWeights()


def run_fixture_checks(
    options=None, inject_fault=None, seed=0, max_samples=None):
  """Runs check_gradients on the built-in fixtures.

  Returns:
    list[GradientReport]: One report per fixture.
  """
  reports = []
  for count in FIXTURE_SIZES:
    cloud, cam, targets, weights = build_fixture(count, seed=seed)
    reports.append(check_gradients(
        cloud, cam, targets, weights, options=options, max_samples=max_samples,
        seed=seed, corrupt=inject_fault,
        name='{0:d} Gaussian fixture'.format(count)))
  return reports
