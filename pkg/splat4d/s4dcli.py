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
"""Splat4D Command-Line Interface."""

import argparse
from datetime import datetime
import json
import logging
import os
import sys
import time

import numpy as np
from tabulate import tabulate

import splat4d.config as splat4d_config
from splat4d.config import ConfigError
from splat4d.datastore import checkpoint
from splat4d.datastore import dataset as scene_dataset
from splat4d.datastore import image_io
from splat4d.datastore import synthetic
from splat4d.datastore.checkpoint import CheckpointError
from splat4d.datastore.dataset import DatasetError
from splat4d.datastore.image_io import ImageFormatError
from splat4d.model.appearance import AppearanceConfig, AppearanceError
from splat4d.model.geometry import GeometryError
from splat4d.utils import gradient_checker
from splat4d.utils import renderer
from splat4d.utils import trainer
from splat4d.utils.losses import GradientError, LossShapeError, LossWeights
from splat4d.utils.renderer import CameraError, RenderOptions
from splat4d.utils.trainer import OptimizerError, TrainConfig

# Renders timed for the frames-per-second report.
MIN_TIMED_FRAMES = 30
CHECKPOINT_FILE = 'checkpoint.sp4d'
GROUND_TRUTH_FILE = 'ground_truth.sp4d'
METRICS_FILE = 'metrics.csv'
TIMING_FILE = 'timing.csv'
EVAL_FILE = 'eval.csv'
RENDERS_DIR = 'renders'

HANDLED_ERRORS = (
    AppearanceError, CameraError, CheckpointError, ConfigError, DatasetError,
    GeometryError, GradientError, ImageFormatError, LossShapeError,
    OptimizerError, OSError)

# Setup logging
log = logging.getLogger('splat4d')


def _resolve_config(args):
  """Loads the config file and applies command-line overrides."""
  overrides = list(args.set or [])
  if args.threads is not None:
    overrides.append('renderer.threads={0:d}'.format(args.threads))
  if args.seed is not None:
    overrides.append('train.seed={0:d}'.format(args.seed))
  config = splat4d_config.load_config(args.config, overrides)
  if args.output:
    config['output']['directory'] = args.output
  return config


def _output_directory(config):
  """Creates the output directory and records the resolved config in it."""
  directory = config['output']['directory']
  os.makedirs(directory, exist_ok=True)
  splat4d_config.write_config(
      config, os.path.join(directory, splat4d_config.RESOLVED_CONFIG_FILE))
  return directory


def _appearance(config):
  try:
    return AppearanceConfig.from_config(config['appearance'])
  except AppearanceError as e:
    raise ConfigError('Invalid [appearance]: {0!s}'.format(e)) from e


def _train_config(config):
  try:
    return TrainConfig.from_config(config['train'])
  except ValueError as e:
    raise ConfigError('Invalid [train]: {0!s}'.format(e)) from e


def _loss_weights(config):
  try:
    return LossWeights.from_config(config['losses'])
  except ValueError as e:
    raise ConfigError('Invalid [losses]: {0!s}'.format(e)) from e


def _synthetic_spec(config):
  try:
    return synthetic.SyntheticSpec.from_config(
        config['synthetic'], _appearance(config), config['train']['seed'])
  except ValueError as e:
    raise ConfigError('Invalid [synthetic]: {0!s}'.format(e)) from e


def _load_dataset(config, path=None, split='all'):
  path = path or config['dataset']['path']
  if not path:
    raise DatasetError('No dataset given; set dataset.path or pass one')
  if not os.path.isdir(path):
    raise DatasetError('Dataset does not exist: {0:s}'.format(path))
  return scene_dataset.load_dataset(
      path, split, config['dataset']['split_every'],
      config['renderer']['threads'])


def cmd_train(args, config):
  """Trains a cloud and writes its checkpoint and metrics."""
  options = RenderOptions.from_config(config['renderer'])
  train_config = _train_config(config)
  if args.synthetic:
    scene, _ = synthetic.make_synthetic(_synthetic_spec(config), options)
  else:
    scene = _load_dataset(config, args.dataset)
  directory = _output_directory(config)
  checkpoint_path = os.path.join(directory, CHECKPOINT_FILE)

  def save(cloud, iteration):
    checkpoint.save_checkpoint(cloud, checkpoint_path, iteration)

  log.info('* Training on {0:s}: {1!s}'.format(scene.name, datetime.now()))
  cloud, metrics_log = trainer.Trainer(
      scene, train_config, _loss_weights(config), options, _appearance(config),
      config['dataset']['split_every'], save).run()
  save(cloud, train_config.iterations)
  metrics_log.write_metrics(os.path.join(directory, METRICS_FILE))
  metrics_log.write_timing(os.path.join(directory, TIMING_FILE))
  summary = {
      'checkpoint': checkpoint_path,
      'iterations': train_config.iterations,
      'gaussians': len(cloud)
  }
  validation = metrics_log.validation()
  if validation:
    summary['val_psnr'] = validation[-1][1]
    summary['val_ssim'] = validation[-1][2]
  if args.json:
    log.info('%s', json.JSONEncoder().encode(summary))
  else:
    log.info('Wrote {0:d} Gaussians to {1:s}'.format(
        len(cloud), checkpoint_path))
  log.info('* Training complete: %s', datetime.now())
  return 0


def _views(args, cloud):
  """Cameras to render, with timestamps from --time-range if given."""
  cameras = scene_dataset.load_camera_path(args.camera_path)
  if args.time_range:
    start, end = args.time_range
    times = (np.linspace(start, end, len(cameras))
             if len(cameras) > 1 else np.array([start]))
    cameras = [c.with_timestamp(t) for c, t in zip(cameras, times)]
  log.debug('Rendering {0:d} views of {1:d} Gaussians'.format(
      len(cameras), len(cloud)))
  return cameras


def cmd_render(args, config):
  """Renders a checkpoint along a camera path and reports frames per second."""
  options = RenderOptions.from_config(config['renderer'])
  cloud = checkpoint.load_checkpoint(args.checkpoint)
  cameras = _views(args, cloud)
  if not cameras:
    raise DatasetError('Camera path {0:s} is empty'.format(args.camera_path))
  directory = os.path.join(_output_directory(config), RENDERS_DIR)
  os.makedirs(directory, exist_ok=True)

  elapsed = 0.0
  timed = 0
  for number, camera in enumerate(cameras):
    started = time.perf_counter()
    buffers = renderer.render(cloud, camera, options)
    elapsed += time.perf_counter() - started
    timed += 1
    stem = os.path.join(directory, scene_dataset.FRAME_PATTERN.format(number))
    image_io.write_color(stem + '_color.png', buffers.color)
    image_io.write_pfm(stem + '_depth.pfm', buffers.depth)
    image_io.write_normal(stem + '_normal.png', buffers.normal)
    image_io.write_gray(stem + '_alpha.png', buffers.alpha)
  while timed < MIN_TIMED_FRAMES:
    camera = cameras[timed % len(cameras)]
    started = time.perf_counter()
    renderer.render(cloud, camera, options)
    elapsed += time.perf_counter() - started
    timed += 1

  fps = timed / elapsed if elapsed > 0 else float('inf')
  report = {
      'views': len(cameras),
      'timed_frames': timed,
      'width': cameras[0].width,
      'height': cameras[0].height,
      'gaussians': len(cloud),
      'fps': fps
  }
  if args.json:
    log.info('%s', json.JSONEncoder().encode(report))
  else:
    log.info(
        'Rendered {0:d} views to {1:s}: {2:.2f} FPS at {3:d}x{4:d} with {5:d} '
        'Gaussians ({6:d} timed frames)'.format(
            len(cameras), directory, fps, report['width'], report['height'],
            len(cloud), timed))
  return 0


def cmd_eval(args, config):
  """Scores a checkpoint on a dataset split."""
  options = RenderOptions.from_config(config['renderer'])
  cloud = checkpoint.load_checkpoint(args.checkpoint)
  scene = _load_dataset(config, args.dataset, args.split)
  results = trainer.evaluate(cloud, scene, options, quantize=True)
  summary = trainer.summarize(results)
  directory = _output_directory(config)
  rows = [{
      'frame': r['frame'],
      'timestamp': '%.17g' % r['timestamp'],
      'psnr': '%.17g' % r['psnr'],
      'ssim': '%.17g' % r['ssim']
  } for r in results]
  with open(os.path.join(directory, EVAL_FILE), 'w') as eval_file:
    eval_file.write('frame,timestamp,psnr,ssim\n')
    for row in rows:
      eval_file.write('{frame:d},{timestamp:s},{psnr:s},{ssim:s}\n'.format(
          **row))

  if args.json:
    log.info('%s', json.JSONEncoder().encode({
        'split': args.split,
        'frames': results,
        'mean': summary
    }))
  else:
    table = [{
        'Frame': r['frame'],
        'Time': '{0:.4f}'.format(r['timestamp']),
        'PSNR (dB)': '{0:.3f}'.format(r['psnr']),
        'SSIM': '{0:.4f}'.format(r['ssim'])
    } for r in results]
    table.append({
        'Frame': 'mean',
        'Time': '',
        'PSNR (dB)': '{0:.3f}'.format(summary['psnr']),
        'SSIM': '{0:.4f}'.format(summary['ssim'])
    })
    log.info('\n%s', tabulate(table, headers='keys', tablefmt='simple'))
  return 0


def cmd_check_grad(args, config):
  """Compares analytic and numerical gradients on the built-in fixtures."""
  options = RenderOptions.from_config(config['renderer'])
  reports = gradient_checker.run_fixture_checks(
      options, inject_fault=args.inject_fault, seed=config['train']['seed'],
      max_samples=args.max_samples)
  passed = all(report.passed for report in reports)
  if args.json:
    log.info('%s', json.JSONEncoder().encode({
        'passed': passed,
        'fixtures': [report.to_dict() for report in reports]
    }))
  else:
    for report in reports:
      log.info('\n%s', report.to_text())
  if not passed:
    failed = sorted({g for report in reports for g in report.failed_groups})
    log.error('Gradient check failed for: {0:s}'.format(', '.join(failed)))
    return 1
  log.info('Gradient check passed.')
  return 0


def cmd_make_synthetic(args, config):
  """Writes a synthetic dataset and its ground-truth checkpoint."""
  options = RenderOptions.from_config(config['renderer'])
  spec = _synthetic_spec(config)
  scene, cloud = synthetic.make_synthetic(spec, options)
  directory = _output_directory(config)
  scene_dataset.save_dataset(scene, directory)
  checkpoint.save_checkpoint(cloud, os.path.join(directory, GROUND_TRUTH_FILE))
  summary = {
      'dataset': directory,
      'frames': len(scene),
      'gaussians': len(cloud),
      'motion': spec.motion
  }
  if args.json:
    log.info('%s', json.JSONEncoder().encode(summary))
  else:
    log.info('Wrote {0:d} frames and {1:d} ground-truth Gaussians to '
             '{2:s}'.format(len(scene), len(cloud), directory))
  return 0


COMMANDS = {
    'train': cmd_train,
    'render': cmd_render,
    'eval': cmd_eval,
    'check-grad': cmd_check_grad,
    'make-synthetic': cmd_make_synthetic,
}


def main(argv=None):
  """Main Splat4D function.

  Returns:
    int: Process exit code.
  """
  args = parse_args(argv)

  setup_logging(args.debug)

  try:
    config = _resolve_config(args)
    return COMMANDS[args.command](args, config)
  except HANDLED_ERRORS as e:
    log.error('{0:s} failed: {1!s}'.format(args.command, e))
    return 1


def parse_args(argv=None):
  """Argument parsing function.

  Returns:
    Arguments namespace.
  """
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument('-c', '--config', help='config file (TOML)')
  common.add_argument(
      '--set', action='append', metavar='SECTION.KEY=VALUE',
      help='override a config value (repeatable)')
  common.add_argument(
      '--threads', type=int, help='renderer threads (default: SP4D_THREADS)')
  common.add_argument(
      '--seed', type=int, help='random seed (default: SP4D_SEED)')
  common.add_argument(
      '--json', help='output results in JSON format', action='store_true')
  common.add_argument('--debug', help='debug logging', action='store_true')
  common.add_argument('-o', '--output', help='output directory')

  parser = argparse.ArgumentParser(
      description='Differentiable 4D Gaussian splatting.')
  subparsers = parser.add_subparsers(dest='command', required=True)

  train_parser = subparsers.add_parser(
      'train', parents=[common], help='train a cloud on a dataset')
  train_parser.add_argument(
      'dataset', nargs='?', help='dataset directory (default: dataset.path)')
  train_parser.add_argument(
      '--synthetic', action='store_true',
      help='train on a scene generated from the [synthetic] config')

  render_parser = subparsers.add_parser(
      'render', parents=[common], help='render a checkpoint')
  render_parser.add_argument('checkpoint', help='checkpoint file')
  render_parser.add_argument(
      '--camera-path', required=True, help='camera path file')
  render_parser.add_argument(
      '--time-range', nargs=2, type=float, metavar=('T0', 'T1'),
      help='spread the view timestamps evenly over [T0, T1]')

  eval_parser = subparsers.add_parser(
      'eval', parents=[common], help='score a checkpoint on a dataset')
  eval_parser.add_argument('checkpoint', help='checkpoint file')
  eval_parser.add_argument(
      'dataset', nargs='?', help='dataset directory (default: dataset.path)')
  eval_parser.add_argument(
      '--split', choices=('train', 'val', 'all'), default='val',
      help='frames to score (default: val)')

  check_parser = subparsers.add_parser(
      'check-grad', parents=[common],
      help='check analytic gradients against finite differences')
  check_parser.add_argument(
      '--inject-fault', choices=gradient_checker.REPORT_GROUPS,
      help='corrupt one analytic gradient group')
  check_parser.add_argument(
      '--max-samples', type=int,
      help='entries checked per group (default: all)')

  subparsers.add_parser(
      'make-synthetic', parents=[common],
      help='write a synthetic dataset and its ground truth')

  args = parser.parse_args(argv)
  return args


def setup_logging(debug=False):
  """Configure the logger."""
  log.propagate = False
  level = logging.DEBUG if debug else logging.INFO
  log.setLevel(level)

  if not log.handlers:
    # Log to stdout
    console_handler = logging.StreamHandler(sys.stdout)
    formatter = logging.Formatter('[%(levelname)s] %(message)s')
    console_handler.setFormatter(formatter)
    log.addHandler(console_handler)
  for handler in log.handlers:
    handler.setLevel(level)


if __name__ == '__main__':
  sys.exit(main())
