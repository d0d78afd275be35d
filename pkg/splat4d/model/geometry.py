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
"""SO(4) rotors, packed symmetric matrices and covariance assembly.

A 4D rotation is stored as a pair of unit quaternions (q_left, q_right). The
rotation matrix is L(q_left) @ R(q_right), where L and R are the left and
right quaternion multiplication matrices. All functions accept a leading
batch dimension.
"""

import logging

import numpy as np

COV_EPSILON = 1e-9
SIGN_TOLERANCE = 1e-12

log = logging.getLogger('splat4d.geometry')


class GeometryError(ValueError):
  """Raised when geometric input is not finite or not normalizable."""


class Rotor4():
  """SO(4) rotation as a left/right isoclinic quaternion pair.

  Attributes:
    q_left (np.ndarray): Left quaternion (w, x, y, z).
    q_right (np.ndarray): Right quaternion (w, x, y, z).
  """

  def __init__(self, q_left=(1.0, 0.0, 0.0, 0.0), q_right=(1.0, 0.0, 0.0, 0.0)):
    """Initialise the rotor.

    Args:
      q_left (array-like): Left quaternion, need not be normalized.
      q_right (array-like): Right quaternion, need not be normalized.
    """
    self.q_left = np.array(q_left, dtype=np.float64)
    self.q_right = np.array(q_right, dtype=np.float64)

  @classmethod
  def identity(cls):
    """Returns the identity rotor."""
    return cls()

  def normalized(self):
    """Returns a copy with both quaternions scaled to unit norm."""
    q_left, _ = normalize_quaternions(self.q_left)
    q_right, _ = normalize_quaternions(self.q_right)
    return Rotor4(q_left, q_right)

  def matrix(self):
    """Returns the 4x4 rotation matrix."""
    return rotor_to_matrix(self)


class Scales4():
  """Log-parametrized 4D scales (x, y, z, t).

  Attributes:
    log_s (np.ndarray): Natural logarithm of the scales.
  """

  def __init__(self, log_s=(0.0, 0.0, 0.0, 0.0)):
    self.log_s = np.array(log_s, dtype=np.float64)

  @classmethod
  def from_scales(cls, s):
    """Builds scales from positive linear values."""
    return cls(np.log(np.asarray(s, dtype=np.float64)))

  @property
  def s(self):
    """Linear scales."""
    return np.exp(self.log_s)


def _check_finite(array, name):
  if not np.all(np.isfinite(array)):
    raise GeometryError('Non-finite {0:s}: {1!s}'.format(name, array))


def left_matrix(q):
  """Left quaternion multiplication matrix, L(q) @ p = q * p.

  Args:
    q (np.ndarray): Quaternions of shape (..., 4).

  Returns:
    Matrices of shape (..., 4, 4).
  """
  a, b, c, d = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
  return np.stack([
      np.stack([a, -b, -c, -d], axis=-1),
      np.stack([b, a, -d, c], axis=-1),
      np.stack([c, d, a, -b], axis=-1),
      np.stack([d, -c, b, a], axis=-1),
  ], axis=-2)


def right_matrix(q):
  """Right quaternion multiplication matrix, R(q) @ p = p * q.

  Args:
    q (np.ndarray): Quaternions of shape (..., 4).

  Returns:
    Matrices of shape (..., 4, 4).
  """
  p, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
  return np.stack([
      np.stack([p, -x, -y, -z], axis=-1),
      np.stack([x, p, z, -y], axis=-1),
      np.stack([y, -z, p, x], axis=-1),
      np.stack([z, y, -x, p], axis=-1),
  ], axis=-2)


# Both maps are linear in q; these are their images of the unit quaternions.
_LEFT_BASIS = left_matrix(np.eye(4))
_RIGHT_BASIS = right_matrix(np.eye(4))
# _ASSOCIATE[k, l] = L(e_k) @ R(e_l) spans all 4x4 matrices.
_ASSOCIATE = np.einsum('kij,ljm->klim', _LEFT_BASIS, _RIGHT_BASIS)


def normalize_quaternions(q):
  """Scales quaternions to unit norm.

  Args:
    q (np.ndarray): Quaternions of shape (..., 4).

  Returns:
    Tuple of (unit quaternions, norms with shape (..., 1)).

  Raises:
    GeometryError: If any quaternion is non-finite or has zero norm.
  """
  q = np.asarray(q, dtype=np.float64)
  _check_finite(q, 'quaternion')
  norm = np.linalg.norm(q, axis=-1, keepdims=True)
  if np.any(norm == 0.0):
    raise GeometryError('Zero-norm quaternion cannot be normalized')
  return q / norm, norm


def normalize_quaternions_backward(q_unit, norm, grad_unit):
  """Pulls a gradient on unit quaternions back to the raw parameters."""
  radial = np.sum(q_unit * grad_unit, axis=-1, keepdims=True)
  return (grad_unit - q_unit * radial) / norm


def rotor_matrices(q_left, q_right):
  """Batched rotation matrices from raw quaternion pairs.

  Args:
    q_left (np.ndarray): Raw left quaternions (..., 4).
    q_right (np.ndarray): Raw right quaternions (..., 4).

  Returns:
    Rotation matrices of shape (..., 4, 4).
  """
  q_left, _ = normalize_quaternions(q_left)
  q_right, _ = normalize_quaternions(q_right)
  return left_matrix(q_left) @ right_matrix(q_right)


def rotor_to_matrix(rotor):
  """Builds the 4x4 rotation matrix of a rotor.

  Args:
    rotor (Rotor4): Rotor, normalized internally.

  Returns:
    np.ndarray: Orthogonal 4x4 matrix with determinant 1.

  Raises:
    GeometryError: On non-finite quaternions.
  """
  return rotor_matrices(rotor.q_left, rotor.q_right)


def matrix_to_rotor(matrix):
  """Recovers a rotor from an SO(4) matrix.

  The matrix is expanded in the associate basis L(e_k) R(e_l); for a proper
  rotation the coefficient matrix is the rank-one product q_left q_right^T.

  Args:
    matrix (np.ndarray): 4x4 rotation matrix with determinant 1.

  Returns:
    Rotor4: Rotor with unit quaternions and q_left[argmax |q_left|] > 0.

  Raises:
    GeometryError: If the matrix is not finite.
  """
  matrix = np.asarray(matrix, dtype=np.float64)
  _check_finite(matrix, 'rotation matrix')
  design = _ASSOCIATE.reshape(16, 16).T
  coefficients = np.linalg.solve(design, matrix.reshape(16)).reshape(4, 4)
  u, sigma, vt = np.linalg.svd(coefficients)
  q_left = u[:, 0] * np.sqrt(sigma[0])
  q_right = vt[0] * np.sqrt(sigma[0])
  if q_left[np.argmax(np.abs(q_left))] < 0:
    q_left, q_right = -q_left, -q_right
  q_left /= np.linalg.norm(q_left)
  q_right /= np.linalg.norm(q_right)
  return Rotor4(q_left, q_right)


def pack_sym(matrix):
  """Packs symmetric matrices into their upper triangles (row-major).

  Args:
    matrix (np.ndarray): Array of shape (..., n, n).

  Returns:
    Array of shape (..., n * (n + 1) / 2).
  """
  matrix = np.asarray(matrix, dtype=np.float64)
  rows, cols = np.triu_indices(matrix.shape[-1])
  return matrix[..., rows, cols]


def unpack_sym(packed):
  """Inverse of pack_sym.

  Args:
    packed (np.ndarray): Array of shape (..., 3), (..., 6) or (..., 10).

  Returns:
    Symmetric matrices of shape (..., n, n).
  """
  packed = np.asarray(packed, dtype=np.float64)
  size = {3: 2, 6: 3, 10: 4}.get(packed.shape[-1])
  if size is None:
    raise GeometryError(
        'Packed length {0:d} is not triangular'.format(packed.shape[-1]))
  rows, cols = np.triu_indices(size)
  matrix = np.zeros(packed.shape[:-1] + (size, size))
  matrix[..., rows, cols] = packed
  matrix[..., cols, rows] = packed
  return matrix


def floor_diagonal(matrix, epsilon=COV_EPSILON):
  """Floors the diagonal of square matrices in place.

  Returns:
    Boolean mask (..., n) of the entries that were raised to the floor.
  """
  index = np.arange(matrix.shape[-1])
  diagonal = matrix[..., index, index]
  floored = diagonal < epsilon
  matrix[..., index, index] = np.maximum(diagonal, epsilon)
  return floored


class CovarianceCache():
  """Intermediate values of covariance assembly kept for the backward pass.

  Attributes:
    q_left (np.ndarray): Unit left quaternions.
    left_norm (np.ndarray): Norms of the raw left quaternions.
    q_right (np.ndarray): Unit right quaternions.
    right_norm (np.ndarray): Norms of the raw right quaternions.
    rotation (np.ndarray): Rotation matrices.
    scales (np.ndarray): Linear scales.
    floored (np.ndarray): Diagonal entries clamped to the floor.
  """

  def __init__(
      self, q_left, left_norm, q_right, right_norm, rotation, scales, floored):
    self.q_left = q_left
    self.left_norm = left_norm
    self.q_right = q_right
    self.right_norm = right_norm
    self.rotation = rotation
    self.scales = scales
    self.floored = floored


def covariance_from_params(q_left, q_right, log_s):
  """Batched 4D covariance assembly.

  Args:
    q_left (np.ndarray): Raw left quaternions (N, 4).
    q_right (np.ndarray): Raw right quaternions (N, 4).
    log_s (np.ndarray): Log scales (N, 4).

  Returns:
    Tuple of (covariances (N, 4, 4), CovarianceCache).
  """
  log_s = np.asarray(log_s, dtype=np.float64)
  _check_finite(log_s, 'log scales')
  unit_left, left_norm = normalize_quaternions(q_left)
  unit_right, right_norm = normalize_quaternions(q_right)
  rotation = left_matrix(unit_left) @ right_matrix(unit_right)
  scales = np.exp(log_s)
  scaled = rotation * scales[..., None, :]
  covariance = scaled @ np.swapaxes(scaled, -1, -2)
  covariance = 0.5 * (covariance + np.swapaxes(covariance, -1, -2))
  floored = floor_diagonal(covariance)
  cache = CovarianceCache(
      unit_left, left_norm, unit_right, right_norm, rotation, scales, floored)
  return covariance, cache


def covariance_backward(grad_cov, cache):
  """Pulls a covariance gradient back to raw quaternions and log scales.

  Args:
    grad_cov (np.ndarray): Gradient w.r.t. the covariances (N, 4, 4).
    cache (CovarianceCache): Values saved by covariance_from_params.

  Returns:
    Tuple of gradients (q_left, q_right, log_s).
  """
  grad = 0.5 * (grad_cov + np.swapaxes(grad_cov, -1, -2))
  index = np.arange(4)
  grad[..., index, index] *= ~cache.floored
  scaled = cache.rotation * cache.scales[..., None, :]
  grad_scaled = 2.0 * grad @ scaled
  grad_rotation = grad_scaled * cache.scales[..., None, :]
  grad_scales = np.sum(grad_scaled * cache.rotation, axis=-2)
  grad_log_s = grad_scales * cache.scales

  grad_left_matrix = grad_rotation @ np.swapaxes(
      right_matrix(cache.q_right), -1, -2)
  grad_right_matrix = np.swapaxes(
      left_matrix(cache.q_left), -1, -2) @ grad_rotation
  grad_unit_left = np.einsum('...ij,kij->...k', grad_left_matrix, _LEFT_BASIS)
  grad_unit_right = np.einsum(
      '...ij,kij->...k', grad_right_matrix, _RIGHT_BASIS)
  grad_left = normalize_quaternions_backward(
      cache.q_left, cache.left_norm, grad_unit_left)
  grad_right = normalize_quaternions_backward(
      cache.q_right, cache.right_norm, grad_unit_right)
  return grad_left, grad_right, grad_log_s


def build_cov4(rotor, scales):
  """Builds the 4D covariance R diag(s^2) R^T of one Gaussian.

  Args:
    rotor (Rotor4): Rotation.
    scales (Scales4): Scales.

  Returns:
    np.ndarray: Symmetric 4x4 covariance with floored diagonal.
  """
  covariance, _ = covariance_from_params(
      rotor.q_left[None], rotor.q_right[None], scales.log_s[None])
  return covariance[0]


def eig_sym3(matrix):
  """Eigen decomposition of symmetric 3x3 matrices.

  Eigenvalues are ascending. Each eigenvector has its first component with
  magnitude above SIGN_TOLERANCE made positive.

  Args:
    matrix (np.ndarray): Symmetric matrices of shape (..., 3, 3).

  Returns:
    Tuple of (eigenvalues (..., 3), eigenvectors as columns (..., 3, 3)).
  """
  matrix = np.asarray(matrix, dtype=np.float64)
  _check_finite(matrix, 'symmetric matrix')
  values, vectors = np.linalg.eigh(matrix)
  first = np.argmax(np.abs(vectors) > SIGN_TOLERANCE, axis=-2)
  leading = np.take_along_axis(vectors, first[..., None, :], axis=-2)
  vectors = vectors * np.where(leading < 0, -1.0, 1.0)
  return values, vectors
