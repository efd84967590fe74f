"""
    Rotation helpers: continuous 6D representation and axis-angle utilities.

    The 6D vector r = [a1, a2] holds the first two columns of a rotation before
    orthonormalisation. Gram-Schmidt gives b1 = a1/|a1|, b2 = normalised (a2 - (b1.a2) b1),
    b3 = b1 x b2, and R = [b1 b2 b3] (columns).

    Functions:
    ----------
    * rot6d_to_matrix: differentiable 6D -> 3x3 (Tensor in, Tensor out).
    * rot6d_to_matrix_np: same construction on plain arrays, batched over leading axes.
    * matrix_to_rot6d: first two columns of a rotation matrix.
    * axis_angle_to_matrix / compose_axis_angle / rotation_angle: scipy rotations used for
      pose construction and evaluation.
"""
import logging

import numpy as np
from scipy.spatial.transform import Rotation

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor
from hoiModule.utils.errors import DegenerateRotationError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DEGENERATE_TOL  = 1e-9
IDENTITY_6D     = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def _check_6d(values: np.ndarray) -> None:
    """Reject non-finite and degenerate 6D inputs, batched over leading axes."""
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("6D rotation contains non-finite values")
    a1 = values[..., 0:3]
    a2 = values[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < DEGENERATE_TOL):
        raise DegenerateRotationError("6D rotation: first column has zero length")
    b1 = a1 / n1[..., None]
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    if np.any(np.linalg.norm(u2, axis=-1) < DEGENERATE_TOL):
        raise DegenerateRotationError("6D rotation: columns are parallel or the second is zero")


def _normalize_rows(v: Tensor) -> Tensor:
    n = v.shape[0]
    norm = tn.sqrt(tn.sum_(v * v, axis=1))
    return v / tn.broadcast_to(tn.reshape(norm, (n, 1)), v.shape)


def rot6d_to_matrix(r) -> Tensor:
    """
    Gram-Schmidt map from 6D vectors to rotation matrices.

    Args:
        r: Tensor of shape (6,) or (K, 6).

    Returns:
        Tensor: (3, 3) or (K, 3, 3), orthonormal with determinant +1.

    Raises:
        DegenerateRotationError: a column is zero or the two columns are parallel (tol 1e-9).
    """
    r = tn.as_tensor(r)
    single = r.ndim == 1
    if r.shape[-1] != 6 or r.ndim not in (1, 2):
        raise ShapeError(f"rot6d_to_matrix: expected shape (6,) or (K, 6), got {r.shape}")
    _check_6d(r.data)
    batch = tn.reshape(r, (1, 6)) if single else r
    k = batch.shape[0]
    a1 = batch[:, 0:3]
    a2 = batch[:, 3:6]
    b1 = _normalize_rows(a1)
    proj = tn.sum_(b1 * a2, axis=1)
    u2 = a2 - b1 * tn.broadcast_to(tn.reshape(proj, (k, 1)), (k, 3))
    b2 = _normalize_rows(u2)
    b3 = tn.cross(b1, b2)
    mats = tn.stack([b1, b2, b3], axis=2)
    return tn.reshape(mats, (3, 3)) if single else mats


def rot6d_to_matrix_np(r: np.ndarray) -> np.ndarray:
    """Plain-array version of rot6d_to_matrix, batched over any leading axes."""
    r = np.asarray(r, dtype=np.float64)
    _check_6d(r)
    a1, a2 = r[..., 0:3], r[..., 3:6]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = u2 / np.linalg.norm(u2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(mat: np.ndarray) -> np.ndarray:
    """First two columns, flattened column by column: (..., 3, 3) -> (..., 6)."""
    mat = np.asarray(mat, dtype=np.float64)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis_angle) -> np.ndarray:
    """Rotation vectors (..., 3) to matrices (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    if aa.shape[-1:] != (3,):
        raise ShapeError(f"axis_angle_to_matrix: expected shape (..., 3), got {aa.shape}")
    mats = Rotation.from_rotvec(aa.reshape(-1, 3)).as_matrix()
    return mats.reshape(aa.shape[:-1] + (3, 3))


def compose_axis_angle(*axis_angles) -> np.ndarray:
    """Rotation matrix of R(aa_0) @ R(aa_1) @ ... (the last one applied first)."""
    result = Rotation.identity()
    for aa in axis_angles:
        result = result * Rotation.from_rotvec(np.asarray(aa, dtype=np.float64))
    return result.as_matrix()


def rotation_angle(mat: np.ndarray) -> float:
    """Angle of a rotation matrix in radians."""
    return float(Rotation.from_matrix(np.asarray(mat, dtype=np.float64)).magnitude())
