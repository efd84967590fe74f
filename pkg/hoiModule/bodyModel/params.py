"""
    Optimisation state of a human-object scene.

    The state x = {theta, beta, rot_o, trans_o} is stored either structured (HoiParams) or
    as one flat vector (ParamVector) whose slices are described by a ParamLayout:

        theta   : [0, 6K)               per-joint 6D rotations, joint-major
        beta    : [6K, 6K+10)           normalised shape coefficients
        rot_o   : [6K+10, 6K+16)        object 6D rotation
        trans_o : [6K+16, 6K+19)        object translation (m)

    so D = 6K + 19 (115 for the 16-joint mini body, 331 for K = 52).
"""
import logging
from dataclasses import dataclass

import numpy as np

from hoiModule.bodyModel.rotation import IDENTITY_6D
from hoiModule.utils.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

N_BETAS         = 10
BETA_RAW_BOUND  = 3.0


@dataclass(frozen=True)
class ParamLayout:
    """
    Slice offsets of the flat parameter vector for a body with `n_joints` joints.
    """
    n_joints: int = 16

    def __post_init__(self) -> None:
        if not isinstance(self.n_joints, (int, np.integer)) or self.n_joints < 1:
            raise DataError(f"n_joints must be a positive integer, got {self.n_joints!r}")

    @property
    def dim(self) -> int:
        return 6 * self.n_joints + N_BETAS + 6 + 3

    @property
    def theta(self) -> slice:
        return slice(0, 6 * self.n_joints)

    @property
    def beta(self) -> slice:
        start = 6 * self.n_joints
        return slice(start, start + N_BETAS)

    @property
    def rot_o(self) -> slice:
        start = 6 * self.n_joints + N_BETAS
        return slice(start, start + 6)

    @property
    def trans_o(self) -> slice:
        start = 6 * self.n_joints + N_BETAS + 6
        return slice(start, start + 3)

    def joint(self, k: int) -> slice:
        """6D block of joint k."""
        if not 0 <= k < self.n_joints:
            raise DataError(f"joint index {k} out of range for {self.n_joints} joints")
        return slice(6 * k, 6 * k + 6)


@dataclass(eq=False)
class HoiParams:
    """
    Structured scene parameters.

    Attributes:
        - theta (np.ndarray): (K, 6) per-joint 6D rotations.
        - beta (np.ndarray): (10,) normalised shape coefficients.
        - rot_o (np.ndarray): (6,) object 6D rotation.
        - trans_o (np.ndarray): (3,) object translation in meters.
    """
    theta   : np.ndarray
    beta    : np.ndarray
    rot_o   : np.ndarray
    trans_o : np.ndarray

    def __post_init__(self) -> None:
        self.theta      = np.asarray(self.theta, dtype=np.float64)
        self.beta       = np.asarray(self.beta, dtype=np.float64)
        self.rot_o      = np.asarray(self.rot_o, dtype=np.float64)
        self.trans_o    = np.asarray(self.trans_o, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape[1] != 6:
            raise ShapeError(f"theta must have shape (K, 6), got {self.theta.shape}")
        for name, value, size in (("beta", self.beta, N_BETAS), ("rot_o", self.rot_o, 6),
                                  ("trans_o", self.trans_o, 3)):
            if value.shape != (size,):
                raise ShapeError(f"{name} must have shape ({size},), got {value.shape}")

    @property
    def n_joints(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def rest(cls, n_joints: int = 16) -> "HoiParams":
        """Identity pose, mean shape, identity object rotation at the origin."""
        return cls(theta=np.tile(IDENTITY_6D, (n_joints, 1)),
                   beta=np.zeros(N_BETAS),
                   rot_o=IDENTITY_6D.copy(),
                   trans_o=np.zeros(3))

    def copy(self) -> "HoiParams":
        return HoiParams(self.theta.copy(), self.beta.copy(), self.rot_o.copy(),
                         self.trans_o.copy())


class ParamVector:
    """
    Flat parameter vector with its layout.

    Attributes:
        - values (np.ndarray): (D,) read-only values.
        - layout (ParamLayout): slice description.
    """
    __slots__ = ("values", "layout")

    def __init__(self, values, layout: ParamLayout) -> None:
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.size != layout.dim:
            raise DataError(f"ParamVector length {values.size} does not match layout "
                            f"dimension {layout.dim} (K={layout.n_joints})")
        values.setflags(write=False)
        self.values = values
        self.layout = layout

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"ParamVector(D={self.values.size}, K={self.layout.n_joints})"

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    @property
    def theta(self) -> np.ndarray:
        return self.values[self.layout.theta].reshape(self.layout.n_joints, 6)

    @property
    def beta(self) -> np.ndarray:
        return self.values[self.layout.beta]

    @property
    def rot_o(self) -> np.ndarray:
        return self.values[self.layout.rot_o]

    @property
    def trans_o(self) -> np.ndarray:
        return self.values[self.layout.trans_o]


def flatten(params: HoiParams) -> ParamVector:
    """Structured -> flat."""
    layout = ParamLayout(params.n_joints)
    values = np.concatenate([params.theta.reshape(-1), params.beta, params.rot_o,
                             params.trans_o])
    return ParamVector(values, layout)


def unflatten(vector: ParamVector) -> HoiParams:
    """Flat -> structured (copies)."""
    if len(vector) != vector.layout.dim:
        raise DataError(f"ParamVector length {len(vector)} does not match layout "
                        f"dimension {vector.layout.dim}")
    return HoiParams(theta=vector.theta.copy(), beta=vector.beta.copy(),
                     rot_o=vector.rot_o.copy(), trans_o=vector.trans_o.copy())


def normalize_beta(raw) -> np.ndarray:
    """Clamp raw shape coefficients to [-3, 3] and map them to [-1, 1]."""
    return np.clip(np.asarray(raw, dtype=np.float64), -BETA_RAW_BOUND, BETA_RAW_BOUND) \
        / BETA_RAW_BOUND


def denormalize_beta(normalized) -> np.ndarray:
    return np.asarray(normalized, dtype=np.float64) * BETA_RAW_BOUND


def clamp_beta(values: np.ndarray, layout: ParamLayout) -> np.ndarray:
    """Copy of a flat vector with its beta slice projected onto [-1, 1]."""
    out = np.array(values, dtype=np.float64)
    out[layout.beta] = np.clip(out[layout.beta], -1.0, 1.0)
    return out


def as_array(x) -> np.ndarray:
    """float64 copy of a ParamVector, Tensor or array-like."""
    if isinstance(x, ParamVector):
        return np.array(x.values)
    if hasattr(x, "data") and isinstance(getattr(x, "data"), np.ndarray):
        return np.array(x.data, dtype=np.float64)
    return np.array(x, dtype=np.float64)
