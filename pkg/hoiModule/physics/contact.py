"""
    Geometric contact-mask prediction.

    Masks are plain data: they are computed from the current posed meshes with numpy and
    stay constant during a guided sampling loop, so no gradient flows through them.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from hoiModule.utils.errors import DataError

logger = logging.getLogger(__name__)

CONTACT_THRESHOLD = 0.05


@dataclass(eq=False)
class ContactMasks:
    """
    Per-vertex contact weights in [0, 1].

    Attributes:
        - m_h (np.ndarray): human vertices in contact with the object.
        - m_o (np.ndarray): object vertices in contact with the human.
        - m_f (np.ndarray): object vertices in contact with the floor.
    """
    m_h: np.ndarray
    m_o: np.ndarray
    m_f: np.ndarray

    def __post_init__(self) -> None:
        for name in ("m_h", "m_o", "m_f"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if np.any((value < 0.0) | (value > 1.0)) or not np.all(np.isfinite(value)):
                raise DataError(f"contact mask {name} must lie in [0, 1]")
            value.setflags(write=False)
            setattr(self, name, value)
        if self.m_o.size != self.m_f.size:
            raise DataError(f"object masks differ in length: m_o {self.m_o.size}, "
                            f"m_f {self.m_f.size}")

    @classmethod
    def empty(cls, n_human: int, n_object: int) -> "ContactMasks":
        return cls(np.zeros(n_human), np.zeros(n_object), np.zeros(n_object))

    def sizes(self) -> dict:
        """Number of non-zero entries per mask."""
        return {"m_h": int(np.count_nonzero(self.m_h)), "m_o": int(np.count_nonzero(self.m_o)),
                "m_f": int(np.count_nonzero(self.m_f))}

    def equals(self, other: "ContactMasks") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("m_h", "m_o", "m_f"))

    def to_dict(self) -> dict:
        """Indices of the non-zero entries, for traces."""
        return {name: np.flatnonzero(getattr(self, name)).tolist()
                for name in ("m_h", "m_o", "m_f")}


def predict_contact_masks(v_h, v_o, object_sdf, threshold: float = CONTACT_THRESHOLD
                          ) -> ContactMasks:
    """
    Hard contact masks from posed meshes.

    Args:
        v_h: (N_h, 3) posed human vertices.
        v_o: (N_o, 3) posed object vertices.
        object_sdf: callable mapping world points (N, 3) to signed distances (N,).
        threshold (float): contact distance in meters.

    Returns:
        ContactMasks: m_h = |Phi(v_h)| <= threshold; m_o = distance to the nearest human
        vertex <= threshold; m_f = height <= threshold and within threshold of the lowest
        object vertex.

    Raises:
        DataError: one of the meshes is empty.
    """
    v_h = np.asarray(getattr(v_h, "data", v_h), dtype=np.float64)
    v_o = np.asarray(getattr(v_o, "data", v_o), dtype=np.float64)
    if v_h.size == 0 or v_o.size == 0:
        raise DataError("predict_contact_masks: empty human or object mesh")
    if threshold < 0.0:
        raise DataError(f"contact threshold must be non-negative, got {threshold}")

    phi = np.asarray(object_sdf(v_h), dtype=np.float64).reshape(-1)
    m_h = np.abs(phi) <= threshold
    m_o = cdist(v_o, v_h).min(axis=1) <= threshold
    heights = v_o[:, 1]
    m_f = (heights <= threshold) & (heights <= heights.min() + threshold)
    masks = ContactMasks(m_h.astype(np.float64), m_o.astype(np.float64),
                         m_f.astype(np.float64))
    logger.debug("Predicted contact masks", extra={"record": masks.sizes()})
    return masks
