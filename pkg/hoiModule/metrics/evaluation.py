"""
    Reconstruction metrics of a refined scene against its ground truth.

    The predicted human and object are aligned to the ground truth as one point set
    (similarity Procrustes on corresponding vertices), then

        * CD_human / CD_object: symmetric chamfer distance in centimeters,
              100 * (mean_a min_b |a - b| + mean_b min_a |a - b|) / 2
        * contact precision / recall / F-score of the human vertices lying within 5 cm of
          the object surface (signed distance <= 5 cm, so penetrating vertices count).

    Zero-denominator convention: precision (recall) is 1 when there are neither predicted nor
    ground-truth contacts, 0 when only one side has contacts.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from hoiModule.physics.contact import CONTACT_THRESHOLD
from hoiModule.physics.losses import GuidanceContext
from hoiModule.utils.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

REPORT_FIELDS = ("cd_human", "cd_object", "contact_p", "contact_r", "contact_f")


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """p -> scale * R p + t"""
    scale       : float
    rotation    : np.ndarray
    translation : np.ndarray

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))


def procrustes_align(source, target, with_scale: bool = True) -> SimilarityTransform:
    """
    Least-squares similarity (or rigid) transform mapping source onto target.

    The rotation is always proper (det = +1).

    Raises:
        DataError: point counts differ or the set is empty.
        NumericalError: all source points coincide.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise DataError(f"procrustes_align: point sets {source.shape} and {target.shape} "
                        "must be equal-sized (N, 3) arrays")
    if source.shape[0] == 0:
        raise DataError("procrustes_align: empty point sets")
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    xs, xt = source - mu_s, target - mu_t
    var_s = float(np.sum(xs * xs)) / len(source)
    if var_s < 1e-24:
        raise NumericalError("procrustes_align: degenerate source, all points coincide")
    cov = xt.T @ xs / len(source)
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        d[2] = -1.0
    rotation = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d)) / var_s if with_scale else 1.0
    translation = mu_t - scale * rotation @ mu_s
    return SimilarityTransform(scale, rotation, translation)


def chamfer_cm(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise DataError("chamfer_cm: empty point set")
    d = cdist(a, b)
    return 100.0 * (d.min(axis=1).mean() + d.min(axis=0).mean()) / 2.0


def _ratio(hits: int, total: int, other_total: int) -> float:
    if total == 0:
        return 1.0 if other_total == 0 else 0.0
    return hits / total


def contact_prf(pred_mask, gt_mask) -> tuple:
    """(precision, recall, f-score) of two per-vertex boolean masks."""
    pred = np.asarray(pred_mask, dtype=bool).reshape(-1)
    gt = np.asarray(gt_mask, dtype=bool).reshape(-1)
    if pred.size != gt.size:
        raise DataError(f"contact_prf: mask lengths differ ({pred.size} vs {gt.size})")
    tp = int(np.count_nonzero(pred & gt))
    n_pred, n_gt = int(np.count_nonzero(pred)), int(np.count_nonzero(gt))
    p = _ratio(tp, n_pred, n_gt)
    r = _ratio(tp, n_gt, n_pred)
    f = 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0
    return p, r, f


@dataclass(frozen=True)
class EvalReport:
    cd_human    : float
    cd_object   : float
    contact_p   : float
    contact_r   : float
    contact_f   : float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "EvalReport":
        return cls(**{k: float(values[k]) for k in REPORT_FIELDS})


def evaluate_meshes(pred: tuple, gt: tuple, threshold: float = CONTACT_THRESHOLD,
                    with_scale: bool = True) -> EvalReport:
    """
    Metrics of posed meshes.

    Args:
        pred, gt: (V_h, V_o, sdf) with sdf a callable world points -> signed distances.
    """
    v_h, v_o, sdf = pred
    g_h, g_o, g_sdf = gt
    v_h, v_o = np.asarray(v_h, dtype=np.float64), np.asarray(v_o, dtype=np.float64)
    g_h, g_o = np.asarray(g_h, dtype=np.float64), np.asarray(g_o, dtype=np.float64)
    if v_h.shape != g_h.shape or v_o.shape != g_o.shape:
        raise DataError("evaluate: prediction and ground truth differ in topology")
    transform = procrustes_align(np.vstack([v_h, v_o]), np.vstack([g_h, g_o]), with_scale)
    aligned_h, aligned_o = transform.apply(v_h), transform.apply(v_o)
    # A similarity scales the distances to the aligned object by the same factor.
    pred_contact = transform.scale * np.asarray(sdf(v_h)).reshape(-1) <= threshold
    gt_contact = np.asarray(g_sdf(g_h)).reshape(-1) <= threshold
    p, r, f = contact_prf(pred_contact, gt_contact)
    return EvalReport(cd_human=chamfer_cm(aligned_h, g_h), cd_object=chamfer_cm(aligned_o, g_o),
                      contact_p=p, contact_r=r, contact_f=f)


def evaluate_scene(x_pred, x_gt, context: GuidanceContext,
                   threshold: float = CONTACT_THRESHOLD, with_scale: bool = True) -> EvalReport:
    """Pose prediction and ground truth with the same models, then evaluate_meshes."""
    report = evaluate_meshes(context.pose_np(x_pred), context.pose_np(x_gt), threshold,
                             with_scale)
    logger.debug("Evaluated scene", extra={"record": report.to_dict()})
    return report


def aggregate_reports(reports: list) -> dict:
    """{"n": count, "mean": {...}, "median": {...}} over the report fields."""
    if not reports:
        raise DataError("aggregate_reports: no reports")
    table = np.array([[getattr(r, k) for k in REPORT_FIELDS] for r in reports])
    return {
        "n": len(reports),
        "mean": dict(zip(REPORT_FIELDS, table.mean(axis=0).tolist())),
        "median": dict(zip(REPORT_FIELDS, np.median(table, axis=0).tolist())),
    }
