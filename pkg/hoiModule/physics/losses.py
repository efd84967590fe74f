"""
    Physical guidance objectives evaluated on the tape.

    L_P = lambda_ho * L_ho + lambda_of * L_of + lambda_pt * L_pt with

        L_ho = sqrt( sum_i m_h[i] d(V_h[i], V_o)^2 + sum_j m_o[j] d(V_o[j], V_h)^2 )
        L_of = sum_j m_f[j] |V_o[j].y|
        L_pt = mean_i max(-Phi(V_h[i]), 0)

    d is the distance to the nearest vertex of the other mesh, either a hard minimum or a
    soft minimum (distances weighted by softmax(-d / T)).

    Classes:
    --------
    * GuidanceWeights: loss weights and guidance scale.
    * GuidanceContext: poses the meshes of a flat parameter tensor.
    * GuidanceObjective: callable L_P(x) handed to the guided sampler.
"""
import logging
from dataclasses import dataclass

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor
from hoiModule.bodyModel.body_model import BodyModel, lbs_forward
from hoiModule.bodyModel.object_model import ObjectTemplate, object_forward, world_sdf
from hoiModule.bodyModel.params import ParamLayout, as_array
from hoiModule.physics.contact import ContactMasks
from hoiModule.utils.errors import DataError

logger = logging.getLogger(__name__)

SOFTMIN_TEMPERATURE = 0.01


@dataclass(frozen=True)
class GuidanceWeights:
    """Non-negative loss weights and the guidance scale rho."""
    lambda_ho   : float = 1.0
    lambda_of   : float = 1.0
    lambda_pt   : float = 1.0
    rho         : float = 10.0

    def __post_init__(self) -> None:
        for name in ("lambda_ho", "lambda_of", "lambda_pt", "rho"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise DataError(f"guidance weight {name} must be finite and >= 0, got {value}")

    @property
    def any_loss(self) -> bool:
        return self.lambda_ho > 0.0 or self.lambda_of > 0.0 or self.lambda_pt > 0.0


# ======================================================================================
# Loss terms
# ======================================================================================
def _nearest_sq(points: Tensor, others: Tensor, temperature: float, hard_min: bool) -> Tensor:
    d2 = tn.pairwise_sq_dist(points, others)
    if hard_min:
        return tn.amin(d2, axis=1)
    weights = tn.softmax(tn.sqrt(d2) * (-1.0 / temperature), axis=1)
    return tn.sum_(weights * d2, axis=1)


def loss_ho(v_h, v_o, masks: ContactMasks, temperature: float = SOFTMIN_TEMPERATURE,
            hard_min: bool = False) -> Tensor:
    """
    Human-object contact term; 0 when no vertex is masked.

    Args:
        v_h, v_o: posed human (N_h, 3) and object (N_o, 3) vertices.
        masks (ContactMasks): m_h and m_o are used.
        temperature (float): soft-min temperature in meters.
        hard_min (bool): use the exact nearest distance instead of the soft minimum.
    """
    v_h, v_o = tn.as_tensor(v_h), tn.as_tensor(v_o)
    if masks.m_h.size != v_h.shape[0] or masks.m_o.size != v_o.shape[0]:
        raise DataError(f"masks ({masks.m_h.size}, {masks.m_o.size}) do not match meshes "
                        f"({v_h.shape[0]}, {v_o.shape[0]})")
    terms = []
    for mask, points, others in ((masks.m_h, v_h, v_o), (masks.m_o, v_o, v_h)):
        idx = np.flatnonzero(mask)
        if idx.size:
            nearest = _nearest_sq(tn.gather(points, idx, axis=0), others, temperature, hard_min)
            terms.append(tn.sum_(nearest * mask[idx]))
    if not terms:
        return Tensor(0.0)
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return tn.sqrt(total)


def loss_of(v_o, masks: ContactMasks) -> Tensor:
    """Object-floor term: L1 height of the floor-masked object vertices."""
    v_o = tn.as_tensor(v_o)
    if masks.m_f.size != v_o.shape[0]:
        raise DataError(f"m_f has {masks.m_f.size} entries for {v_o.shape[0]} object vertices")
    idx = np.flatnonzero(masks.m_f)
    if not idx.size:
        return Tensor(0.0)
    heights = tn.gather(v_o[:, 1], idx, axis=0)
    return tn.sum_(tn.abs_(heights) * masks.m_f[idx])


def loss_pt(v_h, object_sdf) -> Tensor:
    """
    Mean penetration depth of the human vertices.

    Args:
        v_h: (N_h, 3) posed human vertices.
        object_sdf: callable, world points (N, 3) -> signed distances (N,) Tensor.
    """
    v_h = tn.as_tensor(v_h)
    if v_h.shape[0] == 0:
        raise DataError("loss_pt: empty human mesh")
    phi = object_sdf(v_h)
    return tn.mean(tn.maximum(-phi, 0.0))


# ======================================================================================
# Full objective
# ======================================================================================
class GuidanceContext:
    """
    Poses the human and the object from a flat parameter tensor.

    Attributes:
        - body (BodyModel), template (ObjectTemplate), layout (ParamLayout)
    """
    def __init__(self, body: BodyModel, template: ObjectTemplate,
                 layout: ParamLayout | None = None) -> None:
        self.body       = body
        self.template   = template
        self.layout     = layout or ParamLayout(body.n_joints)
        if self.layout.n_joints != body.n_joints:
            raise DataError(f"layout has {self.layout.n_joints} joints, body model "
                            f"{body.n_joints}")

    def split(self, x) -> tuple:
        x = tn.as_tensor(x)
        if x.shape != (self.layout.dim,):
            raise DataError(f"parameter vector has shape {x.shape}, expected "
                            f"({self.layout.dim},)")
        lay = self.layout
        theta = tn.reshape(x[lay.theta], (lay.n_joints, 6))
        return theta, x[lay.beta], x[lay.rot_o], x[lay.trans_o]

    def pose(self, x) -> tuple:
        """(V_h, V_o, world SDF callable) for parameters x."""
        theta, beta, rot_o, trans_o = self.split(x)
        v_h, _ = lbs_forward(self.body, theta, beta)
        v_o = object_forward(self.template, rot_o, trans_o)

        def sdf(points):
            return world_sdf(self.template, rot_o, trans_o, points)
        return v_h, v_o, sdf

    def pose_np(self, x) -> tuple:
        """Plain-array meshes and an SDF callable returning arrays."""
        with tn.no_grad():
            v_h, v_o, sdf = self.pose(as_array(x))

            def sdf_np(points):
                with tn.no_grad():
                    return sdf(np.asarray(points, dtype=np.float64)).numpy()
            return v_h.numpy(), v_o.numpy(), sdf_np


def loss_total(x_hat0, masks: ContactMasks, weights: GuidanceWeights,
               context: GuidanceContext, temperature: float = SOFTMIN_TEMPERATURE,
               hard_min: bool = False) -> Tensor:
    """Weighted sum of the three terms; terms with a zero weight are not evaluated."""
    if not weights.any_loss:
        return Tensor(0.0)
    v_h, v_o, sdf = context.pose(x_hat0)
    total = Tensor(0.0)
    if weights.lambda_ho > 0.0:
        total = total + loss_ho(v_h, v_o, masks, temperature, hard_min) * weights.lambda_ho
    if weights.lambda_of > 0.0:
        total = total + loss_of(v_o, masks) * weights.lambda_of
    if weights.lambda_pt > 0.0:
        total = total + loss_pt(v_h, sdf) * weights.lambda_pt
    return total


class GuidanceObjective:
    """
    L_P(x) for fixed masks, as used by the guided DDIM step.

    Methods:
        - __call__: loss tensor for a flat parameter tensor
        - components: unweighted L_ho, L_of, L_pt as floats
        - is_active: False when every weight is zero
    """
    def __init__(self, context: GuidanceContext, masks: ContactMasks, weights: GuidanceWeights,
                 temperature: float = SOFTMIN_TEMPERATURE, hard_min: bool = False) -> None:
        self.context        = context
        self.masks          = masks
        self.weights        = weights
        self.temperature    = temperature
        self.hard_min       = hard_min

    @property
    def is_active(self) -> bool:
        return self.weights.any_loss

    def __call__(self, x) -> Tensor:
        return loss_total(x, self.masks, self.weights, self.context, self.temperature,
                          self.hard_min)

    def components(self, x) -> dict:
        with tn.no_grad():
            v_h, v_o, sdf = self.context.pose(as_array(x))
            return {
                "l_ho": loss_ho(v_h, v_o, self.masks, self.temperature, self.hard_min).item(),
                "l_of": loss_of(v_o, self.masks).item(),
                "l_pt": loss_pt(v_h, sdf).item(),
            }
