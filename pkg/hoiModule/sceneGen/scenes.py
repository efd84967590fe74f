"""
    Synthetic human-object scenes.

    A scene is generated in four stages:

        1. base pose of the scenario + Gaussian axis-angle jitter on every joint, random shape;
        2. object placed at a start position derived from the posed joints, then moved along
           the scenario's snap direction until it touches the body (push-out snap);
        3. validity checks on the ground truth (no penetration, enough contact, floor support);
        4. noisy observation and perturbed initial estimate.

    A failed snap or check retries with the next derived seed, up to MAX_ATTEMPTS times.

    Push-out snap
    -------------
    With m = min Phi over the human vertices: stop when 0 <= m <= SNAP_TOLERANCE, otherwise
    move the object by (m - SNAP_MARGIN) along the snap direction, or back by |m| + SNAP_MARGIN
    when it penetrates. Phi is 1-Lipschitz, so a forward move never creates penetration.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.bodyModel.body_model import JOINT_NAMES, BodyModel, lbs_forward, mini_body
from hoiModule.bodyModel.object_model import ObjectTemplate
from hoiModule.bodyModel.params import (N_BETAS, ParamLayout, ParamVector,
                                        normalize_beta)
from hoiModule.bodyModel.registry import TemplateRegistry
from hoiModule.bodyModel.rotation import (axis_angle_to_matrix, compose_axis_angle,
                                          matrix_to_rot6d, rot6d_to_matrix_np)
from hoiModule.physics.contact import CONTACT_THRESHOLD, ContactMasks, predict_contact_masks
from hoiModule.physics.losses import GuidanceContext, loss_of, loss_pt
from hoiModule.utils.errors import DataError, SceneGenerationError

logger = logging.getLogger(__name__)

MAX_ATTEMPTS        = 10
MAX_SNAP_STEPS      = 100
SNAP_TOLERANCE      = 0.01
SNAP_MARGIN         = 0.005
MIN_CONTACT_VERTS   = 5
VALIDITY_TOL        = 1e-4
FLOOR_TOL           = 1e-3

SCENARIO_KINDS = ("sit-on-box", "carry-box", "lift-sphere", "lean-on-cylinder", "stand-near")
_J = {name: k for k, name in enumerate(JOINT_NAMES)}


# ======================================================================================
# Scenarios
# ======================================================================================
@dataclass(frozen=True)
class ScenarioSpec:
    """
    One interaction type.

    Attributes:
        - kind (str): one of SCENARIO_KINDS.
        - template_id (str): object template.
        - pose_jitter (float): std of the per-joint axis-angle jitter in radians.
        - shape_std (float): std of the raw shape coefficients.
        - yaw_range_deg (float): object yaw drawn uniformly in [-range, range].
        - placement_jitter (float): uniform start offset (m) across the snap direction.
        - floor_supported (bool): the object ends resting on y = 0.
        - contact (bool): the scene must have human-object contact.
    """
    kind                : str
    template_id         : str
    pose_jitter         : float = 0.05
    shape_std           : float = 0.5
    yaw_range_deg       : float = 15.0
    placement_jitter    : float = 0.02
    floor_supported     : bool = False
    contact             : bool = True

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise DataError(f"unknown scenario kind '{self.kind}', expected one of "
                            f"{SCENARIO_KINDS}")
        for name in ("pose_jitter", "shape_std", "yaw_range_deg", "placement_jitter"):
            if getattr(self, name) < 0.0:
                raise DataError(f"scenario {self.kind}: {name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_SCENARIOS = (
    ScenarioSpec("sit-on-box", "box_seat"),
    ScenarioSpec("carry-box", "box_carry", yaw_range_deg=0.0, placement_jitter=0.0),
    ScenarioSpec("lift-sphere", "sphere_ball"),
    ScenarioSpec("lean-on-cylinder", "cylinder_post", floor_supported=True),
    ScenarioSpec("stand-near", "box_carry", floor_supported=True, contact=False),
)


def scenario(kind: str) -> ScenarioSpec:
    for spec in DEFAULT_SCENARIOS:
        if spec.kind == kind:
            return spec
    raise DataError(f"unknown scenario kind '{kind}', expected one of {SCENARIO_KINDS}")


@dataclass(frozen=True)
class PerturbationModel:
    """
    Noise turning the ground truth into the initial estimate; zero values skip a term.

    Attributes:
        - sigma_theta (float): per-component axis-angle noise on every joint (rad).
        - rot_deg (float): std of the object rotation noise angle (degrees).
        - trans (float): RMS norm of the object translation noise (m).
        - sigma_beta (float): noise on the normalised shape coefficients.
    """
    sigma_theta : float = 0.15
    rot_deg     : float = 10.0
    trans       : float = 0.10
    sigma_beta  : float = 0.1

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0.0:
                raise DataError(f"perturbation {name} must be finite and >= 0, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)

    def apply(self, gt: ParamVector, rng) -> ParamVector:
        """Perturbed copy of gt (identical when every term is zero)."""
        lay = gt.layout
        values = np.array(gt.values)
        if self.sigma_theta > 0.0:
            mats = rot6d_to_matrix_np(gt.theta)
            noise = axis_angle_to_matrix(rng.normal(0.0, self.sigma_theta, (lay.n_joints, 3)))
            values[lay.theta] = matrix_to_rot6d(mats @ noise).reshape(-1)
        if self.rot_deg > 0.0:
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            angle = np.deg2rad(self.rot_deg) * rng.standard_normal()
            rot = axis_angle_to_matrix(axis * angle) @ rot6d_to_matrix_np(gt.rot_o)
            values[lay.rot_o] = matrix_to_rot6d(rot)
        if self.trans > 0.0:
            values[lay.trans_o] = gt.trans_o + rng.standard_normal(3) * self.trans / np.sqrt(3.0)
        if self.sigma_beta > 0.0:
            values[lay.beta] = np.clip(gt.beta + rng.normal(0.0, self.sigma_beta, N_BETAS),
                                       -1.0, 1.0)
        return gt.with_values(values)


@dataclass(eq=False)
class Scene:
    """
    One synthetic scene.

    Attributes:
        - kind (str), template_id (str), seed (int)
        - gt (ParamVector): ground truth.
        - observation (np.ndarray): noisy joints (3 K), noisy object centre (3), noise scale.
        - init (ParamVector): coarse initial estimate.
        - refined (ParamVector | None): optimiser output, when present.
    """
    kind        : str
    template_id : str
    seed        : int
    gt          : ParamVector
    observation : np.ndarray
    init        : ParamVector
    refined     : ParamVector | None = field(default=None)

    def __post_init__(self) -> None:
        self.observation = np.array(self.observation, dtype=np.float64).reshape(-1)
        if self.observation.size != 3 * self.gt.layout.n_joints + 4:
            raise DataError(f"observation of scene {self.seed} has {self.observation.size} "
                            f"entries, expected {3 * self.gt.layout.n_joints + 4}")
        if self.init.layout != self.gt.layout or \
                (self.refined is not None and self.refined.layout != self.gt.layout):
            raise DataError(f"scene {self.seed}: parameter layouts disagree")

    def with_refined(self, refined) -> "Scene":
        refined = refined if isinstance(refined, ParamVector) else self.gt.with_values(refined)
        return Scene(self.kind, self.template_id, self.seed, self.gt, self.observation,
                     self.init, refined)

    def prediction(self) -> ParamVector:
        """Refined parameters, or the initial estimate when the scene was not refined."""
        return self.refined if self.refined is not None else self.init

    def equals(self, other: "Scene") -> bool:
        same_refined = (self.refined is None and other.refined is None) or (
            self.refined is not None and other.refined is not None
            and self.refined == other.refined)
        return (self.kind == other.kind and self.template_id == other.template_id
                and self.seed == other.seed and self.gt == other.gt and self.init == other.init
                and np.array_equal(self.observation, other.observation) and same_refined)


# ======================================================================================
# Base poses
# ======================================================================================
def _aa(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> np.ndarray:
    return np.array([x, y, z])


def base_pose(kind: str, n_joints: int = 16) -> np.ndarray:
    """(K, 3, 3) local joint rotations of a scenario."""
    half = np.pi / 2.0
    mats = np.tile(np.eye(3), (n_joints, 1, 1))
    arms_down = {"l_shoulder": _aa(z=-half), "r_shoulder": _aa(z=half)}
    local = {}
    if kind == "sit-on-box":
        local = {"l_hip": _aa(x=-half), "r_hip": _aa(x=-half),
                 "l_knee": _aa(x=half), "r_knee": _aa(x=half)}
    elif kind == "carry-box":
        local = {**arms_down, "l_elbow": _aa(y=-half), "r_elbow": _aa(y=half)}
    elif kind == "lift-sphere":
        local = {"l_shoulder": _aa(z=-half), "r_shoulder": _aa(y=half)}
    elif kind == "lean-on-cylinder":
        mats[_J["r_shoulder"]] = compose_axis_angle(_aa(x=np.pi / 4.0), _aa(y=half))
        local = {"l_shoulder": _aa(z=-half)}
    elif kind == "stand-near":
        local = arms_down
    else:
        raise DataError(f"unknown scenario kind '{kind}'")
    for name, aa in local.items():
        mats[_J[name]] = axis_angle_to_matrix(aa)
    return mats


def _yaw(angle: float) -> np.ndarray:
    return axis_angle_to_matrix(_aa(y=angle))


def _placement(kind: str, joints: np.ndarray, template: ObjectTemplate, rng,
               spec: ScenarioSpec) -> tuple:
    """(start translation, snap direction or None) from the posed joints."""
    extent = template.vertices.max(axis=0) - template.vertices.min(axis=0)
    half_y = 0.5 * extent[1]
    jitter = rng.uniform(-spec.placement_jitter, spec.placement_jitter, 2)
    if kind == "sit-on-box":
        hips = 0.5 * (joints[_J["l_hip"]] + joints[_J["r_hip"]])
        knees = 0.5 * (joints[_J["l_knee"]] + joints[_J["r_knee"]])
        centre = 0.75 * hips + 0.25 * knees
        start = np.array([centre[0] + jitter[0], centre[1] - 0.9 * extent[1] - 0.1,
                          0.75 * hips[2] + 0.25 * knees[2] - 0.01 + jitter[1]])
        return start, np.array([0.0, 1.0, 0.0])
    if kind == "carry-box":
        hands = 0.5 * (joints[_J["l_wrist"]] + joints[_J["r_wrist"]])
        start = np.array([hands[0] + jitter[0], hands[1] + jitter[1], 0.9])
        return start, np.array([0.0, 0.0, -1.0])
    if kind == "lift-sphere":
        wrist, elbow = joints[_J["r_wrist"]], joints[_J["r_elbow"]]
        hand = wrist + 0.35 * (wrist - elbow)
        start = np.array([hand[0] + jitter[0], hand[1] - 0.6, hand[2] + jitter[1]])
        return start, np.array([0.0, 1.0, 0.0])
    if kind == "lean-on-cylinder":
        wrist, elbow = joints[_J["r_wrist"]], joints[_J["r_elbow"]]
        tip = wrist + 0.7 * (wrist - elbow)
        start = np.array([tip[0] + jitter[0], half_y, tip[2] + 0.7 + jitter[1]])
        return start, np.array([0.0, 0.0, -1.0])
    angle = rng.uniform(0.0, 2.0 * np.pi)
    distance = rng.uniform(0.6, 1.0)
    return np.array([distance * np.sin(angle), half_y, distance * np.cos(angle)]), None


# ======================================================================================
# Generation
# ======================================================================================
def _world_sdf_np(template: ObjectTemplate, rot: np.ndarray, trans: np.ndarray, points):
    return template.sdf_np((np.asarray(points) - trans) @ rot)


def snap_object(v_h: np.ndarray, template: ObjectTemplate, rot: np.ndarray, start: np.ndarray,
                direction: np.ndarray) -> np.ndarray | None:
    """Translation after the push-out snap, or None when it does not converge."""
    trans = np.array(start, dtype=np.float64)
    for _ in range(MAX_SNAP_STEPS):
        m = float(_world_sdf_np(template, rot, trans, v_h).min())
        if 0.0 <= m <= SNAP_TOLERANCE:
            return trans
        if m < 0.0:
            trans = trans - direction * (abs(m) + SNAP_MARGIN)
        else:
            trans = trans + direction * (m - SNAP_MARGIN)
    return None


def _observation(joints: np.ndarray, centre: np.ndarray, obs_noise: float, rng) -> np.ndarray:
    clean = np.concatenate([joints.reshape(-1), centre])
    if obs_noise > 0.0:
        clean = clean + rng.normal(0.0, obs_noise, clean.size)
    return np.concatenate([clean, [obs_noise]])


def check_scene(spec: ScenarioSpec, gt: ParamVector, body: BodyModel,
                template: ObjectTemplate) -> str | None:
    """Reason the ground truth is invalid, or None when every check passes."""
    v_h, v_o, sdf = GuidanceContext(body, template, gt.layout).pose_np(gt)
    masks = predict_contact_masks(v_h, v_o, sdf, CONTACT_THRESHOLD)
    n_contact = masks.sizes()["m_h"]
    penetration = loss_pt(v_h, lambda p: tn.Tensor(sdf(p.data))).item()
    if penetration >= VALIDITY_TOL:
        return f"penetration {penetration:.2e}"
    if spec.contact and n_contact < MIN_CONTACT_VERTS:
        return f"only {n_contact} contact vertices"
    if not spec.contact and n_contact:
        return f"{n_contact} unexpected contact vertices"
    if spec.floor_supported:
        on_floor = (v_o[:, 1] <= v_o[:, 1].min() + FLOOR_TOL).astype(np.float64)
        floor = loss_of(v_o, ContactMasks(np.zeros(len(v_h)), np.zeros(len(v_o)),
                                          on_floor)).item()
        if floor >= VALIDITY_TOL:
            return f"floor loss {floor:.2e}"
    return None


def _attempt(spec: ScenarioSpec, rng, body: BodyModel, template: ObjectTemplate,
             layout: ParamLayout) -> tuple | None:
    local = base_pose(spec.kind, layout.n_joints)
    if spec.pose_jitter > 0.0:
        local = local @ axis_angle_to_matrix(rng.normal(0.0, spec.pose_jitter,
                                                        (layout.n_joints, 3)))
    theta = matrix_to_rot6d(local)
    beta = normalize_beta(rng.normal(0.0, spec.shape_std, N_BETAS)) if spec.shape_std > 0.0 \
        else np.zeros(N_BETAS)
    with tn.no_grad():
        v_h, joints = lbs_forward(body, theta, beta)
    v_h, joints = v_h.numpy(), joints.numpy()

    yaw = np.deg2rad(spec.yaw_range_deg) * rng.uniform(-1.0, 1.0)
    rot = _yaw(yaw)
    start, direction = _placement(spec.kind, joints, template, rng, spec)
    if direction is None:
        trans = start
    else:
        trans = snap_object(v_h, template, rot, start, direction)
        if trans is None:
            return None
    if spec.floor_supported:
        trans = trans - np.array([0.0, (template.vertices @ rot.T)[:, 1].min() + trans[1], 0.0])
    values = np.concatenate([theta.reshape(-1), beta, matrix_to_rot6d(rot), trans])
    return ParamVector(values, layout), joints


def sample_scene(spec: ScenarioSpec, seed: int, perturbation: PerturbationModel | None = None,
                 obs_noise: float = 0.03, registry: TemplateRegistry | None = None,
                 body: BodyModel | None = None) -> Scene:
    """
    Generate one scene; identical seeds give identical scenes.

    Raises:
        SceneGenerationError: no valid scene within MAX_ATTEMPTS derived seeds.
    """
    perturbation = PerturbationModel() if perturbation is None else perturbation
    body = mini_body() if body is None else body
    template = (registry or TemplateRegistry()).get(spec.template_id)
    layout = ParamLayout(body.n_joints)
    if obs_noise < 0.0:
        raise DataError(f"observation noise must be >= 0, got {obs_noise}")

    reasons = []
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        result = _attempt(spec, rng, body, template, layout)
        if result is None:
            reasons.append("snap did not converge")
            continue
        gt, joints = result
        reason = check_scene(spec, gt, body, template)
        if reason is not None:
            reasons.append(reason)
            logger.debug("Scene %d attempt %d rejected: %s", seed, attempt, reason)
            continue
        observation = _observation(joints, gt.trans_o, obs_noise, rng)
        init = perturbation.apply(gt, rng)
        return Scene(spec.kind, spec.template_id, int(seed), gt, observation, init)
    raise SceneGenerationError(f"scenario {spec.kind}, seed {seed}: no valid scene after "
                               f"{MAX_ATTEMPTS} attempts ({'; '.join(reasons[-3:])})")
