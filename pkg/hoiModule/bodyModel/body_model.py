"""
    Procedural articulated mini body with linear blend skinning.

    The body is a 16-joint kinematic tree whose surface is a set of ring tubes, one per joint,
    running from the joint to its child (or to an end point for feet, hands and head). Every
    tube has 6 rings of 6 vertices plus two cap vertices, giving 608 vertices in T-pose
    (+y up, +x towards the body's left, +z forward, feet on the floor y = 0).

    Skinning is evaluated as

        v = v_shaped + sum_k w_k ((R_k - I) v_shaped + a_k)

    with R_k the world rotation of joint k and a_k the matching translation, which is the
    usual blend of rigid transforms (weights sum to one) and returns v_shaped exactly when
    every rotation is the identity.

    Classes:
    --------
    * BodyModel: template, kinematic tree, regressor, skin weights and shape basis.

    Functions:
    ----------
    * lbs_forward: posed vertices and joints, differentiable in theta and beta.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.bodyModel.params import N_BETAS
from hoiModule.bodyModel.rotation import rot6d_to_matrix
from hoiModule.utils.errors import DataError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

# ======================================================================================
# Mini body definition
# ======================================================================================
JOINT_NAMES = (
    "pelvis", "spine1", "spine2", "head",
    "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14)

# Rest joint positions (m) and the end point of each joint's tube
_REST_JOINTS = np.array([
    [0.00, 0.95, 0.00], [0.00, 1.10, 0.00], [0.00, 1.28, 0.00], [0.00, 1.50, 0.00],
    [0.09, 0.92, 0.00], [0.09, 0.50, 0.00], [0.09, 0.08, 0.00],
    [-0.09, 0.92, 0.00], [-0.09, 0.50, 0.00], [-0.09, 0.08, 0.00],
    [0.18, 1.44, 0.00], [0.46, 1.44, 0.00], [0.72, 1.44, 0.00],
    [-0.18, 1.44, 0.00], [-0.46, 1.44, 0.00], [-0.72, 1.44, 0.00],
])
_SEGMENT_ENDS = np.array([
    [0.00, 1.10, 0.00], [0.00, 1.28, 0.00], [0.00, 1.50, 0.00], [0.00, 1.72, 0.00],
    [0.09, 0.50, 0.00], [0.09, 0.08, 0.00], [0.09, 0.04, 0.16],
    [-0.09, 0.50, 0.00], [-0.09, 0.08, 0.00], [-0.09, 0.04, 0.16],
    [0.46, 1.44, 0.00], [0.72, 1.44, 0.00], [0.90, 1.44, 0.00],
    [-0.46, 1.44, 0.00], [-0.72, 1.44, 0.00], [-0.90, 1.44, 0.00],
])
_RADII = np.array([
    0.12, 0.11, 0.13, 0.09,
    0.075, 0.055, 0.04, 0.075, 0.055, 0.04,
    0.045, 0.04, 0.035, 0.045, 0.04, 0.035,
])

N_RINGS         = 6
N_SECTORS       = 6
PARENT_BLEND    = 0.3       # fraction of a tube blended with the parent joint

_LEG_JOINTS     = (4, 5, 6, 7, 8, 9)
_ARM_JOINTS     = (10, 11, 12, 13, 14, 15)
_TORSO_JOINTS   = (1, 2)
_HEAD_JOINT     = 3


# ======================================================================================
# Body model
# ======================================================================================
@dataclass(frozen=True, eq=False)
class BodyModel:
    """
    Articulated body in rest pose.

    Attributes:
    -----------
        - template_vertices (np.ndarray): (N, 3) rest-pose vertices in meters.
        - faces (np.ndarray): (F, 3) triangle indices.
        - parents (tuple): parent index per joint, -1 for the root.
        - joint_names (tuple): joint names.
        - joint_regressor (np.ndarray): (K, N) rows summing to one.
        - skin_weights (np.ndarray): (N, K) non-negative, rows summing to one.
        - shape_basis (np.ndarray): (10, N, 3) displacement per unit normalised beta.
        - vertex_segment (np.ndarray): (N,) joint owning each vertex.

    Methods:
    --------
        - mini: the procedural 16-joint body.
        - forward: posed vertices and joints (see lbs_forward).
        - part_vertices: vertex indices of one joint's tube.
        - shaped_vertices / rest_joints: plain-array helpers at a given beta.
    """
    template_vertices   : np.ndarray
    faces               : np.ndarray
    parents             : tuple
    joint_names         : tuple
    joint_regressor     : np.ndarray
    skin_weights        : np.ndarray
    shape_basis         : np.ndarray
    vertex_segment      : np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        n = self.template_vertices.shape[0]
        k = len(self.parents)
        if self.parents[0] != -1 or any(not 0 <= p < i for i, p in enumerate(self.parents) if i):
            raise DataError("kinematic tree must be rooted at joint 0 with parents first")
        if self.skin_weights.shape != (n, k) or self.joint_regressor.shape != (k, n):
            raise ShapeError(f"skin weights {self.skin_weights.shape} / regressor "
                             f"{self.joint_regressor.shape} do not match N={n}, K={k}")
        if np.any(self.skin_weights < 0.0) or \
                not np.allclose(self.skin_weights.sum(axis=1), 1.0, atol=1e-12):
            raise DataError("skin weights must be non-negative and sum to one per vertex")
        if self.shape_basis.shape != (N_BETAS, n, 3):
            raise ShapeError(f"shape basis must be (10, {n}, 3), got {self.shape_basis.shape}")
        for array in (self.template_vertices, self.faces, self.joint_regressor,
                      self.skin_weights, self.shape_basis, self.vertex_segment):
            array.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @classmethod
    def mini(cls) -> "BodyModel":
        """Build the procedural 16-joint body."""
        vertices, faces, segment, s_coord, radial = _build_tubes()
        k = len(JOINT_NAMES)
        n = vertices.shape[0]

        weights = np.zeros((n, k))
        for i in range(n):
            joint = segment[i]
            parent = PARENTS[joint]
            w_parent = 0.0
            if parent >= 0 and s_coord[i] < PARENT_BLEND:
                w_parent = 0.5 * (1.0 - s_coord[i] / PARENT_BLEND)
            weights[i, joint] = 1.0 - w_parent
            if w_parent > 0.0:
                weights[i, parent] = w_parent

        # joint k = mean of the first ring of its own tube
        regressor = np.zeros((k, n))
        per_tube = N_RINGS * N_SECTORS + 2
        for joint in range(k):
            first = joint * per_tube
            regressor[joint, first:first + N_SECTORS] = 1.0 / N_SECTORS

        basis = _shape_basis(vertices, segment, radial)
        logger.debug("Built mini body: %d vertices, %d faces, %d joints", n, len(faces), k)
        return cls(template_vertices=vertices, faces=faces, parents=PARENTS,
                   joint_names=JOINT_NAMES, joint_regressor=regressor,
                   skin_weights=weights, shape_basis=basis, vertex_segment=segment)

    def part_vertices(self, joint: str | int) -> np.ndarray:
        """Indices of the vertices on the tube of a joint."""
        idx = self.joint_names.index(joint) if isinstance(joint, str) else int(joint)
        return np.flatnonzero(self.vertex_segment == idx)

    def shaped_vertices(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=np.float64)
        return self.template_vertices + np.einsum("b,bnd->nd", beta, self.shape_basis)

    def rest_joints(self, beta=None) -> np.ndarray:
        shaped = self.template_vertices if beta is None else self.shaped_vertices(beta)
        return self.joint_regressor @ shaped

    def forward(self, theta, beta) -> tuple:
        return lbs_forward(self, theta, beta)


@lru_cache(maxsize=None)
def mini_body() -> BodyModel:
    """Process-wide instance of the procedural body."""
    return BodyModel.mini()


def lbs_forward(model: BodyModel, theta, beta) -> tuple:
    """
    Shape blend, forward kinematics and linear blend skinning.

    Args:
        model (BodyModel): body definition.
        theta: (K, 6) or (6K,) per-joint 6D rotations (Tensor or array).
        beta: (10,) normalised shape coefficients.

    Returns:
        tuple: (vertices (N, 3) Tensor, joints (K, 3) Tensor).

    Raises:
        NonFiniteError: NaN or inf in the inputs.
        ShapeError: wrong input sizes.
    """
    theta = tn.as_tensor(theta)
    beta = tn.as_tensor(beta)
    k, n = model.n_joints, model.n_vertices
    if not (np.all(np.isfinite(theta.data)) and np.all(np.isfinite(beta.data))):
        raise NonFiniteError("lbs_forward: non-finite pose or shape input")
    if theta.size != 6 * k:
        raise ShapeError(f"lbs_forward: theta of shape {theta.shape} does not hold {k} 6D blocks")
    if beta.shape != (N_BETAS,):
        raise ShapeError(f"lbs_forward: beta must have shape ({N_BETAS},), got {beta.shape}")
    if theta.shape != (k, 6):
        theta = tn.reshape(theta, (k, 6))

    # Shape blend
    offsets = tn.reshape(tn.reshape(beta, (1, N_BETAS)) @ model.shape_basis.reshape(N_BETAS, -1),
                         (n, 3))
    v_shaped = offsets + model.template_vertices
    joints_rest = tn.matmul(model.joint_regressor, v_shaped)

    # Forward kinematics
    local = rot6d_to_matrix(theta)
    world_rot, world_trans, posed_joints = [], [], []
    for j in range(k):
        r_loc = local[j]
        j_rest = tn.reshape(joints_rest[j], (3, 1))
        offset = j_rest - r_loc @ j_rest
        parent = model.parents[j]
        if parent < 0:
            r_world, a_world = r_loc, offset
        else:
            r_world = world_rot[parent] @ r_loc
            a_world = world_rot[parent] @ offset + world_trans[parent]
        world_rot.append(r_world)
        world_trans.append(a_world)
        posed_joints.append(tn.reshape(r_world @ j_rest + a_world, (3,)))

    # Skinning
    eye = np.broadcast_to(np.eye(3), (k, 3, 3))
    rot_delta = tn.reshape(tn.stack(world_rot, axis=0) - eye, (k, 9))
    trans = tn.reshape(tn.stack(world_trans, axis=0), (k, 3))
    blend_rot = tn.reshape(tn.matmul(model.skin_weights, rot_delta), (n, 3, 3))
    blend_trans = tn.matmul(model.skin_weights, trans)
    rotated = tn.reshape(tn.matmul(blend_rot, tn.reshape(v_shaped, (n, 3, 1))), (n, 3))
    vertices = v_shaped + rotated + blend_trans
    return vertices, tn.stack(posed_joints, axis=0)


# ======================================================================================
# Geometry construction
# ======================================================================================
def _tube_frame(direction: np.ndarray) -> tuple:
    ref = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(direction, ref)
    u /= np.linalg.norm(u)
    w = np.cross(direction, u)
    return u, w


def _build_tubes() -> tuple:
    """Vertices, faces, owning joint, axial coordinate and radial unit vector per vertex."""
    vertices, faces, segment, s_coord, radial = [], [], [], [], []
    angles = 2.0 * np.pi * np.arange(N_SECTORS) / N_SECTORS
    for joint, (start, end, radius) in enumerate(zip(_REST_JOINTS, _SEGMENT_ENDS, _RADII)):
        base = len(vertices)
        axis = end - start
        direction = axis / np.linalg.norm(axis)
        u, w = _tube_frame(direction)
        for ring in range(N_RINGS):
            s = ring / (N_RINGS - 1)
            centre = start + s * axis
            for phi in angles:
                normal = np.cos(phi) * u + np.sin(phi) * w
                vertices.append(centre + radius * normal)
                segment.append(joint)
                s_coord.append(s)
                radial.append(normal)
        cap_start, cap_end = base + N_RINGS * N_SECTORS, base + N_RINGS * N_SECTORS + 1
        vertices.append(start - 0.5 * radius * direction)
        vertices.append(end + 0.5 * radius * direction)
        segment.extend([joint, joint])
        s_coord.extend([0.0, 1.0])
        radial.extend([-direction, direction])

        for ring in range(N_RINGS - 1):
            for sector in range(N_SECTORS):
                a = base + ring * N_SECTORS + sector
                b = base + ring * N_SECTORS + (sector + 1) % N_SECTORS
                c, d = a + N_SECTORS, b + N_SECTORS
                faces.append((a, b, d))
                faces.append((a, d, c))
        last = base + (N_RINGS - 1) * N_SECTORS
        for sector in range(N_SECTORS):
            nxt = (sector + 1) % N_SECTORS
            faces.append((cap_start, base + nxt, base + sector))
            faces.append((cap_end, last + sector, last + nxt))
    return (np.array(vertices), np.array(faces, dtype=np.int64), np.array(segment),
            np.array(s_coord), np.array(radial))


def _shape_basis(vertices: np.ndarray, segment: np.ndarray, radial: np.ndarray) -> np.ndarray:
    """Ten displacement fields, in meters per unit of normalised beta."""
    n = vertices.shape[0]
    basis = np.zeros((N_BETAS, n, 3))
    x, y = vertices[:, 0], vertices[:, 1]
    side = np.sign(x)
    legs = np.isin(segment, _LEG_JOINTS)
    arms = np.isin(segment, _ARM_JOINTS)
    torso = np.isin(segment, _TORSO_JOINTS)
    head = segment == _HEAD_JOINT

    basis[0, :, 1] = 0.06 * y                                       # stature
    basis[1] = 0.02 * radial                                        # girth
    basis[2, legs, 1] = 0.05 * (y[legs] - 0.92) / 0.92              # leg length
    basis[3, arms, 0] = 0.05 * (x[arms] - side[arms] * 0.18) / 0.72 # arm length
    basis[4, arms, 0] = 0.03 * side[arms]                           # shoulder width
    basis[5, legs, 0] = 0.02 * side[legs]                           # hip width
    basis[6, :, 1] = 0.05 * np.clip((y - 0.95) / 0.55, 0.0, 1.0)    # torso length
    basis[7, torso, 2] = 0.03 * np.maximum(radial[torso, 2], 0.0)   # belly
    basis[8, head] = 0.02 * radial[head]                            # head size
    basis[9, legs | arms] = 0.015 * radial[legs | arms]             # limb thickness
    return basis
