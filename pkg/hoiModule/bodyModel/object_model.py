"""
    Rigid object templates and their signed distance functions.

    An ObjectTemplate holds a canonical mesh, 64 coarse surface points and a signed distance
    function (negative inside). Analytic SDFs (box, sphere, y-axis cylinder) are written with
    tensor primitives so gradients flow to the query points and, through world_sdf(), to the
    object pose. Arbitrary watertight meshes use a sampled grid read back with trilinear
    interpolation (GridSdf); the grid values come from trimesh proximity queries. Template
    meshes are built and sampled with trimesh as well.

    Classes:
    --------
    * BoxSdf, SphereSdf, CylinderSdf, GridSdf: canonical-frame SDFs, callable on (N, 3) points.
    * ObjectTemplate: id, mesh, coarse points and SDF of one object.

    Functions:
    ----------
    * object_forward: posed object vertices.
    * world_sdf: SDF of the posed object evaluated at world-frame query points.
    * make_box_template / make_sphere_template / make_cylinder_template /
      make_grid_template: template builders.
    * farthest_point_sample: spread-out subset of the surface samples.
"""
import logging
from dataclasses import dataclass

import numpy as np
import trimesh

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor
from hoiModule.bodyModel.rotation import rot6d_to_matrix
from hoiModule.utils.errors import DataError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

N_COARSE_POINTS     = 64
N_SURFACE_SAMPLES   = 2048
GRID_RESOLUTION     = 64


# ======================================================================================
# Analytic SDFs
# ======================================================================================
class BoxSdf:
    """Axis-aligned box centred at the origin."""
    kind = "box"

    def __init__(self, half_extents) -> None:
        self.half_extents = np.asarray(half_extents, dtype=np.float64)
        if self.half_extents.shape != (3,) or np.any(self.half_extents <= 0.0):
            raise DataError(f"box half extents must be 3 positive values, got {half_extents}")

    def params(self) -> dict:
        return {"half_extents": self.half_extents.tolist()}

    def __call__(self, points: Tensor) -> Tensor:
        q = tn.abs_(points) - self.half_extents
        outside = tn.sqrt(tn.sum_(tn.maximum(q, 0.0) ** 2, axis=1))
        inside = tn.minimum(tn.amax(q, axis=1), 0.0)
        return outside + inside


class SphereSdf:
    """Sphere centred at the origin."""
    kind = "sphere"

    def __init__(self, radius: float) -> None:
        if radius <= 0.0:
            raise DataError(f"sphere radius must be positive, got {radius}")
        self.radius = float(radius)

    def params(self) -> dict:
        return {"radius": self.radius}

    def __call__(self, points: Tensor) -> Tensor:
        return tn.sqrt(tn.sum_(points * points, axis=1)) - self.radius


class CylinderSdf:
    """Capped cylinder around the y axis, centred at the origin."""
    kind = "cylinder"

    def __init__(self, radius: float, half_height: float) -> None:
        if radius <= 0.0 or half_height <= 0.0:
            raise DataError(f"cylinder radius/half height must be positive, got "
                            f"{radius}, {half_height}")
        self.radius         = float(radius)
        self.half_height    = float(half_height)

    def params(self) -> dict:
        return {"radius": self.radius, "half_height": self.half_height}

    def __call__(self, points: Tensor) -> Tensor:
        n = points.shape[0]
        radial = tn.sqrt(points[:, 0] * points[:, 0] + points[:, 2] * points[:, 2])
        d = tn.stack([radial - self.radius, tn.abs_(points[:, 1]) - self.half_height], axis=1)
        outside = tn.sqrt(tn.sum_(tn.maximum(d, 0.0) ** 2, axis=1))
        inside = tn.minimum(tn.amax(d, axis=1), 0.0)
        if outside.shape != (n,):
            raise ShapeError(f"cylinder SDF: unexpected output shape {outside.shape}")
        return outside + inside


# ======================================================================================
# Sampled grid SDF
# ======================================================================================
class GridSdf:
    """
    Signed distances sampled on a regular cubic grid.

    Points outside the grid are clamped onto it and the clamping distance is added, so the
    value stays an upper bound of the true distance away from the object.

    Attributes:
    -----------
        - values (np.ndarray): (R, R, R) samples, index order (x, y, z).
        - origin (np.ndarray): position of sample (0, 0, 0).
        - spacing (float): distance between neighbouring samples.
    """
    kind = "grid"

    def __init__(self, values, origin, spacing: float) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.spacing = float(spacing)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise DataError(f"SDF grid must be 3-D with at least 2 samples per axis, "
                            f"got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("SDF grid contains non-finite values")
        self.values.setflags(write=False)

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.values.shape) - 1) * self.spacing

    def params(self) -> dict:
        return {"resolution": list(self.values.shape), "origin": self.origin.tolist(),
                "spacing": self.spacing}

    def _lookup(self, p: np.ndarray) -> tuple:
        """Values and spatial gradients at (N, 3) points."""
        clamped = np.clip(p, self.origin, self.upper)
        offset = clamped - p
        dist = np.linalg.norm(offset, axis=1)

        g = (clamped - self.origin) / self.spacing
        upper_cell = np.array(self.values.shape) - 2
        i0 = np.clip(np.floor(g).astype(np.int64), 0, upper_cell)
        f = g - i0
        v = self.values
        c = {}
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    c[dx, dy, dz] = v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = c[0, 0, 0] * (1 - fx) + c[1, 0, 0] * fx
        c01 = c[0, 0, 1] * (1 - fx) + c[1, 0, 1] * fx
        c10 = c[0, 1, 0] * (1 - fx) + c[1, 1, 0] * fx
        c11 = c[0, 1, 1] * (1 - fx) + c[1, 1, 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        value = c0 * (1 - fz) + c1 * fz

        dfx = ((c[1, 0, 0] - c[0, 0, 0]) * (1 - fy) * (1 - fz)
               + (c[1, 1, 0] - c[0, 1, 0]) * fy * (1 - fz)
               + (c[1, 0, 1] - c[0, 0, 1]) * (1 - fy) * fz
               + (c[1, 1, 1] - c[0, 1, 1]) * fy * fz)
        dfy = (c10 - c00) * (1 - fz) + (c11 - c01) * fz
        dfz = c1 - c0
        grad = np.stack([dfx, dfy, dfz], axis=1) / self.spacing

        outside = offset != 0.0
        safe = np.where(dist > 0.0, dist, 1.0)[:, None]
        grad = np.where(outside, -offset / safe, grad)
        return value + dist, grad

    def __call__(self, points: Tensor) -> Tensor:
        value, grad = self._lookup(points.data)
        return tn.custom_op(value, (points,), lambda g, needs: (g[:, None] * grad,), "grid_sdf")

    @classmethod
    def from_mesh(cls, vertices: np.ndarray, faces: np.ndarray,
                  resolution: int = GRID_RESOLUTION, padding: float = 0.1) -> "GridSdf":
        """
        Sample the SDF of a watertight mesh on a cubic grid around its bounding box.

        Args:
            vertices, faces: mesh.
            resolution (int): samples per axis.
            padding (float): margin added around the bounding box, relative to its size.
        """
        mesh = trimesh.Trimesh(vertices=vertices, faces=faces, process=False)
        if not mesh.is_watertight:
            logger.warning("Mesh is not watertight, grid SDF signs may be wrong")
        lo, hi = mesh.bounds
        size = float((hi - lo).max()) * (1.0 + 2.0 * padding)
        origin = 0.5 * (lo + hi) - 0.5 * size
        spacing = size / (resolution - 1)
        axis = np.arange(resolution) * spacing
        gx, gy, gz = np.meshgrid(origin[0] + axis, origin[1] + axis, origin[2] + axis,
                                 indexing="ij")
        points = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        # trimesh counts distances inside the mesh as positive
        values = -trimesh.proximity.signed_distance(mesh, points)
        logger.info("Sampled SDF grid %d^3 (spacing %.4f m)", resolution, spacing)
        return cls(values.reshape(resolution, resolution, resolution), origin, spacing)


# ======================================================================================
# Templates
# ======================================================================================
@dataclass(frozen=True, eq=False)
class ObjectTemplate:
    """
    Rigid object in its canonical frame.

    Attributes:
    -----------
        - id (str): template name.
        - vertices (np.ndarray): (N_o, 3) canonical mesh vertices in meters.
        - faces (np.ndarray): (F, 3) triangle indices.
        - coarse_points (np.ndarray): (64, 3) canonical surface samples.
        - sdf: canonical SDF (BoxSdf, SphereSdf, CylinderSdf or GridSdf).
    """
    id              : str
    vertices        : np.ndarray
    faces           : np.ndarray
    coarse_points   : np.ndarray
    sdf             : object

    def __post_init__(self) -> None:
        if self.coarse_points.shape != (N_COARSE_POINTS, 3):
            raise DataError(f"template {self.id}: coarse points must be (64, 3), got "
                            f"{self.coarse_points.shape}")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or not len(self.vertices):
            raise DataError(f"template {self.id}: vertices must be a non-empty (N, 3) array")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise DataError(f"template {self.id}: face index out of range")
        for array in (self.vertices, self.faces, self.coarse_points):
            array.setflags(write=False)

    @property
    def kind(self) -> str:
        return self.sdf.kind

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def canonical_sdf(self, points) -> Tensor:
        """SDF at canonical-frame points, (N, 3) -> (N,)."""
        points = tn.as_tensor(points)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeError(f"SDF query must have shape (N, 3), got {points.shape}")
        return self.sdf(points)

    def sdf_np(self, points: np.ndarray) -> np.ndarray:
        with tn.no_grad():
            return self.canonical_sdf(np.asarray(points, dtype=np.float64)).numpy()


def object_forward(template: ObjectTemplate, rot_o, trans_o) -> Tensor:
    """Posed vertices V = V_canonical R^T + t, shape (N_o, 3)."""
    rot = rot6d_to_matrix(rot_o)
    return tn.matmul(template.vertices, tn.transpose(rot)) + tn.as_tensor(trans_o)


def world_sdf(template: ObjectTemplate, rot_o, trans_o, query) -> Tensor:
    """
    SDF of the posed object at world-frame points: Phi(R^T (q - t)).

    A (3,) query returns a scalar, an (N, 3) query an (N,) tensor.
    """
    query = tn.as_tensor(query)
    if not np.all(np.isfinite(query.data)):
        raise NonFiniteError("world_sdf: non-finite query")
    single = query.ndim == 1
    points = tn.reshape(query, (1, 3)) if single else query
    rot = rot6d_to_matrix(rot_o)
    local = tn.matmul(points - tn.as_tensor(trans_o), rot)
    values = template.canonical_sdf(local)
    return tn.reshape(values, ()) if single else values


def make_box_template(template_id: str, half_extents, subdivisions: int = 3) -> ObjectTemplate:
    mesh = trimesh.creation.box(extents=2.0 * np.asarray(half_extents, dtype=np.float64))
    for _ in range(subdivisions):
        mesh = mesh.subdivide()
    return _finish(template_id, mesh, BoxSdf(half_extents))


def make_sphere_template(template_id: str, radius: float, level: int = 2) -> ObjectTemplate:
    mesh = trimesh.creation.icosphere(subdivisions=level, radius=radius)
    return _finish(template_id, mesh, SphereSdf(radius))


def make_cylinder_template(template_id: str, radius: float, half_height: float,
                           sections: int = 16) -> ObjectTemplate:
    # trimesh builds cylinders along z
    z_to_y = trimesh.transformations.rotation_matrix(-np.pi / 2.0, [1.0, 0.0, 0.0])
    mesh = trimesh.creation.cylinder(radius=radius, height=2.0 * half_height,
                                     sections=sections, transform=z_to_y)
    return _finish(template_id, mesh, CylinderSdf(radius, half_height))


def make_grid_template(template_id: str, vertices: np.ndarray, faces: np.ndarray,
                       resolution: int = GRID_RESOLUTION) -> ObjectTemplate:
    sdf = GridSdf.from_mesh(vertices, faces, resolution)
    return _finish(template_id, trimesh.Trimesh(vertices=vertices, faces=faces, process=False),
                   sdf)


def _finish(template_id: str, mesh: trimesh.Trimesh, sdf) -> ObjectTemplate:
    if mesh.area <= 0.0:
        raise DataError(f"template {template_id}: mesh has zero surface area")
    samples, _ = trimesh.sample.sample_surface(mesh, N_SURFACE_SAMPLES, seed=0)
    coarse = samples[farthest_point_sample(samples, N_COARSE_POINTS)]
    return ObjectTemplate(template_id, np.array(mesh.vertices, dtype=np.float64),
                          np.array(mesh.faces, dtype=np.int64), coarse, sdf)


# ======================================================================================
# Point sampling
# ======================================================================================
def farthest_point_sample(points: np.ndarray, count: int) -> np.ndarray:
    """Indices of `count` points chosen greedily by farthest distance, starting at index 0."""
    if count > len(points):
        raise DataError(f"cannot pick {count} points out of {len(points)}")
    chosen = np.zeros(count, dtype=np.int64)
    dist = np.full(len(points), np.inf)
    for i in range(1, count):
        dist = np.minimum(dist, np.sum((points - points[chosen[i - 1]]) ** 2, axis=1))
        chosen[i] = int(np.argmax(dist))
    return chosen
