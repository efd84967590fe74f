"""
    Wavefront OBJ export and re-parsing of posed scenes.

    Each mesh is written as a named object ('o name') with its 'v' and 'f' records; face
    indices are global to the file, as the format requires. Reading splits the file back
    into its named objects with group-local, zero-based faces. Both directions go through
    trimesh without processing, so vertex order and count are preserved.
"""
import logging

import numpy as np
import trimesh

from hoiModule.utils.errors import DataError

logger = logging.getLogger(__name__)

OBJ_DIGITS = 20


def export_obj(groups, path: str) -> None:
    """
    Write one or more named meshes to an OBJ file.

    Args:
        groups: list of (name, vertices (N, 3), faces (F, 3) zero-based) tuples, or a single
            (vertices, faces) pair written as group "mesh".
        path (str): output file.

    Raises:
        DataError: a face refers to a vertex that does not exist.
    """
    if len(groups) == 2 and not isinstance(groups[0], (tuple, list)) \
            and np.asarray(groups[0]).ndim == 2:
        groups = [("mesh", groups[0], groups[1])]
    scene = trimesh.Scene()
    for name, vertices, faces in groups:
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise DataError(f"export_obj: group '{name}' has a face index outside "
                            f"[0, {len(vertices) - 1}]")
        mesh = trimesh.Trimesh(vertices=vertices, faces=faces, process=False,
                               metadata={"name": name})
        scene.add_geometry(mesh, geom_name=name)
    scene.export(path, file_type="obj", digits=OBJ_DIGITS, include_normals=False,
                 include_color=False, include_texture=False, header=None)
    logger.debug("Wrote %d group(s) to %s", len(groups), path)


def read_obj(path: str) -> dict:
    """
    Parse an OBJ file into {object name: (vertices, faces)} with zero-based, group-local faces.

    Raises:
        DataError: unreadable file, malformed records or non-finite coordinates.
    """
    try:
        scene = trimesh.load(path, file_type="obj", force="scene", process=False,
                             maintain_order=True, split_objects=True, group_material=False)
    except (OSError, ValueError, IndexError, KeyError, TypeError) as err:
        raise DataError(f"{path}: cannot read OBJ file ({err})") from err
    groups = {}
    for name, mesh in scene.geometry.items():
        vertices = np.array(mesh.vertices, dtype=np.float64)
        if not np.all(np.isfinite(vertices)):
            raise DataError(f"{path}: object '{name}' has non-finite vertex coordinates")
        groups[name] = (vertices, np.array(mesh.faces, dtype=np.int64).reshape(-1, 3))
    return groups
