"""
    Object template registry.

    Templates are looked up by id, first in the registry directory, then among the built-in
    templates. A template directory holds:

        template.ini        [template] id, kind and SDF parameters (plus grid placement)
        mesh.obj            canonical mesh
        coarse_points.txt   64 rows "x y z"
        sdf_grid.bin        grid values, only for kind = grid

    Built-in templates are created on first use and cached per process. A registry may be
    shared by the refinement worker threads.
"""
import logging
import os
import threading
from functools import lru_cache

import numpy as np
import trimesh

from hoiModule.binFiles.read_sdf_grid import ReadSdfGrid, write_sdf_grid
from hoiModule.bodyModel.object_model import (BoxSdf, CylinderSdf, GridSdf, ObjectTemplate,
                                              SphereSdf, make_box_template,
                                              make_cylinder_template, make_grid_template,
                                              make_sphere_template)
from hoiModule.iniFiles.read_ini import TemplateHeaderReader, write_ini
from hoiModule.sceneGen.obj_io import export_obj, read_obj
from hoiModule.utils.errors import DataError

logger = logging.getLogger(__name__)

BUILTIN_TEMPLATES = ("box_seat", "box_carry", "sphere_ball", "cylinder_post", "icosphere_grid")


@lru_cache(maxsize=None)
def builtin_template(template_id: str) -> ObjectTemplate:
    """Built-in templates; dimensions in meters."""
    if template_id == "box_seat":
        return make_box_template("box_seat", (0.22, 0.42, 0.22))
    if template_id == "box_carry":
        return make_box_template("box_carry", (0.12, 0.12, 0.12))
    if template_id == "sphere_ball":
        return make_sphere_template("sphere_ball", 0.15)
    if template_id == "cylinder_post":
        return make_cylinder_template("cylinder_post", 0.12, 0.5)
    if template_id == "icosphere_grid":
        mesh = trimesh.creation.icosphere(subdivisions=2, radius=0.15)
        return make_grid_template("icosphere_grid", mesh.vertices, mesh.faces)
    raise DataError(f"Unknown object template '{template_id}' "
                    f"(built-in: {', '.join(BUILTIN_TEMPLATES)})")


class TemplateRegistry:
    """
    Directory of object templates with a fallback to the built-in ones.

    Attributes:
    -----------
        - root (str | None): registry directory, one sub-directory per template id.

    Methods:
    --------
        - get: template by id (cached).
        - save: write a template directory.
        - load: read a template directory.
        - ids: available template ids.
    """
    def __init__(self, root: str | None = None) -> None:
        self.root = root
        self._cache: dict = {}
        self._lock = threading.Lock()

    def ids(self) -> list:
        found = set(BUILTIN_TEMPLATES)
        if self.root and os.path.isdir(self.root):
            found.update(d for d in os.listdir(self.root)
                         if os.path.isfile(os.path.join(self.root, d, "template.ini")))
        return sorted(found)

    def get(self, template_id: str) -> ObjectTemplate:
        with self._lock:
            if template_id not in self._cache:
                directory = os.path.join(self.root, template_id) if self.root else None
                if directory and os.path.isfile(os.path.join(directory, "template.ini")):
                    self._cache[template_id] = self.load(directory)
                else:
                    self._cache[template_id] = builtin_template(template_id)
            return self._cache[template_id]

    @staticmethod
    def load(directory: str) -> ObjectTemplate:
        """
        Read one template directory.

        Raises:
            DataError: missing files, unknown SDF kind or wrong coarse point count.
        """
        header = TemplateHeaderReader(os.path.join(directory, "template.ini")).header
        mesh_path = os.path.join(directory, "mesh.obj")
        points_path = os.path.join(directory, "coarse_points.txt")
        for path in (mesh_path, points_path):
            if not os.path.isfile(path):
                raise DataError(f"template directory {directory}: missing {os.path.basename(path)}")
        groups = read_obj(mesh_path)
        if not groups:
            raise DataError(f"{mesh_path}: no mesh found")
        vertices, faces = next(iter(groups.values()))
        coarse = np.loadtxt(points_path, dtype=np.float64, ndmin=2)

        kind = header["kind"]
        if kind == "box":
            sdf = BoxSdf(header["half_extents"])
        elif kind == "sphere":
            sdf = SphereSdf(header["radius"])
        elif kind == "cylinder":
            sdf = CylinderSdf(header["radius"], header["half_height"])
        elif kind == "grid":
            sdf = ReadSdfGrid(os.path.join(directory, "sdf_grid.bin"), header).read()
        else:
            raise DataError(f"template {header['id']}: unknown SDF kind '{kind}'")
        logger.info("Loaded template %s (%s, %d vertices)", header["id"], kind, len(vertices))
        return ObjectTemplate(str(header["id"]), vertices, faces, coarse, sdf)

    @staticmethod
    def save(template: ObjectTemplate, root: str) -> str:
        """Write `template` under root/<id>/ and return the directory."""
        directory = os.path.join(root, template.id)
        os.makedirs(directory, exist_ok=True)
        header = {"id": template.id, "kind": template.kind}
        header.update(template.sdf.params())
        write_ini(os.path.join(directory, "template.ini"), {"template": header})
        export_obj([(template.id, template.vertices, template.faces)],
                   os.path.join(directory, "mesh.obj"))
        np.savetxt(os.path.join(directory, "coarse_points.txt"), template.coarse_points,
                   fmt="%.17g")
        if isinstance(template.sdf, GridSdf):
            write_sdf_grid(os.path.join(directory, "sdf_grid.bin"), template.sdf)
        return directory
