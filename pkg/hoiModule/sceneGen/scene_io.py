"""
    Scene files: one JSON document per scene.

    {
      "format_version": 1,
      "kind": "sit-on-box", "template_id": "box_seat", "seed": 0,
      "n_joints": 16,
      "gt": [D floats], "init": [D floats], "observation": [3 K + 4 floats],
      "refined": [D floats] | null
    }

    Floats are written with their shortest exact representation, so a read-back scene is
    bitwise identical to the written one.
"""
import json
import logging
import os

import numpy as np

from hoiModule.bodyModel.params import ParamLayout, ParamVector
from hoiModule.sceneGen.scenes import Scene
from hoiModule.utils.errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": scene.kind,
        "template_id": scene.template_id,
        "seed": int(scene.seed),
        "n_joints": scene.gt.layout.n_joints,
        "gt": scene.gt.values.tolist(),
        "init": scene.init.values.tolist(),
        "observation": scene.observation.tolist(),
        "refined": None if scene.refined is None else scene.refined.values.tolist(),
    }


def scene_from_dict(values: dict, source: str = "<dict>") -> Scene:
    """
    Raises:
        DataError: unknown format version, missing key or inconsistent lengths.
    """
    version = values.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported scene format_version {version!r}, "
                        f"expected {FORMAT_VERSION}")
    try:
        layout = ParamLayout(int(values["n_joints"]))
        refined = values.get("refined")
        return Scene(kind=values["kind"], template_id=values["template_id"],
                     seed=int(values["seed"]),
                     gt=ParamVector(values["gt"], layout),
                     observation=np.array(values["observation"], dtype=np.float64),
                     init=ParamVector(values["init"], layout),
                     refined=None if refined is None else ParamVector(refined, layout))
    except KeyError as err:
        raise DataError(f"{source}: missing scene field {err}") from err
    except DataError as err:
        raise DataError(f"{source}: {err}") from err


def serialize_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=1)


def parse_scene(text: str, source: str = "<text>") -> Scene:
    try:
        values = json.loads(text)
    except json.JSONDecodeError as err:
        raise DataError(f"{source}: not a JSON scene ({err})") from err
    return scene_from_dict(values, source)


def write_scene(scene: Scene, file_path: str) -> None:
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(file_path, "w", encoding="utf-8") as f:
        f.write(serialize_scene(scene))
        f.write("\n")


def read_scene(file_path: str) -> Scene:
    if not os.path.isfile(file_path):
        raise DataError(f"scene file {file_path} not found")
    with open(file_path, "r", encoding="utf-8") as f:
        return parse_scene(f.read(), file_path)


def list_scene_files(directory: str) -> list:
    """Sorted *.json scene files of a directory (the manifest excluded)."""
    if not os.path.isdir(directory):
        raise DataError(f"scene directory {directory} not found")
    return sorted(os.path.join(directory, name) for name in os.listdir(directory)
                  if name.endswith(".json") and name != "manifest.json")
