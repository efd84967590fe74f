"""
    Synthetic datasets: train / val / test splits of scene files plus a manifest.

    Layout of a dataset directory:

        manifest.json
        train/scene_000000.json ...
        val/scene_000000.json ...
        test/scene_000000.json ...

    Scene i of a split uses the seed root_seed * 10^7 + SPLIT_OFFSETS[split] + i and the
    scenario specs[i % len(specs)], so the three seed ranges never overlap and the whole
    dataset can be rebuilt from its manifest.
"""
import os
import json
import hashlib
import logging

import numpy as np
from tqdm import tqdm

from hoiModule.bodyModel.registry import TemplateRegistry
from hoiModule.denoiser.training import TrainingSet
from hoiModule.sceneGen.scene_io import list_scene_files, read_scene, write_scene
from hoiModule.sceneGen.scenes import (DEFAULT_SCENARIOS, PerturbationModel, ScenarioSpec,
                                       sample_scene)
from hoiModule.utils.errors import ConfigError, DataError
from hoiModule.utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

SPLITS          = ("train", "val", "test")
SPLIT_OFFSETS   = {"train": 0, "val": 3_000_000, "test": 6_000_000}
SEED_STRIDE     = 10_000_000
MANIFEST_NAME   = "manifest.json"


def scene_seed(root_seed: int, split: str, index: int) -> int:
    return int(root_seed) * SEED_STRIDE + SPLIT_OFFSETS[split] + int(index)


def _split_hash(files: list) -> str:
    digest = hashlib.sha256()
    for path in files:
        with open(path, "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def make_dataset(out_dir: str, specs=DEFAULT_SCENARIOS, counts=(1000, 100, 100),
                 root_seed: int = 0, perturbation: PerturbationModel | None = None,
                 obs_noise: float = 0.03, registry: TemplateRegistry | None = None) -> dict:
    """
    Generate and write a dataset.

    Returns:
        dict: the manifest (also written to out_dir/manifest.json).

    Raises:
        ConfigError: empty scenario list or a count outside [1, 3 000 000).
        DataError: the output directory cannot be written.
    """
    specs = tuple(specs)
    counts = tuple(int(c) for c in counts)
    if not specs:
        raise ConfigError("make_dataset: no scenario specs")
    if len(counts) != len(SPLITS) or any(not 1 <= c < SPLIT_OFFSETS["val"] for c in counts):
        raise ConfigError(f"dataset counts must be three integers in [1, 3000000), got {counts}")
    perturbation = PerturbationModel() if perturbation is None else perturbation
    registry = registry or TemplateRegistry()

    manifest = {
        "format_version": 1,
        "root_seed": int(root_seed),
        "specs": [spec.to_dict() for spec in specs],
        "perturbation": perturbation.to_dict(),
        "obs_noise": float(obs_noise),
        "counts": dict(zip(SPLITS, counts)),
        "seed_ranges": {},
        "split_hashes": {},
    }
    try:
        os.makedirs(out_dir, exist_ok=True)
        for split, count in zip(SPLITS, counts):
            split_dir = os.path.join(out_dir, split)
            os.makedirs(split_dir, exist_ok=True)
            files = []
            for i in tqdm(range(count), desc=split, disable=progress_disabled()):
                spec = specs[i % len(specs)]
                scene = sample_scene(spec, scene_seed(root_seed, split, i), perturbation,
                                     obs_noise, registry)
                path = os.path.join(split_dir, f"scene_{i:06d}.json")
                write_scene(scene, path)
                files.append(path)
            manifest["seed_ranges"][split] = [scene_seed(root_seed, split, 0),
                                              scene_seed(root_seed, split, count - 1)]
            manifest["split_hashes"][split] = _split_hash(files)
            logger.info("Generated split", extra={"record": {"split": split, "count": count}})
        with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
    except OSError as err:
        raise DataError(f"cannot write dataset to {out_dir}: {err}") from err
    return manifest


def read_manifest(path: str) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise DataError(f"dataset manifest {path} not found")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as err:
            raise DataError(f"{path}: unreadable manifest ({err})") from err


def regenerate_dataset(manifest: dict | str, out_dir: str,
                       registry: TemplateRegistry | None = None) -> dict:
    """Rebuild a dataset from its manifest; the new split hashes must match the recorded ones."""
    if isinstance(manifest, str):
        manifest = read_manifest(manifest)
    rebuilt = make_dataset(out_dir, [ScenarioSpec(**spec) for spec in manifest["specs"]],
                           [manifest["counts"][split] for split in SPLITS],
                           manifest["root_seed"], PerturbationModel(**manifest["perturbation"]),
                           manifest["obs_noise"], registry)
    for split in SPLITS:
        if rebuilt["split_hashes"][split] != manifest["split_hashes"][split]:
            logger.warning("Split %s differs from the recorded hash", split)
    return rebuilt


def load_split(data_dir: str, split: str) -> list:
    if split not in SPLITS:
        raise ConfigError(f"unknown split '{split}', expected one of {SPLITS}")
    return [read_scene(path) for path in list_scene_files(os.path.join(data_dir, split))]


def training_set(scenes: list, registry: TemplateRegistry | None = None) -> TrainingSet:
    """Stack ground-truth vectors, observations and coarse template points."""
    if not scenes:
        raise DataError("training_set: no scenes")
    registry = registry or TemplateRegistry()
    return TrainingSet(
        x0=np.stack([scene.gt.values for scene in scenes]),
        obs=np.stack([scene.observation for scene in scenes]),
        points=np.stack([registry.get(scene.template_id).coarse_points for scene in scenes]),
    )
