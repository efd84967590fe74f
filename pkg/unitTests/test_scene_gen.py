"""
Module to test the synthetic scene generator, scene files, datasets and OBJ export.
"""
import json
import logging
import os

import numpy as np
import pytest

from hoiModule.bodyModel.body_model import mini_body
from hoiModule.bodyModel.object_model import make_sphere_template
from hoiModule.bodyModel.params import ParamLayout, ParamVector
from hoiModule.bodyModel.registry import builtin_template
from hoiModule.bodyModel.rotation import rot6d_to_matrix_np
from hoiModule.sceneGen.dataset import (MANIFEST_NAME, load_split, make_dataset, read_manifest,
                                        regenerate_dataset, scene_seed, training_set)
from hoiModule.sceneGen.obj_io import export_obj, read_obj
from hoiModule.sceneGen.scene_io import (list_scene_files, parse_scene, read_scene,
                                         serialize_scene, write_scene)
from hoiModule.sceneGen.scenes import (DEFAULT_SCENARIOS, SCENARIO_KINDS, SNAP_TOLERANCE,
                                       PerturbationModel, ScenarioSpec, Scene, check_scene,
                                       sample_scene, scenario, snap_object)
from hoiModule.utils.errors import ConfigError, DataError

EXAMPLE_SCENE = os.path.join(os.path.dirname(__file__), "..", "docs", "example_scene.json")


@pytest.fixture(scope="module")
def carry_scene():
    return sample_scene(scenario("carry-box"), 17)


@pytest.fixture
def carry_only():
    return [scenario("carry-box")]


# ========================== generation ==========================
@pytest.mark.parametrize("kind", SCENARIO_KINDS)
def test_generated_ground_truth_is_valid(kind):
    """Every scenario yields a ground truth that passes the validity checks"""
    spec = scenario(kind)
    scene = sample_scene(spec, 3)
    assert scene.kind == kind
    assert scene.template_id == spec.template_id
    assert check_scene(spec, scene.gt, mini_body(), builtin_template(spec.template_id)) is None
    assert np.all(np.abs(scene.gt.beta) <= 1.0)


def test_generation_is_deterministic(carry_scene):
    again = sample_scene(scenario("carry-box"), 17)
    assert again.equals(carry_scene)
    assert not sample_scene(scenario("carry-box"), 18).equals(carry_scene)


def test_observation_layout(carry_scene):
    """Noisy joints, noisy object centre, then the noise scale"""
    obs = carry_scene.observation
    assert obs.shape == (52,)
    assert obs[-1] == 0.03
    assert np.linalg.norm(obs[48:51] - carry_scene.gt.trans_o) < 0.2


def test_noise_free_observation_and_initial_estimate():
    zero = PerturbationModel(0.0, 0.0, 0.0, 0.0)
    scene = sample_scene(scenario("carry-box"), 17, perturbation=zero, obs_noise=0.0)
    assert scene.init == scene.gt
    np.testing.assert_allclose(scene.observation[48:51], scene.gt.trans_o)
    assert scene.observation[-1] == 0.0


def test_perturbation_keeps_valid_parameters(carry_scene):
    """The initial estimate differs from the ground truth but stays a valid vector"""
    init, gt = carry_scene.init, carry_scene.gt
    assert not init == gt
    for mat in rot6d_to_matrix_np(init.theta):
        assert np.linalg.det(mat) == pytest.approx(1.0)
    assert np.all(np.abs(init.beta) <= 1.0)


def test_snap_stops_just_outside_the_object():
    """Moving towards the body stops within the tolerance, a penetrating start backs off"""
    template = make_sphere_template("ball", 0.15)
    human = np.zeros((1, 3))
    up = np.array([0.0, 1.0, 0.0])
    for start in ([0.0, -1.0, 0.0], [0.0, 0.05, 0.0]):
        trans = snap_object(human, template, np.eye(3), np.array(start), up)
        gap = template.sdf_np(human - trans)[0]
        assert 0.0 <= gap <= SNAP_TOLERANCE


def test_specs_and_perturbation_validation():
    with pytest.raises(DataError):
        ScenarioSpec("juggle", "sphere_ball")
    with pytest.raises(DataError):
        ScenarioSpec("carry-box", "box_carry", pose_jitter=-0.1)
    with pytest.raises(DataError):
        scenario("juggle")
    with pytest.raises(DataError):
        PerturbationModel(trans=-1.0)
    assert {spec.kind for spec in DEFAULT_SCENARIOS} == set(SCENARIO_KINDS)


def test_scene_validation(carry_scene):
    with pytest.raises(DataError):
        Scene("carry-box", "box_carry", 0, carry_scene.gt, np.zeros(51), carry_scene.init)
    with pytest.raises(DataError):
        Scene("carry-box", "box_carry", 0, carry_scene.gt, carry_scene.observation,
              ParamVector(np.zeros(ParamLayout(8).dim), ParamLayout(8)))


def test_prediction_prefers_refined(carry_scene):
    assert carry_scene.prediction() is carry_scene.init
    refined = carry_scene.with_refined(carry_scene.gt.values)
    assert refined.prediction() == carry_scene.gt
    assert carry_scene.refined is None


# ========================== scene files ==========================
def test_scene_file_round_trip(tmp_path, carry_scene):
    """Written scenes read back identical, refined included"""
    scene = carry_scene.with_refined(carry_scene.init.values * 0.5)
    path = str(tmp_path / "nested" / "scene_000000.json")
    write_scene(scene, path)
    assert read_scene(path).equals(scene)


def test_example_scene_parses():
    """The documented example stays readable"""
    scene = read_scene(EXAMPLE_SCENE)
    assert scene.kind == "carry-box"
    assert len(scene.gt) == 115
    assert scene.refined is None


@pytest.mark.parametrize("edit, message", [
    (lambda d: d.update(format_version=2), "format_version"),
    (lambda d: d.pop("gt"), "gt"),
    (lambda d: d.update(init=d["init"][:-1]), "length"),
])
def test_bad_scene_documents(carry_scene, edit, message):
    document = json.loads(serialize_scene(carry_scene))
    edit(document)
    with pytest.raises(DataError, match=message):
        parse_scene(json.dumps(document), "scene.json")


def test_scene_file_errors(tmp_path):
    with pytest.raises(DataError):
        parse_scene("{not json")
    with pytest.raises(DataError):
        read_scene(str(tmp_path / "missing.json"))
    with pytest.raises(DataError):
        list_scene_files(str(tmp_path / "missing"))


# ========================== datasets ==========================
def test_make_dataset_layout_and_seeds(tmp_path, carry_only):
    manifest = make_dataset(str(tmp_path), carry_only, counts=(2, 1, 1), root_seed=4)
    assert manifest["counts"] == {"train": 2, "val": 1, "test": 1}
    assert manifest["seed_ranges"]["train"] == [40_000_000, 40_000_001]
    assert manifest["seed_ranges"]["test"] == [46_000_000, 46_000_000]
    assert read_manifest(str(tmp_path)) == json.loads(json.dumps(manifest))
    files = list_scene_files(str(tmp_path / "train"))
    assert [os.path.basename(f) for f in files] == ["scene_000000.json", "scene_000001.json"]
    assert read_scene(files[1]).seed == scene_seed(4, "train", 1)
    assert len(load_split(str(tmp_path), "val")) == 1


def test_dataset_regenerates_from_manifest(tmp_path, carry_only, caplog):
    """The manifest alone rebuilds byte-identical splits"""
    manifest = make_dataset(str(tmp_path / "a"), carry_only, counts=(1, 1, 1), root_seed=1)
    with caplog.at_level(logging.WARNING):
        rebuilt = regenerate_dataset(str(tmp_path / "a" / MANIFEST_NAME), str(tmp_path / "b"))
    assert rebuilt["split_hashes"] == manifest["split_hashes"]
    assert "differs" not in caplog.text


def test_dataset_argument_errors(tmp_path, carry_only):
    with pytest.raises(ConfigError):
        make_dataset(str(tmp_path), [], counts=(1, 1, 1))
    with pytest.raises(ConfigError):
        make_dataset(str(tmp_path), carry_only, counts=(1, 0, 1))
    with pytest.raises(ConfigError):
        load_split(str(tmp_path), "holdout")
    with pytest.raises(DataError):
        read_manifest(str(tmp_path / "none"))


def test_training_set_from_scenes(carry_scene):
    data = training_set([carry_scene, carry_scene])
    assert data.x0.shape == (2, 115)
    assert data.obs.shape == (2, 52)
    assert data.points.shape == (2, 64, 3)
    with pytest.raises(DataError):
        training_set([])


# ========================== OBJ export ==========================
def test_obj_groups_read_back(tmp_path):
    """Each group keeps its own vertices and group-local faces"""
    human_v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    object_v = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9], [1.0, 1.1, 1.2]])
    faces_h, faces_o = np.array([[0, 1, 2]]), np.array([[0, 1, 2], [0, 2, 3]])
    path = str(tmp_path / "scene.obj")
    export_obj([("human", human_v, faces_h), ("object", object_v, faces_o)], path)
    groups = read_obj(path)
    assert list(groups) == ["human", "object"]
    np.testing.assert_array_equal(groups["object"][0], object_v)
    np.testing.assert_array_equal(groups["object"][1], faces_o)
    with open(path, encoding="utf-8") as f:
        assert "f 4 5 6" in f.read()


def test_obj_single_mesh_and_bad_faces(tmp_path):
    vertices, faces = np.eye(3), np.array([[0, 1, 2]])
    path = str(tmp_path / "mesh.obj")
    export_obj((vertices, faces), path)
    assert list(read_obj(path)) == ["mesh"]
    with pytest.raises(DataError):
        export_obj([("bad", vertices, np.array([[0, 1, 3]]))], path)


@pytest.mark.parametrize("text", [
    "o mesh\nv 1 x 2\nv 0 0 0\nv 1 1 1\nf 1 2 3\n",
    "o mesh\nv 1 nan 2\nv 0 0 0\nv 1 1 1\nf 1 2 3\n",
])
def test_obj_bad_vertex_records(tmp_path, text):
    """Unreadable or non-finite coordinates are data errors"""
    path = tmp_path / "broken.obj"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(DataError):
        read_obj(str(path))
