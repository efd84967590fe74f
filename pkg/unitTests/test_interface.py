"""
Module to test the command-line interface: commands, outputs and exit codes.
"""
import json
import os

import pytest

import interface
from hoiModule.sceneGen.dataset import make_dataset
from hoiModule.sceneGen.obj_io import read_obj
from hoiModule.sceneGen.scene_io import read_scene
from hoiModule.sceneGen.scenes import scenario
from hoiModule.utils.errors import PARTIAL_FAILURE_EXIT_CODE
from hoiModule.utils.run_config import EFFECTIVE_CONFIG, load_run_config

FAST_REFINE = ["--analytic", "--faster", "--tau", "10", "--delta-t", "5"]


@pytest.fixture(autouse=True)
def quiet_logging(mocker):
    """main() would otherwise install its own root handlers"""
    return mocker.patch("interface.setup_logging")


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    make_dataset(str(root), [scenario("carry-box")], counts=(2, 1, 1), root_seed=3)
    return str(root)


@pytest.fixture
def run_args(tmp_path, data_root):
    return ["--run-dir", str(tmp_path / "run"), "--data-root", data_root]


def test_gen_data(tmp_path, quiet_logging):
    out = tmp_path / "generated"
    code = interface.main(["--run-dir", str(tmp_path / "run"), "--data-root", str(out),
                           "--seed", "5", "--set", "data.kinds=lift-sphere",
                           "gen-data", "--counts", "1", "1", "1"])
    assert code == 0
    quiet_logging.assert_called_once_with("INFO", None, True)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["root_seed"] == 5
    assert [spec["kind"] for spec in manifest["specs"]] == ["lift-sphere"]
    assert read_scene(str(out / "test" / "scene_000000.json")).kind == "lift-sphere"


def test_optimize_evaluate_export(tmp_path, run_args, data_root):
    """Analytic refinement of the test split, then its evaluation and OBJ export"""
    run_dir = tmp_path / "run"
    assert interface.main(run_args + ["optimize", "--export-obj"] + FAST_REFINE) == 0
    refined = read_scene(str(run_dir / "refined" / "scene_000000.json"))
    assert refined.refined is not None
    trace = (run_dir / "traces" / "scene_000000.jsonl").read_text().splitlines()
    assert len(trace) == 3
    assert list(read_obj(str(run_dir / "obj" / "scene_000000_refined.obj"))) == \
        ["human", "object"]

    assert interface.main(run_args + ["eval"]) == 0
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["n"] == 1
    report = json.loads((run_dir / "report.jsonl").read_text().splitlines()[0])
    assert report["scene"] == "scene_000000"

    gt_file = os.path.join(data_root, "test", "scene_000000.json")
    assert interface.main(run_args + ["export", gt_file, "--which", "gt",
                                      "--out-dir", str(tmp_path / "meshes")]) == 0
    assert os.path.isfile(tmp_path / "meshes" / "scene_000000_gt.obj")


def test_effective_config_is_written(tmp_path, run_args):
    interface.main(run_args + ["--set", "guidance.rho=4", "optimize"] + FAST_REFINE)
    effective = load_run_config(str(tmp_path / "run" / EFFECTIVE_CONFIG), environ={})
    assert effective.guidance.rho == 4.0
    assert effective.cdir.tau == 10
    assert effective.optimize.analytic


def test_sweep_command(tmp_path, run_args):
    code = interface.main(run_args + ["--set", "sweep.max_scenes=1", "--set", "sweep.tau=10",
                                      "--set", "sweep.delta_t=5", "--set", "sweep.n_iters=1",
                                      "--set", "sweep.rho=0 10", "sweep", "--analytic"])
    assert code == 0
    rows = [json.loads(line) for line in
            (tmp_path / "run" / "sweep.jsonl").read_text().splitlines()]
    assert [row["rho"] for row in rows] == [0.0, 10.0]


def test_configuration_error_exit_code(tmp_path, run_args, caplog):
    assert interface.main(run_args + ["--set", "cdir.tau=7", "optimize"] + FAST_REFINE[:2]) == 2
    assert "optimize failed" in caplog.text
    assert not os.path.exists(tmp_path / "run")


def test_missing_weights_exit_code(run_args, caplog):
    assert interface.main(run_args + ["optimize"]) == 2
    assert "weights" in caplog.text


def test_data_error_exit_code(tmp_path, run_args):
    missing = str(tmp_path / "missing.json")
    assert interface.main(run_args + ["export", missing]) == 3


def test_partial_failure_exit_code(run_args, mocker):
    mocker.patch.object(interface.ScoreHoiInterface, "optimize", return_value=1)
    assert interface.main(run_args + ["optimize"]) == PARTIAL_FAILURE_EXIT_CODE


@pytest.mark.slow
def test_train_then_refine_with_the_network(tmp_path, run_args):
    """One short training run, then neural refinement with the written weights"""
    run_dir = tmp_path / "run"
    tiny = ["--set", "train.width=16", "--set", "train.heads=2", "--set", "train.layers=1"]
    assert interface.main(run_args + tiny + ["train", "--epochs", "1", "--batch-size", "2"]) == 0
    assert os.path.isfile(run_dir / interface.WEIGHTS_NAME)
    assert (run_dir / "loss.jsonl").read_text().strip()
    assert interface.main(run_args + ["optimize", "--faster", "--tau", "10",
                                      "--delta-t", "5"]) == 0
    assert os.path.isfile(run_dir / "refined" / "scene_000000.json")
