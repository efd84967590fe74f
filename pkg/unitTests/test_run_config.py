"""
Module to test the run configuration: value conversion, precedence and validation.
"""
import pytest

from hoiModule.utils.errors import ConfigError
from hoiModule.utils.run_config import (DATA_ROOT_ENV, FASTER_N_ITERS, RunConfig,
                                        convert_value, load_run_config, parse_overrides)


@pytest.fixture
def config_file(tmp_path):
    """Configuration file setting a few keys of several sections"""
    path = tmp_path / "run.ini"
    path.write_text("; test run\n"
                    "[run]\nseed = 7\n\n"
                    "[paths]\ndata_root = from_file\n\n"
                    "[guidance]\nrho = 2.5\nmax_grad_norm = none\n\n"
                    "[sweep]\nrho = 0 5 10\n")
    return str(path)


@pytest.mark.parametrize("section, name, raw, expected", [
    ("run", "seed", "12", 12),
    ("guidance", "rho", "1e-1", 0.1),
    ("guidance", "hard_min", "yes", True),
    ("cdir", "update_masks", False, False),
    ("guidance", "max_grad_norm", "none", None),
    ("guidance", "max_grad_norm", "5", 5.0),
    ("sweep", "tau", "10 20", (10, 20)),
    ("sweep", "rho", [1, 2], (1.0, 2.0)),
    ("paths", "run_dir", " runs/a ", "runs/a"),
])
def test_convert_value(section, name, raw, expected):
    assert convert_value(section, name, raw) == expected


@pytest.mark.parametrize("section, name, raw", [
    ("run", "seed", "1.5"),
    ("run", "seed", "seven"),
    ("guidance", "hard_min", "maybe"),
    ("guidance", "rho", True),
])
def test_convert_value_errors(section, name, raw):
    with pytest.raises(ConfigError):
        convert_value(section, name, raw)


def test_defaults_are_valid():
    config = load_run_config(environ={})
    assert config == RunConfig()
    assert config.cdir_config().n_iters == 10


def test_precedence_chain(config_file):
    """file < environment < flags < --set"""
    config = load_run_config(config_file, environ={DATA_ROOT_ENV: "from_env"})
    assert config.run.seed == 7
    assert config.paths.data_root == "from_env"
    assert config.guidance.rho == 2.5
    assert config.sweep.rho == (0.0, 5.0, 10.0)

    config = load_run_config(config_file, flags={"paths.data_root": "from_flag",
                                                 "run.seed": None},
                             overrides=["run.seed=9"], environ={DATA_ROOT_ENV: "from_env"})
    assert config.paths.data_root == "from_flag"
    assert config.run.seed == 9

    config = load_run_config(config_file, flags={"guidance.rho": 4.0},
                             overrides=["guidance.rho=0"], environ={})
    assert config.guidance.rho == 0.0


def test_unknown_keys_and_bad_overrides(config_file, tmp_path):
    with pytest.raises(ConfigError, match="unknown configuration key"):
        load_run_config(overrides=["guidance.gamma=1"], environ={})
    with pytest.raises(ConfigError, match="unknown configuration section"):
        load_run_config(overrides=["solver.rho=1"], environ={})
    with pytest.raises(ConfigError):
        parse_overrides(["guidance.rho"])
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.ini"), environ={})
    bad = tmp_path / "bad.ini"
    bad.write_text("[guidance]\nomega = 1\n")
    with pytest.raises(ConfigError, match="bad.ini"):
        load_run_config(str(bad), environ={})


@pytest.mark.parametrize("override", [
    "cdir.delta_t=3", "cdir.tau=2000", "guidance.rho=-1", "guidance.grad_mode=partial",
    "train.heads=5", "data.kinds=juggle", "optimize.split=holdout", "sweep.on_error=retry",
    "schedule.zeta_end=1.5", "run.log_level=LOUD",
])
def test_validation_names_the_key(override):
    key = override.split("=")[0]
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_run_config(overrides=[override], environ={})


def test_pipeline_objects():
    config = load_run_config(overrides=["optimize.faster=true", "guidance.rho=3",
                                        "data.kinds=carry-box lift-sphere", "data.trans=0"],
                             environ={})
    cfg = config.cdir_config()
    assert cfg.n_iters == FASTER_N_ITERS
    assert cfg.step.rho == cfg.weights.rho == 3.0
    assert [spec.kind for spec in config.scenario_specs()] == ["carry-box", "lift-sphere"]
    assert config.perturbation().trans == 0.0
    assert config.noise_schedule().T == 1000


def test_effective_config_reads_back(tmp_path, config_file):
    """The written effective configuration reproduces the run configuration"""
    config = load_run_config(config_file, overrides=["guidance.max_grad_norm=3.5",
                                                     "paths.weights=w.shoi"], environ={})
    path = str(tmp_path / "out" / "effective_config.ini")
    config.write(path)
    assert load_run_config(path, environ={}) == config
