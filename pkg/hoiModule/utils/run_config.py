"""
    Run configuration of the command-line interface.

    One ini file (see iniFiles/read_ini.py) with one section per dataclass below. Values are
    resolved in this order, later sources winning:

        dataclass defaults < config file < HOI_DATA_ROOT < command-line flags < --set overrides

    The type of each key is the type of its default value; tuple keys are space-separated
    lists and "none" stands for an unset optional number.

    Classes:
    --------
    * RunSection, PathsConfig, ScheduleConfig, GuidanceConfig, CdirSection, TrainConfig,
      DataConfig, OptimizeConfig, SweepConfig, EvalConfig: the sections.
    * RunConfig: all sections, validation, conversion to the pipeline objects.

    Functions:
    ----------
    * load_run_config: apply the precedence chain and validate.
"""
import os
import logging
from dataclasses import dataclass, field, fields, replace

from hoiModule.diffusion.ddim import GRAD_MODES, GuidedStepConfig
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.iniFiles.read_ini import KeyValueReader, write_ini
from hoiModule.optimizer.cdir import CdirConfig
from hoiModule.physics.losses import GuidanceWeights
from hoiModule.sceneGen.scenes import SCENARIO_KINDS, PerturbationModel, scenario
from hoiModule.utils.errors import ConfigError

logger = logging.getLogger(__name__)

DATA_ROOT_ENV       = "HOI_DATA_ROOT"
EFFECTIVE_CONFIG    = "effective_config.ini"
FASTER_N_ITERS      = 2
LOG_LEVELS          = ("DEBUG", "INFO", "WARNING", "ERROR")
SPLIT_NAMES         = ("train", "val", "test")


@dataclass(frozen=True)
class RunSection:
    seed            : int = 0
    log_level       : str = "INFO"
    structured_logs : bool = True


@dataclass(frozen=True)
class PathsConfig:
    """Empty strings mean "not set"; the data root may come from HOI_DATA_ROOT."""
    data_root       : str = "data"
    run_dir         : str = "runs/latest"
    weights         : str = ""
    templates       : str = ""


@dataclass(frozen=True)
class ScheduleConfig:
    T               : int = 1000
    zeta_start      : float = 1e-4
    zeta_end        : float = 2e-2


@dataclass(frozen=True)
class GuidanceConfig:
    rho                 : float = 10.0
    lambda_ho           : float = 1.0
    lambda_of           : float = 1.0
    lambda_pt           : float = 1.0
    contact_threshold   : float = 0.05
    temperature         : float = 0.01
    hard_min            : bool = False
    grad_mode           : str = "full"
    max_grad_norm       : float | None = None


@dataclass(frozen=True)
class CdirSection:
    n_iters         : int = 10
    tau             : int = 50
    delta_t         : int = 2
    update_masks    : bool = True
    early_stop      : bool = False
    early_stop_tol  : float = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    epochs              : int = 30
    batch_size          : int = 256
    lr                  : float = 1e-4
    checkpoint_every    : int = 100
    width               : int = 64
    heads               : int = 4
    layers              : int = 3
    use_obs             : bool = True
    use_geo             : bool = True
    resume              : bool = True
    max_scenes          : int = 0


@dataclass(frozen=True)
class DataConfig:
    """Dataset generation; kinds is "all" or a space-separated list of scenario kinds."""
    n_train         : int = 1000
    n_val           : int = 100
    n_test          : int = 100
    kinds           : str = "all"
    obs_noise       : float = 0.03
    sigma_theta     : float = 0.15
    rot_deg         : float = 10.0
    trans           : float = 0.10
    sigma_beta      : float = 0.1


@dataclass(frozen=True)
class OptimizeConfig:
    split               : str = "test"
    analytic            : bool = False
    analytic_prior_std  : float = 0.1
    faster              : bool = False
    jobs                : int = 1
    max_scenes          : int = 0
    export_obj          : bool = False
    write_traces        : bool = True


@dataclass(frozen=True)
class SweepConfig:
    n_iters         : tuple = (10,)
    tau             : tuple = (50,)
    delta_t         : tuple = (2,)
    rho             : tuple = (10.0,)
    ablation        : bool = False
    on_error        : str = "skip"
    split           : str = "test"
    max_scenes      : int = 20


@dataclass(frozen=True)
class EvalConfig:
    pred_dir            : str = ""
    gt_dir              : str = ""
    contact_threshold   : float = 0.05
    with_scale          : bool = True


SECTIONS = {
    "run": RunSection, "paths": PathsConfig, "schedule": ScheduleConfig,
    "guidance": GuidanceConfig, "cdir": CdirSection, "train": TrainConfig,
    "data": DataConfig, "optimize": OptimizeConfig, "sweep": SweepConfig, "eval": EvalConfig,
}
# Optional numbers; their default is None so the type cannot be read from it
_OPTIONAL_FLOATS = {("guidance", "max_grad_norm")}


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got '{text}'")


def _parse_number(text: str, kind, key: str):
    try:
        value = float(text)
    except ValueError as err:
        raise ConfigError(f"{key}: expected a number, got '{text}'") from err
    if kind is int:
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got '{text}'")
        return int(value)
    return value


def convert_value(section: str, name: str, raw):
    """Convert a raw value (string from a file or --set, or a typed flag) to the key's type."""
    key = f"{section}.{name}"
    default = getattr(SECTIONS[section](), name)
    if (section, name) in _OPTIONAL_FLOATS:
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("none", "")):
            return None
        return _parse_number(str(raw), float, key)
    if isinstance(default, bool):
        return raw if isinstance(raw, bool) else _parse_bool(str(raw), key)
    if isinstance(default, (int, float)):
        if isinstance(raw, bool):
            raise ConfigError(f"{key}: expected a number, got {raw}")
        return _parse_number(str(raw), type(default), key)
    if isinstance(default, tuple):
        items = raw.split() if isinstance(raw, str) else list(raw)
        kind = type(default[0]) if default else float
        return tuple(_parse_number(str(item), kind, key) for item in items)
    return str(raw).strip()


def _split_key(key: str) -> tuple:
    section, _, name = key.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown configuration section '{section}' in '{key}'")
    if name not in {f.name for f in fields(SECTIONS[section])}:
        raise ConfigError(f"unknown configuration key '{key}'")
    return section, name


# =============================================================================
@dataclass(frozen=True)
class RunConfig:
    """
    Every section of a run.

    Methods:
        - from_sections / to_sections: {section: {key: value}} conversion.
        - with_values: copy with dotted-key values applied.
        - validate: raise ConfigError naming the first invalid key.
        - write: effective configuration file.
        - schedule, cdir_config, perturbation, scenario_specs: pipeline objects.
    """
    run         : RunSection = field(default_factory=RunSection)
    paths       : PathsConfig = field(default_factory=PathsConfig)
    schedule    : ScheduleConfig = field(default_factory=ScheduleConfig)
    guidance    : GuidanceConfig = field(default_factory=GuidanceConfig)
    cdir        : CdirSection = field(default_factory=CdirSection)
    train       : TrainConfig = field(default_factory=TrainConfig)
    data        : DataConfig = field(default_factory=DataConfig)
    optimize    : OptimizeConfig = field(default_factory=OptimizeConfig)
    sweep       : SweepConfig = field(default_factory=SweepConfig)
    eval        : EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_sections(cls, sections: dict, source: str = "<config>") -> "RunConfig":
        values = {}
        for section, entries in sections.items():
            for name, raw in entries.items():
                try:
                    values[".".join(_split_key(f"{section}.{name}"))] = raw
                except ConfigError as err:
                    raise ConfigError(f"{source}: {err}") from err
        return cls().with_values(values)

    def to_sections(self) -> dict:
        return {name: {f.name: getattr(getattr(self, name), f.name)
                       for f in fields(SECTIONS[name])} for name in SECTIONS}

    def with_values(self, values: dict) -> "RunConfig":
        """Copy with {"section.key": raw or typed value} applied; None values are ignored."""
        updates: dict = {}
        for key, raw in values.items():
            section, name = _split_key(key)
            if raw is None:
                continue
            updates.setdefault(section, {})[name] = convert_value(section, name, raw)
        return replace(self, **{section: replace(getattr(self, section), **changes)
                                for section, changes in updates.items()})

    def validate(self) -> "RunConfig":
        checks = [
            ("run.log_level", self.run.log_level.upper() in LOG_LEVELS),
            ("schedule.T", self.schedule.T >= 1),
            ("schedule.zeta_start", 0.0 < self.schedule.zeta_start <= self.schedule.zeta_end),
            ("schedule.zeta_end", self.schedule.zeta_end < 1.0),
            ("guidance.rho", self.guidance.rho >= 0.0),
            ("guidance.lambda_ho", self.guidance.lambda_ho >= 0.0),
            ("guidance.lambda_of", self.guidance.lambda_of >= 0.0),
            ("guidance.lambda_pt", self.guidance.lambda_pt >= 0.0),
            ("guidance.contact_threshold", self.guidance.contact_threshold >= 0.0),
            ("guidance.temperature", self.guidance.temperature > 0.0),
            ("guidance.grad_mode", self.guidance.grad_mode in GRAD_MODES),
            ("guidance.max_grad_norm", self.guidance.max_grad_norm is None
                                       or self.guidance.max_grad_norm > 0.0),
            ("cdir.n_iters", self.cdir.n_iters >= 1),
            ("cdir.tau", 1 <= self.cdir.tau <= self.schedule.T),
            ("cdir.delta_t", self.cdir.delta_t >= 1 and self.cdir.tau % self.cdir.delta_t == 0),
            ("cdir.early_stop_tol", self.cdir.early_stop_tol >= 0.0),
            ("train.epochs", self.train.epochs >= 1),
            ("train.batch_size", self.train.batch_size >= 1),
            ("train.lr", self.train.lr > 0.0),
            ("train.checkpoint_every", self.train.checkpoint_every >= 1),
            ("train.heads", self.train.heads >= 1 and self.train.width % self.train.heads == 0),
            ("train.layers", self.train.layers >= 1),
            ("train.max_scenes", self.train.max_scenes >= 0),
            ("data.n_train", 1 <= self.data.n_train < 3_000_000),
            ("data.n_val", 1 <= self.data.n_val < 3_000_000),
            ("data.n_test", 1 <= self.data.n_test < 3_000_000),
            ("data.kinds", self.data.kinds == "all"
                           or all(k in SCENARIO_KINDS for k in self.data.kinds.split())),
            ("data.obs_noise", self.data.obs_noise >= 0.0),
            ("data.sigma_theta", self.data.sigma_theta >= 0.0),
            ("data.rot_deg", self.data.rot_deg >= 0.0),
            ("data.trans", self.data.trans >= 0.0),
            ("data.sigma_beta", self.data.sigma_beta >= 0.0),
            ("optimize.split", self.optimize.split in SPLIT_NAMES),
            ("optimize.analytic_prior_std", self.optimize.analytic_prior_std > 0.0),
            ("optimize.jobs", self.optimize.jobs >= 1),
            ("optimize.max_scenes", self.optimize.max_scenes >= 0),
            ("sweep.n_iters", len(self.sweep.n_iters) > 0),
            ("sweep.tau", len(self.sweep.tau) > 0),
            ("sweep.delta_t", len(self.sweep.delta_t) > 0),
            ("sweep.rho", len(self.sweep.rho) > 0),
            ("sweep.on_error", self.sweep.on_error in ("skip", "raise")),
            ("sweep.split", self.sweep.split in SPLIT_NAMES),
            ("sweep.max_scenes", self.sweep.max_scenes >= 0),
            ("eval.contact_threshold", self.eval.contact_threshold >= 0.0),
        ]
        for key, ok in checks:
            if not ok:
                section, name = key.split(".")
                raise ConfigError(f"invalid value for {key}: "
                                  f"{getattr(getattr(self, section), name)!r}")
        return self

    def write(self, file_path: str) -> None:
        directory = os.path.dirname(file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        write_ini(file_path, self.to_sections(), comment="effective run configuration")

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.schedule.T, self.schedule.zeta_start, self.schedule.zeta_end)

    def cdir_config(self) -> CdirConfig:
        g, c = self.guidance, self.cdir
        n_iters = FASTER_N_ITERS if self.optimize.faster else c.n_iters
        return CdirConfig(
            n_iters=n_iters,
            step=GuidedStepConfig(c.tau, c.delta_t, g.rho, g.grad_mode, g.max_grad_norm),
            weights=GuidanceWeights(g.lambda_ho, g.lambda_of, g.lambda_pt, g.rho),
            contact_threshold=g.contact_threshold, update_masks=c.update_masks,
            early_stop=c.early_stop, early_stop_tol=c.early_stop_tol,
            temperature=g.temperature, hard_min=g.hard_min)

    def perturbation(self) -> PerturbationModel:
        d = self.data
        return PerturbationModel(d.sigma_theta, d.rot_deg, d.trans, d.sigma_beta)

    def scenario_specs(self) -> tuple:
        if self.data.kinds == "all":
            return tuple(scenario(kind) for kind in SCENARIO_KINDS)
        return tuple(scenario(kind) for kind in self.data.kinds.split())


def parse_overrides(overrides) -> dict:
    """["section.key=value", ...] -> {"section.key": "value"}."""
    values = {}
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        values[key.strip()] = value.strip()
    return values


def load_run_config(config_file: str | None = None, flags: dict | None = None,
                    overrides=None, environ=None) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        config_file (str): optional ini file.
        flags (dict): {"section.key": value} from dedicated command-line flags (None = unset).
        overrides (list): "section.key=value" strings from --set.
        environ (dict): environment, os.environ by default.

    Raises:
        ConfigError: unreadable file, unknown key, bad value or failed validation.
    """
    environ = os.environ if environ is None else environ
    config = RunConfig()
    if config_file is not None:
        if not os.path.isfile(config_file):
            raise ConfigError(f"configuration file {config_file} not found")
        config = RunConfig.from_sections(KeyValueReader(config_file).sections, config_file)
        logger.info("Loaded configuration %s", config_file)
    if environ.get(DATA_ROOT_ENV):
        config = config.with_values({"paths.data_root": environ[DATA_ROOT_ENV]})
    config = config.with_values(flags or {})
    config = config.with_values(parse_overrides(overrides))
    return config.validate()
