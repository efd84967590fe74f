"""
    Contact-driven iterative refinement.

    For n = 0 .. N - 1:
        1. pose the meshes of x_0^n and predict the contact masks;
        2. invert x_0^n to the latent x_tau with deterministic DDIM;
        3. run the guided DDIM loop back to t = 0 under the masks of step 1, giving x_0^{n+1}.

    Every iteration re-inverts from the current estimate; no latent is reused. With
    update_masks = False the masks of x_0^0 are kept for all iterations.

    Classes:
    --------
    * CdirConfig: N, guided step settings, loss weights, contact threshold, options.
    * SceneContext: body model, object template, layout and conditions of one scene.
    * CdirTrace: one record per estimate x_0^0 .. x_0^N, exportable as JSON lines.

    Functions:
    ----------
    * cdir_run
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from hoiModule.bodyModel.body_model import BodyModel, mini_body
from hoiModule.bodyModel.object_model import ObjectTemplate
from hoiModule.bodyModel.params import ParamLayout, ParamVector, as_array
from hoiModule.bodyModel.registry import TemplateRegistry
from hoiModule.bodyModel.rotation import rot6d_to_matrix_np
from hoiModule.denoiser.analytic import AnalyticGaussianDenoiser
from hoiModule.denoiser.neural import NeuralDenoiser
from hoiModule.diffusion.ddim import GuidedStepConfig, ddim_invert, ddim_sample_loop
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.physics.contact import CONTACT_THRESHOLD, ContactMasks, predict_contact_masks
from hoiModule.physics.losses import (SOFTMIN_TEMPERATURE, GuidanceContext, GuidanceObjective,
                                      GuidanceWeights)
from hoiModule.utils.errors import ConfigError, HoiError, NonFiniteError
from hoiModule.utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

EARLY_STOP_PATIENCE = 2


@dataclass(frozen=True)
class CdirConfig:
    """
    Attributes:
        - n_iters (int): N, refinement iterations (>= 1).
        - step (GuidedStepConfig): tau, delta_t, rho, gradient mode, clip.
        - weights (GuidanceWeights): loss weights; its rho must equal step.rho.
        - contact_threshold (float): mask distance in meters.
        - update_masks (bool): re-estimate the masks at every iteration.
        - early_stop (bool): stop after EARLY_STOP_PATIENCE steps below early_stop_tol.
        - early_stop_tol (float)
        - temperature (float): soft-min temperature of the contact term.
        - hard_min (bool): exact nearest distance in the contact term.
    """
    n_iters             : int = 10
    step                : GuidedStepConfig = field(default_factory=GuidedStepConfig)
    weights             : GuidanceWeights = field(default_factory=GuidanceWeights)
    contact_threshold   : float = CONTACT_THRESHOLD
    update_masks        : bool = True
    early_stop          : bool = False
    early_stop_tol      : float = 1e-5
    temperature         : float = SOFTMIN_TEMPERATURE
    hard_min            : bool = False

    def __post_init__(self) -> None:
        if int(self.n_iters) != self.n_iters or self.n_iters < 1:
            raise ConfigError(f"cdir.n_iters must be an integer >= 1, got {self.n_iters}")
        if self.step.rho != self.weights.rho:
            raise ConfigError(f"guidance scale differs between step ({self.step.rho}) and "
                              f"weights ({self.weights.rho})")
        if not self.contact_threshold >= 0.0:
            raise ConfigError(f"contact_threshold must be >= 0, got {self.contact_threshold}")
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")

    @classmethod
    def build(cls, n_iters: int = 10, tau: int = 50, delta_t: int = 2, rho: float = 10.0,
              lambda_ho: float = 1.0, lambda_of: float = 1.0, lambda_pt: float = 1.0,
              grad_mode: str = "full", max_grad_norm: float | None = None,
              **options) -> "CdirConfig":
        """Flat constructor filling rho in both places."""
        return cls(n_iters=n_iters,
                   step=GuidedStepConfig(tau, delta_t, rho, grad_mode, max_grad_norm),
                   weights=GuidanceWeights(lambda_ho, lambda_of, lambda_pt, rho), **options)

    def summary(self) -> dict:
        return {"n_iters": self.n_iters, "tau": self.step.tau, "delta_t": self.step.delta_t,
                "rho": self.step.rho, "grad_mode": self.step.grad_mode,
                "lambda_ho": self.weights.lambda_ho, "lambda_of": self.weights.lambda_of,
                "lambda_pt": self.weights.lambda_pt, "update_masks": self.update_masks}


class SceneContext:
    """
    Models and conditions shared by every iteration on one scene.

    Attributes:
        - body (BodyModel), template (ObjectTemplate), layout (ParamLayout)
        - conds: denoiser conditions, None for the analytic denoiser.
        - guidance (GuidanceContext)
    """
    def __init__(self, body: BodyModel, template: ObjectTemplate,
                 layout: ParamLayout | None = None, conds=None) -> None:
        self.body       = body
        self.template   = template
        self.layout     = layout or ParamLayout(body.n_joints)
        self.conds      = conds
        self.guidance   = GuidanceContext(body, template, self.layout)


@dataclass
class CdirTrace:
    """
    Records of x_0^0 .. x_0^N.

    Each record holds: iteration, x0 (list), l_ho / l_of / l_pt (unweighted, under the masks
    used by that iteration), loss (weighted), mask sizes, masks (non-zero indices),
    step_norm (|x_0^n - x_0^{n-1}|, 0 for n = 0) and the guided-step diagnostics of the
    sampling loop that produced it.
    """
    records     : list = field(default_factory=list)
    stopped_early : bool = False

    def __len__(self) -> int:
        return len(self.records)

    def estimates(self) -> list:
        return [np.array(r["x0"]) for r in self.records]

    def to_jsonl(self, file_path: str, include_x0: bool = True) -> None:
        with open(file_path, "w", encoding="utf-8") as f:
            for record in self.records:
                line = dict(record)
                if not include_x0:
                    line.pop("x0")
                f.write(json.dumps(line) + "\n")

    @staticmethod
    def from_jsonl(file_path: str) -> "CdirTrace":
        with open(file_path, "r", encoding="utf-8") as f:
            return CdirTrace([json.loads(line) for line in f if line.strip()])


def _check_initial(x: np.ndarray, layout: ParamLayout) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cdir_run: non-finite initial estimate")
    rot6d_to_matrix_np(x[layout.theta].reshape(layout.n_joints, 6))
    rot6d_to_matrix_np(x[layout.rot_o])


def _record(n: int, x: np.ndarray, objective: GuidanceObjective, masks: ContactMasks,
            previous: np.ndarray | None, steps: list) -> dict:
    components = objective.components(x)
    w = objective.weights
    return {
        "iteration": n,
        "x0": x.tolist(),
        **components,
        "loss": w.lambda_ho * components["l_ho"] + w.lambda_of * components["l_of"]
                + w.lambda_pt * components["l_pt"],
        "mask_sizes": masks.sizes(),
        "masks": masks.to_dict(),
        "step_norm": 0.0 if previous is None else float(np.linalg.norm(x - previous)),
        "steps": steps,
    }


def cdir_run(x0_init, scene: SceneContext, denoiser, conds, cfg: CdirConfig,
             sched: NoiseSchedule | None = None) -> tuple:
    """
    Refine an initial estimate.

    Args:
        x0_init: ParamVector or (D,) array.
        scene (SceneContext): models of the scene.
        denoiser: object with eval(x_t, t, conds).
        conds: conditions handed to the denoiser.
        cfg (CdirConfig)
        sched (NoiseSchedule): defaults to the 1000-step linear schedule.

    Returns:
        tuple: (ParamVector x_0^N, CdirTrace)

    Raises:
        HoiError: any inner error, re-raised with its class and an "iteration n:" prefix.
    """
    sched = sched or NoiseSchedule()
    cfg.step.validate_for(sched)
    layout = scene.layout
    x = as_array(x0_init)
    if x.shape != (layout.dim,):
        raise ConfigError(f"initial estimate has shape {x.shape}, expected ({layout.dim},)")
    _check_initial(x, layout)

    trace = CdirTrace()
    masks = None
    previous = None
    steps: list = []
    small_steps = 0
    for n in range(cfg.n_iters + 1):
        try:
            if masks is None or cfg.update_masks:
                v_h, v_o, sdf = scene.guidance.pose_np(x)
                masks = predict_contact_masks(v_h, v_o, sdf, cfg.contact_threshold)
            objective = GuidanceObjective(scene.guidance, masks, cfg.weights, cfg.temperature,
                                          cfg.hard_min)
            record = _record(n, x, objective, masks, previous, steps)
            trace.records.append(record)
            logger.info("cdir iteration", extra={"record": {
                k: record[k] for k in ("iteration", "l_ho", "l_of", "l_pt", "loss",
                                       "mask_sizes", "step_norm")}})
            if n == cfg.n_iters:
                break
            if cfg.early_stop and n > 0:
                small_steps = small_steps + 1 if record["step_norm"] < cfg.early_stop_tol else 0
                if small_steps >= EARLY_STOP_PATIENCE:
                    trace.stopped_early = True
                    logger.info("Early stop after iteration %d", n)
                    break

            x_tau = ddim_invert(x, cfg.step.tau, cfg.step.delta_t, denoiser, conds, sched)
            steps = []
            x_next = ddim_sample_loop(x_tau, cfg.step.tau, cfg.step.delta_t, denoiser, conds,
                                      objective, sched, cfg.step, layout, steps)
        except HoiError as err:
            raise type(err)(f"iteration {n}: {err}") from err
        previous, x = x, x_next
    return ParamVector(x, layout), trace


# ======================================================================================
# Scene-level driver
# ======================================================================================
class AnalyticSource:
    """Gaussian oracle centred on each scene's initial estimate."""
    def __init__(self, prior_std: float, sched: NoiseSchedule) -> None:
        if not prior_std > 0.0:
            raise ConfigError(f"analytic prior std must be > 0, got {prior_std}")
        self.prior_std  = float(prior_std)
        self.sched      = sched

    def for_scene(self, scene, template: ObjectTemplate) -> tuple:
        denoiser = AnalyticGaussianDenoiser(scene.init.values, self.prior_std ** 2, self.sched)
        return denoiser, None


class NeuralSource:
    """Trained denoiser shared by every scene; conditions come from each scene."""
    def __init__(self, weights) -> None:
        self.denoiser = NeuralDenoiser(weights)

    def for_scene(self, scene, template: ObjectTemplate) -> tuple:
        return self.denoiser, self.denoiser.conditions(scene.observation, template.coarse_points)


def refine_scene(scene, source, cfg: CdirConfig, sched: NoiseSchedule,
                 registry: TemplateRegistry | None = None,
                 body: BodyModel | None = None) -> tuple:
    """(scene with its refined estimate, trace) of one generated scene."""
    body = mini_body() if body is None else body
    template = (registry or TemplateRegistry()).get(scene.template_id)
    denoiser, conds = source.for_scene(scene, template)
    context = SceneContext(body, template, scene.gt.layout, conds)
    refined, trace = cdir_run(scene.init, context, denoiser, conds, cfg, sched)
    return scene.with_refined(refined), trace


def refine_scenes(scenes: list, source, cfg: CdirConfig, sched: NoiseSchedule,
                  registry: TemplateRegistry | None = None, jobs: int = 1) -> list:
    """
    Refine scenes, in parallel threads when jobs > 1.

    Returns:
        list: per scene, (scene, trace) or the HoiError it raised, in input order.
    """
    registry = registry or TemplateRegistry()

    def work(scene):
        try:
            return refine_scene(scene, source, cfg, sched, registry)
        except HoiError as err:
            logger.error("Scene %s failed: %s", scene.seed, err)
            return err

    if jobs <= 1:
        return [work(scene) for scene in tqdm(scenes, desc="optimize",
                                              disable=progress_disabled())]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(tqdm(pool.map(work, scenes), total=len(scenes), desc="optimize",
                         disable=progress_disabled()))
