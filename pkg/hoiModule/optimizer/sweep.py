"""
    Hyper-parameter sweeps over refinement configurations.

    Each entry refines every scene of a set and aggregates the evaluation metrics into one row
    (means and medians of CD_human, CD_object and contact P/R/F, failures, wall-clock time).
    An entry without a configuration evaluates the initial estimates themselves.

    Functions:
    ----------
    * expand_grid: cartesian grid of (N, tau, delta_t, rho) around a base configuration.
    * ablation_entries: full guidance, each loss term removed, no guidance, no refinement.
    * sweep: run the entries, returns the rows.
    * write_rows / read_rows: JSON lines table.
"""
import json
import time
import logging
import itertools
from dataclasses import dataclass, replace

from hoiModule.bodyModel.body_model import mini_body
from hoiModule.bodyModel.registry import TemplateRegistry
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.metrics.evaluation import REPORT_FIELDS, aggregate_reports, evaluate_scene
from hoiModule.optimizer.cdir import CdirConfig, refine_scene
from hoiModule.physics.losses import GuidanceContext
from hoiModule.utils.errors import ConfigError, HoiError

logger = logging.getLogger(__name__)

ERROR_POLICIES = ("skip", "raise")


@dataclass(frozen=True)
class SweepEntry:
    """A named configuration; cfg None stands for the unrefined initial estimate."""
    name    : str
    cfg     : CdirConfig | None


def expand_grid(base: CdirConfig, n_iters=None, tau=None, delta_t=None, rho=None) -> list:
    """
    Entries of the cartesian product of the given value lists (None keeps the base value).

    Raises:
        ConfigError: the grid is empty or a combination is invalid (e.g. delta_t not
            dividing tau).
    """
    axes = {
        "N": list(n_iters) if n_iters is not None else [base.n_iters],
        "tau": list(tau) if tau is not None else [base.step.tau],
        "dt": list(delta_t) if delta_t is not None else [base.step.delta_t],
        "rho": list(rho) if rho is not None else [base.step.rho],
    }
    if any(not values for values in axes.values()):
        raise ConfigError("sweep grid is empty")
    entries = []
    for n, t, dt, r in itertools.product(*axes.values()):
        step = replace(base.step, tau=int(t), delta_t=int(dt), rho=float(r))
        cfg = replace(base, n_iters=int(n), step=step, weights=replace(base.weights, rho=float(r)))
        entries.append(SweepEntry(f"N={n},tau={t},dt={dt},rho={r:g}", cfg))
    return entries


def ablation_entries(base: CdirConfig) -> list:
    """Full guidance, without each loss term, without guidance and without refinement."""
    w = base.weights
    no_guidance = replace(base, step=replace(base.step, rho=0.0), weights=replace(w, rho=0.0))
    return [
        SweepEntry("full", base),
        SweepEntry("no_l_ho", replace(base, weights=replace(w, lambda_ho=0.0))),
        SweepEntry("no_l_of", replace(base, weights=replace(w, lambda_of=0.0))),
        SweepEntry("no_l_pt", replace(base, weights=replace(w, lambda_pt=0.0))),
        SweepEntry("no_mask_update", replace(base, update_masks=False)),
        SweepEntry("no_guidance", no_guidance),
        SweepEntry("initial", None),
    ]


def sweep(entries: list, scenes: list, source, sched: NoiseSchedule | None = None,
          registry: TemplateRegistry | None = None, on_error: str = "skip") -> list:
    """
    Run every entry over every scene.

    Args:
        entries (list): SweepEntry items.
        scenes (list): generated scenes.
        source: denoiser source (analytic or neural) with for_scene(scene, template).
        on_error (str): "skip" logs and counts failed scenes, "raise" propagates.

    Returns:
        list: one row dict per entry.
    """
    if not entries:
        raise ConfigError("sweep grid is empty")
    if not scenes:
        raise ConfigError("sweep needs at least one scene")
    if on_error not in ERROR_POLICIES:
        raise ConfigError(f"on_error must be one of {ERROR_POLICIES}, got '{on_error}'")
    sched = sched or NoiseSchedule()
    registry = registry or TemplateRegistry()
    body = mini_body()

    rows = []
    for entry in entries:
        reports, failed = [], 0
        start = time.perf_counter()
        for scene in scenes:
            template = registry.get(scene.template_id)
            context = GuidanceContext(body, template, scene.gt.layout)
            try:
                if entry.cfg is None:
                    prediction = scene.init
                else:
                    prediction = refine_scene(scene, source, entry.cfg, sched, registry,
                                              body)[0].refined
                reports.append(evaluate_scene(prediction, scene.gt, context))
            except HoiError as err:
                if on_error == "raise":
                    raise
                failed += 1
                logger.warning("Sweep entry %s: scene %s skipped (%s)", entry.name, scene.seed,
                               err)
        elapsed = time.perf_counter() - start
        row = {"name": entry.name}
        row.update(entry.cfg.summary() if entry.cfg is not None else {"n_iters": 0})
        row.update({"n_scenes": len(scenes), "n_failed": failed})
        if reports:
            agg = aggregate_reports(reports)
            for key in REPORT_FIELDS:
                row[f"mean_{key}"] = agg["mean"][key]
                row[f"median_{key}"] = agg["median"][key]
        row["seconds_per_scene"] = elapsed / len(scenes)
        row["scenes_per_second"] = len(scenes) / elapsed if elapsed > 0.0 else None
        logger.info("Sweep row", extra={"record": row})
        rows.append(row)
    return rows


def write_rows(rows: list, file_path: str) -> None:
    with open(file_path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def read_rows(file_path: str) -> list:
    with open(file_path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
