"""
    This module provides the interface for the user to interact with the refinement pipeline.

    The main class is ScoreHoiInterface. It is initialized with a resolved RunConfig and
    exposes one method per command: dataset generation, denoiser training, scene
    optimization, evaluation, hyper-parameter sweeps and mesh export. main() is the
    command-line entry point:

        python interface.py [--config run.ini] [--set section.key=value ...] <command> ...

    Every command writes <run_dir>/effective_config.ini, which can be given back with
    --config to repeat the run. Exit codes: 0 success, 2 configuration error, 3 data error,
    4 numerical abort, 5 some scenes of a batch failed, 1 any other pipeline error.
"""
import os
import sys
import json
import logging
import argparse

from hoiModule.binFiles.read_weights import load_weights, save_weights
from hoiModule.bodyModel.body_model import mini_body
from hoiModule.bodyModel.registry import TemplateRegistry
from hoiModule.denoiser.neural import DenoiserConfig, default_obs_dim
from hoiModule.denoiser.training import Trainer, held_out_mse
from hoiModule.metrics.evaluation import aggregate_reports, evaluate_scene
from hoiModule.optimizer.cdir import AnalyticSource, NeuralSource, refine_scenes
from hoiModule.optimizer.sweep import ablation_entries, expand_grid, sweep, write_rows
from hoiModule.physics.losses import GuidanceContext
from hoiModule.sceneGen.dataset import make_dataset, training_set
from hoiModule.sceneGen.obj_io import export_obj
from hoiModule.sceneGen.scene_io import list_scene_files, read_scene, write_scene
from hoiModule.utils.errors import (PARTIAL_FAILURE_EXIT_CODE, ConfigError, DataError,
                                    HoiError)
from hoiModule.utils.logging_setup import setup_logging
from hoiModule.utils.run_config import EFFECTIVE_CONFIG, RunConfig, load_run_config

# Set up logging
logger = logging.getLogger(__name__)

WEIGHTS_NAME    = "denoiser.shoi"
EXPORT_CHOICES  = ("refined", "init", "gt")


# ========================== Interface to the user ==========================
class ScoreHoiInterface:
    """
    Class used to run the pipeline commands under one configuration.

    Attributes:
    -----------
        - config: RunConfig
            The validated run configuration.
        - registry: TemplateRegistry
            Object templates (paths.templates, then the built-in ones).
        - run_dir: str
            Directory receiving every output of the run.

    Methods:
    --------
        - gen_data: generate the train / val / test splits.
        - train: train the neural denoiser on the train split.
        - optimize: refine scenes, write refined scenes, traces and OBJ files.
        - evaluate: per-scene report and summary of refined scenes.
        - sweep: table of aggregate metrics over a grid of refinement settings.
        - export: posed human / object OBJ files of scene files.
        - _scenes: (private), scene files of a split or of explicit paths.
        - _source: (private), analytic or neural denoiser source.
    """
    def __init__(self, config: RunConfig) -> None:
        self.config     = config.validate()
        self.registry   = TemplateRegistry(config.paths.templates or None)
        self.run_dir    = config.paths.run_dir
        os.makedirs(self.run_dir, exist_ok=True)
        config.write(os.path.join(self.run_dir, EFFECTIVE_CONFIG))

    # # ========== Public methods:
    def gen_data(self) -> dict:
        """Write the dataset under paths.data_root; returns the manifest."""
        d = self.config.data
        return make_dataset(self.config.paths.data_root, self.config.scenario_specs(),
                            (d.n_train, d.n_val, d.n_test), self.config.run.seed,
                            self.config.perturbation(), d.obs_noise, self.registry)

    def train(self) -> str:
        """
        Train on the train split and write the weights file.

        Returns:
        --------
            str: path of the weights file (paths.weights, or <run_dir>/denoiser.shoi).
        """
        t = self.config.train
        scenes = [scene for _, scene in self._scenes("train", t.max_scenes)]
        data = training_set(scenes, self.registry)
        n_joints = scenes[0].gt.layout.n_joints
        arch = DenoiserConfig(n_joints=n_joints, width=t.width, heads=t.heads, layers=t.layers,
                              obs_dim=default_obs_dim(n_joints), use_obs=t.use_obs,
                              use_geo=t.use_geo)
        trainer = Trainer(arch, self.config.noise_schedule(), t.epochs, t.batch_size, t.lr,
                          self.config.run.seed, os.path.join(self.run_dir, "checkpoints"),
                          t.checkpoint_every)
        weights = trainer.fit(data, resume=t.resume)
        with open(os.path.join(self.run_dir, "loss.jsonl"), "w", encoding="utf-8") as f:
            for step, loss in enumerate(trainer.history):
                f.write(json.dumps({"step": step, "loss": loss}) + "\n")

        val_dir = os.path.join(self.config.paths.data_root, "val")
        if os.path.isdir(val_dir):
            val = training_set([scene for _, scene in self._scenes("val")], self.registry)
            mse = held_out_mse(weights, val, self.config.noise_schedule(), self.config.run.seed)
            logger.info("Held-out noise MSE", extra={"record": {"val_mse": mse}})

        path = self.config.paths.weights or os.path.join(self.run_dir, WEIGHTS_NAME)
        save_weights(weights, path)
        logger.info("Saved weights to %s", path)
        return path

    def optimize(self, scene_files: list | None = None) -> int:
        """
        Refine scenes and write <run_dir>/refined, traces and, on request, obj.

        Returns:
        --------
            int: number of scenes that failed.
        """
        o = self.config.optimize
        named = self._scenes(o.split, o.max_scenes, scene_files)
        cfg = self.config.cdir_config()
        logger.info("Optimizing %d scene(s)", len(named), extra={"record": cfg.summary()})
        results = refine_scenes([scene for _, scene in named], self._source(), cfg,
                                self.config.noise_schedule(), self.registry, o.jobs)
        failed = 0
        for (name, _), result in zip(named, results):
            if isinstance(result, HoiError):
                failed += 1
                continue
            refined, trace = result
            write_scene(refined, os.path.join(self.run_dir, "refined", f"{name}.json"))
            if o.write_traces:
                os.makedirs(os.path.join(self.run_dir, "traces"), exist_ok=True)
                trace.to_jsonl(os.path.join(self.run_dir, "traces", f"{name}.jsonl"))
            if o.export_obj:
                self._export_one(refined, "refined", os.path.join(self.run_dir, "obj", name))
        if failed:
            logger.error("%d of %d scene(s) failed", failed, len(named))
        return failed

    def evaluate(self, pred_dir: str | None = None, gt_dir: str | None = None) -> dict:
        """
        Compare the refined estimates of pred_dir with the ground truth of gt_dir.

        Scenes are matched by file name. Writes <run_dir>/report.jsonl and summary.json.
        """
        pred_dir = pred_dir or self.config.eval.pred_dir or os.path.join(self.run_dir,
                                                                         "refined")
        gt_dir = gt_dir or self.config.eval.gt_dir or os.path.join(self.config.paths.data_root,
                                                                   self.config.optimize.split)
        body = mini_body()
        lines, reports = [], []
        for path in list_scene_files(pred_dir):
            name = os.path.basename(path)
            gt_path = os.path.join(gt_dir, name)
            if not os.path.isfile(gt_path):
                raise DataError(f"no ground truth {gt_path} for {path}")
            pred, gt = read_scene(path), read_scene(gt_path)
            context = GuidanceContext(body, self.registry.get(gt.template_id), gt.gt.layout)
            report = evaluate_scene(pred.prediction(), gt.gt, context,
                                    self.config.eval.contact_threshold,
                                    self.config.eval.with_scale)
            reports.append(report)
            lines.append({"scene": os.path.splitext(name)[0], **report.to_dict()})
        summary = aggregate_reports(reports)
        with open(os.path.join(self.run_dir, "report.jsonl"), "w", encoding="utf-8") as f:
            for line in lines:
                f.write(json.dumps(line) + "\n")
        with open(os.path.join(self.run_dir, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=1, sort_keys=True)
        logger.info("Evaluation summary", extra={"record": summary})
        return summary

    def sweep(self) -> list:
        """Rows of the grid (and ablation entries when sweep.ablation), also in sweep.jsonl."""
        s = self.config.sweep
        base = self.config.cdir_config()
        entries = expand_grid(base, s.n_iters, s.tau, s.delta_t, s.rho)
        if s.ablation:
            entries += ablation_entries(base)
        scenes = [scene for _, scene in self._scenes(s.split, s.max_scenes)]
        rows = sweep(entries, scenes, self._source(), self.config.noise_schedule(),
                     self.registry, s.on_error)
        write_rows(rows, os.path.join(self.run_dir, "sweep.jsonl"))
        return rows

    def export(self, scene_files: list, which: str = "refined",
               out_dir: str | None = None) -> list:
        """One OBJ file per scene with groups "human" and "object"; returns the paths."""
        if which not in EXPORT_CHOICES:
            raise ConfigError(f"export expects one of {EXPORT_CHOICES}, got '{which}'")
        out_dir = out_dir or os.path.join(self.run_dir, "obj")
        paths = []
        for name, scene in self._scenes(None, 0, scene_files):
            paths.append(self._export_one(scene, which, os.path.join(out_dir, name)))
        return paths

    # # ========== Private methods:
    def _scenes(self, split: str | None, max_scenes: int = 0,
                scene_files: list | None = None) -> list:
        """[(name, Scene)] from explicit files or from a split of the data root."""
        if scene_files:
            paths = list(scene_files)
        else:
            paths = list_scene_files(os.path.join(self.config.paths.data_root, split))
        if max_scenes:
            paths = paths[:max_scenes]
        if not paths:
            raise DataError(f"no scene files to process (split {split})")
        return [(os.path.splitext(os.path.basename(p))[0], read_scene(p)) for p in paths]

    def _source(self):
        o = self.config.optimize
        if o.analytic:
            return AnalyticSource(o.analytic_prior_std, self.config.noise_schedule())
        path = self.config.paths.weights or os.path.join(self.run_dir, WEIGHTS_NAME)
        if not os.path.isfile(path):
            raise ConfigError(f"denoiser weights {path} not found; train first or use "
                              "--analytic")
        return NeuralSource(load_weights(path))

    def _export_one(self, scene, which: str, stem: str) -> str:
        values = scene.prediction() if which == "refined" else getattr(scene, which)
        body = mini_body()
        template = self.registry.get(scene.template_id)
        v_h, v_o, _ = GuidanceContext(body, template, scene.gt.layout).pose_np(values)
        directory = os.path.dirname(stem)
        if directory:
            os.makedirs(directory, exist_ok=True)
        path = f"{stem}_{which}.obj"
        export_obj([("human", v_h, body.faces), ("object", v_o, template.faces)], path)
        return path


# ========================== Command line ==========================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interface.py",
                                     description="Score-guided human-object refinement")
    parser.add_argument("--config", help="run configuration (ini)")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, help="run.seed")
    parser.add_argument("--log-level", help="run.log_level")
    parser.add_argument("--log-file", help="also write the log records to this file")
    parser.add_argument("--data-root", help="paths.data_root")
    parser.add_argument("--run-dir", help="paths.run_dir")
    parser.add_argument("--weights", help="paths.weights")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate train / val / test scenes")
    gen.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    train = sub.add_parser("train", help="train the neural denoiser")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)

    opt = sub.add_parser("optimize", help="refine scenes")
    opt.add_argument("scenes", nargs="*", help="scene files (default: the optimize.split)")
    opt.add_argument("--analytic", action="store_true", default=None,
                     help="Gaussian oracle centred on each initial estimate, no weights")
    opt.add_argument("--faster", action="store_true", default=None, help="N = 2")
    opt.add_argument("--jobs", type=int)
    opt.add_argument("--rho", type=float)
    opt.add_argument("--n-iters", type=int)
    opt.add_argument("--tau", type=int)
    opt.add_argument("--delta-t", type=int)
    opt.add_argument("--export-obj", action="store_true", default=None)

    ev = sub.add_parser("eval", help="evaluate refined scenes")
    ev.add_argument("--pred-dir")
    ev.add_argument("--gt-dir")

    sw = sub.add_parser("sweep", help="hyper-parameter sweep")
    sw.add_argument("--analytic", action="store_true", default=None)
    sw.add_argument("--ablation", action="store_true", default=None)

    exp = sub.add_parser("export", help="write posed OBJ files of scene files")
    exp.add_argument("scenes", nargs="+")
    exp.add_argument("--which", choices=EXPORT_CHOICES, default="refined")
    exp.add_argument("--out-dir")
    return parser


def _flags(args: argparse.Namespace) -> dict:
    """Dedicated flags as {"section.key": value}; unset flags are None."""
    get = vars(args).get
    counts = get("counts") or (None, None, None)
    return {
        "run.seed": args.seed, "run.log_level": args.log_level,
        "paths.data_root": args.data_root, "paths.run_dir": args.run_dir,
        "paths.weights": args.weights,
        "data.n_train": counts[0], "data.n_val": counts[1], "data.n_test": counts[2],
        "train.epochs": get("epochs"), "train.batch_size": get("batch_size"),
        "train.lr": get("lr"),
        "optimize.analytic": get("analytic"), "optimize.faster": get("faster"),
        "optimize.jobs": get("jobs"), "optimize.export_obj": get("export_obj"),
        "guidance.rho": get("rho"), "cdir.n_iters": get("n_iters"), "cdir.tau": get("tau"),
        "cdir.delta_t": get("delta_t"),
        "eval.pred_dir": get("pred_dir"), "eval.gt_dir": get("gt_dir"),
        "sweep.ablation": get("ablation"),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, _flags(args), args.set)
        setup_logging(config.run.log_level, args.log_file, config.run.structured_logs)
        interface = ScoreHoiInterface(config)
        if args.command == "gen-data":
            interface.gen_data()
        elif args.command == "train":
            interface.train()
        elif args.command == "optimize":
            if interface.optimize(args.scenes):
                return PARTIAL_FAILURE_EXIT_CODE
        elif args.command == "eval":
            interface.evaluate()
        elif args.command == "sweep":
            interface.sweep()
        elif args.command == "export":
            interface.export(args.scenes, args.which, args.out_dir)
    except HoiError as err:
        logger.error("%s failed: %s", args.command, err)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
