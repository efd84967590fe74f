"""
    Noise-prediction training of the neural denoiser.

    Objective, for x0 from the data, t ~ U{1..T} and eps ~ N(0, I) per element:

        L = mean || eps - eps_theta(sqrt(a_t) x0 + sqrt(1 - a_t) eps, t, c_I, c_G) ||^2

    optimised with Adam. Every random draw of step s comes from default_rng([seed, s]), so a
    run resumed from a checkpoint reproduces the losses of an uninterrupted one.

    Classes:
    --------
    * TrainingSet: stacked (x0, observation, coarse points) arrays.
    * AdamState: first/second moments and step counter.
    * Trainer: epochs over a training set with checkpoints and resume.

    Functions:
    ----------
    * adam_update, train_step, held_out_mse, save_checkpoint, load_checkpoint
"""
import os
import logging
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from hoiModule.autodiff.tensor import Tape
from hoiModule.autodiff import tensor as tn
from hoiModule.binFiles.read_weights import ReadWeights, write_tensor_file
from hoiModule.denoiser.neural import (DenoiserConfig, DenoiserWeights, NeuralDenoiser,
                                       denoiser_forward, init_weights)
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.utils.errors import ConfigError, DataError, NonFiniteError, WeightsFormatError
from hoiModule.utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "last_good.ckpt"


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """
    Attributes:
        - x0 (np.ndarray): (M, D) clean parameter vectors (normalised beta).
        - obs (np.ndarray): (M, obs_dim) observation vectors.
        - points (np.ndarray): (M, P, 3) coarse object points.
    """
    x0      : np.ndarray
    obs     : np.ndarray
    points  : np.ndarray

    def __post_init__(self) -> None:
        n = len(self.x0)
        if n == 0:
            raise DataError("training set is empty")
        if len(self.obs) != n or len(self.points) != n:
            raise DataError(f"training set arrays disagree in length: {n}, {len(self.obs)}, "
                            f"{len(self.points)}")

    def __len__(self) -> int:
        return len(self.x0)

    def batch(self, indices) -> "TrainingSet":
        return TrainingSet(self.x0[indices], self.obs[indices], self.points[indices])


@dataclass
class AdamState:
    step    : int = 0
    m       : dict = field(default_factory=dict)
    v       : dict = field(default_factory=dict)


def adam_update(tensors: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> tuple:
    """One bias-corrected Adam step; returns (new tensors, new state), inputs untouched."""
    step = state.step + 1
    new_tensors, new_m, new_v = {}, {}, {}
    for name, value in tensors.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_tensors[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_tensors, AdamState(step, new_m, new_v)


def noise_batch(batch_size: int, dim: int, sched: NoiseSchedule, rng) -> tuple:
    """(t, eps) draws of one step."""
    t = rng.integers(1, sched.T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size, dim))
    return t, eps


def _loss(params: dict, config: DenoiserConfig, batch: TrainingSet, t, eps,
          sched: NoiseSchedule):
    a = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(a) * batch.x0 + np.sqrt(1.0 - a) * eps
    pred = denoiser_forward(params, config, x_t, t, batch.obs if config.use_obs else None,
                            batch.points if config.use_geo else None)
    diff = pred - eps
    return tn.mean(diff * diff)


def train_step(weights: DenoiserWeights, batch: TrainingSet, sched: NoiseSchedule,
               state: AdamState, lr: float, rng=None, t=None, eps=None) -> tuple:
    """
    One Adam step on a batch.

    Args:
        rng: generator for the (t, eps) draw, unless both are given explicitly.

    Returns:
        tuple: (weights', state', loss)

    Raises:
        NonFiniteError: non-finite loss or gradient; the message carries batch diagnostics.
    """
    config = weights.config
    if t is None or eps is None:
        if rng is None:
            raise ConfigError("train_step needs a generator or explicit (t, eps)")
        t, eps = noise_batch(len(batch), config.layout.dim, sched, rng)
    diagnostics = (f"batch of {len(batch)}, t in [{int(np.min(t))}, {int(np.max(t))}], "
                   f"|x0|max={np.max(np.abs(batch.x0)):.3g}")
    try:
        with Tape() as tape:
            params = {name: tape.watch(value) for name, value in weights.tensors.items()}
            loss = _loss(params, config, batch, t, eps, sched)
        grads_by_id = tape.backward(loss)
    except NonFiniteError as err:
        raise NonFiniteError(f"training step {state.step + 1}: {err} ({diagnostics})") from err
    value = loss.item()
    grads = {name: grads_by_id[p.id].data for name, p in params.items()}
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteError(f"training step {state.step + 1}: non-finite loss {value} "
                             f"({diagnostics})")
    tensors, state = adam_update(weights.tensors, grads, state, lr)
    return weights.with_tensors(tensors), state, value


def held_out_mse(weights: DenoiserWeights, data: TrainingSet, sched: NoiseSchedule,
                 seed: int = 0, batch_size: int = 256) -> float:
    """Noise-prediction MSE on one fixed (t, eps) draw per element."""
    rng = np.random.default_rng(seed)
    t, eps = noise_batch(len(data), weights.config.layout.dim, sched, rng)
    a = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(a) * data.x0 + np.sqrt(1.0 - a) * eps
    denoiser = NeuralDenoiser(weights)
    total = 0.0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        pred = denoiser.eval_batch(x_t[sl], t[sl], data.obs[sl], data.points[sl])
        total += float(np.sum((pred - eps[sl]) ** 2))
    return total / eps.size


# ======================================================================================
# Checkpoints
# ======================================================================================
def save_checkpoint(file_path: str, weights: DenoiserWeights, state: AdamState,
                    extra: dict | None = None) -> None:
    tensors = dict(weights.tensors)
    for name in weights.tensors:
        if name in state.m:
            tensors[f"adam.m/{name}"] = state.m[name]
            tensors[f"adam.v/{name}"] = state.v[name]
    header = {"config": weights.config.to_dict(), "kind": "checkpoint", "step": state.step}
    header.update(extra or {})
    write_tensor_file(file_path, header, tensors, weights.config.arch_hash())


def load_checkpoint(file_path: str) -> tuple:
    """(weights, AdamState, header) of a checkpoint file."""
    reader = ReadWeights(file_path).read()
    if reader.header.get("kind") != "checkpoint":
        raise WeightsFormatError(f"{file_path} is not a training checkpoint")
    weights = reader.weights()
    m = {name[len("adam.m/"):]: v for name, v in reader.tensors.items()
         if name.startswith("adam.m/")}
    v = {name[len("adam.v/"):]: v for name, v in reader.tensors.items()
         if name.startswith("adam.v/")}
    return weights, AdamState(int(reader.header["step"]), m, v), reader.header


class Trainer:
    """
    Runs noise-prediction training over a TrainingSet.

    Attributes:
        - config (DenoiserConfig): architecture to train.
        - sched (NoiseSchedule)
        - epochs, batch_size (int), lr (float), seed (int)
        - checkpoint_dir (str | None): where `last_good.ckpt` is kept; None disables.
        - checkpoint_every (int): steps between checkpoints (and at every epoch end).
        - history (list): loss per step of the last fit.

    Methods:
        - fit: train, resuming from the checkpoint when present
        - steps_per_epoch
    """
    def __init__(self, config: DenoiserConfig, sched: NoiseSchedule, epochs: int = 30,
                 batch_size: int = 256, lr: float = 1e-4, seed: int = 0,
                 checkpoint_dir: str | None = None, checkpoint_every: int = 100) -> None:
        if epochs < 1 or batch_size < 1 or checkpoint_every < 1:
            raise ConfigError("epochs, batch_size and checkpoint_every must be >= 1")
        if not lr > 0.0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.config             = config
        self.sched              = sched
        self.epochs             = int(epochs)
        self.batch_size         = int(batch_size)
        self.lr                 = float(lr)
        self.seed               = int(seed)
        self.checkpoint_dir     = checkpoint_dir
        self.checkpoint_every   = int(checkpoint_every)
        self.history            = []

    @property
    def checkpoint_path(self) -> str | None:
        if self.checkpoint_dir is None:
            return None
        return os.path.join(self.checkpoint_dir, CHECKPOINT_NAME)

    def steps_per_epoch(self, n_items: int) -> int:
        return -(-n_items // self.batch_size)

    def _checkpoint(self, weights: DenoiserWeights, state: AdamState) -> None:
        if self.checkpoint_path is not None:
            save_checkpoint(self.checkpoint_path, weights, state, {"seed": self.seed})
            logger.debug("Checkpoint at step %d", state.step)

    def fit(self, data: TrainingSet, weights: DenoiserWeights | None = None,
            resume: bool = True, max_steps: int | None = None) -> DenoiserWeights:
        """
        Train for `epochs` epochs (or until `max_steps` total steps).

        Raises:
            NonFiniteError: the run diverged; `last_good.ckpt` holds the last finite state.
        """
        if self.checkpoint_dir is not None:
            os.makedirs(self.checkpoint_dir, exist_ok=True)
        state = AdamState()
        if resume and self.checkpoint_path is not None and os.path.exists(self.checkpoint_path):
            weights, state, header = load_checkpoint(self.checkpoint_path)
            if weights.config != self.config:
                raise ConfigError(f"checkpoint {self.checkpoint_path} was written for another "
                                  "architecture")
            if header.get("seed", self.seed) != self.seed:
                logger.warning("Resuming a checkpoint written with seed %s under seed %d",
                               header.get("seed"), self.seed)
            logger.info("Resuming training at step %d", state.step)
        elif weights is None:
            weights = init_weights(self.config, self.seed)

        per_epoch = self.steps_per_epoch(len(data))
        total = self.epochs * per_epoch
        if max_steps is not None:
            total = min(total, max_steps)
        take = min(self.batch_size, len(data))
        self.history = []
        for step in tqdm(range(state.step, total), desc="train", initial=state.step,
                         total=total, disable=progress_disabled()):
            rng = np.random.default_rng([self.seed, step])
            batch = data.batch(rng.choice(len(data), size=take, replace=False))
            weights, state, loss = train_step(weights, batch, self.sched, state, self.lr, rng)
            self.history.append(loss)
            epoch = step // per_epoch
            logger.info("train step", extra={"record": {"step": state.step, "epoch": epoch,
                                                        "loss": loss}})
            if state.step % self.checkpoint_every == 0 or state.step % per_epoch == 0:
                self._checkpoint(weights, state)
        self._checkpoint(weights, state)
        return weights
