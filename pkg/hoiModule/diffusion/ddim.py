"""
    Deterministic DDIM inversion and sampling, with score guidance.

    Inversion and sampling use the same timestep grid {0, dt, 2 dt, ..., tau}.

    Inversion (t -> t + dt):
        x_{t+dt} = sqrt(a_{t+dt}) x0_hat(x_t) + sqrt(1 - a_{t+dt}) eps(x_t, t)

    Guided step (t -> t - dt):
        eps     = eps(x_t, t)
        L       = L_P(x0_hat(x_t, eps))
        eps'    = eps + rho sqrt(1 - a_t) grad_{x_t} L
        x0'     = x0_hat(x_t, eps')
        x_{t-dt} = sqrt(a_{t-dt}) x0' + sqrt(1 - a_{t-dt}) eps'

    In "full" gradient mode the gradient flows through the denoiser; in "frozen" mode eps is a
    constant and only the affine map x_t -> x0_hat is differentiated.

    A denoiser is any object with eval(x_t: Tensor, t: int, conds) -> Tensor.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from hoiModule.autodiff.tensor import Tape, Tensor, no_grad
from hoiModule.bodyModel.params import ParamLayout, clamp_beta
from hoiModule.diffusion.schedule import NoiseSchedule, predict_x0, timestep_grid
from hoiModule.utils.errors import ConfigError, GuidanceOverflowError, NonFiniteError

logger = logging.getLogger(__name__)

GRAD_MODES      = ("full", "frozen")
OVERFLOW_NORM   = 1e6


@dataclass(frozen=True)
class GuidedStepConfig:
    """
    Inversion level, DDIM stride, guidance scale and gradient mode.

    Attributes:
        - tau (int): inversion noise level (timestep index).
        - delta_t (int): DDIM stride, must divide tau.
        - rho (float): guidance scale, >= 0.
        - grad_mode (str): "full" (through the denoiser) or "frozen".
        - max_grad_norm (float | None): optional clip of the guidance gradient norm.
    """
    tau             : int = 50
    delta_t         : int = 2
    rho             : float = 10.0
    grad_mode       : str = "full"
    max_grad_norm   : float | None = None

    def __post_init__(self) -> None:
        if int(self.tau) != self.tau or self.tau < 1:
            raise ConfigError(f"tau must be a positive integer, got {self.tau}")
        if int(self.delta_t) != self.delta_t or self.delta_t < 1 or self.tau % self.delta_t:
            raise ConfigError(f"delta_t={self.delta_t} must be a positive divisor of "
                              f"tau={self.tau}")
        if not np.isfinite(self.rho) or self.rho < 0.0:
            raise ConfigError(f"rho must be finite and >= 0, got {self.rho}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"grad_mode must be one of {GRAD_MODES}, got '{self.grad_mode}'")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0.0:
            raise ConfigError(f"max_grad_norm must be positive, got {self.max_grad_norm}")

    def validate_for(self, sched: NoiseSchedule) -> None:
        if self.tau > sched.T:
            raise ConfigError(f"tau={self.tau} exceeds the schedule length T={sched.T}")


def _eval(denoiser, x_t, t: int, conds) -> np.ndarray:
    with no_grad():
        eps = denoiser.eval(Tensor(x_t), t, conds)
    return eps.numpy()


def _check_finite(values: np.ndarray, what: str, t: int) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what}: non-finite latent at timestep {t}")


# ======================================================================================
# Inversion / plain sampling
# ======================================================================================
def ddim_invert(x0_start, tau: int, delta_t: int, denoiser, conds,
                sched: NoiseSchedule) -> np.ndarray:
    """
    Map a clean estimate to the noisy latent x_tau.

    Returns:
        np.ndarray: x_tau; x0_start itself when tau = 0.

    Raises:
        NonFiniteError: a latent became non-finite (the message names the step).
    """
    grid = timestep_grid(tau, delta_t, sched.T)
    x = np.array(x0_start, dtype=np.float64)
    for t, t_next in zip(grid[:-1], grid[1:]):
        eps = _eval(denoiser, x, t, conds)
        x0_hat = predict_x0(x, t, eps, sched)
        a_next = sched.alpha(t_next)
        x = np.sqrt(a_next) * x0_hat + np.sqrt(1.0 - a_next) * eps
        _check_finite(x, "ddim_invert", t_next)
    logger.debug("Inverted to tau=%d in %d steps", tau, len(grid) - 1)
    return x


def ddim_generate(x_T, tau: int, delta_t: int, denoiser, conds,
                  sched: NoiseSchedule) -> np.ndarray:
    """Unguided deterministic sampling from a latent at level tau down to t = 0."""
    grid = timestep_grid(tau, delta_t, sched.T)
    x = np.array(x_T, dtype=np.float64)
    x0_hat = x
    for t, t_prev in zip(grid[:0:-1], grid[-2::-1]):
        eps = _eval(denoiser, x, t, conds)
        x0_hat = predict_x0(x, t, eps, sched)
        a_prev = sched.alpha(t_prev)
        x = np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps
        _check_finite(x, "ddim_generate", t_prev)
    return x0_hat


# ======================================================================================
# Guided sampling
# ======================================================================================
def guided_ddim_step(x_t, t: int, delta_t: int, denoiser, conds, objective: Callable | None,
                     sched: NoiseSchedule, config: GuidedStepConfig) -> tuple:
    """
    One guided DDIM step from t to t - delta_t.

    Args:
        x_t: current latent (D,).
        objective: callable L_P on a (D,) Tensor, or None. An `is_active` attribute set to
            False disables guidance.
        config (GuidedStepConfig): rho, gradient mode and optional clip.

    Returns:
        tuple: (x_{t-dt}, x0_hat', info) with info = {"t", "loss", "grad_norm"}.

    Raises:
        GuidanceOverflowError: gradient norm above 1e6 or non-finite.
    """
    if t < delta_t:
        raise ConfigError(f"guided step needs t >= delta_t, got t={t}, delta_t={delta_t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    a_t = sched.alpha(t)
    a_prev = sched.alpha(t - delta_t)
    guided = config.rho > 0.0 and objective is not None and getattr(objective, "is_active", True)
    info = {"t": int(t), "loss": None, "grad_norm": 0.0}

    if not guided:
        eps = _eval(denoiser, x_t, t, conds)
    else:
        with Tape() as tape:
            leaf = tape.watch(x_t)
            if config.grad_mode == "full":
                eps_t = denoiser.eval(leaf, t, conds)
            else:
                with no_grad():
                    eps_t = denoiser.eval(Tensor(x_t), t, conds)
            loss = objective(predict_x0(leaf, t, eps_t, sched))
        grad = tape.backward(loss)[leaf.id].data
        norm = float(np.linalg.norm(grad))
        if not np.isfinite(norm) or norm > OVERFLOW_NORM:
            raise GuidanceOverflowError(f"guidance gradient norm {norm:.3e} at timestep {t} "
                                        f"exceeds {OVERFLOW_NORM:g}; use a smaller rho")
        if config.max_grad_norm is not None and norm > config.max_grad_norm:
            logger.warning("Clipping guidance gradient norm %.3e to %.3e at t=%d",
                           norm, config.max_grad_norm, t)
            grad = grad * (config.max_grad_norm / norm)
        eps = eps_t.numpy() + config.rho * np.sqrt(1.0 - a_t) * grad
        info["loss"] = loss.item()
        info["grad_norm"] = norm

    x0_hat = predict_x0(x_t, t, eps, sched)
    x_prev = np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps
    _check_finite(x_prev, "guided_ddim_step", t - delta_t)
    return x_prev, x0_hat, info


def ddim_sample_loop(x_tau, tau: int, delta_t: int, denoiser, conds,
                     objective: Callable | None, sched: NoiseSchedule, config: GuidedStepConfig,
                     layout: ParamLayout | None = None, step_log: list | None = None
                     ) -> np.ndarray:
    """
    Guided DDIM from tau down to 0; returns the x0_hat' of the last step.

    When a layout is given the beta slice of the result is clamped to [-1, 1]. Per-step
    diagnostics are appended to `step_log` when provided.
    """
    grid = timestep_grid(tau, delta_t, sched.T)
    x = np.array(x_tau, dtype=np.float64)
    x0_hat = x
    for t in grid[:0:-1]:
        x, x0_hat, info = guided_ddim_step(x, t, delta_t, denoiser, conds, objective, sched,
                                           config)
        if step_log is not None:
            step_log.append(info)
        logger.debug("Guided step", extra={"record": info})
    if layout is not None:
        x0_hat = clamp_beta(x0_hat, layout)
    return x0_hat
