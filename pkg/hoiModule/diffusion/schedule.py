"""
    Noise schedule and the closed-form diffusion identities.

    zeta_t (t = 1..T) are the per-step variances, alpha_t = prod_{s <= t} (1 - zeta_s) the
    cumulative products with alpha_0 = 1.

        forward_diffuse : x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps
        predict_x0      : x0_hat = (x_t - sqrt(1 - alpha_t) eps_pred) / sqrt(alpha_t)

    predict_x0 accepts numpy arrays and Tensors alike, so the guided sampler can
    differentiate through it.
"""
import logging

import numpy as np

from hoiModule.utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


class NoiseSchedule:
    """
    Linear variance schedule.

    Attributes:
    -----------
        - T (int): number of diffusion steps.
        - zeta (np.ndarray): (T,) variances, zeta[t - 1] belongs to step t.
        - alpha_bar (np.ndarray): (T + 1,) cumulative products, alpha_bar[0] = 1.
    """
    def __init__(self, T: int = 1000, zeta_start: float = 1e-4, zeta_end: float = 2e-2) -> None:
        if int(T) != T or T < 1:
            raise ConfigError(f"schedule.T must be a positive integer, got {T}")
        if not 0.0 < zeta_start <= zeta_end < 1.0:
            raise ConfigError(f"schedule variances must satisfy 0 < start <= end < 1, got "
                              f"{zeta_start}, {zeta_end}")
        self.T          = int(T)
        self.zeta       = np.linspace(zeta_start, zeta_end, self.T, dtype=np.float64)
        self.alpha_bar  = np.concatenate([[1.0], np.cumprod(1.0 - self.zeta)])
        self.zeta.setflags(write=False)
        self.alpha_bar.setflags(write=False)
        if not np.all(np.diff(self.alpha_bar) < 0.0):
            raise ConfigError("alpha_bar must decrease strictly")

    def __repr__(self) -> str:
        return f"NoiseSchedule(T={self.T}, zeta=[{self.zeta[0]:g}, {self.zeta[-1]:g}])"

    def alpha(self, t: int) -> float:
        """alpha_t, for 0 <= t <= T."""
        if not 0 <= t <= self.T:
            raise DataError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[int(t)])


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """Sample of q(x_t | x0) for a given noise vector."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DataError(f"forward_diffuse: x0 {x0.shape} and eps {eps.shape} differ in shape")
    a = sched.alpha(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def predict_x0(x_t, t: int, eps_pred, sched: NoiseSchedule):
    """One-step denoised estimate; t = 0 returns x_t."""
    a = sched.alpha(t)
    return (x_t - eps_pred * np.sqrt(1.0 - a)) * (1.0 / np.sqrt(a))


def timestep_grid(tau: int, delta_t: int, T: int) -> list:
    """[0, delta_t, ..., tau], validated."""
    if int(tau) != tau or not 0 <= tau <= T:
        raise ConfigError(f"tau must be an integer in [0, {T}], got {tau}")
    if int(delta_t) != delta_t or delta_t < 1:
        raise ConfigError(f"delta_t must be a positive integer, got {delta_t}")
    if tau % delta_t:
        raise ConfigError(f"delta_t={delta_t} does not divide tau={tau}")
    return list(range(0, int(tau) + 1, int(delta_t)))
