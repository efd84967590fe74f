"""
    Exact noise predictor of a Gaussian prior, used as a verification oracle.

    For x0 ~ N(mu, diag(sigma)), the marginal of x_t is N(sqrt(a) mu, a sigma + (1 - a) I),
    so

        eps(x_t, t) = sqrt(1 - a) (x_t - sqrt(a) mu) / (a sigma + 1 - a)
                    = -sqrt(1 - a) * score(x_t, t)
"""
import logging

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.utils.errors import DataError, ShapeError

logger = logging.getLogger(__name__)


class AnalyticGaussianDenoiser:
    """
    Gaussian-prior denoiser with diagonal covariance.

    Attributes:
        - mu (np.ndarray): (D,) prior mean.
        - sigma_diag (np.ndarray): (D,) prior variances, > 0.
        - sched (NoiseSchedule): schedule giving alpha_t.
    """
    def __init__(self, mu, sigma_diag, sched: NoiseSchedule) -> None:
        self.mu         = np.array(mu, dtype=np.float64).reshape(-1)
        self.sigma_diag = np.broadcast_to(np.asarray(sigma_diag, dtype=np.float64),
                                          self.mu.shape).copy()
        self.sched      = sched
        if np.any(self.sigma_diag <= 0.0) or not np.all(np.isfinite(self.sigma_diag)):
            raise DataError("prior variances must be finite and strictly positive")
        self.mu.setflags(write=False)
        self.sigma_diag.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mu.size

    def conditions(self):
        """The analytic prior ignores conditions."""
        return None

    def _marginal(self, t: int) -> tuple:
        a = self.sched.alpha(t)
        return a, a * self.sigma_diag + (1.0 - a)

    def eval(self, x_t, t: int, conds=None) -> Tensor:
        """Noise prediction; differentiable when x_t is tracked."""
        x_t = tn.as_tensor(x_t)
        if x_t.shape != self.mu.shape:
            raise ShapeError(f"analytic denoiser: input {x_t.shape} vs prior {self.mu.shape}")
        a, var = self._marginal(t)
        return (x_t - self.mu * np.sqrt(a)) * (np.sqrt(1.0 - a) / var)

    def score(self, x_t, t: int) -> np.ndarray:
        """grad_x log p_t(x) of the Gaussian marginal."""
        a, var = self._marginal(t)
        return -(np.asarray(x_t, dtype=np.float64) - np.sqrt(a) * self.mu) / var

    def log_density(self, x_t, t: int) -> float:
        a, var = self._marginal(t)
        r = np.asarray(x_t, dtype=np.float64) - np.sqrt(a) * self.mu
        return float(-0.5 * np.sum(r * r / var + np.log(2.0 * np.pi * var)))

    def posterior_mean(self, x_t, t: int) -> np.ndarray:
        """E[x0 | x_t]."""
        a, var = self._marginal(t)
        r = np.asarray(x_t, dtype=np.float64) - np.sqrt(a) * self.mu
        return self.mu + np.sqrt(a) * self.sigma_diag * r / var
