"""
    Central finite differences, used to verify the reverse pass of the tape.

    Functions:
    ----------
    * finite_diff_grad: gradient estimate of a scalar function at a point.
    * relative_error: component-wise relative error with an absolute floor.
    * check_gradient: compare a tape gradient against finite differences.
"""
import logging
from typing import Callable

import numpy as np

from hoiModule.autodiff.tensor import Tape, Tensor, as_tensor, no_grad
from hoiModule.utils.errors import NonFiniteError

logger = logging.getLogger(__name__)


def finite_diff_grad(f: Callable, x, h: float = 1e-5) -> Tensor:
    """
    Central-difference gradient of a scalar function.

    Args:
        f: callable taking a Tensor of the shape of x and returning a scalar (Tensor or float).
        x: evaluation point.
        h (float): step.

    Returns:
        Tensor: gradient estimate, shape of x.

    Raises:
        NonFiniteError: f is not finite at one of the shifted points.
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)

    def _value(shifted: np.ndarray, i: int, sign: str) -> float:
        with no_grad():
            out = f(Tensor(shifted.reshape(base.shape)))
        value = out.item() if isinstance(out, Tensor) else float(out)
        if not np.isfinite(value):
            raise NonFiniteError(f"finite_diff_grad: f is not finite at component {i} ({sign}h)")
        return value

    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + h
        f_plus = _value(shifted, i, "+")
        shifted[i] = flat[i] - h
        f_minus = _value(shifted, i, "-")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor(grad.reshape(base.shape))


def relative_error(analytic, numeric, floor: float = 1e-2) -> np.ndarray:
    """
    |a - n| / max(|a|, |n|, floor), component-wise.

    With the default floor an error below 1e-4 means a relative error below 1e-4 or an
    absolute error below 1e-6.
    """
    a = np.asarray(analytic.data if isinstance(analytic, Tensor) else analytic)
    n = np.asarray(numeric.data if isinstance(numeric, Tensor) else numeric)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / scale


def check_gradient(f: Callable, x, h: float = 1e-5, floor: float = 1e-2) -> float:
    """
    Maximum relative error between the tape gradient and finite differences of f at x.
    """
    with Tape() as tape:
        leaf = tape.watch(as_tensor(x))
        out = f(leaf)
    analytic = tape.backward(out)[leaf.id]
    numeric = finite_diff_grad(f, x, h)
    err = float(relative_error(analytic, numeric, floor).max(initial=0.0))
    logger.debug("Gradient check over %d components: max rel. error %.3e", leaf.size, err)
    return err
