"""
    Functional network blocks on tape tensors.

    Every block reads its parameters from a flat dict {name: Tensor}, with names built as
    "<block>.<param>" (e.g. "main.0.attn_obs.q.w"). Inputs carry any number of leading axes;
    linear layers act on the last one.
"""
import logging

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor

logger = logging.getLogger(__name__)


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    w, b = params[f"{name}.w"], params[f"{name}.b"]
    lead = x.shape[:-1]
    flat = tn.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = tn.matmul(flat, w) + b
    return tn.reshape(out, lead + (w.shape[1],)) if x.ndim != 2 else out


def mlp(params: dict, name: str, x: Tensor) -> Tensor:
    """Linear -> GELU -> Linear."""
    return linear(params, f"{name}.l2", tn.gelu(linear(params, f"{name}.l1", x)))


def feed_forward(params: dict, name: str, tokens: Tensor) -> Tensor:
    """Residual GELU feed-forward block with pre-normalisation."""
    return tokens + mlp(params, name, tn.layer_norm(tokens))


def cross_attention(params: dict, name: str, queries: Tensor, context: Tensor,
                    heads: int) -> Tensor:
    """
    Multi-head cross-attention.

    Args:
        queries: (B, n, W) tokens.
        context: (B, m, W) condition tokens.
        heads (int): number of heads, must divide W.

    Returns:
        Tensor: (B, n, W).
    """
    batch, n, width = queries.shape
    m = context.shape[1]
    dh = width // heads
    q = linear(params, f"{name}.q", queries)
    k = linear(params, f"{name}.k", context)
    v = linear(params, f"{name}.v", context)

    def split(x, length):
        x = tn.reshape(x, (batch, length, heads, dh))
        return tn.reshape(tn.transpose(x, (0, 2, 1, 3)), (batch * heads, length, dh))

    q, k, v = split(q, n), split(k, m), split(v, m)
    scores = tn.matmul(q, tn.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    attended = tn.matmul(tn.softmax(scores, axis=-1), v)
    merged = tn.reshape(tn.transpose(tn.reshape(attended, (batch, heads, n, dh)), (0, 2, 1, 3)),
                        (batch, n, width))
    return linear(params, f"{name}.o", merged)


def sinusoidal_embedding(timesteps, dim: int) -> np.ndarray:
    """(B,) integer timesteps -> (B, dim) [sin | cos] features."""
    t = np.asarray(timesteps, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)], axis=1)


def expand_tokens(x: Tensor, batch: int) -> Tensor:
    """(n, W) -> (B, n, W)."""
    return tn.broadcast_to(x, (batch,) + x.shape)
