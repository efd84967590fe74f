"""
    Conditional noise predictor eps(x_t, t, c_I, c_G).

    Tokens
    ------
    * main branch: one token per joint 6D block (shared embedding + learned joint position),
      one token for the object rotation, one for the object translation;
    * beta branch: one token for the normalised shape coefficients.

    Both branches share the timestep encoder: a sinusoidal embedding followed by a two-layer
    MLP producing (s, b); tokens become (1 + s) * tokens + b. The last time layer starts at
    zero, so the scale starts at 1 and the shift at 0.

    Each of the `layers` blocks of a branch runs, on pre-normalised tokens, a cross-attention
    over the observation tokens c_I and an adapter cross-attention over the geometry tokens
    c_G. Their concatenated outputs go through a fusing linear head added back to the tokens,
    followed by a residual GELU feed-forward block. Per-token linear heads map the tokens back
    to the D noise components.

    Condition encoders
    ------------------
    * observation: MLP from the observation vector to `n_obs_tokens` tokens;
    * geometry: shared per-point MLP, max-pool over the coarse points, projection to
      `n_geo_tokens` tokens (invariant to the order of the points).
    A disabled condition (use_obs / use_geo False) is replaced by learned null tokens.
"""
import json
import hashlib
import logging
from dataclasses import asdict, dataclass

import numpy as np

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.tensor import Tensor
from hoiModule.bodyModel.params import N_BETAS, ParamLayout
from hoiModule.denoiser.layers import (cross_attention, expand_tokens, feed_forward, linear,
                                       mlp, sinusoidal_embedding)
from hoiModule.utils.errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

N_COARSE_POINTS = 64


@dataclass(frozen=True)
class DenoiserConfig:
    """
    Architecture of the neural denoiser; it fully determines the tensor set.

    Attributes:
        - n_joints (int): K, number of joint tokens.
        - width (int): token width W.
        - heads (int): attention heads, must divide W.
        - layers (int): cross-attention blocks per branch.
        - obs_dim (int): length of the observation vector (3 K + 4 by default).
        - n_obs_tokens, n_geo_tokens (int): condition tokens.
        - time_dim (int): sinusoidal timestep features.
        - ffn_mult (int): hidden width factor of the feed-forward blocks.
        - use_obs, use_geo (bool): condition switches.
    """
    n_joints        : int = 16
    width           : int = 64
    heads           : int = 4
    layers          : int = 3
    obs_dim         : int = 52
    n_obs_tokens    : int = 4
    n_geo_tokens    : int = 2
    time_dim        : int = 64
    ffn_mult        : int = 2
    use_obs         : bool = True
    use_geo         : bool = True

    def __post_init__(self) -> None:
        for name in ("n_joints", "width", "heads", "layers", "obs_dim", "n_obs_tokens",
                     "n_geo_tokens", "time_dim", "ffn_mult"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"denoiser.{name} must be a positive integer, got {value}")
        if self.width % self.heads:
            raise ConfigError(f"denoiser.heads={self.heads} must divide width={self.width}")
        if self.time_dim % 2:
            raise ConfigError(f"denoiser.time_dim must be even, got {self.time_dim}")

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.n_joints)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "DenoiserConfig":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown denoiser config keys {sorted(unknown)}")
        return cls(**values)

    def arch_hash(self) -> bytes:
        """sha256 of the canonical JSON form of the configuration."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


def default_obs_dim(n_joints: int) -> int:
    """Noisy joints (3 K) + noisy object centre (3) + noise scale (1)."""
    return 3 * n_joints + 4


# ======================================================================================
# Tensor set
# ======================================================================================
def _linear_shapes(name: str, n_in: int, n_out: int) -> dict:
    return {f"{name}.w": (n_in, n_out), f"{name}.b": (n_out,)}


def _attention_shapes(name: str, width: int) -> dict:
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes.update(_linear_shapes(f"{name}.{proj}", width, width))
    return shapes


def parameter_shapes(config: DenoiserConfig) -> dict:
    """Ordered {tensor name: shape} of a configuration."""
    W, K = config.width, config.n_joints
    shapes = {}
    shapes.update(_linear_shapes("embed.joint", 6, W))
    shapes["embed.joint_pos"] = (K, W)
    shapes.update(_linear_shapes("embed.rot", 6, W))
    shapes.update(_linear_shapes("embed.trans", 3, W))
    shapes.update(_linear_shapes("embed.beta", N_BETAS, W))
    shapes.update(_linear_shapes("time.l1", config.time_dim, W))
    shapes.update(_linear_shapes("time.l2", W, 2 * W))
    if config.use_obs:
        shapes.update(_linear_shapes("obs.l1", config.obs_dim, W))
        shapes.update(_linear_shapes("obs.l2", W, config.n_obs_tokens * W))
    else:
        shapes["obs.null"] = (config.n_obs_tokens, W)
    if config.use_geo:
        shapes.update(_linear_shapes("geo.point.l1", 3, W))
        shapes.update(_linear_shapes("geo.point.l2", W, W))
        shapes.update(_linear_shapes("geo.proj", W, config.n_geo_tokens * W))
    else:
        shapes["geo.null"] = (config.n_geo_tokens, W)
    for branch in ("main", "beta"):
        for layer in range(config.layers):
            prefix = f"{branch}.{layer}"
            shapes.update(_attention_shapes(f"{prefix}.attn_obs", W))
            shapes.update(_attention_shapes(f"{prefix}.attn_geo", W))
            shapes.update(_linear_shapes(f"{prefix}.fuse", 2 * W, W))
            shapes.update(_linear_shapes(f"{prefix}.ffn.l1", W, config.ffn_mult * W))
            shapes.update(_linear_shapes(f"{prefix}.ffn.l2", config.ffn_mult * W, W))
    shapes.update(_linear_shapes("head.joint", W, 6))
    shapes.update(_linear_shapes("head.rot", W, 6))
    shapes.update(_linear_shapes("head.trans", W, 3))
    shapes.update(_linear_shapes("head.beta", W, N_BETAS))
    return shapes


class DenoiserWeights:
    """
    Immutable named-tensor bundle of one architecture.

    Attributes:
        - config (DenoiserConfig)
        - tensors (dict): {name: read-only float64 array}, ordered as parameter_shapes.
    """
    def __init__(self, config: DenoiserConfig, tensors: dict) -> None:
        expected = parameter_shapes(config)
        missing = [name for name in expected if name not in tensors]
        if missing:
            raise DataError(f"weights are missing tensor '{missing[0]}'")
        extra = [name for name in tensors if name not in expected]
        if extra:
            raise DataError(f"unexpected tensor '{extra[0]}' for this architecture")
        self.config = config
        self.tensors = {}
        for name, shape in expected.items():
            value = np.array(tensors[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"tensor '{name}' has shape {value.shape}, "
                                 f"architecture expects {shape}")
            value.setflags(write=False)
            self.tensors[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def with_tensors(self, tensors: dict) -> "DenoiserWeights":
        return DenoiserWeights(self.config, tensors)

    def equals(self, other: "DenoiserWeights") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


def init_weights(config: DenoiserConfig, seed: int = 0, zero_heads: bool = False
                 ) -> DenoiserWeights:
    """
    Random initialisation: linear weights N(0, 1 / fan_in), zero biases, learned tokens
    N(0, 0.1^2), zero last time layer. `zero_heads` also zeroes the output heads.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b") or name.startswith("time.l2"):
            tensors[name] = np.zeros(shape)
        elif name.startswith("head.") and zero_heads:
            tensors[name] = np.zeros(shape)
        elif name.endswith(".w"):
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            tensors[name] = rng.normal(0.0, 0.1, size=shape)
    weights = DenoiserWeights(config, tensors)
    logger.debug("Initialised denoiser with %d parameters", weights.n_parameters)
    return weights


# ======================================================================================
# Conditions
# ======================================================================================
@dataclass(frozen=True, eq=False)
class Conditions:
    """
    Raw condition inputs of one scene.

    Attributes:
        - c_I (np.ndarray): (obs_dim,) observation vector.
        - c_G (np.ndarray): (P, 3) coarse object points in the template frame.
    """
    c_I : np.ndarray
    c_G : np.ndarray

    def __post_init__(self) -> None:
        c_I = np.array(self.c_I, dtype=np.float64).reshape(-1)
        c_G = np.array(self.c_G, dtype=np.float64)
        if c_G.ndim != 2 or c_G.shape[1] != 3 or c_G.shape[0] == 0:
            raise ShapeError(f"geometry condition must be (P, 3) points, got {c_G.shape}")
        if not (np.all(np.isfinite(c_I)) and np.all(np.isfinite(c_G))):
            raise DataError("condition inputs must be finite")
        c_I.setflags(write=False)
        c_G.setflags(write=False)
        object.__setattr__(self, "c_I", c_I)
        object.__setattr__(self, "c_G", c_G)


def _condition_tokens(params: dict, config: DenoiserConfig, batch: int, obs, points) -> tuple:
    W = config.width
    if config.use_obs:
        if obs is None:
            raise DataError("this denoiser needs an observation condition")
        if obs.shape != (batch, config.obs_dim):
            raise ShapeError(f"observation batch {obs.shape} vs expected "
                             f"{(batch, config.obs_dim)}")
        hidden = tn.gelu(linear(params, "obs.l1", obs))
        ctx_obs = tn.reshape(linear(params, "obs.l2", hidden), (batch, config.n_obs_tokens, W))
    else:
        ctx_obs = expand_tokens(params["obs.null"], batch)
    if config.use_geo:
        if points is None:
            raise DataError("this denoiser needs a geometry condition")
        if points.ndim != 3 or points.shape[0] != batch or points.shape[2] != 3:
            raise ShapeError(f"geometry batch {points.shape} vs expected ({batch}, P, 3)")
        pooled = tn.amax(mlp(params, "geo.point", points), axis=1)
        ctx_geo = tn.reshape(linear(params, "geo.proj", pooled), (batch, config.n_geo_tokens, W))
    else:
        ctx_geo = expand_tokens(params["geo.null"], batch)
    return ctx_obs, ctx_geo


def _modulate(tokens: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    batch, n, width = tokens.shape
    scale = tn.broadcast_to(tn.reshape(scale, (batch, 1, width)), tokens.shape)
    shift = tn.broadcast_to(tn.reshape(shift, (batch, 1, width)), tokens.shape)
    return tokens * scale + shift


def _branch(params: dict, config: DenoiserConfig, name: str, tokens: Tensor, ctx_obs: Tensor,
            ctx_geo: Tensor) -> Tensor:
    for layer in range(config.layers):
        prefix = f"{name}.{layer}"
        h = tn.layer_norm(tokens)
        attended = cross_attention(params, f"{prefix}.attn_obs", h, ctx_obs, config.heads)
        adapted = cross_attention(params, f"{prefix}.attn_geo", h, ctx_geo, config.heads)
        tokens = tokens + linear(params, f"{prefix}.fuse", tn.concat([attended, adapted], axis=2))
        tokens = feed_forward(params, f"{prefix}.ffn", tokens)
    return tokens


def denoiser_forward(params: dict, config: DenoiserConfig, x_t, timesteps, obs=None,
                     points=None) -> Tensor:
    """
    Batched forward pass on tape tensors.

    Args:
        params (dict): {name: Tensor}, tracked when training.
        x_t: (B, D) latents.
        timesteps: (B,) integer timesteps.
        obs: (B, obs_dim) observation vectors, or None when use_obs is False.
        points: (B, P, 3) coarse points, or None when use_geo is False.

    Returns:
        Tensor: (B, D) noise prediction.
    """
    lay = config.layout
    K, W = config.n_joints, config.width
    x_t = tn.as_tensor(x_t)
    if x_t.ndim != 2 or x_t.shape[1] != lay.dim:
        raise ShapeError(f"denoiser input {x_t.shape} vs expected (B, {lay.dim})")
    batch = x_t.shape[0]
    obs = None if obs is None else tn.as_tensor(obs)
    points = None if points is None else tn.as_tensor(points)

    joints = linear(params, "embed.joint", tn.reshape(x_t[:, lay.theta], (batch, K, 6)))
    joints = joints + tn.broadcast_to(params["embed.joint_pos"], (batch, K, W))
    rot = tn.reshape(linear(params, "embed.rot", x_t[:, lay.rot_o]), (batch, 1, W))
    trans = tn.reshape(linear(params, "embed.trans", x_t[:, lay.trans_o]), (batch, 1, W))
    main = tn.concat([joints, rot, trans], axis=1)
    beta = tn.reshape(linear(params, "embed.beta", x_t[:, lay.beta]), (batch, 1, W))

    t_features = sinusoidal_embedding(timesteps, config.time_dim)
    t_out = mlp(params, "time", t_features)
    scale, shift = t_out[:, :W] + 1.0, t_out[:, W:]
    main = _modulate(main, scale, shift)
    beta = _modulate(beta, scale, shift)

    ctx_obs, ctx_geo = _condition_tokens(params, config, batch, obs, points)
    main = _branch(params, config, "main", main, ctx_obs, ctx_geo)
    beta = _branch(params, config, "beta", beta, ctx_obs, ctx_geo)

    eps_joint = tn.reshape(linear(params, "head.joint", main[:, :K, :]), (batch, 6 * K))
    eps_beta = linear(params, "head.beta", beta[:, 0, :])
    eps_rot = linear(params, "head.rot", main[:, K, :])
    eps_trans = linear(params, "head.trans", main[:, K + 1, :])
    return tn.concat([eps_joint, eps_beta, eps_rot, eps_trans], axis=1)


# ======================================================================================
# Denoiser handle
# ======================================================================================
class NeuralDenoiser:
    """
    Read-only evaluation handle around a weight bundle.

    Methods:
        - eval: single latent, differentiable w.r.t. x_t on an active tape
        - eval_batch: numpy in, numpy out, no tape
        - conditions: build the Conditions of a scene
    """
    def __init__(self, weights: DenoiserWeights) -> None:
        self.weights = weights
        self.config = weights.config
        self._params = {name: Tensor(value) for name, value in weights.tensors.items()}

    @property
    def dim(self) -> int:
        return self.config.layout.dim

    def conditions(self, observation, coarse_points) -> Conditions:
        conds = Conditions(observation, coarse_points)
        if self.config.use_obs and conds.c_I.size != self.config.obs_dim:
            raise ShapeError(f"observation has {conds.c_I.size} entries, denoiser expects "
                             f"{self.config.obs_dim}")
        return conds

    def _unpack(self, conds: Conditions | None, batch: int) -> tuple:
        if conds is None:
            return None, None
        obs = np.broadcast_to(conds.c_I, (batch,) + conds.c_I.shape) if self.config.use_obs \
            else None
        points = np.broadcast_to(conds.c_G, (batch,) + conds.c_G.shape) if self.config.use_geo \
            else None
        return obs, points

    def eval(self, x_t, t: int, conds: Conditions | None = None) -> Tensor:
        x_t = tn.as_tensor(x_t)
        if x_t.shape != (self.dim,):
            raise ShapeError(f"denoiser input {x_t.shape} vs expected ({self.dim},)")
        obs, points = self._unpack(conds, 1)
        out = denoiser_forward(self._params, self.config, tn.reshape(x_t, (1, self.dim)), [t],
                               obs, points)
        return tn.reshape(out, (self.dim,))

    def eval_batch(self, x_t, timesteps, obs=None, points=None) -> np.ndarray:
        with tn.no_grad():
            return denoiser_forward(self._params, self.config, np.asarray(x_t, dtype=np.float64),
                                    timesteps, obs if self.config.use_obs else None,
                                    points if self.config.use_geo else None).numpy()
