"""Conditional noise-prediction network: a residual MLP over flattened action
chunks with a sinusoidal step embedding and the observation window concatenated
at the input and inside every residual block.

The hidden width and depth knobs set the parameter count exactly (closed form
in :func:`parameter_count`), which is what the capacity-tier comparisons in the
benchmark turn on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatch, Tensor

Array = np.ndarray


@dataclass(frozen=True)
class DenoiserConfig:
    action_dim: int
    pred_horizon: int
    obs_dim: int
    obs_horizon: int
    hidden_width: int = 96
    depth: int = 2
    embed_dim: int = 32

    def __post_init__(self):
        for name in ("action_dim", "pred_horizon", "obs_dim", "obs_horizon",
                     "hidden_width", "depth", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"DenoiserConfig.{name} must be positive")
        if self.embed_dim % 2:
            raise ValueError(f"embed_dim must be even, got {self.embed_dim}")

    @property
    def x_dim(self) -> int:
        """Width of a flattened action chunk."""
        return self.action_dim * self.pred_horizon

    @property
    def cond_dim(self) -> int:
        """Width of a flattened observation window."""
        return self.obs_dim * self.obs_horizon

    @property
    def in_dim(self) -> int:
        return self.x_dim + self.embed_dim + self.cond_dim


def linear_param_count(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def param_layout(config: DenoiserConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of all weight tensors, in serialization order."""
    w, c = config.hidden_width, config.cond_dim
    layout: list[tuple[str, tuple[int, ...]]] = [
        ("in.w", (config.in_dim, w)),
        ("in.b", (w,)),
    ]
    for i in range(config.depth):
        layout += [
            (f"block{i}.ln.g", (w,)),
            (f"block{i}.ln.b", (w,)),
            (f"block{i}.fc1.w", (w + c, w)),
            (f"block{i}.fc1.b", (w,)),
            (f"block{i}.fc2.w", (w, w)),
            (f"block{i}.fc2.b", (w,)),
        ]
    layout += [("out.w", (w, config.x_dim)), ("out.b", (config.x_dim,))]
    return layout


def parameter_count(config: DenoiserConfig) -> int:
    """Exact number of learnable scalars for this configuration."""
    w, c = config.hidden_width, config.cond_dim
    total = linear_param_count(config.in_dim, w)
    total += config.depth * (2 * w + linear_param_count(w + c, w) + linear_param_count(w, w))
    total += linear_param_count(w, config.x_dim)
    return total


class DenoiserParams:
    """All weight tensors of one denoiser, in a fixed documented order."""

    def __init__(self, config: DenoiserConfig, tensors: dict[str, Tensor]):
        expected = param_layout(config)
        if [(n, t.shape) for n, t in tensors.items()] != expected:
            raise ValueError("tensor dict does not match the layout for this config")
        self.config = config
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def arrays(self) -> list[Array]:
        return [t.data for t in self._tensors.values()]

    def replace_arrays(self, arrays: list[Array]) -> "DenoiserParams":
        """New params object with the same layout but different values."""
        names = list(self._tensors)
        if len(arrays) != len(names):
            raise ValueError(f"expected {len(names)} arrays, got {len(arrays)}")
        tensors = {
            n: Tensor(np.array(a, dtype=np.float32), requires_grad=True, name=n)
            for n, a in zip(names, arrays)
        }
        return DenoiserParams(self.config, tensors)


def init_params(config: DenoiserConfig, rng: np.random.Generator) -> DenoiserParams:
    """Fan-in scaled uniform init; the output layer starts at zero so the
    untrained network predicts zero noise."""
    tensors: dict[str, Tensor] = {}
    bound = 0.0
    for name, shape in param_layout(config):
        if name.endswith("ln.g"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith("ln.b") or name.startswith("out."):
            data = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".w"):
            bound = 1.0 / math.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        else:  # bias, same bound as its weight
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return DenoiserParams(config, tensors)


def timestep_embedding(k, embed_dim: int) -> Array:
    """Sinusoidal embedding of diffusion step indices (interleaved sin/cos).

    Accepts a scalar or an array of step indices >= 1; returns float32 with a
    trailing axis of length `embed_dim`.
    """
    if embed_dim % 2:
        raise ValueError(f"embed_dim must be even, got {embed_dim}")
    ks = np.asarray(k, dtype=np.float64)
    if np.any(ks < 1):
        raise ValueError("diffusion step index must be >= 1")
    half = embed_dim // 2
    exponents = np.arange(half, dtype=np.float64) / max(half - 1, 1)
    freqs = np.exp(-math.log(10000.0) * exponents)
    ang = ks[..., None] * freqs
    out = np.empty(ks.shape + (embed_dim,), dtype=np.float32)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def predict_noise(params: DenoiserParams, x_k, k, cond) -> Tensor:
    """Run the network on a batch: x_k (B, x_dim), k scalar or (B,), cond (B, cond_dim).

    Differentiable w.r.t. the parameters when called under an active Tape.
    """
    cfg = params.config
    x = np.asarray(x_k, dtype=np.float32)
    c = np.asarray(cond, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != cfg.x_dim:
        raise ShapeMismatch(
            f"predict_noise: expected action input (B, {cfg.x_dim}), got {x.shape}")
    if c.ndim != 2 or c.shape[1] != cfg.cond_dim:
        raise ShapeMismatch(
            f"predict_noise: expected condition (B, {cfg.cond_dim}), got {c.shape}")
    if c.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"predict_noise: batch mismatch {x.shape} vs {c.shape}")
    ks = np.asarray(k)
    if ks.ndim == 0:
        ks = np.full(x.shape[0], int(ks))
    elif ks.shape != (x.shape[0],):
        raise ShapeMismatch(f"predict_noise: step indices {ks.shape} for batch {x.shape[0]}")

    xt = Tensor(x)
    ct = Tensor(c)
    tt = Tensor(timestep_embedding(ks, cfg.embed_dim))

    h = T.gelu(T.add(T.matmul(T.concat(xt, tt, ct), params["in.w"]), params["in.b"]))
    for i in range(cfg.depth):
        n = T.layer_norm(h, params[f"block{i}.ln.g"], params[f"block{i}.ln.b"])
        z = T.concat(n, ct)
        a = T.gelu(T.add(T.matmul(z, params[f"block{i}.fc1.w"]), params[f"block{i}.fc1.b"]))
        o = T.add(T.matmul(a, params[f"block{i}.fc2.w"]), params[f"block{i}.fc2.b"])
        h = T.add(h, o)
    return T.add(T.matmul(h, params["out.w"]), params["out.b"])


def solve_width_for_params(config: DenoiserConfig, target: int) -> int:
    """Hidden width whose parameter count is closest to `target` (>= 1)."""
    if target < 1:
        raise ValueError("target parameter count must be positive")

    def count(w: int) -> int:
        return parameter_count(
            DenoiserConfig(
                action_dim=config.action_dim,
                pred_horizon=config.pred_horizon,
                obs_dim=config.obs_dim,
                obs_horizon=config.obs_horizon,
                hidden_width=w,
                depth=config.depth,
                embed_dim=config.embed_dim,
            ))

    if count(1) >= target:
        return 1
    lo, hi = 1, 2
    while count(hi) < target and hi < 1 << 16:
        lo, hi = hi, hi * 2
    while lo + 1 < hi:  # largest width with count <= target is in [lo, hi)
        mid = (lo + hi) // 2
        if count(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo if abs(count(lo) - target) <= abs(count(hi) - target) else hi
