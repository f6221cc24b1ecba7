"""Noise schedules, closed-form forward noising, reverse-step mean, ancestral
sampling, and the chunked-action training objective.

The math here operates on plain numpy arrays; only the loss path goes through
the autodiff tensors, via the denoiser. Schedule tables are kept in float64 so
the cumulative products stay tight; network-facing values are float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, predict_noise
from .tensor import ShapeMismatch, Tape, Tensor, backward, mse

Array = np.ndarray


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption tables: betas, alphas = 1 - betas, and their
    running product alpha_bars. Step indices are 1-based."""

    betas: Array
    alphas: Array
    alpha_bars: Array

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def sigma(self, k: int) -> float:
        """Sampling std at step k (the sqrt-beta choice)."""
        return math.sqrt(float(self.betas[k - 1]))


def make_schedule(num_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.06) -> NoiseSchedule:
    """Linear beta schedule with exact float64 products.

    The default range is sized for 100 steps so the terminal alpha_bar drops
    below 0.05 and sampling can start from pure noise.
    """
    if num_steps < 2:
        raise ValueError(f"need at least 2 diffusion steps, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def _gather(table: Array, k, num_steps: int):
    """Index a schedule table with a 1-based scalar or integer batch of steps."""
    ks = np.asarray(k)
    if ks.dtype.kind not in "iu":
        raise ValueError(f"diffusion step indices must be integers, got dtype {ks.dtype}")
    if np.any(ks < 1) or np.any(ks > num_steps):
        raise ValueError(f"diffusion step out of range 1..{num_steps}: {k}")
    return table[ks - 1]


def q_sample(x0, k, eps, sched: NoiseSchedule) -> Array:
    """Closed-form forward corruption of a clean chunk at step k.

    Caller supplies the noise; nothing random happens here. k may be a scalar
    or one step per leading-batch row.
    """
    x0 = np.asarray(x0, dtype=np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    if eps.shape != x0.shape:
        raise ShapeMismatch(f"q_sample: noise shape {eps.shape} != data shape {x0.shape}")
    ab = _gather(sched.alpha_bars, k, sched.num_steps)
    if np.ndim(ab) == 1:
        if len(ab) != x0.shape[0]:
            raise ShapeMismatch(f"q_sample: {len(ab)} step indices for batch {x0.shape[0]}")
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(np.float32)


def reverse_mean(x_k, k, eps_pred, sched: NoiseSchedule) -> Array:
    """Mean of the reverse step given the predicted noise component."""
    x_k = np.asarray(x_k, dtype=np.float32)
    eps_pred = np.asarray(eps_pred, dtype=np.float32)
    if eps_pred.shape != x_k.shape:
        raise ShapeMismatch(f"reverse_mean: prediction {eps_pred.shape} != sample {x_k.shape}")
    a = _gather(sched.alphas, k, sched.num_steps)
    ab = _gather(sched.alpha_bars, k, sched.num_steps)
    if np.ndim(a) == 1:
        shape = (-1,) + (1,) * (x_k.ndim - 1)
        a = a.reshape(shape)
        ab = ab.reshape(shape)
    coef = (1.0 - a) / np.sqrt(1.0 - ab)
    return ((x_k - coef * eps_pred) / np.sqrt(a)).astype(np.float32)


def _as_eps_fn(denoiser):
    if isinstance(denoiser, DenoiserParams):
        return lambda x, k, cond: predict_noise(denoiser, x, k, cond).data
    if callable(denoiser):
        def fn(x, k, cond):
            out = denoiser(x, k, cond)
            return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float32)
        return fn
    raise TypeError(f"denoiser must be DenoiserParams or callable, got {type(denoiser)!r}")


def ddpm_sample(denoiser, cond, sched: NoiseSchedule, rng: np.random.Generator, *,
                x_dim: int | None = None, x_init=None, noise_scale: float = 1.0) -> Array:
    """Ancestral sampling from pure noise down to a clean chunk in [-1, 1].

    `denoiser` is either DenoiserParams or a callable ``(x, k, cond) -> eps``.
    `noise_scale` scales the per-step sampling std (0 gives the deterministic
    mean-following chain). `x_init` overrides the starting noise.
    """
    cond = np.asarray(cond, dtype=np.float32)
    single = cond.ndim == 1
    c2 = cond[None, :] if single else cond
    if c2.ndim != 2:
        raise ShapeMismatch(f"ddpm_sample: condition must be 1-D or 2-D, got {cond.shape}")
    if x_dim is None:
        if isinstance(denoiser, DenoiserParams):
            x_dim = denoiser.config.x_dim
        elif x_init is not None:
            x_dim = int(np.shape(x_init)[-1])
        else:
            raise ValueError("x_dim is required when the denoiser is a bare callable")
    batch = c2.shape[0]
    if x_init is not None:
        x = np.array(x_init, dtype=np.float32).reshape(batch, x_dim)
    else:
        x = rng.standard_normal((batch, x_dim), dtype=np.float32)
    eps_fn = _as_eps_fn(denoiser)
    for k in range(sched.num_steps, 0, -1):
        eps = eps_fn(x, k, c2)
        if eps.shape != x.shape:
            raise ShapeMismatch(f"ddpm_sample: denoiser returned {eps.shape} for {x.shape}")
        if not np.isfinite(eps).all():
            raise ValueError(f"non-finite noise prediction at diffusion step {k}")
        x = reverse_mean(x, k, eps, sched)
        if not np.isfinite(x).all():
            raise ValueError(f"non-finite sample at diffusion step {k}")
        if k > 1 and noise_scale != 0.0:
            z = rng.standard_normal(x.shape, dtype=np.float32)
            x = x + np.float32(noise_scale * sched.sigma(k)) * z
    x = np.clip(x, -1.0, 1.0)
    return x[0] if single else x


def training_loss_given(denoiser, x0, cond, k, eps, sched: NoiseSchedule) -> tuple[float, dict[Tensor, Array]]:
    """Deterministic loss core: MSE between supplied noise and the prediction
    at the supplied steps, plus parameter gradients."""
    x0 = np.asarray(x0, dtype=np.float32)
    if x0.ndim != 2 or x0.shape[0] < 1:
        raise ValueError(f"expected a non-empty batch of flat chunks, got shape {x0.shape}")
    eps = np.asarray(eps, dtype=np.float32)
    x_k = q_sample(x0, k, eps, sched)
    params = denoiser if isinstance(denoiser, DenoiserParams) else None
    eps_t = Tensor(eps)
    with Tape() as tape:
        if params is not None:
            pred = predict_noise(params, x_k, k, cond)
        else:
            out = denoiser(x_k, k, cond)
            pred = out if isinstance(out, Tensor) else Tensor(np.asarray(out, dtype=np.float32))
        loss = mse(pred, eps_t)
    if not np.isfinite(loss.data):
        raise ValueError("non-finite training loss")
    if params is not None and len(tape):
        grads = backward(tape, loss, wrt=params.tensors())
    else:
        grads = {}
    return float(loss.data), grads


def training_loss(denoiser, x0, cond, sched: NoiseSchedule, rng: np.random.Generator) -> tuple[float, dict[Tensor, Array]]:
    """Draw per-sample steps and noise, then evaluate the loss and gradients."""
    x0 = np.asarray(x0, dtype=np.float32)
    if x0.ndim != 2 or x0.shape[0] < 1:
        raise ValueError(f"expected a non-empty batch of flat chunks, got shape {x0.shape}")
    k = rng.integers(1, sched.num_steps + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape, dtype=np.float32)
    return training_loss_given(denoiser, x0, cond, k, eps, sched)
