"""Noise schedule and forward/reverse diffusion kernels.

Everything here is a pure function over an immutable schedule; payloads may be
numpy arrays or torch tensors and the step index may be a scalar or a batch
vector. The model is involved only through the noise it predicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int
    s: float
    beta: np.ndarray       # (N,) float64, beta[n-1] is the step-n coefficient
    alpha: np.ndarray      # (N,) float64, 1 - beta
    alpha_bar: np.ndarray  # (N+1,) float64, alpha_bar[0] = 1, cumulative product

    def __post_init__(self):
        assert self.alpha_bar.shape == (self.num_steps + 1,)


def cosine_schedule(num_steps: int, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine alpha_bar curve, betas clipped at 0.999.

    alpha_bar is rebuilt as cumprod(1 - beta) after clipping so that the
    product identity holds exactly in float64 even where the clip bites.
    """
    if num_steps < 2:
        raise ValueError(f"schedule too short: need at least 2 steps, got {num_steps}")
    n = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos(((n / num_steps + s) / (1 + s)) * np.pi / 2) ** 2
    raw_bar = f / f[0]
    beta = np.clip(1.0 - raw_bar[1:] / raw_bar[:-1], 0.0, 0.999)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(num_steps, s, beta, alpha, alpha_bar)


def _coef(values: np.ndarray, n, like):
    """Gather values[n] and shape it to broadcast against a payload batch."""
    c = np.asarray(values, dtype=np.float64)[np.asarray(n)]
    if c.ndim > 0:
        c = c.reshape((-1,) + (1,) * (like.ndim - 1))
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(c, dtype=like.dtype, device=like.device)
    return c.astype(like.dtype) if isinstance(like, np.ndarray) else c


def _check_step(sched: NoiseSchedule, n, low: int = 1):
    n_arr = np.asarray(n)
    if n_arr.min() < low or n_arr.max() > sched.num_steps:
        raise ValueError(f"step {n} outside [{low}, {sched.num_steps}]")


def forward_diffuse(x0, n, eps, sched: NoiseSchedule):
    """x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) eps."""
    if tuple(eps.shape) != tuple(x0.shape):
        raise ValueError(f"noise shape {tuple(eps.shape)} != payload shape {tuple(x0.shape)}")
    _check_step(sched, n)
    ab = sched.alpha_bar
    return _coef(np.sqrt(ab), n, x0) * x0 + _coef(np.sqrt(1.0 - ab), n, x0) * eps


def implied_noise(xn, x0_prediction, n, sched: NoiseSchedule):
    """Invert the forward kernel: the eps that maps x0_prediction to xn at step n."""
    _check_step(sched, n)
    ab = sched.alpha_bar
    if np.asarray(ab[np.asarray(n)]).max() >= 1.0:
        raise ValueError("implied noise undefined at alpha_bar = 1")
    return (xn - _coef(np.sqrt(ab), n, xn) * x0_prediction) / _coef(np.sqrt(1.0 - ab), n, xn)


def ddim_step(xn, n: int, predicted_noise, sched: NoiseSchedule, n_prev: int | None = None):
    """Deterministic reverse update from step n to n_prev (default n - 1).

    x0 is re-estimated from the predicted noise and pushed back down the
    forward kernel at the earlier step; alpha_bar_0 = 1 makes the last hop
    exact.
    """
    _check_step(sched, n)
    if n_prev is None:
        n_prev = n - 1
    if not 0 <= n_prev < n:
        raise ValueError(f"n_prev {n_prev} must be in [0, {n})")
    ab = sched.alpha_bar
    x0_est = (xn - _coef(np.sqrt(1.0 - ab), n, xn) * predicted_noise) / _coef(np.sqrt(ab), n, xn)
    return (
        _coef(np.sqrt(ab), n_prev, xn) * x0_est
        + _coef(np.sqrt(1.0 - ab), n_prev, xn) * predicted_noise
    )


def ddpm_step(xn, n: int, predicted_noise, sched: NoiseSchedule, rng: np.random.Generator):
    """Ancestral reverse update with posterior variance beta_tilde_n.

    The variance carries a (1 - alpha_bar_{n-1}) factor, so the n = 1 step is
    noiseless and coincides with ddim_step.
    """
    _check_step(sched, n)
    ab, alpha, beta = sched.alpha_bar, sched.alpha, sched.beta
    mean = (xn - _coef(beta / np.sqrt(1.0 - ab[1:]), n - 1, xn) * predicted_noise) / _coef(
        np.sqrt(alpha), n - 1, xn
    )
    var = _coef((1.0 - ab[:-1]) / (1.0 - ab[1:]) * beta, n - 1, xn)
    z = rng.standard_normal(tuple(xn.shape))
    if isinstance(xn, torch.Tensor):
        z = torch.as_tensor(z, dtype=xn.dtype, device=xn.device)
    else:
        z = z.astype(xn.dtype)
    return mean + var**0.5 * z


def ddim_time_steps(num_steps: int, num_inference_steps: int) -> list:
    """Descending visit order for strided sampling, e.g. N=50, 10 -> [50, 45, ..., 5].

    Stepping pairs each entry with its successor and the last entry with 0.
    """
    if not 1 <= num_inference_steps <= num_steps:
        raise ValueError(
            f"inference steps {num_inference_steps} outside [1, {num_steps}]"
        )
    stride = num_steps / num_inference_steps
    ns = sorted({int(round(stride * k)) for k in range(1, num_inference_steps + 1)} - {0}, reverse=True)
    return ns


def schedule_arrays(sched: NoiseSchedule) -> dict:
    """Arrays for checkpoint embedding; reconstruct with schedule_from_arrays."""
    return {
        "schedule_beta": sched.beta.astype(np.float64),
        "schedule_meta": np.array([sched.num_steps, sched.s], dtype=np.float64),
    }


def schedule_from_arrays(arrays: dict) -> NoiseSchedule:
    num_steps = int(arrays["schedule_meta"][0])
    s = float(arrays["schedule_meta"][1])
    beta = arrays["schedule_beta"].astype(np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(num_steps, s, beta, alpha, alpha_bar)
