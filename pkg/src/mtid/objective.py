"""Masked initialization, loss weights, and the task-adaptive proximity loss.

The loss touches only the action block of the plan matrix; task and
observation blocks are overwritten by condition projection and never carry
gradients. Ground-truth actions enter as {0, 1} one-hot rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

LOSS_VARIANTS = ("mse", "both-sides", "gradient")
MASK_MODES = ("off", "relevant-penalty", "literal")


@dataclass(frozen=True)
class ActionMask:
    """Task(c) membership per action column, repeated across plan rows."""

    active: np.ndarray  # (T, A) bool
    rho: float = 2.0


@dataclass(frozen=True)
class LossWeights:
    w: np.ndarray  # (T,)
    w0: float


def action_mask(scopes: np.ndarray, task_id: int, horizon: int, num_actions: int, rho: float = 2.0) -> ActionMask:
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    cols = np.zeros(num_actions, dtype=bool)
    cols[np.asarray(scopes[task_id], dtype=int)] = True
    return ActionMask(np.tile(cols, (horizon, 1)), rho)


def masked_init(mask: ActionMask, rng: np.random.Generator) -> np.ndarray:
    """Standard Gaussian on Task(c) columns, exact zeros elsewhere."""
    if not mask.active.any():
        raise ValueError("empty task scope: no active action columns to initialize")
    noise = rng.standard_normal(mask.active.shape)
    return np.where(mask.active, noise, 0.0)


def gradient_weights(horizon: int, w0: float = 10.0) -> LossWeights:
    """Endpoints get w0, the middle ramps linearly down to 1 (for w0 > 1)."""
    if horizon <= 2:
        raise ValueError(f"degenerate horizon {horizon}: weights need T >= 3")
    if w0 <= 0:
        raise ValueError(f"w0 must be > 0, got {w0}")
    t = np.arange(1, horizon + 1, dtype=np.float64)
    pos = np.minimum(t, horizon - t + 1)
    denom = int(np.ceil(horizon / 2)) - 1
    w = w0 + (1.0 - w0) * (pos - 1.0) / denom
    return LossWeights(w, w0)


def both_sides_weights(horizon: int, w0: float = 10.0) -> LossWeights:
    if horizon <= 2:
        raise ValueError(f"degenerate horizon {horizon}: weights need T >= 3")
    w = np.ones(horizon, dtype=np.float64)
    w[0] = w[-1] = w0
    return LossWeights(w, w0)


def loss_weight_vector(horizon: int, variant: str, w0: float = 10.0) -> np.ndarray:
    if variant == "mse":
        return np.ones(horizon, dtype=np.float64)
    if variant == "both-sides":
        return both_sides_weights(horizon, w0).w
    if variant == "gradient":
        return gradient_weights(horizon, w0).w
    raise ValueError(f"unknown loss variant {variant!r}, expected one of {LOSS_VARIANTS}")


def task_mask_weights(mask: ActionMask, literal: bool = False) -> np.ndarray:
    """(T, A) multiplier matrix.

    Default puts rho on task-irrelevant columns (penalizes predicting actions
    outside the task's scope); literal=True puts rho on the relevant columns
    instead.
    """
    on_active = mask.active if literal else ~mask.active
    return np.where(on_active, mask.rho, 1.0)


def mask_weight_matrix(mask: ActionMask, mode: str) -> np.ndarray:
    if mode == "off":
        return np.ones_like(mask.active, dtype=np.float64)
    if mode == "relevant-penalty":
        return task_mask_weights(mask, literal=False)
    if mode == "literal":
        return task_mask_weights(mask, literal=True)
    raise ValueError(f"unknown mask mode {mode!r}, expected one of {MASK_MODES}")


def _to_like(arr, like):
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(np.asarray(arr), dtype=like.dtype, device=like.device)
    return np.asarray(arr, dtype=np.asarray(like).dtype)


def proximity_loss(a, a_bar, w, m):
    """sum_t sum_d w_t m_{t,d} (a - a_bar)^2 over the trailing (T, A) axes.

    Returns a scalar for (T, A) inputs and a (B,) vector for batched (B, T, A)
    inputs; differentiable when `a` is a torch tensor.
    """
    if tuple(a.shape) != tuple(a_bar.shape):
        raise ValueError(f"prediction shape {tuple(a.shape)} != target shape {tuple(a_bar.shape)}")
    w = _to_like(w, a).reshape(-1, 1)
    m = _to_like(m, a)
    sq = (a - a_bar) ** 2
    return (w * m * sq).sum((-2, -1))


def one_hot_actions(action_ids: np.ndarray, num_actions: int) -> np.ndarray:
    """(T,) or (B, T) int ids -> trailing one-hot axis of width num_actions."""
    ids = np.asarray(action_ids)
    out = np.zeros(ids.shape + (num_actions,), dtype=np.float64)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out
