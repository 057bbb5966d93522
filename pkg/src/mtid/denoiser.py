"""Plan denoiser: a horizon-preserving 1-D temporal U-Net over the plan matrix.

Each row of the plan matrix is one timestep laid out as (task one-hot | action
scores | observation). Convolutions run over the time axis with the row layout
as channels. Every residual temporal block carries one cross-attention site
that injects one interpolated latent feature; blocks consume features in
architecture order (down, middle, up). Resampling convolutions use kernel 2
with stride 1 and one-sided padding, so the horizon length never changes.

The network predicts the clean matrix directly; the sampler converts that to
an implied noise when it needs one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .interpolation import interpolation_count

ATTENTION_MODES = ("per-block", "all", "off")


@dataclass(frozen=True)
class MatrixLayout:
    """Row layout of the plan matrix: task block, action block, observation block."""

    num_tasks: int
    num_actions: int
    obs_dim: int
    horizon: int

    @property
    def total_dim(self):
        return self.num_tasks + self.num_actions + self.obs_dim

    @property
    def task_slice(self):
        return slice(0, self.num_tasks)

    @property
    def action_slice(self):
        return slice(self.num_tasks, self.num_tasks + self.num_actions)

    @property
    def obs_slice(self):
        return slice(self.num_tasks + self.num_actions, self.total_dim)


def build_state_matrix(c_enc: torch.Tensor, v_s: torch.Tensor, v_g: torch.Tensor,
                       action_block: torch.Tensor, layout: MatrixLayout) -> torch.Tensor:
    """Assemble (B, T, C+A+O) from condition encoding, observations, and actions.

    The action block is caller-supplied: ground truth at training time, noise
    at inference. Observations occupy only the first and last rows.
    """
    if action_block.ndim != 3 or action_block.shape[1:] != (layout.horizon, layout.num_actions):
        raise ValueError(
            f"action block shape {tuple(action_block.shape)} != (B, {layout.horizon}, {layout.num_actions})"
        )
    b = action_block.shape[0]
    x = action_block.new_zeros((b, layout.horizon, layout.total_dim))
    x[:, :, layout.action_slice] = action_block
    return condition_project(x, c_enc, v_s, v_g, layout)


def condition_project(x: torch.Tensor, c_enc: torch.Tensor, v_s: torch.Tensor,
                      v_g: torch.Tensor, layout: MatrixLayout) -> torch.Tensor:
    """Overwrite the task and observation blocks, leaving actions untouched."""
    if c_enc.shape[-1] != layout.num_tasks or v_s.shape[-1] != layout.obs_dim:
        raise ValueError("condition widths do not match layout")
    out = x.clone()
    out[:, :, layout.task_slice] = c_enc.unsqueeze(1).to(x.dtype)
    out[:, :, layout.obs_slice] = 0.0
    out[:, 0, layout.obs_slice] = v_s.to(x.dtype)
    out[:, -1, layout.obs_slice] = v_g.to(x.dtype)
    return out


@dataclass(frozen=True)
class UNetConfig:
    layout: MatrixLayout
    widths: tuple = (256, 512, 1024)
    blocks_per_level: int = 2
    middle_blocks: int = 2
    latent_dim: int | None = None  # cross-attention key width; defaults to obs_dim
    time_dim: int | None = None    # defaults to widths[0]
    attention: str = "per-block"
    groups: int = 8

    def __post_init__(self):
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if len(self.widths) < 1 or self.blocks_per_level < 1:
            raise ValueError("need at least one level with one block")

    @property
    def num_levels(self):
        return len(self.widths)

    @property
    def num_residual_blocks(self):
        return interpolation_count(self.num_levels, self.blocks_per_level, self.middle_blocks)


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dim = dim

    def forward(self, n: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=n.device) / max(half - 1, 1)
        )
        args = n.float().unsqueeze(-1) * freqs
        return torch.cat([args.sin(), args.cos()], dim=-1)


class CrossAttention(nn.Module):
    """Query: per-timestep hidden tokens (already time-conditioned). Key/value:
    linear projections of latent features, one token per feature."""

    def __init__(self, channels: int, latent_dim: int):
        super().__init__()
        self.lf = nn.Linear(latent_dim, channels)
        self.scale = 1.0 / math.sqrt(latent_dim)

    def forward(self, h: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        # h: (B, C, T), features: (B, J, O_lat) with J = 1 (per-block) or M (all)
        q = h.transpose(1, 2)                     # (B, T, C)
        kv = self.lf(features)                    # (B, J, C)
        scores = torch.softmax(q @ kv.transpose(1, 2) * self.scale, dim=-1)
        return (scores @ kv).transpose(1, 2)      # (B, C, T)


class ResidualTemporalBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, latent_dim: int,
                 groups: int = 8, attention: str = "per-block"):
        super().__init__()
        g = min(groups, out_ch)
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(g, out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(g, out_ch)
        self.act = nn.Mish()
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.attention = attention
        self.attn = None if attention == "off" else CrossAttention(out_ch, latent_dim)
        self.res_conv = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        h = h + self.time_proj(t_emb).unsqueeze(-1)
        if self.attn is not None:
            h = h + self.attn(h, features)
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.res_conv(x)


class Resample(nn.Module):
    """Kernel-2 stride-1 convolution, padded on the left so length stays T."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, 2)

    def forward(self, x):
        return self.conv(nn.functional.pad(x, (1, 0)))


class PlanDenoiser(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        layout = cfg.layout
        latent_dim = cfg.latent_dim or layout.obs_dim
        time_dim = cfg.time_dim or cfg.widths[0]
        self.time_mlp = nn.Sequential(
            SinusoidalTimeEmbedding(time_dim),
            nn.Linear(time_dim, 4 * time_dim),
            nn.Mish(),
            nn.Linear(4 * time_dim, time_dim),
        )

        def block(i, o):
            return ResidualTemporalBlock(i, o, time_dim, latent_dim, cfg.groups, cfg.attention)

        widths = cfg.widths
        in_out = [(layout.total_dim, widths[0])] + [
            (widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        ]
        self.downs = nn.ModuleList()
        self.down_samples = nn.ModuleList()
        for i_ch, o_ch in in_out:
            level = nn.ModuleList([block(i_ch, o_ch)])
            for _ in range(cfg.blocks_per_level - 1):
                level.append(block(o_ch, o_ch))
            self.downs.append(level)
            self.down_samples.append(Resample(o_ch))

        self.middle = nn.ModuleList(block(widths[-1], widths[-1]) for _ in range(cfg.middle_blocks))

        self.ups = nn.ModuleList()
        self.up_samples = nn.ModuleList()
        for lvl, (i_ch, o_ch) in enumerate(reversed(in_out)):
            target = i_ch if lvl < len(in_out) - 1 else widths[0]
            level = nn.ModuleList([block(2 * o_ch, target)])
            for _ in range(cfg.blocks_per_level - 1):
                level.append(block(target, target))
            self.ups.append(level)
            self.up_samples.append(Resample(target))

        self.final = nn.Sequential(
            nn.Conv1d(widths[0], widths[0], 3, padding=1),
            nn.GroupNorm(min(cfg.groups, widths[0]), widths[0]),
            nn.Mish(),
            nn.Conv1d(widths[0], layout.total_dim, 1),
        )

    def forward(self, x: torch.Tensor, n, features: torch.Tensor) -> torch.Tensor:
        """(B, T, D), step n, (B, M, O_lat) -> predicted clean (B, T, D)."""
        m = self.cfg.num_residual_blocks
        if features.shape[1] != m:
            raise ValueError(f"got {features.shape[1]} latent features, architecture has {m} blocks")
        if isinstance(n, int):
            n = torch.full((x.shape[0],), n, device=x.device)
        t_emb = self.time_mlp(n)
        feats = iter(features.transpose(0, 1))  # M x (B, O_lat)

        def next_feature():
            f = next(feats).unsqueeze(1)  # (B, 1, O_lat)
            return features if self.cfg.attention == "all" else f

        h = x.transpose(1, 2)
        skips = []
        for level, sample in zip(self.downs, self.down_samples):
            for blk in level:
                h = blk(h, t_emb, next_feature())
            skips.append(h)
            h = sample(h)
        for blk in self.middle:
            h = blk(h, t_emb, next_feature())
        for level, sample in zip(self.ups, self.up_samples):
            h = torch.cat([h, skips.pop()], dim=1)
            for blk in level:
                h = blk(h, t_emb, next_feature())
            h = sample(h)
        return self.final(h).transpose(1, 2)
