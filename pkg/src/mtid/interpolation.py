"""Latent temporal interpolation between the start and goal observations.

A shared two-conv encoder lifts V_s and V_g into latent space, a learnable
sigmoid gate phi = sigmoid(W * tau + k) places M intermediate features on the
segment between them, and a transformer encoder stack refines the sequence.
M matches the number of residual temporal blocks in the plan denoiser, one
feature per block.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

STRATEGIES = ("learned", "copy_gs", "copy_lt", "fixed_linear")
TAU_INITS = ("constant", "linear-up", "linear-down", "square", "up-down")


@dataclass
class LatentFeatureSet:
    raw: torch.Tensor      # (B, M, O_lat) interpolations I_j
    refined: torch.Tensor  # (B, M, O_lat) transformer output F_j

    @property
    def num_features(self):
        return self.refined.shape[-2]


def interpolation_count(num_levels: int, blocks_per_level: int, middle_blocks: int) -> int:
    """One interpolated feature per residual temporal block: down + middle + up."""
    m = 2 * num_levels * blocks_per_level + middle_blocks
    if m < 1:
        raise ValueError(f"config yields {m} residual blocks, need at least 1")
    return m


def tau_init_values(kind: str, num_features: int) -> torch.Tensor:
    """Per-feature initial tau, broadcast across the latent width."""
    m = num_features
    j = torch.arange(m, dtype=torch.float64)
    ramp = j / max(m - 1, 1)
    if kind == "constant":
        v = torch.ones(m, dtype=torch.float64)
    elif kind == "linear-up":
        v = ramp
    elif kind == "linear-down":
        v = 1.0 - ramp
    elif kind == "square":
        v = ramp**2
    elif kind == "up-down":
        v = 1.0 - (2.0 * ramp - 1.0).abs()
    else:
        raise ValueError(f"unknown tau initializer {kind!r}, expected one of {TAU_INITS}")
    return v.float()


class LatentInterpolator(nn.Module):
    def __init__(
        self,
        obs_dim: int,
        num_features: int,
        latent_dim: int | None = None,
        refiner_layers: int = 6,
        refiner_heads: int = 4,
        conv_hidden: int = 8,
        strategy: str = "learned",
        tau_init: str = "constant",
        second_interpolation: int = 0,
        use_encoder: bool = True,
        use_refiner: bool = True,
    ):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
        if not use_encoder and latent_dim not in (None, obs_dim):
            raise ValueError("without the encoder, latent width must equal the observation width")
        if not 0 <= second_interpolation <= num_features // 2:
            raise ValueError(
                f"second_interpolation index {second_interpolation} outside [0, {num_features // 2}]"
            )
        self.obs_dim = obs_dim
        self.latent_dim = latent_dim or obs_dim
        self.num_features = num_features
        self.strategy = strategy
        self.second_interpolation = second_interpolation
        self.use_encoder = use_encoder
        self.use_refiner = use_refiner

        self.conv1 = nn.Conv1d(1, conv_hidden, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(conv_hidden, 1, kernel_size=3, padding=1)
        self.proj = nn.Linear(obs_dim, self.latent_dim) if self.latent_dim != obs_dim else None

        m, d = num_features, self.latent_dim
        self.W = nn.Parameter(0.02 * torch.randn(m, d))
        self.k = nn.Parameter(torch.zeros(m, d))
        self.tau = nn.Parameter(tau_init_values(tau_init, m).unsqueeze(1).expand(m, d).clone())

        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=refiner_heads,
            dim_feedforward=4 * d,
            dropout=0.0,
            batch_first=True,
        )
        self.refiner = nn.TransformerEncoder(layer, num_layers=refiner_layers)

    def encode(self, v: torch.Tensor) -> torch.Tensor:
        """(B, O) observation -> (B, O_lat) latent; identity when the encoder is off."""
        if v.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {v.shape[-1]} != {self.obs_dim}")
        if not self.use_encoder:
            return v
        h = F.relu(self.conv1(v.unsqueeze(1)))
        h = self.conv2(h).squeeze(1)
        if self.proj is not None:
            h = self.proj(h)
        return h

    def phi(self) -> torch.Tensor:
        return torch.sigmoid(self.W * self.tau + self.k)

    def interpolate(self, l_s: torch.Tensor, l_g: torch.Tensor) -> torch.Tensor:
        """(B, O_lat) x2 -> (B, M, O_lat), each row a convex mix of the endpoints."""
        m = self.num_features
        if self.strategy == "copy_gs":
            return l_g.unsqueeze(1).expand(-1, m, -1).clone()
        if self.strategy == "copy_lt":
            half = m // 2
            rows = [l_s] * half + [l_g] * (m - half)
            return torch.stack(rows, dim=1)
        if self.strategy == "fixed_linear":
            phi = torch.arange(1, m + 1, dtype=l_s.dtype, device=l_s.device) / (m + 1)
            phi = phi.view(1, m, 1)
        else:
            phi = self.phi().unsqueeze(0)
        return (1.0 - phi) * l_s.unsqueeze(1) + phi * l_g.unsqueeze(1)

    def forward(self, v_s: torch.Tensor, v_g: torch.Tensor) -> LatentFeatureSet:
        l_s = self.encode(v_s)
        l_g = self.encode(v_g)
        raw = self.interpolate(l_s, l_g)
        refined = self.refiner(raw) if self.use_refiner else raw
        if self.second_interpolation > 0:
            i = self.second_interpolation
            raw = self.interpolate(refined[:, i - 1], refined[:, self.num_features - i])
            refined = self.refiner(raw) if self.use_refiner else raw
        return LatentFeatureSet(raw=raw, refined=refined)
