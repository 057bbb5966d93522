"""Stage-one task classifier.

The observation pair enters a small transformer encoder as a 2-token sequence
(start token, goal token); the mean-pooled encoding feeds a perceptron head
over task classes. Trained with plain cross-entropy before the diffusion
stage, frozen afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass(frozen=True)
class ClassifierConfig:
    obs_dim: int
    num_tasks: int
    embed_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    dropout: float = 0.1
    head_hidden: int = 128


class TaskClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.obs_dim, cfg.embed_dim)
        self.pos = nn.Parameter(0.02 * torch.randn(2, cfg.embed_dim))
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.embed_dim,
            nhead=cfg.num_heads,
            dim_feedforward=4 * cfg.embed_dim,
            dropout=cfg.dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.num_layers)
        self.head = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.head_hidden),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, cfg.num_tasks),
        )

    def forward(self, v_s: torch.Tensor, v_g: torch.Tensor) -> torch.Tensor:
        if v_s.shape[-1] != self.cfg.obs_dim:
            raise ValueError(f"observation width {v_s.shape[-1]} != {self.cfg.obs_dim}")
        tokens = torch.stack([v_s, v_g], dim=1)  # (B, 2, O), order is informative
        h = self.embed(tokens) + self.pos
        h = self.encoder(h).mean(dim=1)
        return self.head(h)


def classify(model: TaskClassifier, v_s: torch.Tensor, v_g: torch.Tensor):
    """Returns (predicted class ids, logits); runs in eval mode."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        logits = model(v_s, v_g)
    if was_training:
        model.train()
    return logits.argmax(dim=-1), logits


def train_classifier(
    model: TaskClassifier,
    train_instances,
    val_instances,
    epochs: int = 20,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
):
    """Cross-entropy training; returns per-epoch held-out accuracy."""
    if len(train_instances) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    ce = nn.CrossEntropyLoss()

    def pack(instances):
        v_s = torch.as_tensor(np.stack([i.v_start for i in instances]), dtype=torch.float32)
        v_g = torch.as_tensor(np.stack([i.v_goal for i in instances]), dtype=torch.float32)
        y = torch.as_tensor(np.array([i.task_id for i in instances]), dtype=torch.long)
        return v_s, v_g, y

    tr_s, tr_g, tr_y = pack(train_instances)
    va_s, va_g, va_y = pack(val_instances) if len(val_instances) else (None, None, None)

    curve = []
    n = len(train_instances)
    for _ in range(epochs):
        model.train()
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = torch.as_tensor(order[lo : lo + batch_size].copy())
            loss = ce(model(tr_s[idx], tr_g[idx]), tr_y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        if va_s is not None:
            pred, _ = classify(model, va_s, va_g)
            curve.append(float((pred == va_y).float().mean()))
    return curve
