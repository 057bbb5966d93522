"""Two-stage training, DDIM sampling with condition projection, checkpoints.

Stage one trains the task classifier with cross-entropy; stage two trains the
interpolator and denoiser jointly against the task-adaptive proximity loss on
single-step clean-matrix predictions at uniformly sampled diffusion steps.
Training uses ground-truth task labels; sampling uses classifier predictions.

During training, forward noise touches only the action block, and only its
task-active columns when masking is on; condition blocks stay clean. During
sampling, condition projection restores them after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field, replace

import numpy as np
import torch

from . import metrics
from .classifier import ClassifierConfig, TaskClassifier, classify, train_classifier
from .denoiser import MatrixLayout, PlanDenoiser, UNetConfig, build_state_matrix, condition_project
from .interpolation import LatentInterpolator, interpolation_count
from .objective import loss_weight_vector, mask_weight_matrix, action_mask, one_hot_actions, proximity_loss
from .schedule import (
    NoiseSchedule,
    cosine_schedule,
    ddim_step,
    ddim_time_steps,
    forward_diffuse,
    implied_noise,
    schedule_arrays,
    schedule_from_arrays,
)
from .storage import save_bundle, load_bundle

MASK_MODES = ("init", "iteration", "none")


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple = (32, 64, 128)
    blocks_per_level: int = 2
    middle_blocks: int = 2
    attention: str = "per-block"  # per-block | all | off
    latent_dim: int | None = None
    refiner_layers: int = 6
    refiner_heads: int = 4
    conv_hidden: int = 8
    strategy: str = "learned"
    tau_init: str = "constant"
    second_interpolation: int = 0
    use_encoder: bool = True
    use_refiner: bool = True
    classifier_embed: int = 128
    classifier_layers: int = 4
    classifier_heads: int = 4
    classifier_dropout: float = 0.1

    @property
    def num_features(self):
        return interpolation_count(len(self.widths), self.blocks_per_level, self.middle_blocks)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 5000
    warmup_steps: int = 1000
    peak_lr: float = 3e-4
    milestones: tuple = (2666, 4332)
    batch_size: int = 64
    seed: int = 0
    diffusion_steps: int = 50
    schedule_s: float = 0.008
    loss_variant: str = "gradient"       # mse | both-sides | gradient
    w0: float = 10.0
    mask_loss: str = "relevant-penalty"  # off | relevant-penalty | literal
    rho: float = 2.0
    mask_mode: str = "init"              # init | iteration | none
    ddim_steps: int = 10
    classifier_epochs: int = 15
    classifier_lr: float = 1e-3

    def validate(self):
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup must be shorter than total training")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be ascending")
        if self.peak_lr <= 0:
            raise ValueError("peak learning rate must be positive")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        return self


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to peak, then halved at each milestone."""
    if step < 0:
        raise ValueError("negative step")
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    halvings = sum(1 for m in cfg.milestones if step >= m)
    return cfg.peak_lr * 0.5**halvings


@dataclass
class PlannerModels:
    layout: MatrixLayout
    scopes: np.ndarray
    classifier: TaskClassifier
    interpolator: LatentInterpolator
    denoiser: PlanDenoiser
    schedule: NoiseSchedule
    model_config: ModelConfig
    train_config: TrainConfig

    def eval_mode(self):
        self.classifier.eval()
        self.interpolator.eval()
        self.denoiser.eval()
        return self

    def active_columns(self) -> np.ndarray:
        """(C, A) boolean: which action columns each task may use."""
        out = np.zeros((self.layout.num_tasks, self.layout.num_actions), dtype=bool)
        for c in range(self.layout.num_tasks):
            out[c, np.asarray(self.scopes[c], dtype=int)] = True
        return out


def build_models(layout: MatrixLayout, scopes: np.ndarray,
                 model_cfg: ModelConfig = ModelConfig(),
                 train_cfg: TrainConfig = TrainConfig()) -> PlannerModels:
    train_cfg.validate()
    torch.manual_seed(train_cfg.seed)
    clf = TaskClassifier(
        ClassifierConfig(
            obs_dim=layout.obs_dim,
            num_tasks=layout.num_tasks,
            embed_dim=model_cfg.classifier_embed,
            num_layers=model_cfg.classifier_layers,
            num_heads=model_cfg.classifier_heads,
            dropout=model_cfg.classifier_dropout,
        )
    )
    interp = LatentInterpolator(
        obs_dim=layout.obs_dim,
        num_features=model_cfg.num_features,
        latent_dim=model_cfg.latent_dim,
        refiner_layers=model_cfg.refiner_layers,
        refiner_heads=model_cfg.refiner_heads,
        conv_hidden=model_cfg.conv_hidden,
        strategy=model_cfg.strategy,
        tau_init=model_cfg.tau_init,
        second_interpolation=model_cfg.second_interpolation,
        use_encoder=model_cfg.use_encoder,
        use_refiner=model_cfg.use_refiner,
    )
    unet = PlanDenoiser(
        UNetConfig(
            layout=layout,
            widths=tuple(model_cfg.widths),
            blocks_per_level=model_cfg.blocks_per_level,
            middle_blocks=model_cfg.middle_blocks,
            latent_dim=model_cfg.latent_dim or layout.obs_dim,
            attention=model_cfg.attention,
        )
    )
    sched = cosine_schedule(train_cfg.diffusion_steps, train_cfg.schedule_s)
    return PlannerModels(layout, np.asarray(scopes), clf, interp, unet, sched, model_cfg, train_cfg)


def _pack(instances):
    v_s = torch.as_tensor(np.stack([i.v_start for i in instances]), dtype=torch.float32)
    v_g = torch.as_tensor(np.stack([i.v_goal for i in instances]), dtype=torch.float32)
    actions = np.stack([i.actions for i in instances]).astype(np.int64)
    tasks = np.array([i.task_id for i in instances], dtype=np.int64)
    return v_s, v_g, actions, tasks


def task_one_hot(task_ids, num_tasks) -> torch.Tensor:
    ids = torch.as_tensor(np.asarray(task_ids), dtype=torch.long)
    return torch.nn.functional.one_hot(ids, num_tasks).float()


@dataclass
class TrainState:
    optimizer: torch.optim.Adam
    step: int = 0
    losses: list = field(default_factory=list)
    generator: torch.Generator | None = None


def _diffusion_parameters(models: PlannerModels):
    return list(models.interpolator.parameters()) + list(models.denoiser.parameters())


def init_train_state(models: PlannerModels, cfg: TrainConfig) -> TrainState:
    opt = torch.optim.Adam(_diffusion_parameters(models), lr=cfg.peak_lr, weight_decay=0.0)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    return TrainState(optimizer=opt, generator=gen)


def train_diffusion(models: PlannerModels, instances, cfg: TrainConfig,
                    state: TrainState | None = None, num_steps: int | None = None):
    """Stage-two training loop; returns the TrainState with its loss curve.

    Resumable: pass the state back in to continue exactly where it stopped.
    """
    cfg.validate()
    if len(instances) == 0:
        raise ValueError("empty training set")
    if state is None:
        state = init_train_state(models, cfg)
    layout = models.layout
    sched = models.schedule
    v_s, v_g, actions, tasks = _pack(instances)
    a_bar = torch.as_tensor(one_hot_actions(actions, layout.num_actions), dtype=torch.float32)
    c_enc = task_one_hot(tasks, layout.num_tasks)
    x0 = build_state_matrix(c_enc, v_s, v_g, a_bar, layout)

    active = torch.as_tensor(models.active_columns())[tasks]  # (N, A) bool
    w = loss_weight_vector(layout.horizon, cfg.loss_variant, cfg.w0)
    mask_rows = np.stack(
        [
            mask_weight_matrix(
                action_mask(models.scopes, c, layout.horizon, layout.num_actions, cfg.rho),
                cfg.mask_loss,
            )
            for c in range(layout.num_tasks)
        ]
    )
    m_all = torch.as_tensor(mask_rows, dtype=torch.float32)[tasks]  # (N, T, A)

    models.interpolator.train()
    models.denoiser.train()
    n_data = len(instances)
    end_step = state.step + (num_steps if num_steps is not None else cfg.total_steps - state.step)
    end_step = min(end_step, cfg.total_steps)
    while state.step < end_step:
        lr = lr_schedule(state.step, cfg)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        idx = torch.randint(0, n_data, (min(cfg.batch_size, n_data),), generator=state.generator)
        n = torch.randint(1, sched.num_steps + 1, (len(idx),), generator=state.generator)
        eps = torch.randn((len(idx), layout.horizon, layout.num_actions), generator=state.generator)
        if cfg.mask_mode != "none":
            eps = eps * active[idx].unsqueeze(1)
        x_n = x0[idx].clone()
        x_n[:, :, layout.action_slice] = forward_diffuse(
            x0[idx][:, :, layout.action_slice], n, eps, sched
        )
        feats = models.interpolator(v_s[idx], v_g[idx]).refined
        pred = models.denoiser(x_n, n, feats)
        loss = proximity_loss(
            pred[:, :, layout.action_slice], a_bar[idx], w, m_all[idx]
        ).mean()
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged: non-finite loss at step {state.step}")
        state.optimizer.zero_grad()
        loss.backward()
        state.optimizer.step()
        state.losses.append(float(loss.detach()))
        state.step += 1
    return state


def train_stage_one(models: PlannerModels, train_instances, val_instances, cfg: TrainConfig):
    """Classifier training; returns the held-out accuracy curve."""
    return train_classifier(
        models.classifier,
        train_instances,
        val_instances,
        epochs=cfg.classifier_epochs,
        lr=cfg.classifier_lr,
        seed=cfg.seed,
    )


def decode_actions(action_block) -> np.ndarray:
    """Per-row argmax over the full action dimension; ties go to the lowest id."""
    block = np.asarray(
        action_block.detach().cpu().numpy() if isinstance(action_block, torch.Tensor) else action_block
    )
    return np.argmax(block, axis=-1).astype(np.int32)


def sample_plans(models: PlannerModels, v_s, v_g, num_samples: int = 1,
                 mask_mode: str = "init", ddim_steps: int | None = None,
                 rng: np.random.Generator | None = None):
    """DDIM sampling with condition projection after every step.

    mask_mode "init" draws the starting action noise only on the predicted
    task's columns; "none" starts from unrestricted Gaussian noise;
    "iteration" re-applies the masked projection after every step, which
    replaces the evolving action block with fresh masked noise and wrecks
    accuracy by design (kept as an ablation). Returns (plans (B, num_samples,
    T) int32, predicted task ids (B,)).
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mask_mode!r}, expected one of {MASK_MODES}")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = rng or np.random.default_rng(0)
    ddim_steps = ddim_steps or models.train_config.ddim_steps
    layout, sched = models.layout, models.schedule
    models.eval_mode()
    v_s = torch.as_tensor(np.asarray(v_s), dtype=torch.float32)
    v_g = torch.as_tensor(np.asarray(v_g), dtype=torch.float32)
    b = v_s.shape[0]

    with torch.no_grad():
        c_pred, _ = classify(models.classifier, v_s, v_g)
        c_enc = task_one_hot(c_pred, layout.num_tasks)
        active = models.active_columns()[c_pred.numpy()]  # (B, A)
        feats = models.interpolator(v_s, v_g).refined
        ns = ddim_time_steps(sched.num_steps, ddim_steps)

        def masked_noise():
            noise = rng.standard_normal((b, layout.horizon, layout.num_actions))
            if mask_mode != "none":
                noise = noise * active[:, None, :]
            return torch.as_tensor(noise, dtype=torch.float32)

        plans = np.zeros((b, num_samples, layout.horizon), dtype=np.int32)
        for s in range(num_samples):
            x = build_state_matrix(c_enc, v_s, v_g, masked_noise(), layout)
            for i, n in enumerate(ns):
                n_prev = ns[i + 1] if i + 1 < len(ns) else 0
                x0_pred = models.denoiser(x, n, feats)
                f = implied_noise(x, x0_pred, n, sched)
                x = ddim_step(x, n, f, sched, n_prev)
                x = condition_project(x, c_enc, v_s, v_g, layout)
                if mask_mode == "iteration":
                    x[:, :, layout.action_slice] = masked_noise()
            plans[:, s] = decode_actions(x[:, :, layout.action_slice])
    return plans, c_pred.numpy().astype(np.int32)


def evaluate_planner(models: PlannerModels, instances, mask_mode: str = "init",
                     ddim_steps: int | None = None, seed: int = 0,
                     batch_size: int = 1024):
    """One deterministic plan per instance, scored against ground truth."""
    rng = np.random.default_rng(seed)
    preds = []
    gts = []
    for lo in range(0, len(instances), batch_size):
        chunk = instances[lo : lo + batch_size]
        v_s = np.stack([i.v_start for i in chunk])
        v_g = np.stack([i.v_goal for i in chunk])
        plans, _ = sample_plans(models, v_s, v_g, 1, mask_mode, ddim_steps, rng)
        preds.extend(plans[:, 0].tolist())
        gts.extend(np.asarray(i.actions).tolist() for i in chunk)
    return metrics.evaluate_plans(preds, gts), preds


def random_plans(instances, num_actions: int, rng: np.random.Generator):
    """Uniform-random baseline plans aligned with `instances`."""
    return [rng.integers(0, num_actions, size=len(i.actions)).tolist() for i in instances]


# --- checkpointing ---------------------------------------------------------


def _state_dict_arrays(prefix: str, module: torch.nn.Module) -> dict:
    return {
        f"{prefix}.{k}": v.detach().cpu().numpy().copy()
        for k, v in module.state_dict().items()
    }


def _load_state_dict(prefix: str, module: torch.nn.Module, arrays: dict):
    sd = {}
    plen = len(prefix) + 1
    for k, v in arrays.items():
        if k.startswith(prefix + "."):
            sd[k[plen:]] = torch.as_tensor(v.copy())
    module.load_state_dict(sd)


def save_checkpoint(path, models: PlannerModels, state: TrainState | None = None,
                    extra_meta: dict | None = None) -> None:
    arrays = {"scopes": np.asarray(models.scopes, dtype=np.int32)}
    arrays.update(_state_dict_arrays("classifier", models.classifier))
    arrays.update(_state_dict_arrays("interpolator", models.interpolator))
    arrays.update(_state_dict_arrays("denoiser", models.denoiser))
    arrays.update(schedule_arrays(models.schedule))
    meta = {
        "kind": "mtid-checkpoint",
        "layout": asdict(models.layout),
        "model_config": asdict(models.model_config),
        "train_config": asdict(models.train_config),
        "step": state.step if state else None,
        "losses": state.losses if state else [],
        "seed": models.train_config.seed,
    }
    if state is not None:
        arrays["opt.generator_state"] = state.generator.get_state().numpy().copy()
        opt_state = state.optimizer.state_dict()["state"]
        for i, p_state in opt_state.items():
            for name, val in p_state.items():
                key = f"opt.{i}.{name}"
                if isinstance(val, torch.Tensor):
                    arrays[key] = val.detach().cpu().numpy().copy().reshape(
                        val.shape if val.ndim else (1,)
                    )
                else:
                    arrays[key] = np.array([val], dtype=np.float64)
    if extra_meta:
        meta.update(extra_meta)
    save_bundle(path, arrays, meta)


def load_checkpoint(path):
    """Returns (PlannerModels, TrainState or None)."""
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "mtid-checkpoint":
        raise ValueError(f"{path} is not a checkpoint bundle")
    layout = MatrixLayout(**meta["layout"])
    mc = dict(meta["model_config"])
    mc["widths"] = tuple(mc["widths"])
    model_cfg = ModelConfig(**mc)
    tc = dict(meta["train_config"])
    tc["milestones"] = tuple(tc["milestones"])
    train_cfg = TrainConfig(**tc)
    models = build_models(layout, arrays["scopes"], model_cfg, train_cfg)
    models.schedule = schedule_from_arrays(arrays)
    _load_state_dict("classifier", models.classifier, arrays)
    _load_state_dict("interpolator", models.interpolator, arrays)
    _load_state_dict("denoiser", models.denoiser, arrays)

    state = None
    if "opt.generator_state" in arrays:
        state = init_train_state(models, train_cfg)
        state.step = int(meta["step"])
        state.losses = list(meta["losses"])
        state.generator.set_state(torch.as_tensor(arrays["opt.generator_state"].copy()))
        opt_entries = {}
        for key, val in arrays.items():
            if key.startswith("opt.") and key != "opt.generator_state":
                _, idx, name = key.split(".", 2)
                opt_entries.setdefault(int(idx), {})[name] = val
        opt_state = {}
        for i, entry in opt_entries.items():
            fixed = {}
            for name, val in entry.items():
                t = torch.as_tensor(val.copy())
                if name == "step":
                    t = t.reshape(()).float()
                fixed[name] = t
            opt_state[i] = fixed
        # keep the freshly built optimizer's param_groups; only the per-param
        # moment state comes from the checkpoint
        groups = state.optimizer.state_dict()["param_groups"]
        state.optimizer.load_state_dict({"state": opt_state, "param_groups": groups})
    return models, state
