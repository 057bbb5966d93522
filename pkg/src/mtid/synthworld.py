"""Synthetic procedure-planning worlds.

A world has C tasks, each owning a small scope of actions arranged in a fixed
cyclic order. A trace walks that cycle from a random phase; states live in an
O-dimensional feature space and move by a per-(task, slot) displacement at
every action. Per-task displacement sets are mean-centered (cycle closes), so
states stay near a task-specific center and the start observation alone is
informative about the task, while the start/goal difference pins the phase and
hence the intermediate actions.

Observations are the states plus Gaussian noise, standing in for clip-feature
embeddings of real instructional videos.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .storage import save_bundle, load_bundle

TASK_CENTER_SCALE = 3.0
TRACE_OFFSET_SCALE = 0.5
MIN_STEP_NORM = 0.25


class WorldError(Exception):
    """Base class for dataset generation failures."""


class InfeasibleWorldError(WorldError):
    pass


class TraceTooShortError(WorldError):
    pass


class UnsplittableTaskError(WorldError):
    pass


class DegenerateSplitError(WorldError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    num_tasks: int = 5
    num_actions: int = 25
    obs_dim: int = 32
    actions_per_task: int = 5
    plans_per_task: int = 120
    plan_length_range: tuple = (6, 10)
    obs_noise_sigma: float = 0.05
    seed: int = 0
    scope_overlap: float = 0.0  # fraction of each task's scope drawn from other tasks' actions

    def validate(self):
        if self.num_tasks < 1 or self.num_actions < 1 or self.obs_dim < 1:
            raise InfeasibleWorldError("counts must be positive")
        if self.actions_per_task < 1 or self.actions_per_task > self.num_actions:
            raise InfeasibleWorldError("actions_per_task must be in [1, num_actions]")
        lo, hi = self.plan_length_range
        if lo < 3:
            raise InfeasibleWorldError("plan_length_range.min must be >= 3")
        if hi < lo:
            raise InfeasibleWorldError("plan_length_range must be (min, max) with min <= max")
        if self.obs_noise_sigma < 0:
            raise InfeasibleWorldError("obs_noise_sigma must be >= 0")
        if not 0.0 <= self.scope_overlap < 1.0:
            raise InfeasibleWorldError("scope_overlap must be in [0, 1)")
        return self


@dataclass
class VideoTrace:
    trace_id: int
    task_id: int
    actions: np.ndarray           # (Num,) int32
    state_embeddings: np.ndarray  # (Num+1, obs_dim) float32

    def __len__(self):
        return len(self.actions)


@dataclass
class PlanningInstance:
    v_start: np.ndarray  # (obs_dim,) float32
    v_goal: np.ndarray   # (obs_dim,) float32
    actions: np.ndarray  # (horizon,) int32
    task_id: int
    horizon: int
    trace_id: int = -1
    offset: int = -1


@dataclass
class World:
    spec: WorldSpec
    scopes: np.ndarray   # (num_tasks, actions_per_task) int32, cyclic order
    traces: list

    def scope_set(self, task_id) -> set:
        return set(int(a) for a in self.scopes[task_id])


def scope_mask(scopes: np.ndarray, task_id: int, num_actions: int) -> np.ndarray:
    """Boolean (num_actions,) vector marking Task(c) membership."""
    mask = np.zeros(num_actions, dtype=bool)
    mask[scopes[task_id]] = True
    return mask


def _sample_scopes(spec: WorldSpec, rng) -> np.ndarray:
    n_shared = int(round(spec.scope_overlap * spec.actions_per_task))
    n_fresh = spec.actions_per_task - n_shared
    fresh_needed = spec.actions_per_task + (spec.num_tasks - 1) * n_fresh
    if fresh_needed > spec.num_actions:
        raise InfeasibleWorldError(
            f"{spec.num_tasks} tasks x {spec.actions_per_task} actions need "
            f"{fresh_needed} distinct ids but only {spec.num_actions} exist"
        )
    unused = list(rng.permutation(spec.num_actions))
    scopes = np.zeros((spec.num_tasks, spec.actions_per_task), dtype=np.int32)
    used: list = []
    for c in range(spec.num_tasks):
        take_shared = n_shared if c > 0 else 0
        shared = list(rng.choice(used, size=take_shared, replace=False)) if take_shared else []
        fresh = [unused.pop() for _ in range(spec.actions_per_task - take_shared)]
        row = np.array(shared + fresh, dtype=np.int32)
        scopes[c] = rng.permutation(row)
        used.extend(fresh)
    return scopes


def generate_world(spec: WorldSpec) -> World:
    """Deterministically build all traces for `spec`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    scopes = _sample_scopes(spec, rng)

    centers = rng.normal(scale=TASK_CENTER_SCALE, size=(spec.num_tasks, spec.obs_dim))
    k = spec.actions_per_task
    deltas = np.zeros((spec.num_tasks, k, spec.obs_dim))
    for c in range(spec.num_tasks):
        for _ in range(100):
            d = rng.normal(size=(k, spec.obs_dim))
            if k >= 2:
                d = d - d.mean(axis=0, keepdims=True)  # closed cycle, bounded drift
            if np.linalg.norm(d, axis=1).min() >= MIN_STEP_NORM:
                break
        else:
            raise InfeasibleWorldError("could not draw non-degenerate action steps")
        deltas[c] = d

    lo, hi = spec.plan_length_range
    traces = []
    trace_id = 0
    for c in range(spec.num_tasks):
        for _ in range(spec.plans_per_task):
            num = int(rng.integers(lo, hi + 1))
            phase = int(rng.integers(k))
            slots = (phase + np.arange(num)) % k
            actions = scopes[c][slots].astype(np.int32)
            states = np.empty((num + 1, spec.obs_dim))
            states[0] = centers[c] + rng.normal(scale=TRACE_OFFSET_SCALE, size=spec.obs_dim)
            np.cumsum(deltas[c][slots], axis=0, out=states[1:])
            states[1:] += states[0]
            traces.append(
                VideoTrace(trace_id, c, actions, states.astype(np.float32))
            )
            trace_id += 1
    return World(spec, scopes, traces)


def window_instances(trace: VideoTrace, horizon: int, obs_noise_sigma: float = 0.0, rng=None):
    """Slide a window of `horizon` actions over the trace.

    Returns Num - horizon + 1 instances; the start observation is the noisy
    state before the first windowed action and the goal the noisy state after
    the last one.
    """
    num = len(trace)
    if num < horizon:
        raise TraceTooShortError(f"trace {trace.trace_id} has {num} actions < horizon {horizon}")
    if obs_noise_sigma > 0 and rng is None:
        raise ValueError("rng required when obs_noise_sigma > 0")
    out = []
    for t0 in range(num - horizon + 1):
        v_s = trace.state_embeddings[t0].astype(np.float64)
        v_g = trace.state_embeddings[t0 + horizon].astype(np.float64)
        if obs_noise_sigma > 0:
            v_s = v_s + obs_noise_sigma * rng.normal(size=v_s.shape)
            v_g = v_g + obs_noise_sigma * rng.normal(size=v_g.shape)
        out.append(
            PlanningInstance(
                v_start=v_s.astype(np.float32),
                v_goal=v_g.astype(np.float32),
                actions=trace.actions[t0 : t0 + horizon].copy(),
                task_id=trace.task_id,
                horizon=horizon,
                trace_id=trace.trace_id,
                offset=t0,
            )
        )
    return out


def split_dataset(instances, train_fraction: float, seed: int = 0):
    """Trace-level split: every task contributes floor(train_fraction * traces) to train.

    No trace's windows appear in both splits.
    """
    if not 0 < train_fraction < 1:
        raise DegenerateSplitError(f"train_fraction {train_fraction} leaves an empty split")
    by_task: dict = {}
    for inst in instances:
        by_task.setdefault(inst.task_id, set()).add(inst.trace_id)
    rng = np.random.default_rng(seed)
    train_traces = set()
    for task_id in sorted(by_task):
        traces = sorted(by_task[task_id])
        if len(traces) < 2:
            raise UnsplittableTaskError(f"task {task_id} has {len(traces)} trace(s), need >= 2")
        n_train = int(np.floor(train_fraction * len(traces)))
        if n_train == 0 or n_train == len(traces):
            raise DegenerateSplitError(
                f"task {task_id}: fraction {train_fraction} gives {n_train} train traces of {len(traces)}"
            )
        perm = rng.permutation(len(traces))
        train_traces.update(traces[i] for i in perm[:n_train])
    train = [i for i in instances if i.trace_id in train_traces]
    test = [i for i in instances if i.trace_id not in train_traces]
    return train, test


@dataclass
class ProcedureDataset:
    spec: WorldSpec
    scopes: np.ndarray
    traces: list
    horizon: int
    train: list
    test: list
    train_fraction: float = 0.7


def build_dataset(spec: WorldSpec, horizon: int, train_fraction: float = 0.7) -> ProcedureDataset:
    """World generation + windowing + trace-level split, all seeded from the world spec."""
    if not 3 <= horizon <= 6:
        raise WorldError(f"horizon must be in [3, 6], got {horizon}")
    if spec.plan_length_range[0] < horizon:
        raise TraceTooShortError(
            f"plan_length_range min {spec.plan_length_range[0]} < horizon {horizon}"
        )
    world = generate_world(spec)
    window_rng = np.random.default_rng([spec.seed, 7])
    instances = []
    for trace in world.traces:
        instances.extend(window_instances(trace, horizon, spec.obs_noise_sigma, window_rng))
    train, test = split_dataset(instances, train_fraction, seed=spec.seed)
    return ProcedureDataset(spec, world.scopes, world.traces, horizon, train, test, train_fraction)


def _pack_instances(prefix, instances, obs_dim, horizon):
    n = len(instances)
    arrays = {
        f"{prefix}_v_start": np.stack([i.v_start for i in instances]) if n else np.zeros((0, obs_dim), np.float32),
        f"{prefix}_v_goal": np.stack([i.v_goal for i in instances]) if n else np.zeros((0, obs_dim), np.float32),
        f"{prefix}_actions": np.stack([i.actions for i in instances]).astype(np.int32) if n else np.zeros((0, horizon), np.int32),
        f"{prefix}_task": np.array([i.task_id for i in instances], dtype=np.int32),
        f"{prefix}_trace": np.array([i.trace_id for i in instances], dtype=np.int32),
        f"{prefix}_offset": np.array([i.offset for i in instances], dtype=np.int32),
    }
    return arrays


def _unpack_instances(prefix, arrays, horizon):
    n = len(arrays[f"{prefix}_task"])
    return [
        PlanningInstance(
            v_start=arrays[f"{prefix}_v_start"][i],
            v_goal=arrays[f"{prefix}_v_goal"][i],
            actions=arrays[f"{prefix}_actions"][i],
            task_id=int(arrays[f"{prefix}_task"][i]),
            horizon=horizon,
            trace_id=int(arrays[f"{prefix}_trace"][i]),
            offset=int(arrays[f"{prefix}_offset"][i]),
        )
        for i in range(n)
    ]


def save_dataset(dataset: ProcedureDataset, path) -> None:
    traces = dataset.traces
    action_lens = np.array([len(t.actions) for t in traces], dtype=np.int64)
    state_lens = np.array([t.state_embeddings.shape[0] for t in traces], dtype=np.int64)
    arrays = {
        "scopes": dataset.scopes.astype(np.int32),
        "trace_task": np.array([t.task_id for t in traces], dtype=np.int32),
        "trace_action_lens": action_lens,
        "trace_actions_flat": (
            np.concatenate([t.actions for t in traces]) if traces else np.zeros(0, np.int32)
        ).astype(np.int32),
        "trace_states_flat": (
            np.concatenate([t.state_embeddings.reshape(-1) for t in traces])
            if traces
            else np.zeros(0, np.float32)
        ).astype(np.float32),
        "trace_state_lens": state_lens,
    }
    arrays.update(_pack_instances("train", dataset.train, dataset.spec.obs_dim, dataset.horizon))
    arrays.update(_pack_instances("test", dataset.test, dataset.spec.obs_dim, dataset.horizon))
    meta = {
        "kind": "mtid-dataset",
        "spec": asdict(dataset.spec),
        "horizon": dataset.horizon,
        "train_fraction": dataset.train_fraction,
        "train_trace_ids": sorted({i.trace_id for i in dataset.train}),
    }
    save_bundle(path, arrays, meta)


def load_dataset(path) -> ProcedureDataset:
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "mtid-dataset":
        raise WorldError(f"{path} is not a dataset bundle")
    spec_dict = dict(meta["spec"])
    spec_dict["plan_length_range"] = tuple(spec_dict["plan_length_range"])
    spec = WorldSpec(**spec_dict)
    horizon = int(meta["horizon"])
    traces = []
    a_ofs = 0
    s_ofs = 0
    for tid, (alen, slen) in enumerate(zip(arrays["trace_action_lens"], arrays["trace_state_lens"])):
        alen, slen = int(alen), int(slen)
        actions = arrays["trace_actions_flat"][a_ofs : a_ofs + alen]
        states = arrays["trace_states_flat"][s_ofs : s_ofs + slen * spec.obs_dim].reshape(slen, spec.obs_dim)
        traces.append(VideoTrace(tid, int(arrays["trace_task"][tid]), actions, states))
        a_ofs += alen
        s_ofs += slen * spec.obs_dim
    return ProcedureDataset(
        spec=spec,
        scopes=arrays["scopes"],
        traces=traces,
        horizon=horizon,
        train=_unpack_instances("train", arrays, horizon),
        test=_unpack_instances("test", arrays, horizon),
        train_fraction=float(meta["train_fraction"]),
    )
