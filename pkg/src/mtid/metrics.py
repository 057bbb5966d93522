"""Plan evaluation metrics.

SR / mAcc / mIoU follow the batch-size-one convention: mIoU is computed per
sequence against its own ground truth, then averaged. The uncertainty metrics
group test instances by identical (start, goal) observation pairs and compare
the empirical distribution of sampled plans against the ground-truth plan
multiset of the group; smoothing and support conventions are local definitions
(add-one over the union support, natural log).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


@dataclass
class PlanEvalReport:
    success_rate: float
    mean_accuracy: float
    mean_iou: float
    n_instances: int
    per_horizon: dict = field(default_factory=dict)  # horizon -> (SR, mAcc, mIoU, n)

    def summary(self) -> str:
        lines = [
            f"instances {self.n_instances}  SR {self.success_rate:.4f}  "
            f"mAcc {self.mean_accuracy:.4f}  mIoU {self.mean_iou:.4f}"
        ]
        for h in sorted(self.per_horizon):
            sr, acc, iou, n = self.per_horizon[h]
            lines.append(f"  T={h}: n={n}  SR {sr:.4f}  mAcc {acc:.4f}  mIoU {iou:.4f}")
        return "\n".join(lines)


@dataclass
class UncertaintyReport:
    kl_div: float
    nll: float
    mode_precision: float
    mode_recall: float
    samples_per_instance: int
    n_groups: int = 0

    def summary(self) -> str:
        return (
            f"groups {self.n_groups}  K {self.samples_per_instance}  "
            f"KL {self.kl_div:.4f}  NLL {self.nll:.4f}  "
            f"ModePrec {self.mode_precision:.4f}  ModeRec {self.mode_recall:.4f}"
        )


def _check_aligned(pred, gt):
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions vs {len(gt)} ground truths")
    if len(pred) == 0:
        raise ValueError("empty instance list")
    for p, g in zip(pred, gt):
        if len(p) != len(g):
            raise ValueError(f"horizon mismatch: {len(p)} vs {len(g)}")


def success_rate(pred, gt) -> float:
    _check_aligned(pred, gt)
    hits = sum(1 for p, g in zip(pred, gt) if np.array_equal(np.asarray(p), np.asarray(g)))
    return hits / len(pred)


def mean_accuracy(pred, gt) -> float:
    _check_aligned(pred, gt)
    correct = 0
    total = 0
    for p, g in zip(pred, gt):
        correct += int((np.asarray(p) == np.asarray(g)).sum())
        total += len(g)
    return correct / total


def mean_iou(pred, gt) -> float:
    _check_aligned(pred, gt)
    ious = []
    for p, g in zip(pred, gt):
        ps, gs = set(np.asarray(p).tolist()), set(np.asarray(g).tolist())
        ious.append(len(ps & gs) / len(ps | gs))
    return float(np.mean(ious))


def evaluate_plans(pred, gt) -> PlanEvalReport:
    _check_aligned(pred, gt)
    by_h: dict = {}
    for p, g in zip(pred, gt):
        by_h.setdefault(len(g), ([], []))
        by_h[len(g)][0].append(p)
        by_h[len(g)][1].append(g)
    per_horizon = {
        h: (success_rate(ps, gs), mean_accuracy(ps, gs), mean_iou(ps, gs), len(gs))
        for h, (ps, gs) in by_h.items()
    }
    return PlanEvalReport(
        success_rate=success_rate(pred, gt),
        mean_accuracy=mean_accuracy(pred, gt),
        mean_iou=mean_iou(pred, gt),
        n_instances=len(pred),
        per_horizon=per_horizon,
    )


def _plan_key(plan) -> tuple:
    return tuple(int(a) for a in np.asarray(plan).reshape(-1))


def group_by_goal(v_starts, v_goals, decimals: int = 4) -> list:
    """Indices of instances sharing a rounded (start, goal) observation pair."""
    groups: dict = {}
    for i, (vs, vg) in enumerate(zip(v_starts, v_goals)):
        key = (
            tuple(np.round(np.asarray(vs, dtype=np.float64), decimals).tolist()),
            tuple(np.round(np.asarray(vg, dtype=np.float64), decimals).tolist()),
        )
        groups.setdefault(key, []).append(i)
    return list(groups.values())


def uncertainty_metrics(sampled_plans, gt_plans, groups=None) -> UncertaintyReport:
    """Distributional comparison of K sampled plans per instance vs ground truth.

    sampled_plans: list (per instance) of K plans; gt_plans: aligned list of
    ground-truth plans. `groups` is a list of index lists (instances believed
    to share a goal pair); default is one group per instance. Per group the
    ground-truth multiset defines q and the pooled samples define p-hat, both
    add-one smoothed over the union of distinct plans; KL(q || p-hat) and NLL
    of gt plans under p-hat are averaged over groups, as are mode precision
    (samples that are some gt mode) and recall (gt modes hit by a sample).
    """
    if len(sampled_plans) != len(gt_plans):
        raise ValueError(f"{len(sampled_plans)} sample sets vs {len(gt_plans)} ground truths")
    if len(gt_plans) == 0:
        raise ValueError("empty instance list")
    k = len(sampled_plans[0])
    if k < 1:
        raise ValueError("need at least one sample per instance")
    if groups is None:
        groups = [[i] for i in range(len(gt_plans))]

    kls, nlls, precs, recs = [], [], [], []
    for idxs in groups:
        gt_counts = Counter(_plan_key(gt_plans[i]) for i in idxs)
        samp_counts: Counter = Counter()
        for i in idxs:
            samp_counts.update(_plan_key(p) for p in sampled_plans[i])
        support = sorted(set(gt_counts) | set(samp_counts))
        n_gt = sum(gt_counts.values())
        n_samp = sum(samp_counts.values())
        q = np.array([(gt_counts[p] + 1) / (n_gt + len(support)) for p in support])
        p_hat = np.array([(samp_counts[p] + 1) / (n_samp + len(support)) for p in support])
        kls.append(float(np.sum(q * np.log(q / p_hat))))
        gt_idx = {p: j for j, p in enumerate(support)}
        nlls.append(
            float(
                -np.mean([np.log(p_hat[gt_idx[_plan_key(gt_plans[i])]]) for i in idxs])
            )
        )
        modes = set(gt_counts)
        precs.append(sum(samp_counts[p] for p in modes) / n_samp)
        recs.append(sum(1 for p in modes if samp_counts[p] > 0) / len(modes))

    return UncertaintyReport(
        kl_div=float(np.mean(kls)),
        nll=float(np.mean(nlls)),
        mode_precision=float(np.mean(precs)),
        mode_recall=float(np.mean(recs)),
        samples_per_instance=k,
        n_groups=len(groups),
    )


def write_plan_records(path, records) -> None:
    """One line per plan: instance_id horizon gt_ids.. | pred_ids.. (space-delimited)."""
    with open(path, "w") as fh:
        fh.write("# instance_id horizon gt... | pred...\n")
        for inst_id, gt, pred in records:
            gt_s = " ".join(str(int(a)) for a in gt)
            pr_s = " ".join(str(int(a)) for a in pred)
            fh.write(f"{inst_id} {len(gt)} {gt_s} | {pr_s}\n")


def read_plan_records(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            left, right = line.split("|")
            parts = left.split()
            inst_id, horizon = int(parts[0]), int(parts[1])
            gt = [int(a) for a in parts[2:]]
            pred = [int(a) for a in right.split()]
            if len(gt) != horizon or len(pred) != horizon:
                raise ValueError(f"malformed plan record: {line!r}")
            records.append((inst_id, gt, pred))
    return records
