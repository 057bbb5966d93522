"""Command-line operator surface.

Subcommands: gen-data, train, eval, sweep, plot. Each run directory gets the
fully resolved configuration written next to its artifacts. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import metrics, pipeline, synthworld
from .storage import StorageError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _build(dc_type, overrides: dict, **extra):
    merged = dict(overrides or {})
    merged.update(extra)
    try:
        obj = dc_type(**{k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()})
    except TypeError as e:
        raise ConfigError(f"bad {dc_type.__name__} fields: {e}") from e
    return obj


def _data_dir(args) -> Path:
    path = getattr(args, "data", None) or os.environ.get("MTID_DATA_DIR")
    if not path:
        raise ConfigError("no dataset path: pass --data or set MTID_DATA_DIR")
    root = Path(path)
    for cand in (root, root / "dataset"):
        if (cand / "manifest.json").exists():
            return cand
    raise synthworld.WorldError(f"no dataset manifest under {root}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, payload: dict):
    payload = dict(payload)
    payload["argv"] = sys.argv[1:]
    with open(out / "run_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)


def _write_report(path, label: str, report, extra: dict | None = None):
    with open(path, "w") as fh:
        fh.write("# mtid-report\n")
        fh.write(f"label {label}\n")
        fh.write(f"instances {report.n_instances}\n")
        fh.write(f"SR {report.success_rate:.6f}\n")
        fh.write(f"mAcc {report.mean_accuracy:.6f}\n")
        fh.write(f"mIoU {report.mean_iou:.6f}\n")
        for key, val in (extra or {}).items():
            fh.write(f"{key} {val}\n")


def parse_report(path) -> dict:
    out = {}
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "# mtid-report":
            raise ConfigError(f"{path} is not a report file")
        for line in fh:
            parts = line.strip().split(None, 1)
            if len(parts) == 2:
                key, val = parts
                try:
                    out[key] = float(val)
                except ValueError:
                    out[key] = val
    return out


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    spec = _build(synthworld.WorldSpec, cfg.get("world"), seed=args.seed)
    try:
        dataset = synthworld.build_dataset(
            spec, args.horizon, cfg.get("train_fraction", 0.7)
        )
    except synthworld.WorldError as e:
        # an unrealizable world is a configuration problem, not a data one
        raise ConfigError(str(e)) from e
    out = _out_dir(args)
    synthworld.save_dataset(dataset, out / "dataset")
    _write_run_config(out, {"world": asdict(spec), "horizon": args.horizon})
    print(
        f"dataset: {spec.num_tasks} tasks, {spec.num_actions} actions, "
        f"{len(dataset.traces)} traces, horizon {args.horizon}, "
        f"{len(dataset.train)} train / {len(dataset.test)} test instances"
    )
    print(f"written to {out / 'dataset'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dataset = synthworld.load_dataset(_data_dir(args))
    layout = pipeline.MatrixLayout(
        num_tasks=dataset.spec.num_tasks,
        num_actions=dataset.spec.num_actions,
        obs_dim=dataset.spec.obs_dim,
        horizon=dataset.horizon,
    )
    model_cfg = _build(pipeline.ModelConfig, cfg.get("model"))
    train_cfg = _build(
        pipeline.TrainConfig,
        cfg.get("train"),
        seed=args.seed,
        loss_variant=args.loss,
        mask_loss=args.mask_loss,
        mask_mode=args.mask_mode,
    )
    out = _out_dir(args)

    if args.resume:
        models, state = pipeline.load_checkpoint(args.resume)
        if state is None:
            raise ConfigError(f"{args.resume} has no optimizer state to resume from")
        train_cfg = models.train_config
    else:
        models = pipeline.build_models(layout, dataset.scopes, model_cfg, train_cfg)
        state = None

    t0 = time.time()
    if args.stage in ("classifier", "both") and not args.resume:
        curve = pipeline.train_stage_one(models, dataset.train, dataset.test, train_cfg)
        np.savetxt(out / "classifier_curve.txt", np.asarray(curve))
        print(f"classifier: final held-out accuracy {curve[-1]:.4f}")
    if args.stage in ("diffusion", "both") or args.resume:
        state = pipeline.train_diffusion(models, dataset.train, train_cfg, state=state)
        np.savetxt(out / "loss_curve.txt", np.asarray(state.losses))
        print(f"diffusion: {state.step} steps, final loss {state.losses[-1]:.4f}")
    pipeline.save_checkpoint(out / "checkpoint", models, state)
    _write_run_config(
        out,
        {
            "model": asdict(models.model_config),
            "train": asdict(models.train_config),
            "data": str(_data_dir(args)),
            "stage": args.stage,
            "seconds": round(time.time() - t0, 1),
        },
    )
    print(f"checkpoint written to {out / 'checkpoint'} ({time.time() - t0:.0f}s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = synthworld.load_dataset(_data_dir(args))
    models, _ = pipeline.load_checkpoint(args.checkpoint)
    if models.layout.horizon != dataset.horizon:
        raise synthworld.WorldError(
            f"checkpoint horizon {models.layout.horizon} != dataset horizon {dataset.horizon}"
        )
    out = _out_dir(args)
    ddim_steps = args.ddim_steps or models.train_config.ddim_steps
    t0 = time.time()
    report, preds = pipeline.evaluate_planner(
        models, dataset.test, mask_mode=args.mask_mode, ddim_steps=ddim_steps, seed=args.seed
    )
    seconds = time.time() - t0
    label = f"mask={args.mask_mode},ddim={ddim_steps}"
    _write_report(out / "report.txt", label, report, {"seconds": f"{seconds:.2f}"})
    metrics.write_plan_records(
        out / "plans.txt",
        [(i, inst.actions, pred) for i, (inst, pred) in enumerate(zip(dataset.test, preds))],
    )
    print(report.summary())
    print(f"sampling time {seconds:.2f}s at {ddim_steps} DDIM steps")

    if args.uncertainty:
        rng = np.random.default_rng(args.seed)
        subset = dataset.test[: min(len(dataset.test), 200)]
        v_s = np.stack([i.v_start for i in subset])
        v_g = np.stack([i.v_goal for i in subset])
        plans, _ = pipeline.sample_plans(
            models, v_s, v_g, num_samples=args.uncertainty,
            mask_mode=args.mask_mode, ddim_steps=ddim_steps, rng=rng,
        )
        groups = metrics.group_by_goal(v_s, v_g)
        ureport = metrics.uncertainty_metrics(
            [plans[i] for i in range(len(subset))],
            [i.actions for i in subset],
            groups,
        )
        with open(out / "uncertainty.txt", "w") as fh:
            fh.write("# mtid-uncertainty\n")
            fh.write(f"KL {ureport.kl_div:.6f}\nNLL {ureport.nll:.6f}\n")
            fh.write(f"ModePrec {ureport.mode_precision:.6f}\nModeRec {ureport.mode_recall:.6f}\n")
            fh.write(f"K {ureport.samples_per_instance}\ngroups {ureport.n_groups}\n")
        print(ureport.summary())

    _write_run_config(
        out,
        {
            "checkpoint": args.checkpoint,
            "mask_mode": args.mask_mode,
            "ddim_steps": ddim_steps,
            "uncertainty": args.uncertainty,
        },
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Config-matrix ablation driver: loss variants x mask modes x strategies."""
    cfg = _load_config(args.config)
    matrix = cfg.get("matrix", {})
    losses = matrix.get("loss", [args.loss])
    mask_modes = matrix.get("mask_mode", [args.mask_mode])
    strategies = matrix.get("strategy", ["learned"])
    dataset = synthworld.load_dataset(_data_dir(args))
    layout = pipeline.MatrixLayout(
        dataset.spec.num_tasks, dataset.spec.num_actions, dataset.spec.obs_dim, dataset.horizon
    )
    out = _out_dir(args)
    rows = []
    for loss in losses:
        for mm in mask_modes:
            for strat in strategies:
                model_cfg = _build(pipeline.ModelConfig, cfg.get("model"), strategy=strat)
                train_cfg = _build(
                    pipeline.TrainConfig, cfg.get("train"),
                    seed=args.seed, loss_variant=loss, mask_loss=args.mask_loss, mask_mode=mm,
                )
                models = pipeline.build_models(layout, dataset.scopes, model_cfg, train_cfg)
                pipeline.train_stage_one(models, dataset.train, dataset.test, train_cfg)
                pipeline.train_diffusion(models, dataset.train, train_cfg)
                report, _ = pipeline.evaluate_planner(
                    models, dataset.test, mask_mode=mm, ddim_steps=train_cfg.ddim_steps,
                    seed=args.seed,
                )
                label = f"{loss}_{mm}_{strat}"
                _write_report(out / f"report_{label}.txt", label, report)
                rows.append((label, report))
                print(f"{label}: SR {report.success_rate:.4f} mAcc {report.mean_accuracy:.4f}")
    with open(out / "summary.tsv", "w") as fh:
        fh.write("label\tSR\tmAcc\tmIoU\n")
        for label, rep in rows:
            fh.write(
                f"{label}\t{rep.success_rate:.6f}\t{rep.mean_accuracy:.6f}\t{rep.mean_iou:.6f}\n"
            )
    _write_run_config(out, {"matrix": matrix})
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.reports:
        raise ConfigError("no report files given")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = [(Path(p).stem, parse_report(p)) for p in args.reports]
    keys = ["SR", "mAcc", "mIoU"]
    x = np.arange(len(keys))
    width = 0.8 / len(reports)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (name, rep) in enumerate(reports):
        vals = [rep.get(k, 0.0) for k in keys]
        ax.bar(x + i * width, vals, width, label=str(rep.get("label", name)))
    ax.set_xticks(x + width * (len(reports) - 1) / 2)
    ax.set_xticklabels(keys)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = _out_dir(args)
    target = out / "comparison.png"
    fig.savefig(target, dpi=120)
    plt.close(fig)
    print(f"wrote {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtid", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="runs/out", help="output directory")
        if data:
            sp.add_argument("--data", default=None, help="dataset dir (fallback: MTID_DATA_DIR)")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(g, data=False)
    g.add_argument("--horizon", type=int, choices=(3, 4, 5, 6), default=3)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train classifier and diffusion stages")
    common(t)
    t.add_argument("--stage", choices=("classifier", "diffusion", "both"), default="both")
    t.add_argument("--loss", choices=("mse", "both-sides", "gradient"), default="gradient")
    t.add_argument("--mask-loss", choices=("off", "relevant-penalty", "literal"), default="relevant-penalty")
    t.add_argument("--mask-mode", choices=("init", "iteration", "none"), default="init")
    t.add_argument("--resume", default=None, help="checkpoint to continue training from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mask-mode", choices=("init", "iteration", "none"), default="init")
    e.add_argument("--ddim-steps", type=int, default=None)
    e.add_argument("--uncertainty", type=int, default=0, help="samples per instance (0 = off)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="config-matrix ablation sweep")
    common(s)
    s.add_argument("--loss", choices=("mse", "both-sides", "gradient"), default="gradient")
    s.add_argument("--mask-loss", choices=("off", "relevant-penalty", "literal"), default="relevant-penalty")
    s.add_argument("--mask-mode", choices=("init", "iteration", "none"), default="init")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render grouped bars from report files")
    pl.add_argument("reports", nargs="*")
    pl.add_argument("--out", default="runs/out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (synthworld.WorldError, StorageError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError,) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
