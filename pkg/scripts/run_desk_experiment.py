"""End-to-end desk run: generate the default world, train, evaluate.

Drives the installed CLI so the artifacts match what `mtid` produces by hand:
dataset under <out>/data, checkpoint and curves under <out>/train, report,
plans, and uncertainty summary under <out>/eval. The default recipe is the
calibrated 1600-step cell from the acceptance suite (SR 1.0 on seeds 0-2);
pass --steps 5000 for the long default schedule.
"""

import argparse
import json
import sys
from pathlib import Path

from mtid import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--horizon", type=int, default=3, choices=(3, 4, 5, 6))
    ap.add_argument("--steps", type=int, default=1600)
    ap.add_argument("--uncertainty", type=int, default=5)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "train": {
            "total_steps": args.steps,
            "warmup_steps": max(1, args.steps // 5),
            "peak_lr": 5e-4,
            "milestones": [int(args.steps * 0.56), int(args.steps * 0.81)],
            "batch_size": 64,
            "classifier_epochs": 4,
        }
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2))

    stages = [
        ["gen-data", "--config", str(cfg_path), "--seed", str(args.seed),
         "--horizon", str(args.horizon), "--out", str(out / "data")],
        ["train", "--config", str(cfg_path), "--seed", str(args.seed),
         "--data", str(out / "data"), "--out", str(out / "train")],
        ["eval", "--checkpoint", str(out / "train" / "checkpoint"),
         "--data", str(out / "data"), "--seed", str(args.seed),
         "--uncertainty", str(args.uncertainty), "--out", str(out / "eval")],
    ]
    for argv in stages:
        print(f"$ mtid {' '.join(argv)}")
        rc = cli.main(argv)
        if rc != 0:
            return rc
    print(f"\nartifacts under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
