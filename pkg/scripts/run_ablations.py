"""Desk-scale ablation grid: loss variants, component toggles, sampling masks.

Reproduces the directional claims behind the acceptance gates. Cells share one
default world and per-seed classifiers so differences come from the diffusion
stage alone. Loss variants run at batch 64 (where all of them saturate by
1600 steps); the encoder/refiner toggle runs at batch 32, below the ceiling,
where the gap is visible. Sampling-mask rows reuse the first trained model
and only re-sample.
"""

import argparse
import time
from dataclasses import replace

import numpy as np
import torch

from mtid import pipeline, synthworld

torch.set_num_threads(1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1600)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--horizon", type=int, default=3, choices=(3, 4, 5, 6))
    args = ap.parse_args()

    spec = synthworld.WorldSpec()
    dataset = synthworld.build_dataset(spec, horizon=args.horizon)
    layout = pipeline.MatrixLayout(
        spec.num_tasks, spec.num_actions, spec.obs_dim, args.horizon
    )
    base = pipeline.TrainConfig(
        total_steps=args.steps, warmup_steps=max(1, args.steps // 5), peak_lr=5e-4,
        milestones=(int(args.steps * 0.56), int(args.steps * 0.81)), batch_size=64,
    )
    print(f"world: {spec.num_tasks} tasks, {spec.num_actions} actions, "
          f"{len(dataset.train)} train / {len(dataset.test)} test, T={args.horizon}")

    clf_cache = {}
    flagship = {}

    def run(tag, model_cfg, train_cfg, keep=False):
        t0 = time.time()
        srs = []
        for seed in args.seeds:
            tc = replace(train_cfg, seed=seed)
            models = pipeline.build_models(layout, dataset.scopes, model_cfg, tc)
            if seed not in clf_cache:
                pipeline.train_stage_one(models, dataset.train, dataset.test,
                                         replace(tc, classifier_epochs=4))
                clf_cache[seed] = {
                    k: v.clone() for k, v in models.classifier.state_dict().items()
                }
            else:
                models.classifier.load_state_dict(clf_cache[seed])
            pipeline.train_diffusion(models, dataset.train, tc)
            report, _ = pipeline.evaluate_planner(models, dataset.test, "init", seed=0)
            srs.append(round(report.success_rate, 4))
            if keep and seed == args.seeds[0]:
                flagship["models"] = models
        print(f"{tag:28s} SR {np.mean(srs):.4f}  {srs}  ({time.time() - t0:.0f}s)",
              flush=True)

    run("gradient + mask  b64", pipeline.ModelConfig(),
        replace(base, loss_variant="gradient", mask_loss="relevant-penalty"), keep=True)
    run("gradient         b64", pipeline.ModelConfig(),
        replace(base, loss_variant="gradient", mask_loss="off"))
    run("mse              b64", pipeline.ModelConfig(),
        replace(base, loss_variant="mse", mask_loss="off"))

    b32 = replace(base, batch_size=32)
    run("full model       b32", pipeline.ModelConfig(), b32)
    run("bare interp      b32",
        pipeline.ModelConfig(use_encoder=False, use_refiner=False), b32)

    models = flagship["models"]
    for mode in ("init", "none", "iteration"):
        report, _ = pipeline.evaluate_planner(models, dataset.test, mode, seed=0)
        print(f"sampling mask {mode:10s}       SR {report.success_rate:.4f}")


if __name__ == "__main__":
    main()
