import numpy as np
import pytest
import torch
from hypothesis import settings

torch.set_num_threads(1)

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

from mtid import pipeline, synthworld


def finite_difference_grads(f, params, eps=1e-5):
    """Central-difference gradient of the scalar f() wrt each parameter tensor.

    Mutates parameters in place and restores them; use float64 modules.
    """
    grads = []
    for p in params:
        g = torch.zeros_like(p.data)
        flat, gflat = p.data.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = float(f().detach())
            flat[i] = orig - eps
            f_minus = float(f().detach())
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2 * eps)
        grads.append(g)
    return grads


def rel_err(a, b):
    a = a.reshape(-1).double()
    b = b.reshape(-1).double()
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


@pytest.fixture(scope="session")
def tiny_spec():
    return synthworld.WorldSpec(
        num_tasks=3, num_actions=12, obs_dim=8, actions_per_task=4,
        plans_per_task=12, plan_length_range=(4, 6), obs_noise_sigma=0.02, seed=7,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return synthworld.build_dataset(tiny_spec, horizon=3)


@pytest.fixture(scope="session")
def tiny_layout(tiny_dataset):
    spec = tiny_dataset.spec
    return pipeline.MatrixLayout(spec.num_tasks, spec.num_actions, spec.obs_dim, tiny_dataset.horizon)


@pytest.fixture()
def tiny_models(tiny_dataset, tiny_layout):
    mc = pipeline.ModelConfig(
        widths=(8, 16), blocks_per_level=1, middle_blocks=1,
        refiner_layers=1, refiner_heads=2, classifier_embed=16,
        classifier_layers=1, classifier_heads=2,
    )
    tc = pipeline.TrainConfig(
        total_steps=40, warmup_steps=10, milestones=(20, 30),
        batch_size=16, diffusion_steps=20, classifier_epochs=1,
    )
    return pipeline.build_models(tiny_layout, tiny_dataset.scopes, mc, tc)
