"""Trainer acceptance: gradient exactness, freeze invariants, smoke training.

`pytest tests/test_acceptance.py -v -s` prints one line per criterion. The
smoke-training run is marked `smoke` (about a quarter hour of CPU) and is
deselected by default; run it with `pytest -m smoke -s`.
"""
import json
import time

import pytest
import torch

from test_losses import assert_grad_matches
from pascrowd_trainer.config import TrainerConfig
from pascrowd_trainer.losses import (
    estimation_loss,
    kl_loss,
    matching_loss,
    ppo_policy_loss,
    reconstruction_loss,
    supervisor_vae_loss,
    value_loss,
)
from pascrowd_trainer.models import ConvEncoder, GridVae, freeze, pin_batchnorm_eval
from pascrowd_trainer.ppo import Trainer, load_policy
from test_invariants import _latent_update_steps, _state_bytes

CFG = TrainerConfig(encoder_channels=(8, 16, 32, 64, 64))


def test_gradient_suite():
    """Every loss term's analytic gradient matches central differences."""
    t0 = time.time()
    gen = torch.Generator().manual_seed(100)

    target = torch.rand(2, 6, 6, generator=gen, dtype=torch.float64)
    recon = torch.rand(2, 6, 6, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: reconstruction_loss(target, recon), recon)

    mu = torch.randn(2, 8, generator=gen, dtype=torch.float64)
    logvar = torch.randn(2, 8, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: kl_loss(mu, logvar), mu)
    assert_grad_matches(lambda: kl_loss(mu, logvar), logvar)
    assert_grad_matches(
        lambda: supervisor_vae_loss(target, recon, mu, logvar, 0.00025)[0], logvar
    )

    z_sup = torch.randn(2, 12, generator=gen, dtype=torch.float64)
    z_stu = torch.randn(2, 12, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: matching_loss(z_sup, z_stu), z_stu)

    est = torch.rand(5, 5, generator=gen, dtype=torch.float64)
    gt = torch.rand(5, 5, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: estimation_loss(gt, est), est)

    old = torch.randn(16, generator=gen, dtype=torch.float64)
    new = old + 0.05 * torch.randn(16, generator=gen, dtype=torch.float64)
    adv = torch.randn(16, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: ppo_policy_loss(new, old, adv, 0.2), new)

    values = torch.randn(16, generator=gen, dtype=torch.float64)
    returns = torch.randn(16, generator=gen, dtype=torch.float64)
    assert_grad_matches(lambda: value_loss(values, returns), values)

    elapsed = time.time() - t0
    assert elapsed < 60.0, f"took {elapsed:.0f}s"
    print(f"ACCEPTANCE PASS: gradient suite, all loss terms match finite differences ({elapsed:.0f}s)")


def test_freeze_and_stop_gradient_invariants():
    """Supervisor weights bit-identical across 100 latent-loss update steps;
    the matching loss never backpropagates into the supervisor."""
    torch.manual_seed(0)
    supervisor = freeze(GridVae(1, CFG))
    student = pin_batchnorm_eval(ConvEncoder(4, CFG.latent_dim, CFG.encoder_channels))
    optimizer = torch.optim.Adam(student.parameters(), lr=1e-3)
    before = _state_bytes(supervisor)
    _latent_update_steps(100, supervisor, student, optimizer)
    after = _state_bytes(supervisor)
    assert all(before[k] == after[k] for k in before)

    live = GridVae(1, CFG)  # trainable on purpose
    frames = torch.rand(2, 4, 100, 100)
    mu, logvar = student(frames)
    mu_sup, _ = live.encode(torch.rand(2, 1, 100, 100))
    matching_loss(mu_sup, GridVae.sample(mu, logvar)).backward()
    assert all(p.grad is None for p in live.parameters())
    print("ACCEPTANCE PASS: freeze + stop-gradient invariants across 100 update steps")


def test_random_policy_evaluation_reports(tmp_path):
    """Untrained weights still evaluate; identical seeds give identical reports."""
    from pascrowd_trainer.evaluate import evaluate_policy

    torch.manual_seed(0)
    trainer = Trainer("obs-fe", CFG, seed=0)
    checkpoint = tmp_path / "random.pt"
    trainer.save(checkpoint)
    trainer.close()

    report = evaluate_policy(checkpoint, episodes=20, base_seed=0)
    for key in ("success_rate", "collision_rate", "discomfort_rate"):
        if report[key] is not None:
            assert 0.0 <= report[key] <= 1.0
    assert report["episode_count"] == 20

    again = evaluate_policy(checkpoint, episodes=4, base_seed=100)
    again2 = evaluate_policy(checkpoint, episodes=4, base_seed=100)
    assert json.dumps(again, sort_keys=True) == json.dumps(again2, sort_keys=True)
    print("ACCEPTANCE PASS: wire evaluation of random weights, deterministic reports")


@pytest.mark.smoke
def test_smoke_training_improves_return():
    """50k-step run: mean return over the last 5k env steps beats the first 5k."""
    from pascrowd_trainer.smoke import run_smoke

    t0 = time.time()
    first, last = run_smoke(total_steps=50_000, seed=0)
    elapsed = time.time() - t0
    assert last > first, f"return did not improve: {first:.3f} -> {last:.3f}"
    assert elapsed < 1800.0, f"took {elapsed:.0f}s"
    print(
        f"ACCEPTANCE PASS: smoke training, return {first:.3f} -> {last:.3f} "
        f"({elapsed/60:.1f} min)"
    )
