import numpy as np
import pytest
import torch

from pascrowd_trainer.config import TrainerConfig
from pascrowd_trainer.data import collect_gt_dataset, grids_to_float
from pascrowd_trainer.pretrain import (
    dataset_recon_loss,
    load_supervisor,
    pretrain_supervisor,
    save_supervisor,
)

CFG = TrainerConfig(encoder_channels=(8, 16, 32, 64, 64))


@pytest.fixture(scope="module")
def gt_grids(tmp_path_factory):
    out = tmp_path_factory.mktemp("rollouts")
    grids = collect_gt_dataset(out, episodes=8, base_seed=0, max_frames=240)
    assert grids.dtype == np.uint8 and grids.shape[1:] == (100, 100)
    assert len(grids) == 240
    return grids


def test_recon_loss_decreases_monotonically(gt_grids):
    _, curve = pretrain_supervisor(gt_grids, CFG, epochs=10, batch_size=64, seed=0)
    assert len(curve) == 10
    for a, b in zip(curve, curve[1:]):
        assert b < a, f"reconstruction loss rose: {curve}"


def test_pretraining_is_deterministic(gt_grids):
    vae_a, curve_a = pretrain_supervisor(gt_grids, CFG, epochs=2, seed=7)
    vae_b, curve_b = pretrain_supervisor(gt_grids, CFG, epochs=2, seed=7)
    assert curve_a == curve_b
    for key, value in vae_a.state_dict().items():
        assert torch.equal(value, vae_b.state_dict()[key]), key


def test_pretrained_model_is_frozen(gt_grids):
    vae, _ = pretrain_supervisor(gt_grids, CFG, epochs=1)
    assert not any(p.requires_grad for p in vae.parameters())
    assert not vae.training


def test_held_out_reconstruction_close_to_train_error(gt_grids, tmp_path):
    train_set, held_out = gt_grids[:180], gt_grids[180:]
    assert len(held_out) >= 20
    vae, curve = pretrain_supervisor(train_set, CFG, epochs=12, seed=0)
    held = dataset_recon_loss(vae, torch.from_numpy(grids_to_float(held_out)).unsqueeze(1))
    assert held < 2.0 * curve[-1], f"held-out {held:.5f} vs train {curve[-1]:.5f}"


def test_supervisor_round_trips_through_disk(gt_grids, tmp_path):
    vae, _ = pretrain_supervisor(gt_grids[:64], CFG, epochs=1)
    path = tmp_path / "supervisor.pt"
    save_supervisor(vae, CFG, path)
    loaded, cfg = load_supervisor(path)
    assert cfg == CFG
    for key, value in vae.state_dict().items():
        assert torch.equal(value, loaded.state_dict()[key]), key


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        pretrain_supervisor(np.zeros((0, 100, 100), dtype=np.uint8), CFG)
