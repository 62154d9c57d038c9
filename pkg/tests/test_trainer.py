import json

import numpy as np
import pytest
import torch

from iuq.networks import ModelSpec, build_model, load_checkpoint
from iuq.objectives import LossConfig
from iuq.trainer import NonFiniteLossError, TrainConfig, train, train_ensemble


def _spec(arch):
    return ModelSpec(arch=arch, base_channels=4, resolution=32, uncertainty_hidden=8)


def _cfg(**kw):
    base = dict(phase1_epochs=3, phase2_epochs=2, baseline_epochs=3, batch_size=4)
    base.update(kw)
    return TrainConfig(**base)


def _losses(cfg):
    return LossConfig(phase1_epochs=cfg.phase1_epochs, nll_warmup_epochs=2)


def test_phase1_leaves_uncertainty_head_untouched(tiny_frames):
    m = build_model(_spec("proposed_full"), seed=0)
    init = [p.detach().clone() for p in m.uncertainty_parameters()]
    cfg = _cfg(phase2_epochs=0)
    train(m, tiny_frames, cfg, _losses(cfg))
    for a, b in zip(init, m.uncertainty_parameters()):
        assert torch.equal(a, b)
    assert all(p.requires_grad for p in m.parameters())


def test_phase2_lr_ratio_and_schedule(tiny_frames):
    m = build_model(_spec("proposed_full"), seed=0)
    cfg = _cfg()
    rec = train(m, tiny_frames, cfg, _losses(cfg))
    p1 = [h for h in rec.lr_history if h["phase"] == "phase1"]
    p2 = [h for h in rec.lr_history if h["phase"] == "phase2"]
    assert p1 and p2
    assert all("uncertainty" not in h for h in p1)
    for h in p2:
        assert h["uncertainty"] / h["main"] == pytest.approx(0.4, rel=1e-12)
    assert p1[0]["main"] == cfg.lr_main
    assert p2[0]["main"] == cfg.lr_main  # schedule restarts with the new phase
    mains = [h["main"] for h in p1]
    assert all(a >= b for a, b in zip(mains, mains[1:]))
    assert [h["alpha"] for h in rec.history] == [0.0, 0.0, 0.0, 0.0, 0.5]


def test_uncertainty_head_moves_in_phase2(tiny_frames):
    m = build_model(_spec("proposed_full"), seed=0)
    init = [p.detach().clone() for p in m.uncertainty_parameters()]
    cfg = _cfg(phase1_epochs=1, phase2_epochs=3)
    train(m, tiny_frames, cfg, _losses(cfg))
    assert any(not torch.equal(a, b) for a, b in zip(init, m.uncertainty_parameters()))


@pytest.mark.parametrize("arch", ["direct_cnn", "unet2", "unet3_physics"])
def test_baselines_train_single_phase(tiny_frames, arch):
    m = build_model(_spec(arch), seed=0)
    rec = train(m, tiny_frames, _cfg(baseline_epochs=2))
    assert rec.epochs_run == 2
    assert {h["phase"] for h in rec.history} == {"phase1"}


def test_training_is_deterministic(tiny_frames):
    cfg = _cfg(phase1_epochs=2, phase2_epochs=1)
    params = []
    for _ in range(2):
        m = build_model(_spec("proposed_full"), seed=5)
        rec = train(m, tiny_frames, cfg, _losses(cfg))
        params.append([p.detach().clone() for p in m.parameters()])
    for a, b in zip(*params):
        assert torch.equal(a, b)
    assert rec.history[0]["recon_R"] > 0


def test_loss_decreases(tiny_frames):
    m = build_model(_spec("unet3_physics"), seed=0)
    rec = train(m, tiny_frames, _cfg(baseline_epochs=8, lr_main=2e-3))
    assert rec.history[-1]["total"] < rec.history[0]["total"]


def test_logs_and_checkpoints(tiny_frames, tmp_path):
    m = build_model(_spec("proposed_noskip"), seed=0)
    cfg = _cfg(phase1_epochs=1, phase2_epochs=1)
    rec = train(m, tiny_frames, cfg, _losses(cfg), run_id="x", out_dir=tmp_path)
    lines = (tmp_path / "logs" / "x.jsonl").read_text().splitlines()
    assert len(lines) == len(rec.lr_history)
    assert {"recon_R", "nll", "alpha", "step"} <= set(json.loads(lines[-1]))
    assert [p.rsplit("/", 1)[-1] for p in rec.checkpoints] == ["phase1.ckpt", "phase2.ckpt"]
    back = load_checkpoint(rec.checkpoints[-1])
    for a, b in zip(back.parameters(), m.parameters()):
        assert torch.equal(a, b)
    d = rec.to_dict()
    assert "model" not in d and d["arch"] == "proposed_noskip"


def test_nonfinite_loss_raises_with_snapshot(tiny_frames):
    m = build_model(_spec("unet2"), seed=0)
    with torch.no_grad():
        m.head_R.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as ei:
        train(m, tiny_frames, _cfg(baseline_epochs=1))
    snap = ei.value.snapshot
    assert snap["epoch"] == 0 and snap["R_hat"]["nonfinite"] > 0


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(build_model(_spec("unet2"), seed=0), [], _cfg())


def test_with_budget_keeps_phase_ratio():
    c = TrainConfig().with_budget(30)
    assert (c.phase1_epochs, c.phase2_epochs, c.baseline_epochs) == (21, 9, 30)
    c = TrainConfig().with_budget(80)
    assert (c.phase1_epochs, c.phase2_epochs) == (55, 25)
    with pytest.raises(ValueError):
        TrainConfig(lr_main=0)


def test_ensemble_members_use_consecutive_seeds(tiny_frames):
    cfg = _cfg(baseline_epochs=1, ensemble_members=3, seed=10)
    recs = train_ensemble(_spec("unet3_physics"), tiny_frames, cfg)
    assert [r.seed for r in recs] == [10, 11, 12]
    w = [next(r.model.parameters()).detach() for r in recs]
    assert not torch.equal(w[0], w[1])
    with pytest.raises(ValueError):
        train_ensemble(_spec("unet2"), tiny_frames, _cfg(ensemble_members=0))
