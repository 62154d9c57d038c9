import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from iuq.networks import ModelOutputs
from iuq.objectives import (
    LossConfig,
    compute_loss,
    nll_loss,
    recon_loss,
    smoothness_loss,
    total_logvar,
    warmup_alpha,
)

finite = st.floats(-10, 2, allow_nan=False, allow_infinity=False)


def test_smoothness_matches_loop_oracle(rng):
    s = rng.uniform(size=(2, 3, 5, 6))
    dx = [(s[b, c, y, x + 1] - s[b, c, y, x]) ** 2 for b in range(2) for c in range(3) for y in range(5) for x in range(5)]
    dy = [(s[b, c, y + 1, x] - s[b, c, y, x]) ** 2 for b in range(2) for c in range(3) for y in range(4) for x in range(6)]
    expect = np.mean(dx) + np.mean(dy)
    assert smoothness_loss(torch.from_numpy(s)).item() == pytest.approx(expect, rel=1e-12)


def test_smoothness_zero_for_constant():
    assert smoothness_loss(torch.full((1, 3, 4, 4), 0.3)).item() == 0.0


def test_total_logvar_known_values():
    lv = torch.tensor([0.0, 0.0, 0.0], dtype=torch.float64).view(3, 1, 1)
    assert total_logvar(lv).item() == pytest.approx(math.log(3), abs=1e-12)
    lv = torch.tensor([-10.0, -10.0, 2.0], dtype=torch.float64).view(3, 1, 1)
    assert total_logvar(lv).item() == pytest.approx(2.0, abs=1e-4)


def test_total_logvar_is_stable_for_large_values():
    lv = torch.tensor([800.0, 800.0, 800.0], dtype=torch.float64).view(3, 1, 1)
    assert total_logvar(lv).item() == pytest.approx(800 + math.log(3))


def test_total_logvar_needs_three_channels():
    with pytest.raises(ValueError):
        total_logvar(torch.zeros(1, 2, 4, 4))


@given(finite, finite, finite)
def test_total_logvar_bounds(a, b, c):
    lv = torch.tensor([a, b, c], dtype=torch.float64).view(3, 1, 1)
    t = total_logvar(lv).item()
    m = max(a, b, c)
    assert t >= m - 1e-12
    assert t <= m + math.log(3) + 1e-12


def test_nll_matches_hand_formula():
    I = torch.tensor([[[[0.5]], [[0.2]], [[0.8]]]], dtype=torch.float64)
    I_hat = torch.tensor([[[[0.4]], [[0.4]], [[0.4]]]], dtype=torch.float64)
    lv = torch.tensor([[[[-1.0]]]], dtype=torch.float64)
    e2 = (0.01 + 0.04 + 0.16) / 3
    expect = 0.5 * (-1.0 + e2 * math.exp(1.0))
    assert nll_loss(I, I_hat, lv).item() == pytest.approx(expect, rel=1e-12)


@given(st.floats(1e-6, 10.0))
def test_nll_stationary_point_is_log_e2(e2):
    # d/dz [z + e2 exp(-z)] = 1 - e2 exp(-z) = 0  =>  z = log e2; Newton from z=0
    I = torch.full((1, 3, 1, 1), math.sqrt(e2), dtype=torch.float64)
    I_hat = torch.zeros_like(I)
    z = torch.zeros(1, 1, 1, 1, dtype=torch.float64)
    for _ in range(200):
        z.requires_grad_(True)
        g, = torch.autograd.grad(nll_loss(I, I_hat, z), z)
        h = 0.5 * e2 * torch.exp(-z.detach())
        z = (z.detach() - g / h).clamp(-50, 50)
    assert z.item() == pytest.approx(math.log(e2), abs=1e-6)


def test_warmup_alpha_schedule():
    cfg = LossConfig(nll_warmup_epochs=25)
    assert warmup_alpha(0, cfg) == 0.0
    assert warmup_alpha(5, cfg) == pytest.approx(0.2)
    assert warmup_alpha(25, cfg) == 1.0
    assert warmup_alpha(100, cfg) == 1.0
    with pytest.raises(ValueError):
        warmup_alpha(-1, cfg)


def _out(n_head=True, lv=True, seed=0):
    g = torch.Generator().manual_seed(seed)
    R = torch.rand(1, 3, 4, 4, generator=g)
    S = torch.rand(1, 3, 4, 4, generator=g)
    N = torch.rand(1, 3, 4, 4, generator=g) * 0.1 if n_head else None
    I_hat = R * S + (N if N is not None else 0)
    logvar = torch.zeros(1, 3, 4, 4) if lv else None
    return ModelOutputs(R_hat=R, S_hat=S, I_hat=I_hat, N_hat=N, logvar=logvar)


def _gt(seed=1):
    g = torch.Generator().manual_seed(seed)
    return {k: torch.rand(1, 3, 4, 4, generator=g) for k in "RSNI"}


def test_recon_terms_present_per_capability():
    assert set(recon_loss(_out(), _gt())) == {"recon_R", "recon_S", "recon_N", "recon_I"}
    assert set(recon_loss(_out(n_head=False), _gt(), use_image_term=False)) == {"recon_R", "recon_S"}


def test_compute_loss_total_is_weighted_sum():
    cfg = LossConfig(lambda_smooth=0.1, lambda_nll=2.0, n_weight=0.5)
    out, gt = _out(), _gt()
    total, parts = compute_loss(out, gt, cfg, alpha=0.5, use_nll=True)
    expect = parts.recon_R + parts.recon_S + parts.recon_N + parts.recon_I + 0.1 * parts.smooth + 0.5 * 2.0 * parts.nll
    assert total.item() == pytest.approx(expect, rel=1e-6)
    assert parts.alpha == 0.5


def test_two_head_models_skip_image_term():
    _, parts = compute_loss(_out(n_head=False, lv=False), _gt())
    assert parts.recon_I == 0.0 and parts.recon_N == 0.0


def test_nll_requires_uncertainty_head():
    with pytest.raises(ValueError):
        compute_loss(_out(lv=False), _gt(), use_nll=True)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_smooth=-1)
