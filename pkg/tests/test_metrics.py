import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from iuq.metrics import (
    DegenerateInputError,
    EvalArtifacts,
    PixelSample,
    build_pixel_sample,
    channel_matrices,
    evaluate_ensemble,
    evaluate_model,
    filtering_curve,
    ood_probe,
    pearson,
    psnr,
    subsample_indices,
    uq_correlation,
)
from iuq.networks import ModelSpec, build_model
from iuq.uncertainty import (
    UnsupportedCapabilityError,
    aleatoric_maps,
    ensemble_predict,
    epistemic_sigma,
    load_maps_npz,
    mc_dropout,
    percentile_normalize,
    save_map_png,
    save_maps_npz,
)


def test_psnr_known_values():
    gt = np.zeros((3, 4, 4))
    assert psnr(gt + 0.1, gt) == pytest.approx(20.0)
    assert psnr(gt, gt) == 100.0
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def _brute_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    return cov / math.sqrt(vx * vy)


vec = arrays(np.float64, st.integers(3, 40), elements=st.floats(-100, 100, allow_nan=False))


@given(vec, st.integers(0, 2**31))
def test_pearson_matches_brute_force(x, seed):
    y = x * 0.3 + np.random.default_rng(seed).normal(size=x.shape)
    if np.ptp(x) < 1e-3:
        return
    assert pearson(x, y) == pytest.approx(_brute_pearson(list(x), list(y)), abs=1e-10)


def test_pearson_degenerate():
    with pytest.raises(DegenerateInputError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInputError):
        pearson([1.0], [2.0])
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0


def test_subsample_indices():
    a = subsample_indices(100, 10, seed=3)
    assert np.array_equal(a, subsample_indices(100, 10, seed=3))
    assert np.all(np.diff(a) > 0)
    assert np.array_equal(subsample_indices(5, 10, seed=3), np.arange(5))


def _sample(sigma, sq):
    sq = np.asarray(sq, np.float64)
    return PixelSample(
        recon_abs_err=np.sqrt(sq), recon_sq_err=sq, err_R=sq, err_S=sq, sigma_total=np.asarray(sigma, np.float64)
    )


def test_filtering_on_perfectly_correlated_sample():
    sq = [0.8, 0.1, 0.4, 0.2, 0.7, 0.3, 0.6, 0.5]
    s = _sample(sq, sq)
    curve = filtering_curve(s, (1.0, 0.25), seed=0)
    assert curve[0][1] == pytest.approx(np.mean(sq), abs=1e-15)
    assert curve[0][1] == curve[0][2]
    # keep 2 of 8: guided picks the two smallest errors (0.1, 0.2)
    assert curve[1][1] == pytest.approx(0.15, abs=1e-15)
    assert curve[1][1] < curve[1][2]


def test_filtering_rejects_empty_keep():
    with pytest.raises(ValueError):
        filtering_curve(_sample([1, 2], [1, 2]), (0.1,))


def test_filtering_tie_break_is_stable():
    s = _sample([0, 0, 0, 0], [4.0, 3.0, 2.0, 1.0])
    assert filtering_curve(s, (0.5,))[0][1] == 3.5


def test_build_pixel_sample_channel_averaging():
    gt = {k: np.zeros((1, 3, 2, 2)) for k in "RSNI"}
    pred = {k: np.ones((1, 3, 2, 2)) for k in ("R_hat", "S_hat", "N_hat", "I_hat")}
    pred["I_hat"][0, 0] = 3.0
    s = build_pixel_sample(gt, pred, {"total": np.ones((1, 2, 2))})
    assert np.allclose(s.recon_abs_err, 5 / 3)
    assert np.allclose(s.recon_sq_err, 11 / 3)
    assert len(s) == 4


def test_channel_matrices_shape_and_diagonal(rng):
    n = 500
    base = rng.uniform(size=n)
    s = PixelSample(
        recon_abs_err=base, recon_sq_err=base**2, err_R=rng.uniform(size=n), err_S=rng.uniform(size=n),
        err_N=base + 0.1 * rng.normal(size=n), sigma_tex=rng.uniform(size=n), sigma_light=rng.uniform(size=n),
        sigma_nl=base, sigma_total=base,
    )
    inter, cross = channel_matrices(s)
    assert np.array_equal(np.diag(inter), np.ones(3))
    assert np.allclose(inter, inter.T)
    assert cross.shape == (3, 3)
    assert cross[2, 2] > 0.9
    assert uq_correlation(s) == 1.0


def test_pixel_sample_length_mismatch():
    with pytest.raises(ValueError):
        PixelSample(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(4))


# -- uncertainty maps


def _spec(arch="proposed_full", **kw):
    return ModelSpec(arch=arch, base_channels=4, resolution=16, uncertainty_hidden=8, **kw)


def test_aleatoric_maps_from_logvar():
    m = build_model(_spec(), seed=0)
    out = m(torch.rand(2, 3, 16, 16))
    maps = aleatoric_maps(out)
    assert np.allclose(maps.sigma_tex, np.exp(0.5 * out.logvar[:, 0].detach().numpy()), rtol=1e-6)
    assert np.all(maps.sigma_total >= np.maximum(maps.sigma_tex, maps.sigma_nl) - 1e-7)
    with pytest.raises(UnsupportedCapabilityError):
        aleatoric_maps(build_model(_spec("unet2"), seed=0)(torch.rand(1, 3, 16, 16)))


def test_epistemic_sigma_oracle():
    passes = np.array([[[[1.0]], [[3.0]], [[5.0]]], [[[3.0]], [[3.0]], [[1.0]]]])  # (T=2, C=3, 1, 1)
    # per channel population variances 1, 0, 4 -> mean 5/3
    assert epistemic_sigma(passes)[0, 0] == pytest.approx(math.sqrt(5 / 3))


def test_mc_dropout_reproducible():
    m = build_model(_spec(dropout_rate=0.3), seed=0)
    x = np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32)
    a = mc_dropout(m, x, T=4, seed=7, keep_passes=True)
    b = mc_dropout(m, x, T=4, seed=7)
    assert np.array_equal(a.mean_R, b.mean_R)
    assert a.mean_R.shape == (3, 16, 16)
    assert a.passes_R.shape == (4, 3, 16, 16)
    assert a.sigma_epi_R.shape == (16, 16)
    assert a.sigma_epi_R.mean() > 0
    assert np.allclose(a.sigma_epi_R, epistemic_sigma(a.passes_R), atol=1e-7)
    with pytest.raises(ValueError):
        mc_dropout(m, x, T=1)


def test_ensemble_population_std():
    members = [build_model(_spec("unet3_physics"), seed=s) for s in range(3)]
    x = torch.rand(2, 3, 16, 16)
    pred = ensemble_predict(members, x)
    Rs = np.stack([mm(x).R_hat.detach().numpy() for mm in members])
    assert np.allclose(pred.mean_R, Rs.mean(0), atol=1e-7)
    assert np.allclose(pred.std_R, Rs.std(0), atol=1e-7)
    assert pred.sigma.shape == (2, 16, 16)


def test_single_member_ensemble_has_zero_spread():
    pred = ensemble_predict([build_model(_spec("unet2"), seed=0)], torch.rand(1, 3, 16, 16))
    assert np.all(pred.std_R == 0) and np.all(pred.sigma == 0)


def test_ensemble_spec_mismatch():
    with pytest.raises(ValueError):
        ensemble_predict([build_model(_spec("unet2"), seed=0), build_model(_spec("unet3_physics"), seed=0)],
                         torch.rand(1, 3, 16, 16))
    with pytest.raises(ValueError):
        ensemble_predict([], torch.rand(1, 3, 16, 16))


def test_percentile_normalize_and_png(tmp_path, rng):
    m = rng.normal(size=(16, 16))
    v = percentile_normalize(m)
    assert v.min() == 0.0 and v.max() == 1.0
    assert np.all(percentile_normalize(np.ones((4, 4))) == 0.5)
    p = save_map_png(m, tmp_path / "m.png")
    with Image.open(p) as im:
        assert np.asarray(im).dtype == np.uint16


def test_maps_npz_roundtrip(tmp_path):
    maps = aleatoric_maps(build_model(_spec(), seed=0)(torch.rand(1, 3, 16, 16)))
    back = load_maps_npz(save_maps_npz(maps, tmp_path / "m.npz"))
    assert np.array_equal(back.sigma_nl, maps.sigma_nl)


# -- evaluation


def test_evaluate_model_fills_uncertainty_fields(tiny_frames):
    m = build_model(ModelSpec(arch="proposed_full", base_channels=4, resolution=32, uncertainty_hidden=8), seed=0)
    report, art = evaluate_model(m, tiny_frames[:3], "r", 0, "scene", subsample_size=500, mc_passes=3)
    assert report.check() == []
    assert -1 <= report.uq_corr <= 1
    assert set(report.sigma_means) == {"tex", "light", "nl"}
    assert len(report.filtering_curve) == 4
    assert isinstance(art, EvalArtifacts) and art.scatter.shape[1] == 2
    assert report.recon_psnr is not None


def test_evaluate_baseline_has_no_uncertainty(tiny_frames):
    m = build_model(ModelSpec(arch="unet2", base_channels=4, resolution=32), seed=0)
    report, art = evaluate_model(m, tiny_frames[:2], "r", 0, "scene")
    assert report.uq_corr is None and report.recon_psnr is None and art.scatter is None


def test_evaluate_ensemble(tiny_frames):
    members = [build_model(ModelSpec(arch="unet3_physics", base_channels=4, resolution=32), seed=s) for s in (0, 1)]
    report, _ = evaluate_ensemble(members, tiny_frames[:2], "e", 0, "scene", subsample_size=300)
    assert report.arch_name == "deep_ensemble"
    assert report.uq_corr is not None
    assert report.extras["members"] == 2


def test_ood_probe_runs_on_public_photo():
    from skimage import data

    m = build_model(_spec(), seed=0)
    with torch.no_grad():
        m.head_N.bias.fill_(0.5)
    nl, tex = ood_probe(m, data.coffee())
    assert -1 <= nl <= 1 and -1 <= tex <= 1


def test_ood_probe_flags_constant_n():
    m = build_model(_spec(), seed=0)
    with torch.no_grad():
        m.head_N.weight.zero_()
        m.head_N.bias.fill_(-1.0)
    with pytest.raises(DegenerateInputError, match="no specular signal"):
        ood_probe(m, np.zeros((20, 20, 3), np.uint8))
    with pytest.raises(ValueError):
        ood_probe(build_model(_spec("unet3_physics"), seed=0), np.zeros((20, 20, 3), np.uint8))
