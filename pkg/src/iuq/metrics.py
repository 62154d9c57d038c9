"""PSNR, uncertainty-error correlations, channel-specialization matrices, filtering curves."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import torch

from .core import EvalReport, IntrinsicTriple, as_image, stack_triples
from .data import resize
from .networks import Model, count_parameters
from .objectives import total_logvar
from .uncertainty import SOURCES, ensemble_predict, mc_dropout

PSNR_CAP = 100.0
DEFAULT_KEEP = (1.0, 0.75, 0.5, 0.25)
COMPONENTS = ("R", "S", "N")


class DegenerateInputError(ValueError):
    pass


def psnr(pred: Any, gt: Any, max_val: float = 1.0, cap: float = PSNR_CAP) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(max_val**2 / mse))


def pearson(x: Any, y: Any) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("pearson inputs differ in length")
    if x.size < 2:
        raise DegenerateInputError("pearson needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class PixelSample:
    """Flattened, aligned per-pixel quantities over an evaluation set (channel-averaged)."""

    recon_abs_err: np.ndarray
    recon_sq_err: np.ndarray
    err_R: np.ndarray
    err_S: np.ndarray
    err_N: np.ndarray | None = None
    sigma_tex: np.ndarray | None = None
    sigma_light: np.ndarray | None = None
    sigma_nl: np.ndarray | None = None
    sigma_total: np.ndarray | None = None
    indices: np.ndarray | None = None
    subsample_seed: int = 0

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self._arrays().values()}
        if len(lengths) != 1:
            raise ValueError(f"PixelSample arrays differ in length: {lengths}")

    def _arrays(self) -> dict[str, np.ndarray]:
        names = ("recon_abs_err", "recon_sq_err", "err_R", "err_S", "err_N",
                 "sigma_tex", "sigma_light", "sigma_nl", "sigma_total")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def __len__(self) -> int:
        return len(self.recon_abs_err)

    def sigma(self, source: str) -> np.ndarray:
        v = getattr(self, f"sigma_{source}")
        if v is None:
            raise DegenerateInputError(f"sample has no sigma_{source}")
        return v

    def error(self, component: str) -> np.ndarray:
        v = getattr(self, f"err_{component}")
        if v is None:
            raise DegenerateInputError(f"sample has no err_{component}")
        return v


def subsample_indices(n: int, size: int, seed: int) -> np.ndarray:
    """Sorted indices of a seeded draw without replacement; all indices when n <= size."""
    if n <= size:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))


def build_pixel_sample(
    gt: dict[str, np.ndarray],
    pred: dict[str, np.ndarray | None],
    sigmas: dict[str, np.ndarray] | None = None,
    subsample_size: int = 200_000,
    seed: int = 0,
) -> PixelSample:
    """``gt``/``pred`` hold (B,3,H,W) arrays; ``sigmas`` holds (B,H,W) maps keyed by source."""
    def flat(a):
        return np.asarray(a, dtype=np.float64).reshape(-1)

    def chan_abs(a, b):
        return flat(np.abs(np.asarray(a, np.float64) - b).mean(axis=1))

    e = np.asarray(gt["I"], np.float64) - pred["I_hat"]
    n = e.shape[0] * e.shape[2] * e.shape[3]
    idx = subsample_indices(n, subsample_size, seed)
    fields_ = {
        "recon_abs_err": flat(np.abs(e).mean(axis=1)),
        "recon_sq_err": flat((e**2).mean(axis=1)),
        "err_R": chan_abs(pred["R_hat"], gt["R"]),
        "err_S": chan_abs(pred["S_hat"], gt["S"]),
        "err_N": chan_abs(pred["N_hat"], gt["N"]) if pred.get("N_hat") is not None else None,
    }
    for k, v in (sigmas or {}).items():
        fields_[f"sigma_{k}"] = flat(v)
    fields_ = {k: (v[idx] if v is not None else None) for k, v in fields_.items()}
    return PixelSample(**fields_, indices=idx, subsample_seed=seed)


def uq_correlation(sample: PixelSample) -> float:
    return pearson(sample.sigma("total"), sample.recon_abs_err)


def channel_matrices(sample: PixelSample) -> tuple[np.ndarray, np.ndarray]:
    """(inter-channel sigma correlations, sigma x component-error correlations).

    Rows follow (tex, light, nl); cross-correlation columns follow (R, S, N).
    """
    sig = [sample.sigma(s) for s in SOURCES]
    err = [sample.error(c) for c in COMPONENTS]
    inter = np.eye(3)
    for i in range(3):
        for j in range(i + 1, 3):
            inter[i, j] = inter[j, i] = pearson(sig[i], sig[j])
    cross = np.array([[pearson(s, e) for e in err] for s in sig])
    return inter, cross


def filtering_curve(
    sample: PixelSample, keep_fractions: Sequence[float] = DEFAULT_KEEP, seed: int = 0
) -> list[tuple[float, float, float]]:
    """Squared reconstruction error on the lowest-sigma fraction vs a random subset of equal size."""
    sigma = sample.sigma("total")
    err = sample.recon_sq_err
    n = len(err)
    order = np.argsort(sigma, kind="stable")  # ties resolved by pixel index
    rng = np.random.default_rng(seed)
    rows = []
    for keep in keep_fractions:
        k = int(math.floor(keep * n + 0.5))
        if k < 1 or not 0.0 < keep <= 1.0:
            raise ValueError(f"keep fraction {keep} selects no pixels out of {n}")
        guided = np.sort(order[:k])
        rand = np.sort(rng.choice(n, size=k, replace=False))
        rows.append((float(keep), float(err[guided].mean()), float(err[rand].mean())))
    return rows


def sigma_statistics(sample: PixelSample) -> dict[str, tuple[float, float]]:
    out = {}
    for s in SOURCES:
        v = getattr(sample, f"sigma_{s}")
        if v is not None:
            out[s] = (float(v.mean()), float(v.std()))
    return out


def ood_probe(model: Model, image: Any) -> tuple[float, float]:
    """corr(sigma_nl, N_hat) and corr(sigma_tex, N_hat) on one image, N_hat channel-averaged."""
    if model.spec.arch not in ("proposed_noskip", "proposed_full"):
        raise ValueError("ood_probe needs a model with an uncertainty head")
    img = as_image(image)
    img = resize(img, model.spec.resolution)
    with torch.no_grad():
        out = model(torch.from_numpy(img)[None], stochastic=False)
    n_bar = out.N_hat[0].mean(dim=0).numpy().ravel()
    if np.var(n_bar) == 0.0:
        raise DegenerateInputError("no specular signal: predicted N is constant")
    sig = torch.exp(0.5 * out.logvar[0]).numpy()
    return pearson(sig[2].ravel(), n_bar), pearson(sig[0].ravel(), n_bar)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalArtifacts:
    """Side outputs for figures: scatter points and maps of the first few frames."""

    scatter: np.ndarray | None = None  # (n, 2): sigma_total, |e|
    maps: dict[str, np.ndarray] = field(default_factory=dict)


def predict_frames(model: Model, images: np.ndarray, batch_size: int = 8) -> dict[str, np.ndarray | None]:
    out: dict[str, list[np.ndarray]] = {"R_hat": [], "S_hat": [], "N_hat": [], "I_hat": [], "logvar": []}
    with torch.no_grad():
        for b0 in range(0, len(images), batch_size):
            o = model(torch.from_numpy(images[b0 : b0 + batch_size]), stochastic=False)
            for k in out:
                v = getattr(o, k)
                if v is not None:
                    out[k].append(v.numpy())
    return {k: (np.concatenate(v) if v else None) for k, v in out.items()}


def _psnr_mean(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.mean([psnr(p, g) for p, g in zip(pred, gt)]))


def _sigmas_from_logvar(logvar: np.ndarray) -> dict[str, np.ndarray]:
    lv = torch.from_numpy(logvar)
    total = total_logvar(lv)[:, 0]
    sig = torch.exp(0.5 * lv).numpy()
    return {"tex": sig[:, 0], "light": sig[:, 1], "nl": sig[:, 2], "total": torch.exp(0.5 * total).numpy()}


def _scatter(sample: PixelSample, n: int, seed: int) -> np.ndarray:
    idx = subsample_indices(len(sample), n, seed)
    return np.stack([sample.sigma("total")[idx], sample.recon_abs_err[idx]], axis=1)


def evaluate_model(
    model: Model,
    test_frames: Sequence[IntrinsicTriple],
    run_id: str,
    seed: int,
    split_name: str,
    subsample_size: int = 200_000,
    keep_fractions: Sequence[float] = DEFAULT_KEEP,
    mc_passes: int = 10,
    train_s_per_epoch: float = 0.0,
    n_map_frames: int = 3,
    scatter_points: int = 5000,
) -> tuple[EvalReport, EvalArtifacts]:
    model.eval()
    gt = stack_triples(test_frames)
    t0 = time.perf_counter()
    pred = predict_frames(model, gt["I"])
    infer_ms = 1000.0 * (time.perf_counter() - t0) / len(test_frames)
    spec = model.spec
    report = EvalReport(
        run_id=run_id,
        seed=seed,
        arch_name=spec.arch,
        split_name=split_name,
        r_psnr=_psnr_mean(pred["R_hat"], gt["R"]),
        s_psnr=_psnr_mean(pred["S_hat"], gt["S"]),
        recon_psnr=_psnr_mean(pred["I_hat"], gt["I"]) if pred["N_hat"] is not None else None,
        params_count=count_parameters(model),
    )
    artifacts = EvalArtifacts()
    nm = min(n_map_frames, len(test_frames))
    artifacts.maps = {"input": gt["I"][:nm], "R_hat": pred["R_hat"][:nm], "S_hat": pred["S_hat"][:nm]}
    if pred["N_hat"] is not None:
        artifacts.maps["N_hat"] = pred["N_hat"][:nm]

    if pred["logvar"] is not None:
        sigmas = _sigmas_from_logvar(pred["logvar"])
        sample = build_pixel_sample(gt, pred, sigmas, subsample_size, seed)
        report.uq_corr = uq_correlation(sample)
        report.sigma_means = sigma_statistics(sample)
        inter, cross = channel_matrices(sample)
        report.channel_corr = inter.tolist()
        report.cross_corr = cross.tolist()
        report.filtering_curve = filtering_curve(sample, keep_fractions, seed)
        artifacts.scatter = _scatter(sample, scatter_points, seed)
        artifacts.maps["sigma_tex"] = sigmas["tex"][:nm]
        artifacts.maps["sigma_nl"] = sigmas["nl"][:nm]

        t0 = time.perf_counter()
        mc = mc_dropout(model, gt["I"], T=mc_passes, seed=seed)
        infer_ms = 1000.0 * (time.perf_counter() - t0) / len(test_frames)
        report.epistemic = (float(mc.sigma_epi_R.mean()), float(mc.sigma_epi_S.mean()))
        report.extras["mc_r_psnr"] = _psnr_mean(mc.mean_R, gt["R"])
        report.extras["mc_s_psnr"] = _psnr_mean(mc.mean_S, gt["S"])
        report.extras["sigma_total_mean"] = float(sample.sigma_total.mean())
    report.timings = (float(train_s_per_epoch), float(infer_ms))
    return report, artifacts


def evaluate_ensemble(
    members: Sequence[Model],
    test_frames: Sequence[IntrinsicTriple],
    run_id: str,
    seed: int,
    split_name: str,
    subsample_size: int = 200_000,
    keep_fractions: Sequence[float] = DEFAULT_KEEP,
    train_s_per_epoch: float = 0.0,
    n_map_frames: int = 3,
    scatter_points: int = 5000,
) -> tuple[EvalReport, EvalArtifacts]:
    gt = stack_triples(test_frames)
    t0 = time.perf_counter()
    ens = ensemble_predict(members, gt["I"])
    infer_ms = 1000.0 * (time.perf_counter() - t0) / len(test_frames)
    pred = {"R_hat": ens.mean_R, "S_hat": ens.mean_S, "N_hat": ens.mean_N, "I_hat": ens.mean_I}
    report = EvalReport(
        run_id=run_id,
        seed=seed,
        arch_name="deep_ensemble",
        split_name=split_name,
        r_psnr=_psnr_mean(ens.mean_R, gt["R"]),
        s_psnr=_psnr_mean(ens.mean_S, gt["S"]),
        recon_psnr=_psnr_mean(ens.mean_I, gt["I"]) if ens.mean_N is not None else None,
        params_count=sum(count_parameters(m) for m in members),
        epistemic=(float(ens.std_R.mean()), float(ens.std_S.mean())),
    )
    report.extras["members"] = len(members)
    artifacts = EvalArtifacts()
    nm = min(n_map_frames, len(test_frames))
    artifacts.maps = {"input": gt["I"][:nm], "R_hat": ens.mean_R[:nm], "S_hat": ens.mean_S[:nm]}
    if ens.mean_N is not None:
        artifacts.maps["N_hat"] = ens.mean_N[:nm]
    if len(members) > 1 and float(np.var(ens.sigma)) > 0:
        sample = build_pixel_sample(gt, pred, {"total": ens.sigma}, subsample_size, seed)
        report.uq_corr = uq_correlation(sample)
        report.filtering_curve = filtering_curve(sample, keep_fractions, seed)
        artifacts.scatter = _scatter(sample, scatter_points, seed)
    report.timings = (float(train_s_per_epoch), float(infer_ms))
    return report, artifacts
