"""Aleatoric maps from the log-variance head, MC-dropout epistemic maps, ensemble spread."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from PIL import Image

from .networks import Model, ModelOutputs, to_batch
from .objectives import total_logvar

SOURCES = ("tex", "light", "nl")


class UnsupportedCapabilityError(TypeError):
    """The model does not produce the requested kind of output."""


@dataclass
class UncertaintyMaps:
    """Per-pixel standard deviations, each (B, H, W) or (H, W)."""

    sigma_tex: np.ndarray | None = None
    sigma_light: np.ndarray | None = None
    sigma_nl: np.ndarray | None = None
    sigma_total: np.ndarray | None = None
    sigma_epi_R: np.ndarray | None = None
    sigma_epi_S: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


def aleatoric_maps(out: ModelOutputs) -> UncertaintyMaps:
    if out.logvar is None:
        raise UnsupportedCapabilityError("model has no log-variance head")
    lv = out.logvar
    total = total_logvar(lv)[..., 0, :, :]
    sig = torch.exp(0.5 * lv)
    return UncertaintyMaps(
        sigma_tex=_np(sig[..., 0, :, :]),
        sigma_light=_np(sig[..., 1, :, :]),
        sigma_nl=_np(sig[..., 2, :, :]),
        sigma_total=_np(torch.exp(0.5 * total)),
    )


@dataclass
class MCDropoutResult:
    mean_R: np.ndarray
    mean_S: np.ndarray
    sigma_epi_R: np.ndarray
    sigma_epi_S: np.ndarray
    mean_N: np.ndarray | None = None
    mean_logvar: np.ndarray | None = None
    passes_R: np.ndarray | None = None
    passes_S: np.ndarray | None = None


def epistemic_sigma(passes: np.ndarray) -> np.ndarray:
    """Population variance over the pass axis (0), averaged over channels, square-rooted.

    ``passes`` is (T, ..., C, H, W); result drops the pass and channel axes.
    """
    var = passes.var(axis=0)
    return np.sqrt(var.mean(axis=-3))


def mc_dropout(model: Model, image: Any, T: int = 10, seed: int = 0, keep_passes: bool = False) -> MCDropoutResult:
    """``T`` stochastic forward passes with dropout active; means and epistemic std."""
    if T < 2:
        raise ValueError("MC dropout needs T >= 2 passes")
    x = to_batch(image)
    squeeze = np.ndim(image) == 3
    Rs, Ss, Ns, lvs = [], [], [], []
    with torch.no_grad(), torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for _ in range(T):
            out = model(x, stochastic=True)
            Rs.append(_np(out.R_hat))
            Ss.append(_np(out.S_hat))
            if out.N_hat is not None:
                Ns.append(_np(out.N_hat))
            if out.logvar is not None:
                lvs.append(_np(out.logvar))
    R = np.stack(Rs)
    S = np.stack(Ss)
    res = MCDropoutResult(
        mean_R=R.mean(axis=0),
        mean_S=S.mean(axis=0),
        sigma_epi_R=epistemic_sigma(R),
        sigma_epi_S=epistemic_sigma(S),
        mean_N=np.stack(Ns).mean(axis=0) if Ns else None,
        mean_logvar=np.stack(lvs).mean(axis=0) if lvs else None,
        passes_R=R if keep_passes else None,
        passes_S=S if keep_passes else None,
    )
    if squeeze:
        for f in fields(res):
            v = getattr(res, f.name)
            if v is not None:
                setattr(res, f.name, v[:, 0] if f.name.startswith("passes") else v[0])
    return res


@dataclass
class EnsemblePrediction:
    mean_R: np.ndarray
    mean_S: np.ndarray
    std_R: np.ndarray
    std_S: np.ndarray
    mean_N: np.ndarray | None
    mean_I: np.ndarray
    # channel-averaged std over R and S, the ensemble's scalar uncertainty
    sigma: np.ndarray


def ensemble_predict(members: Sequence[Model], image: Any) -> EnsemblePrediction:
    """Elementwise mean and population std of member predictions (deterministic passes)."""
    if not members:
        raise ValueError("ensemble has no members")
    specs = {m.spec for m in members}
    if len(specs) != 1:
        raise ValueError(f"ensemble members have mismatched specs: {specs}")
    x = to_batch(image)
    Rs, Ss, Ns, Is = [], [], [], []
    with torch.no_grad():
        for m in members:
            out = m(x, stochastic=False)
            Rs.append(_np(out.R_hat))
            Ss.append(_np(out.S_hat))
            Is.append(_np(out.I_hat))
            if out.N_hat is not None:
                Ns.append(_np(out.N_hat))
    R, S = np.stack(Rs), np.stack(Ss)
    std_R, std_S = R.std(axis=0), S.std(axis=0)
    pred = EnsemblePrediction(
        mean_R=R.mean(axis=0),
        mean_S=S.mean(axis=0),
        std_R=std_R,
        std_S=std_S,
        mean_N=np.stack(Ns).mean(axis=0) if Ns else None,
        mean_I=np.stack(Is).mean(axis=0),
        sigma=0.5 * (std_R.mean(axis=-3) + std_S.mean(axis=-3)),
    )
    if np.ndim(image) == 3:
        for f in fields(pred):
            v = getattr(pred, f.name)
            if v is not None:
                setattr(pred, f.name, v[0])
    return pred


def percentile_normalize(m: np.ndarray, lo: float = 1.0, hi: float = 99.0) -> np.ndarray:
    """Map the [lo, hi] percentile range to [0, 1]; a constant map becomes 0.5."""
    m = np.asarray(m, dtype=np.float64)
    a, b = np.percentile(m, [lo, hi])
    if not b > a:
        return np.full(m.shape, 0.5)
    return np.clip((m - a) / (b - a), 0.0, 1.0)


def save_map_png(m: np.ndarray, path: str | Path) -> Path:
    """Write a 2-D map as a 16-bit grayscale PNG after per-image percentile normalization."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = np.round(percentile_normalize(m) * 65535.0).astype(np.uint16)
    Image.fromarray(v).save(path)
    return path


def save_maps_npz(maps: UncertaintyMaps, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, **maps.as_dict())
    return path


def load_maps_npz(path: str | Path) -> UncertaintyMaps:
    with np.load(path) as z:
        return UncertaintyMaps(**{k: z[k] for k in z.files})
