"""Reconstruction, shading-smoothness and heteroscedastic NLL losses.

All reductions are means over pixels and channels, so the weights do not
depend on resolution. Tensors are (B, C, H, W) or (C, H, W).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import torch

from .networks import ModelOutputs


@dataclass(frozen=True)
class LossConfig:
    lambda_smooth: float = 0.02
    lambda_nll: float = 1.0
    n_weight: float = 0.5
    nll_warmup_epochs: int = 25
    phase1_epochs: int = 55

    def __post_init__(self) -> None:
        if min(self.lambda_smooth, self.lambda_nll, self.n_weight) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.nll_warmup_epochs < 1 or self.phase1_epochs < 1:
            raise ValueError("epoch counts must be >= 1")


@dataclass
class LossBreakdown:
    recon_R: float
    recon_S: float
    recon_N: float
    recon_I: float
    smooth: float
    nll: float
    total: float
    alpha: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).square().mean()


def recon_loss(
    out: ModelOutputs, gt: Mapping[str, torch.Tensor], cfg: LossConfig | None = None, use_image_term: bool = True
) -> dict[str, torch.Tensor]:
    """Per-component MSEs. ``recon_N`` is omitted when the model has no N head."""
    cfg = cfg or LossConfig()
    terms = {"recon_R": _mse(out.R_hat, gt["R"]), "recon_S": _mse(out.S_hat, gt["S"])}
    if out.N_hat is not None:
        terms["recon_N"] = cfg.n_weight * _mse(out.N_hat, gt["N"])
    if use_image_term:
        terms["recon_I"] = _mse(out.I_hat, gt["I"])
    return terms


def smoothness_loss(S_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference along x plus along y."""
    dx = S_hat[..., :, 1:] - S_hat[..., :, :-1]
    dy = S_hat[..., 1:, :] - S_hat[..., :-1, :]
    return dx.square().mean() + dy.square().mean()


def total_logvar(logvar: torch.Tensor) -> torch.Tensor:
    """Log-sum-exp over the three source channels, keeping a singleton channel axis."""
    if logvar.shape[-3] != 3:
        raise ValueError(f"expected 3 log-variance channels, got {logvar.shape[-3]}")
    m = logvar.amax(dim=-3, keepdim=True)
    return m + torch.log(torch.exp(logvar - m).sum(dim=-3, keepdim=True))


def nll_loss(I: torch.Tensor, I_hat: torch.Tensor, total_lv: torch.Tensor) -> torch.Tensor:
    """Gaussian NLL (without the constant) with the squared error averaged over color channels."""
    e2 = (I - I_hat).square().mean(dim=-3, keepdim=True)
    return (0.5 * (total_lv + e2 * torch.exp(-total_lv))).mean()


def warmup_alpha(epoch_in_phase2: int, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    if epoch_in_phase2 < 0:
        raise ValueError("epoch must be >= 0")
    return min(1.0, epoch_in_phase2 / cfg.nll_warmup_epochs)


def compute_loss(
    out: ModelOutputs,
    gt: Mapping[str, torch.Tensor],
    cfg: LossConfig | None = None,
    alpha: float = 0.0,
    use_nll: bool = False,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Total objective and its breakdown.

    The image-formation term is only used for models with an N head; two-head
    models are trained on component MSE (+ smoothness) alone.
    """
    cfg = cfg or LossConfig()
    terms = recon_loss(out, gt, cfg, use_image_term=out.N_hat is not None)
    smooth = smoothness_loss(out.S_hat)
    total = sum(terms.values()) + cfg.lambda_smooth * smooth
    nll = torch.zeros((), dtype=total.dtype)
    if use_nll:
        if out.logvar is None:
            raise ValueError("NLL requested for a model without an uncertainty head")
        nll = nll_loss(gt["I"], out.I_hat, total_logvar(out.logvar))
        total = total + alpha * cfg.lambda_nll * nll
    def f(t):
        return float(t.detach()) if t is not None else 0.0

    breakdown = LossBreakdown(
        recon_R=f(terms["recon_R"]),
        recon_S=f(terms["recon_S"]),
        recon_N=f(terms.get("recon_N")),
        recon_I=f(terms.get("recon_I")),
        smooth=f(smooth),
        nll=f(nll),
        total=f(total),
        alpha=float(alpha) if use_nll else 0.0,
    )
    return total, breakdown
