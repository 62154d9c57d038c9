"""Two-phase training for the proposed models, single-phase training for baselines, ensembles."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from .core import IntrinsicTriple, stack_triples
from .networks import PROPOSED, Model, ModelSpec, build_model, save_checkpoint
from .objectives import LossBreakdown, LossConfig, compute_loss, warmup_alpha


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, snapshot: dict[str, Any]):
        self.snapshot = snapshot
        super().__init__(f"{message}; batch snapshot: {json.dumps(snapshot, sort_keys=True)}")


@dataclass(frozen=True)
class TrainConfig:
    phase1_epochs: int = 55
    phase2_epochs: int = 25
    baseline_epochs: int = 60
    protocol_study_epochs: int = 30
    lr_main: float = 5e-4
    lr_uncertainty: float = 2e-4
    batch_size: int = 8
    seed: int = 0
    ensemble_members: int = 5
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        if self.lr_main <= 0 or self.lr_uncertainty <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.phase1_epochs < 1 or self.baseline_epochs < 1 or self.phase2_epochs < 0:
            raise ValueError("invalid epoch counts")

    def with_budget(self, epochs: int) -> "TrainConfig":
        """Same config with a total epoch budget; proposed phases keep the 55:25 ratio."""
        total = self.phase1_epochs + self.phase2_epochs
        p1 = max(1, round(epochs * self.phase1_epochs / total))
        p2 = max(1, epochs - p1) if self.phase2_epochs > 0 else 0
        return replace(self, baseline_epochs=epochs, phase1_epochs=p1, phase2_epochs=p2)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunRecord:
    run_id: str
    arch: str
    seed: int
    config: dict[str, Any]
    split: dict[str, Any] | None = None
    checkpoints: list[str] = field(default_factory=list)
    history: list[dict[str, Any]] = field(default_factory=list)
    lr_history: list[dict[str, float]] = field(default_factory=list)
    train_seconds: float = 0.0
    model: Model | None = field(default=None, repr=False, compare=False)

    @property
    def epochs_run(self) -> int:
        return len(self.history)

    @property
    def train_s_per_epoch(self) -> float:
        return self.train_seconds / max(1, self.epochs_run)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(replace(self, model=None))
        d.pop("model")
        return d


def _cosine(epoch: int, total: int) -> float:
    """Cosine-annealing factor for ``epoch`` (0-based) over ``total`` epochs, reaching 0 at ``total``."""
    return 0.5 * (1.0 + math.cos(math.pi * epoch / total))


def _snapshot(batch: dict[str, torch.Tensor], out, epoch: int, step: int, phase: str) -> dict[str, Any]:
    snap: dict[str, Any] = {"epoch": epoch, "step": step, "phase": phase}
    for name, t in list(batch.items()) + [("R_hat", out.R_hat), ("S_hat", out.S_hat), ("logvar", out.logvar)]:
        if t is None:
            continue
        t = t.detach().float()
        finite = torch.isfinite(t)
        snap[name] = {
            "min": float(t[finite].min()) if finite.any() else None,
            "max": float(t[finite].max()) if finite.any() else None,
            "nonfinite": int((~finite).sum()),
        }
    return snap


class _JsonlLog:
    def __init__(self, path: Path | None):
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = path.open("w")

    def write(self, record: dict[str, Any]) -> None:
        if self.fh is not None:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _set_requires_grad(params, flag: bool) -> None:
    for p in params:
        p.requires_grad_(flag)


def train(
    model: Model,
    train_frames: Sequence[IntrinsicTriple],
    cfg: TrainConfig | None = None,
    losses: LossConfig | None = None,
    run_id: str | None = None,
    out_dir: str | Path | None = None,
    split: dict[str, Any] | None = None,
) -> RunRecord:
    """Train ``model`` in place and return its run record.

    Proposed models: phase 1 trains everything except the uncertainty head on
    reconstruction + smoothness; phase 2 trains all parameters with two Adam
    groups (main, uncertainty) and the NLL term scaled by the warmup
    coefficient. Baselines: one phase of ``baseline_epochs``. Each phase uses
    a fresh optimizer and its own cosine schedule (stepped per epoch).
    """
    cfg = cfg or TrainConfig()
    losses = losses or LossConfig(phase1_epochs=cfg.phase1_epochs)
    if not train_frames:
        raise ValueError("training set is empty")
    spec = model.spec
    run_id = run_id or f"{spec.arch}-s{cfg.seed}"
    out_dir = Path(out_dir) if out_dir is not None else None

    data = {k: torch.from_numpy(v) for k, v in stack_triples(train_frames).items()}
    n = data["I"].shape[0]
    record = RunRecord(
        run_id=run_id,
        arch=spec.arch,
        seed=cfg.seed,
        config={"train": cfg.to_dict(), "loss": asdict(losses), "model": spec.to_dict()},
        split=split,
    )
    log = _JsonlLog(out_dir / "logs" / f"{run_id}.jsonl" if out_dir else None)

    if spec.arch in PROPOSED:
        phases = [("phase1", cfg.phase1_epochs, False)]
        if cfg.phase2_epochs > 0:
            phases.append(("phase2", cfg.phase2_epochs, True))
    else:
        phases = [("phase1", cfg.baseline_epochs, False)]

    start = time.perf_counter()
    epoch_global = 0
    step = 0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed + 7919)
        model.train()
        try:
            for phase, epochs, joint in phases:
                unc = model.uncertainty_parameters()
                _set_requires_grad(unc, joint)
                groups = [{"params": model.main_parameters(), "lr": cfg.lr_main, "name": "main"}]
                if joint and unc:
                    groups.append({"params": unc, "lr": cfg.lr_uncertainty, "name": "uncertainty"})
                opt = torch.optim.Adam(groups)
                base_lrs = [g["lr"] for g in opt.param_groups]
                for epoch in range(epochs):
                    factor = _cosine(epoch, epochs)
                    for g, lr0 in zip(opt.param_groups, base_lrs):
                        g["lr"] = lr0 * factor
                    alpha = warmup_alpha(epoch, losses) if joint else 0.0
                    order = np.random.default_rng([cfg.seed, epoch_global]).permutation(n)
                    sums: dict[str, float] = {}
                    for b0 in range(0, n, cfg.batch_size):
                        idx = torch.from_numpy(order[b0 : b0 + cfg.batch_size])
                        batch = {k: v[idx] for k, v in data.items()}
                        out = model(batch["I"], stochastic=True)
                        loss, parts = compute_loss(out, batch, losses, alpha=alpha, use_nll=joint)
                        if not torch.isfinite(loss):
                            raise NonFiniteLossError(
                                f"non-finite loss in {run_id}", _snapshot(batch, out, epoch_global, step, phase)
                            )
                        opt.zero_grad(set_to_none=True)
                        loss.backward()
                        if cfg.grad_clip is not None:
                            torch.nn.utils.clip_grad_norm_([p for g in groups for p in g["params"]], cfg.grad_clip)
                        opt.step()
                        lrs = {g["name"]: g["lr"] for g in opt.param_groups}
                        record.lr_history.append({"step": step, "phase": phase, **lrs})
                        log.write({"step": step, "epoch": epoch_global, "phase": phase, **parts.to_dict()})
                        w = len(idx)
                        for k, v in parts.to_dict().items():
                            sums[k] = sums.get(k, 0.0) + v * w
                        step += 1
                    record.history.append(
                        {"epoch": epoch_global, "phase": phase, "alpha": alpha, **{k: v / n for k, v in sums.items()}}
                    )
                    epoch_global += 1
                if out_dir is not None:
                    path = save_checkpoint(model, out_dir / "runs" / run_id / f"{phase}.ckpt", {"run_id": run_id})
                    record.checkpoints.append(str(path))
        finally:
            log.close()
            _set_requires_grad(model.parameters(), True)
    model.eval()
    record.train_seconds = time.perf_counter() - start
    record.model = model
    return record


def train_ensemble(
    spec: ModelSpec,
    frames: Sequence[IntrinsicTriple],
    cfg: TrainConfig | None = None,
    losses: LossConfig | None = None,
    run_id: str | None = None,
    out_dir: str | Path | None = None,
) -> list[RunRecord]:
    """Train ``cfg.ensemble_members`` copies differing only by seed (``seed + i``)."""
    cfg = cfg or TrainConfig()
    if cfg.ensemble_members < 1:
        raise ValueError("ensemble_members must be >= 1")
    run_id = run_id or f"ens-{spec.arch}-s{cfg.seed}"
    records = []
    for i in range(cfg.ensemble_members):
        member_cfg = replace(cfg, seed=cfg.seed + i)
        model = build_model(spec, seed=member_cfg.seed)
        records.append(train(model, frames, member_cfg, losses, run_id=f"{run_id}-m{i}", out_dir=out_dir))
    return records
