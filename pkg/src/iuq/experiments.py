"""Experiment grids over (arch, split, seed) jobs, aggregate tables and figures.

Output directory layout::

    <out>/config.json              config snapshot
    <out>/splits/<kind>__s<seed>.json
    <out>/results/<run_id>.json    one EvalReport per job (its presence marks the job done)
    <out>/artifacts/<run_id>.*     scatter CSV and map NPZ for figures
    <out>/runs/<run_id>/phase{1,2}.ckpt, record.json
    <out>/logs/<run_id>.jsonl      per-step loss breakdown
    <out>/tables/*.csv|txt         aggregate tables
    <out>/figures/*.png
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import EvalReport, FrameRecord, IntrinsicTriple, dumps, load_reports
from .data import SintelDerivationConfig, SyntheticSceneConfig, generate_synthetic_dataset, load_sintel_frame, sintel_manifest
from .metrics import DEFAULT_KEEP, DegenerateInputError, EvalArtifacts, evaluate_ensemble, evaluate_model, ood_probe
from .networks import ARCHS, ModelSpec, build_model, load_checkpoint
from .objectives import LossConfig
from .splits import SPLIT_KINDS, SplitResult, SplitSpec, split
from .stats import DegenerateTestError, SeedGroup, aggregate, paired_t_test, write_table
from .trainer import TrainConfig, train, train_ensemble

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "protocol_study",
    "split_gradient",
    "ablation",
    "main_table",
    "downstream",
    "channel_verify",
    "ood_probe",
    "synth_leakage",
)
ENSEMBLE_ARCH = "deep_ensemble"
ALL_ARCHS = ARCHS + (ENSEMBLE_ARCH,)

_DEFAULT_GRID = {
    "protocol_study": (("direct_cnn", "unet2", "proposed_full"), ("random_frame", "scene"), 3),
    "split_gradient": (("unet2",), ("random_frame", "temporal", "scene"), 3),
    "ablation": (("unet2", "unet3_physics", "proposed_noskip", "proposed_full"), ("scene",), 5),
    "main_table": (("direct_cnn", "unet2", "unet3_physics", ENSEMBLE_ARCH, "proposed_noskip", "proposed_full"), ("scene",), 5),
    "downstream": (("proposed_full",), ("scene",), 5),
    "channel_verify": (("proposed_full",), ("scene",), 5),
    "ood_probe": (("proposed_full",), ("scene",), 1),
    "synth_leakage": (("unet2",), ("random_frame", "scene"), 3),
}

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    out_dir: str = "out"
    synthetic: dict[str, Any] | None = None
    sintel_root: str | None = None
    resolution: int | None = None
    archs: list[str] | None = None
    splits: list[str] | None = None
    seeds: list[int] | None = None
    epochs: int | None = None
    test_fraction: float = 0.2
    test_scene_count: int | None = None
    subsample_size: int = 200_000
    mc_passes: int = 10
    keep_fractions: list[float] = field(default_factory=lambda: list(DEFAULT_KEEP))
    ood_images: list[str] | None = None
    train: dict[str, Any] = field(default_factory=dict)
    loss: dict[str, Any] = field(default_factory=dict)
    model: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        archs, splits_, n_seeds = _DEFAULT_GRID[self.experiment]
        self.archs = list(self.archs or archs)
        self.splits = list(self.splits or splits_)
        self.seeds = [int(s) for s in (self.seeds if self.seeds is not None else range(n_seeds))]
        if self.experiment == "protocol_study" and self.epochs is None:
            self.epochs = TrainConfig().protocol_study_epochs
        bad = [a for a in self.archs if a not in ALL_ARCHS]
        if bad:
            raise ConfigError(f"unknown archs {bad}")
        bad = [s for s in self.splits if s not in SPLIT_KINDS]
        if bad:
            raise ConfigError(f"unknown splits {bad}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")
        if (self.synthetic is None) == (self.sintel_root is None):
            raise ConfigError("exactly one of 'synthetic' and 'sintel_root' must be given")
        try:
            self.train_config()
            LossConfig(**self.loss)
            if self.synthetic is not None:
                SyntheticSceneConfig(**self.synthetic)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def train_config(self, seed: int = 0) -> TrainConfig:
        cfg = TrainConfig(**{**self.train, "seed": seed})
        return cfg.with_budget(self.epochs) if self.epochs is not None else cfg

    def loss_config(self, tcfg: TrainConfig) -> LossConfig:
        loss = dict(self.loss)
        loss.setdefault("phase1_epochs", tcfg.phase1_epochs)
        loss.setdefault("nll_warmup_epochs", max(1, min(25, tcfg.phase2_epochs or 25)))
        return LossConfig(**loss)

    @property
    def data_resolution(self) -> int:
        if self.synthetic is not None:
            return SyntheticSceneConfig(**self.synthetic).resolution
        return self.resolution or 256


@dataclass(frozen=True)
class Job:
    arch: str
    split_kind: str
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.arch}__{self.split_kind}__s{self.seed}"


def jobs_for(cfg: ExperimentConfig) -> list[Job]:
    return [Job(a, s, seed) for a in cfg.archs for s in cfg.splits for seed in cfg.seeds]


# --------------------------------------------------------------------------
# data


class Dataset:
    """Manifest plus frame access; synthetic frames are generated once and kept in memory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        if cfg.synthetic is not None:
            self.manifest, self._triples = generate_synthetic_dataset(SyntheticSceneConfig(**cfg.synthetic))
            self.root = None
        else:
            self.root = Path(cfg.sintel_root)
            self.manifest = sintel_manifest(self.root, resolution=cfg.data_resolution)
            self._triples = {}
        self._sintel_cfg = SintelDerivationConfig(resolution=self.manifest.resolution)

    def frame(self, rec: FrameRecord) -> IntrinsicTriple:
        key = rec
        if key not in self._triples:
            self._triples[key] = load_sintel_frame(rec, self._sintel_cfg, self.root)
        return self._triples[key]

    def frames(self, recs: Sequence[FrameRecord]) -> list[IntrinsicTriple]:
        return [self.frame(r) for r in recs]

    def split(self, kind: str, seed: int) -> SplitResult:
        n_scenes = len(self.manifest.scenes)
        count = self.cfg.test_scene_count or max(1, round(n_scenes * 5 / 23))
        return split(self.manifest, SplitSpec.default(kind, seed, self.cfg.test_fraction, count))


_DATASET_CACHE: dict[str, Dataset] = {}


def _dataset(cfg: ExperimentConfig) -> Dataset:
    key = json.dumps({"s": cfg.synthetic, "r": cfg.sintel_root, "res": cfg.resolution}, sort_keys=True)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = Dataset(cfg)
    return _DATASET_CACHE[key]


# --------------------------------------------------------------------------
# jobs


def _write_artifacts(out: Path, run_id: str, art: EvalArtifacts) -> None:
    adir = out / "artifacts"
    adir.mkdir(parents=True, exist_ok=True)
    if art.scatter is not None:
        np.savetxt(adir / f"{run_id}.scatter.csv", art.scatter, delimiter=",", header="sigma,abs_err", comments="")
    if art.maps:
        np.savez_compressed(adir / f"{run_id}.maps.npz", **art.maps)


def run_job(cfg: ExperimentConfig, job: Job) -> EvalReport:
    """Train and evaluate one (arch, split, seed) job, persisting its report."""
    import torch

    torch.set_num_threads(int(os.environ.get("IUQ_THREADS", "1")))
    out = Path(cfg.out_dir)
    ds = _dataset(cfg)
    sp = ds.split(job.split_kind, job.seed)
    sp.save(out / "splits" / f"{job.split_kind}__s{job.seed}.json")
    train_frames = ds.frames(sp.train)
    test_frames = ds.frames(sp.test)
    tcfg = cfg.train_config(job.seed)
    lcfg = cfg.loss_config(tcfg)
    split_info = {"kind": sp.kind, "seed": sp.seed, "test_scenes": list(sp.test_scenes), "n_train": len(sp.train), "n_test": len(sp.test)}
    model_kw = {**cfg.model, "resolution": ds.manifest.resolution}

    if job.arch == ENSEMBLE_ARCH:
        spec = ModelSpec(arch="unet3_physics", **model_kw)
        records = train_ensemble(spec, train_frames, tcfg, lcfg, run_id=job.run_id, out_dir=out)
        report, art = evaluate_ensemble(
            [r.model for r in records], test_frames, job.run_id, job.seed, job.split_kind,
            cfg.subsample_size, cfg.keep_fractions,
            train_s_per_epoch=sum(r.train_s_per_epoch for r in records),
        )
        run_records = [r.to_dict() for r in records]
    else:
        spec = ModelSpec(arch=job.arch, **model_kw)
        model = build_model(spec, seed=job.seed)
        rec = train(model, train_frames, tcfg, lcfg, run_id=job.run_id, out_dir=out, split=split_info)
        report, art = evaluate_model(
            model, test_frames, job.run_id, job.seed, job.split_kind,
            cfg.subsample_size, cfg.keep_fractions, cfg.mc_passes, rec.train_s_per_epoch,
        )
        run_records = [rec.to_dict()]
    report.extras["split"] = split_info
    (out / "runs" / job.run_id).mkdir(parents=True, exist_ok=True)
    for r in run_records:
        r.pop("train_seconds", None)
    (out / "runs" / job.run_id / "record.json").write_text(dumps(run_records))
    _write_artifacts(out, job.run_id, art)
    report.save(out / "results")
    return report


def _run_job_safe(cfg_dict: dict[str, Any], job: Job) -> tuple[Job, str | None]:
    try:
        run_job(ExperimentConfig.from_dict(cfg_dict), job)
        return job, None
    except Exception as exc:  # noqa: BLE001 - job failures are collected, not fatal
        log.exception("job %s failed", job.run_id)
        return job, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Any]:
    """Run every missing job, then aggregate. Returns a summary with failures and tables."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps(cfg.to_dict()))
    todo = [j for j in jobs_for(cfg) if not (out / "results" / f"{j.run_id}.json").exists()]
    log.info("%d jobs to run (%d already done)", len(todo), len(jobs_for(cfg)) - len(todo))
    failures: dict[str, str] = {}
    cfg_dict = cfg.to_dict()
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for job, err in pool.map(_run_job_safe, [cfg_dict] * len(todo), todo):
                if err:
                    failures[job.run_id] = err
    else:
        for job in todo:
            _, err = _run_job_safe(cfg_dict, job)
            if err:
                failures[job.run_id] = err
    if failures:
        (out / "failures.json").write_text(dumps(failures))
    summary = summarize(out)
    summary["failures"] = failures
    if cfg.experiment == "ood_probe" and not failures:
        summary["ood"] = run_ood_probe(cfg)
    return summary


# --------------------------------------------------------------------------
# aggregation


def _by(reports: Sequence[EvalReport], arch: str, split_kind: str) -> dict[int, EvalReport]:
    return {r.seed: r for r in reports if r.arch_name == arch and r.split_name == split_kind}


def _agg(values: Sequence[float | None]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return aggregate(vals)


def _pm(mean: float | None, std: float | None, digits: int = 2) -> str:
    if mean is None:
        return "---"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def compare_splits(reports: Sequence[EvalReport], arch: str, a: str, b: str, metric: str) -> dict[str, Any]:
    """Paired comparison of ``metric`` between split kinds ``a`` and ``b`` over shared seeds."""
    ra, rb = _by(reports, arch, a), _by(reports, arch, b)
    seeds = sorted(set(ra) & set(rb))
    pairs = tuple((s, getattr(ra[s], metric), getattr(rb[s], metric)) for s in seeds)
    res: dict[str, Any] = {
        "arch": arch, "metric": metric, "a": a, "b": b, "n": len(pairs),
        "mean_a": _agg([p[1] for p in pairs])[0], "std_a": _agg([p[1] for p in pairs])[1],
        "mean_b": _agg([p[2] for p in pairs])[0], "std_b": _agg([p[2] for p in pairs])[1],
    }
    try:
        t = paired_t_test(SeedGroup(metric, a, b, pairs))
        res.update(t=t.t, df=t.df, p=t.p, mean_delta=t.mean_delta, degenerate=False)
    except DegenerateTestError as exc:
        res.update(t=None, df=None, p=None, mean_delta=exc.mean_delta, degenerate=True, reason=str(exc))
    return res


def _protocol_tables(cfg: ExperimentConfig, reports, tdir: Path, name: str) -> dict[str, Any]:
    a, b = "random_frame", "scene"
    rows, tests = [], []
    for arch in cfg.archs:
        for metric in ("r_psnr", "s_psnr"):
            c = compare_splits(reports, arch, a, b, metric)
            tests.append(c)
            rows.append([arch, metric.upper(), _pm(c["mean_a"], c["std_a"]), _pm(c["mean_b"], c["std_b"]),
                         c["mean_delta"], c["t"], c["p"]])
    headers = ["arch", "metric", "frame_level", "scene_level", "delta", "paired_t", "p"]
    text = write_table(tdir / name, headers, rows)
    (tdir / f"{name}_ttests.json").write_text(dumps(tests))
    return {"text": text, "tests": tests}


def _split_gradient_table(cfg: ExperimentConfig, reports, tdir: Path) -> dict[str, Any]:
    rows, means = [], {}
    arch = cfg.archs[0]
    for kind in cfg.splits:
        rs = list(_by(reports, arch, kind).values())
        r = _agg([x.r_psnr for x in rs])
        s = _agg([x.s_psnr for x in rs])
        means[kind] = r[0]
        rows.append([kind, _pm(*r), _pm(*s), len(rs)])
    text = write_table(tdir / "split_gradient", ["split", "R_PSNR", "S_PSNR", "n_seeds"], rows)
    order = [means.get(k) for k in ("random_frame", "temporal", "scene")]
    monotone = None
    if all(v is not None for v in order):
        monotone = order[0] >= order[1] >= order[2]
    return {"text": text, "r_psnr_means": means, "monotone": monotone}


def _ablation_table(cfg: ExperimentConfig, reports, tdir: Path) -> dict[str, Any]:
    kind = cfg.splits[0]
    base = _agg([r.r_psnr for r in _by(reports, "unet2", kind).values()])[0]
    rows, stds = [], {}
    for arch in ("unet2", "unet3_physics", "proposed_noskip", "proposed_full"):
        rs = list(_by(reports, arch, kind).values())
        if not rs:
            continue
        r = _agg([x.r_psnr for x in rs])
        u = _agg([x.uq_corr for x in rs]) if arch.startswith("proposed") else (None, None)
        stds[arch] = u[1]
        delta = None if arch == "unet2" or base is None else r[0] - base
        rows.append([arch, _pm(*r), delta, _pm(*u, digits=3)])
    text = write_table(tdir / "ablation", ["configuration", "R_PSNR", "delta_R", "UQ_corr"], rows)
    return {"text": text, "uq_corr_std": stds}


def _main_tables(cfg: ExperimentConfig, reports, tdir: Path) -> dict[str, Any]:
    kind = cfg.splits[0]
    rows, cost = [], []
    for arch in cfg.archs:
        rs = list(_by(reports, arch, kind).values())
        if not rs:
            continue
        rows.append([arch, _pm(*_agg([x.r_psnr for x in rs])), _pm(*_agg([x.s_psnr for x in rs])),
                     _pm(*_agg([x.recon_psnr for x in rs])), _pm(*_agg([x.uq_corr for x in rs]), digits=3)])
        cost.append([arch, rs[0].params_count / 1000.0,
                     _agg([x.timings[0] for x in rs if x.timings])[0], _agg([x.timings[1] for x in rs if x.timings])[0]])
        if arch == "proposed_full":
            rows.append(["mc_dropout_T10", _pm(*_agg([x.extras.get("mc_r_psnr") for x in rs])),
                         _pm(*_agg([x.extras.get("mc_s_psnr") for x in rs])), "---", "---"])
    text = write_table(tdir / "main_table", ["model", "R_PSNR", "S_PSNR", "Recon", "UQ_corr"], rows)
    text += write_table(tdir / "cost", ["model", "params_K", "train_s_per_epoch", "infer_ms"], cost)
    return {"text": text}


def _sigma_tables(reports, tdir: Path, kind: str) -> dict[str, Any]:
    rs = [r for r in _by(reports, "proposed_full", kind).values()]
    if not rs:
        return {}
    text = ""
    rows = []
    for s in ("tex", "light", "nl"):
        rows.append([f"sigma_{s}", _agg([r.sigma_means[s][0] for r in rs])[0], _agg([r.sigma_means[s][1] for r in rs])[0]])
    rows.append(["epistemic_R", _agg([r.epistemic[0] for r in rs])[0], None])
    rows.append(["epistemic_S", _agg([r.epistemic[1] for r in rs])[0], None])
    text += write_table(tdir / "uncertainty_sources", ["source", "mean_sigma", "std_sigma"], rows)
    inter = np.mean([r.channel_corr for r in rs], axis=0)
    cross = np.mean([r.cross_corr for r in rs], axis=0)
    names = ["sigma_tex", "sigma_light", "sigma_nl"]
    text += write_table(tdir / "inter_channel", ["", *names], [[n, *map(float, row)] for n, row in zip(names, inter)])
    text += write_table(tdir / "cross_corr", ["", "err_R", "err_S", "err_N"], [[n, *map(float, row)] for n, row in zip(names, cross)])
    means = {s: row[1] for s, row in zip(("tex", "light", "nl"), rows)}
    ordering = sorted(means, key=lambda s: -means[s])
    return {"text": text, "sigma_ordering": ordering, "inter_channel": inter.tolist(), "cross_corr": cross.tolist()}


def _filtering_table(reports, tdir: Path, kind: str) -> dict[str, Any]:
    rs = [r for r in _by(reports, "proposed_full", kind).values() if r.filtering_curve]
    if not rs:
        return {}
    curves = np.array([r.filtering_curve for r in rs])  # (seeds, keeps, 3)
    mean = curves.mean(axis=0)
    rows = [[f"{k * 100:.0f}%", g, rnd, f"{100 * (1 - g / rnd):+.1f}%"] for k, g, rnd in mean]
    text = write_table(tdir / "filtering", ["keep", "sigma_guided_mse", "random_mse", "sigma_benefit"], rows)
    return {"text": text, "curve": mean.tolist()}


def summarize(out_dir: str | Path) -> dict[str, Any]:
    """Rebuild every aggregate table of an experiment directory from its persisted reports."""
    out = Path(out_dir)
    cfg = ExperimentConfig.load(out / "config.json")
    reports = load_reports(out / "results")
    tdir = out / "tables"
    summary: dict[str, Any] = {"experiment": cfg.experiment, "n_reports": len(reports)}
    exp = cfg.experiment
    if exp in ("protocol_study", "synth_leakage"):
        summary["protocol"] = _protocol_tables(cfg, reports, tdir, exp)
    if exp == "split_gradient":
        summary["split_gradient"] = _split_gradient_table(cfg, reports, tdir)
    if exp == "ablation":
        summary["ablation"] = _ablation_table(cfg, reports, tdir)
    if exp == "main_table":
        summary["main"] = _main_tables(cfg, reports, tdir)
    if exp in ("main_table", "channel_verify"):
        summary["sigma"] = _sigma_tables(reports, tdir, cfg.splits[0])
    if exp in ("main_table", "downstream"):
        summary["filtering"] = _filtering_table(reports, tdir, cfg.splits[0])
    (out / "summary.json").write_text(dumps(summary))
    return summary


# --------------------------------------------------------------------------
# OOD probe


def fixture_photos() -> dict[str, np.ndarray]:
    """Public-domain / CC0 photographs bundled with scikit-image."""
    from skimage import data

    return {"indoor_coffee": data.coffee(), "texture_chelsea": data.chelsea(), "outdoor_rocket": data.rocket()}


def run_ood_probe(cfg: ExperimentConfig) -> dict[str, Any]:
    from PIL import Image

    out = Path(cfg.out_dir)
    if cfg.ood_images:
        images = {Path(p).stem: np.asarray(Image.open(p).convert("RGB")) for p in cfg.ood_images}
    else:
        images = fixture_photos()
    results = {}
    for job in jobs_for(cfg):
        if job.arch not in ("proposed_full", "proposed_noskip"):
            continue
        ckpts = sorted((out / "runs" / job.run_id).glob("phase*.ckpt"))
        model = load_checkpoint(ckpts[-1])
        rows = {}
        for name, img in images.items():
            try:
                nl, tex = ood_probe(model, img)
                rows[name] = {"corr_nl_N": nl, "corr_tex_N": tex}
            except DegenerateInputError as exc:
                rows[name] = {"error": str(exc)}
        results[job.run_id] = rows
    (out / "ood").mkdir(exist_ok=True)
    (out / "ood" / "ood_probe.json").write_text(dumps(results))
    table = [[rid, name, v.get("corr_nl_N"), v.get("corr_tex_N")] for rid, rows in results.items() for name, v in rows.items()]
    write_table(out / "tables" / "ood_probe", ["run", "photo", "corr_sigma_nl_N", "corr_sigma_tex_N"], table)
    return results


# --------------------------------------------------------------------------
# figures


GRID_COLUMNS = ("input", "R_hat", "S_hat", "N_hat", "sigma_tex", "sigma_nl")


def _norm01(m: np.ndarray) -> np.ndarray:
    from .uncertainty import percentile_normalize

    return percentile_normalize(m)


def emit_figures(out_dir: str | Path) -> dict[str, Any]:
    """Calibration scatter (with linear fit) and qualitative grids for every run with artifacts."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    fdir = out / "figures"
    fdir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, Any] = {"files": [], "warnings": []}
    for rpath in sorted((out / "results").glob("*.json")):
        run_id = rpath.stem
        scatter_path = out / "artifacts" / f"{run_id}.scatter.csv"
        if scatter_path.exists():
            pts = np.loadtxt(scatter_path, delimiter=",", skiprows=1, ndmin=2)
            slope, intercept = np.polyfit(pts[:, 0], pts[:, 1], 1)
            fig, ax = plt.subplots(figsize=(4.5, 4))
            ax.scatter(pts[:, 0], pts[:, 1], s=2, alpha=0.3)
            xs = np.linspace(pts[:, 0].min(), pts[:, 0].max(), 2)
            ax.plot(xs, slope * xs + intercept, "r-")
            ax.set_xlabel("predicted sigma")
            ax.set_ylabel("|reconstruction error|")
            ax.set_title(run_id, fontsize=8)
            fig.tight_layout()
            f = fdir / f"{run_id}_calibration.png"
            fig.savefig(f, dpi=100)
            plt.close(fig)
            (fdir / f"{run_id}_calibration_fit.csv").write_text(f"slope,intercept,n\n{slope!r},{intercept!r},{len(pts)}\n")
            manifest["files"] += [f.name, f"{run_id}_calibration_fit.csv"]
        else:
            manifest["warnings"].append(f"{run_id}: no scatter data")

        maps_path = out / "artifacts" / f"{run_id}.maps.npz"
        if not maps_path.exists():
            manifest["warnings"].append(f"{run_id}: no maps")
            continue
        with np.load(maps_path) as z:
            maps = {k: z[k] for k in z.files}
        cols = [c for c in GRID_COLUMNS if c in maps]
        missing = [c for c in GRID_COLUMNS if c not in maps]
        if "input" not in maps:
            manifest["warnings"].append(f"{run_id}: grid skipped, no input frames")
            continue
        if missing:
            manifest["warnings"].append(f"{run_id}: grid without {missing}")
        f = grid_figure(maps, cols, fdir / f"{run_id}_grid.png")
        manifest["files"].append(f.name)
    (fdir / "manifest.json").write_text(dumps(manifest))
    return manifest


def grid_figure(maps: dict[str, np.ndarray], cols: Sequence[str], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_rows = len(maps[cols[0]])
    fig, axes = plt.subplots(n_rows, len(cols), figsize=(2 * len(cols), 2 * n_rows), squeeze=False)
    for i in range(n_rows):
        for j, c in enumerate(cols):
            m = maps[c][i]
            ax = axes[i, j]
            if m.ndim == 3:
                ax.imshow(np.clip(np.moveaxis(m, 0, -1), 0, 1))
            else:
                ax.imshow(_norm01(m), cmap="magma", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(c, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
