"""Shared data model: images, intrinsic triples, manifests and run reports.

Images are float32 numpy arrays in CHW layout, RGB channel order, values in
[0, 1] unless a role says otherwise (the non-Lambertian residual is only
bounded below).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

ImageTensor = np.ndarray

DEFAULT_RESOLUTION = 256
COMPOSITION_TOL = 1e-6


def as_image(data: Any, resolution: int | None = None) -> ImageTensor:
    """Coerce array-like input to a (3, H, W) float32 image.

    uint8 input is divided by 255, uint16 by 65535. 2-D (grayscale) input and
    single-channel input are replicated to three channels. HWC input with a
    trailing channel axis of size 1, 3 or 4 is transposed; alpha is dropped.
    """
    arr = np.asarray(data)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    elif arr.dtype == np.uint16:
        arr = arr.astype(np.float32) / 65535.0
    else:
        arr = arr.astype(np.float32, copy=False)

    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    elif arr.ndim == 3:
        if arr.shape[0] not in (1, 3) and arr.shape[-1] in (1, 3, 4):
            arr = np.moveaxis(arr, -1, 0)
        if arr.shape[0] == 4:
            arr = arr[:3]
        if arr.shape[0] == 1:
            arr = np.repeat(arr, 3, axis=0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"cannot interpret array of shape {np.shape(data)} as an RGB image")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if resolution is not None and arr.shape[1:] != (resolution, resolution):
        raise ValueError(f"expected {resolution}x{resolution} image, got {arr.shape[1]}x{arr.shape[2]}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class IntrinsicTriple:
    """Aligned reflectance, shading and non-Lambertian layers plus the observed image.

    ``exact`` marks triples whose image was composed as ``R * S + N`` (synthetic
    data); only those are checked for the composition identity.
    """

    R: ImageTensor
    S: ImageTensor
    N: ImageTensor
    I: ImageTensor
    exact: bool = False

    @property
    def resolution(self) -> int:
        return int(self.I.shape[-1])


def _first_bad(mask: np.ndarray) -> tuple[int, int]:
    c, y, x = np.unravel_index(int(np.argmax(mask)), mask.shape)
    return int(y), int(x)


def validate_triple(t: IntrinsicTriple, resolution: int | None = None) -> list[str]:
    """Return one description per violated invariant; empty when all hold."""
    problems: list[str] = []
    layers = {"R": t.R, "S": t.S, "N": t.N, "I": t.I}
    shapes = {name: np.shape(a) for name, a in layers.items()}
    for name, shape in shapes.items():
        if len(shape) != 3 or shape[0] != 3:
            problems.append(f"{name} has shape {shape}, expected (3, H, W)")
        elif shape[1] != shape[2]:
            problems.append(f"{name} is not square: {shape[1]}x{shape[2]}")
        elif resolution is not None and shape[1] != resolution:
            problems.append(f"{name} resolution {shape[1]} != {resolution}")
    if len(set(shapes.values())) > 1:
        problems.append(f"layer shapes differ: {shapes}")
        return problems

    for name, a in layers.items():
        if not np.isfinite(a).all():
            y, x = _first_bad(~np.isfinite(a))
            problems.append(f"{name} non-finite at ({y},{x})")
    if problems:
        return problems

    for name in ("R", "S"):
        a = layers[name]
        bad = (a < 0) | (a > 1)
        if bad.any():
            y, x = _first_bad(bad)
            problems.append(f"{name} outside [0,1] at ({y},{x})")
    if (t.N < 0).any():
        y, x = _first_bad(t.N < 0)
        problems.append(f"N negative at ({y},{x})")
    if t.exact:
        err = np.abs(t.I.astype(np.float64) - (t.R.astype(np.float64) * t.S + t.N))
        if err.max() > COMPOSITION_TOL:
            problems.append(f"composition mismatch: max |I - (R*S+N)| = {err.max():.3g}")
    return problems


@dataclass(frozen=True)
class FrameRecord:
    scene_id: str
    frame_index: int
    albedo: str | None = None
    clean: str | None = None
    final: str | None = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be nonnegative, got {self.frame_index}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.scene_id, self.frame_index)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameRecord":
        return cls(
            scene_id=str(d["scene_id"]),
            frame_index=int(d["frame_index"]),
            albedo=d.get("albedo"),
            clean=d.get("clean"),
            final=d.get("final"),
        )


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    frames: tuple[FrameRecord, ...]
    resolution: int = DEFAULT_RESOLUTION
    resize_filter: str = "bilinear_antialiased"

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("manifest must contain at least one frame")
        keys = [f.key for f in self.frames]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (scene_id, frame_index) in manifest")

    @property
    def scenes(self) -> list[str]:
        seen: dict[str, None] = {}
        for f in self.frames:
            seen.setdefault(f.scene_id, None)
        return list(seen)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "resolution": self.resolution,
            "resize_filter": self.resize_filter,
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetManifest":
        return cls(
            name=d["name"],
            frames=tuple(FrameRecord.from_dict(f) for f in d["frames"]),
            resolution=int(d.get("resolution", DEFAULT_RESOLUTION)),
            resize_filter=d.get("resize_filter", "bilinear_antialiased"),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, fixed indent, non-finite floats as null."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class EvalReport:
    """Per-run metrics record consumed by the statistics suite and the report CLI."""

    run_id: str
    seed: int
    arch_name: str
    split_name: str
    r_psnr: float
    s_psnr: float
    recon_psnr: float | None = None
    uq_corr: float | None = None
    sigma_means: dict[str, tuple[float, float]] | None = None
    channel_corr: list[list[float]] | None = None
    cross_corr: list[list[float]] | None = None
    filtering_curve: list[tuple[float, float, float]] | None = None
    epistemic: tuple[float, float] | None = None
    params_count: int = 0
    timings: tuple[float, float] | None = None
    extras: dict[str, Any] = field(default_factory=dict)

    TIMING_KEYS = ("timings",)

    def check(self) -> list[str]:
        problems = []
        corrs: list[float] = []
        if self.uq_corr is not None:
            corrs.append(self.uq_corr)
        for m in (self.channel_corr, self.cross_corr):
            if m is not None:
                corrs.extend(v for row in m for v in row if v is not None)
        if any(not (-1.0 <= c <= 1.0) for c in corrs if c is not None and math.isfinite(c)):
            problems.append("correlation outside [-1, 1]")
        for name in ("r_psnr", "s_psnr", "recon_psnr"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                problems.append(f"{name} not finite")
        return problems

    def to_dict(self, include_timings: bool = True) -> dict[str, Any]:
        d = asdict(self)
        if not include_timings:
            for k in self.TIMING_KEYS:
                d.pop(k, None)
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        d = dict(d)
        if d.get("sigma_means") is not None:
            d["sigma_means"] = {k: tuple(v) for k, v in d["sigma_means"].items()}
        if d.get("filtering_curve") is not None:
            d["filtering_curve"] = [tuple(r) for r in d["filtering_curve"]]
        for k in ("epistemic", "timings"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def save(self, results_dir: str | Path) -> Path:
        path = Path(results_dir) / f"{self.run_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_reports(results_dir: str | Path) -> list[EvalReport]:
    paths = sorted(Path(results_dir).glob("*.json"))
    return [EvalReport.load(p) for p in paths]


def group_frames_by_scene(frames: Iterable[FrameRecord]) -> dict[str, list[FrameRecord]]:
    out: dict[str, list[FrameRecord]] = {}
    for f in frames:
        out.setdefault(f.scene_id, []).append(f)
    return {k: sorted(v, key=lambda r: r.frame_index) for k, v in sorted(out.items())}


def stack_triples(triples: Sequence[IntrinsicTriple]) -> dict[str, np.ndarray]:
    """Stack a list of triples into (B, 3, H, W) arrays keyed by layer name."""
    return {k: np.stack([getattr(t, k) for t in triples]) for k in ("R", "S", "N", "I")}
