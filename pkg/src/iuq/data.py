"""Intrinsic triples from MPI Sintel layers, plus a procedural generator with exact ground truth.

Sintel layout on disk::

    <root>/albedo/<scene>/frame_0001.png
    <root>/clean/<scene>/frame_0001.png
    <root>/final/<scene>/frame_0001.png
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .core import DatasetManifest, FrameRecord, ImageTensor, IntrinsicTriple, as_image

LAYERS = ("albedo", "clean", "final")
FRAME_PATTERN = "frame_{:04d}.png"


class FrameLoadError(OSError):
    """A layer file is missing or cannot be decoded."""

    def __init__(self, path: str | Path, reason: str = "missing"):
        self.path = str(path)
        super().__init__(f"cannot load {self.path}: {reason}")


class LayerMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SintelDerivationConfig:
    epsilon: float = 1e-4
    shading_norm: float = 2.0
    resolution: int = 256
    resize_filter: str = "bilinear_antialiased"

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.shading_norm <= 0:
            raise ValueError("shading_norm must be > 0")
        if self.resize_filter != "bilinear_antialiased":
            raise ValueError(f"unsupported resize filter {self.resize_filter!r}")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise LayerMismatchError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def derive_shading(clean: ImageTensor, R: ImageTensor, cfg: SintelDerivationConfig | None = None) -> ImageTensor:
    """Per-channel shading ``clip(clean / (R + eps) / shading_norm, 0, 1)``."""
    cfg = cfg or SintelDerivationConfig()
    _check_same_shape(clean, R, "derive_shading")
    raw = np.asarray(clean, dtype=np.float64) / (np.asarray(R, dtype=np.float64) + cfg.epsilon)
    return np.clip(raw / cfg.shading_norm, 0.0, 1.0).astype(np.float32)


def derive_nonlambertian(final: ImageTensor, clean: ImageTensor) -> ImageTensor:
    _check_same_shape(final, clean, "derive_nonlambertian")
    return np.maximum(0.0, np.asarray(final, dtype=np.float32) - np.asarray(clean, dtype=np.float32))


def resize(img: ImageTensor, resolution: int) -> ImageTensor:
    """Antialiased bilinear resize of a CHW image to ``resolution`` x ``resolution``."""
    if img.shape[1:] == (resolution, resolution):
        return img.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None]
    out = F.interpolate(t, size=(resolution, resolution), mode="bilinear", antialias=True, align_corners=False)
    return out[0].numpy()


def read_layer(path: str | Path) -> ImageTensor:
    path = Path(path)
    if not path.is_file():
        raise FrameLoadError(path, "missing")
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.uint16)
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise FrameLoadError(path, f"decode failed ({exc})") from exc
    return as_image(arr)


def write_layer(img: ImageTensor, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hwc = np.moveaxis(np.clip(img, 0.0, 1.0), 0, -1)
    Image.fromarray((hwc * 255.0 + 0.5).astype(np.uint8)).save(path)


def _resolve(path: str | None, root: Path | None, layer: str, rec: FrameRecord) -> Path:
    if path is None:
        if root is None:
            raise FrameLoadError(f"<{layer} for {rec.scene_id}:{rec.frame_index}>", "no path in record")
        return root / layer / rec.scene_id / FRAME_PATTERN.format(rec.frame_index)
    p = Path(path)
    return p if p.is_absolute() or root is None else root / p


def load_sintel_frame(
    rec: FrameRecord, cfg: SintelDerivationConfig | None = None, root: str | Path | None = None
) -> IntrinsicTriple:
    cfg = cfg or SintelDerivationConfig()
    root = Path(root) if root is not None else None
    raw = {layer: read_layer(_resolve(getattr(rec, layer), root, layer, rec)) for layer in LAYERS}
    shapes = {layer: a.shape for layer, a in raw.items()}
    if len(set(shapes.values())) != 1:
        raise LayerMismatchError(f"{rec.scene_id}:{rec.frame_index} layer resolutions differ: {shapes}")
    albedo, clean, final = (resize(raw[layer], cfg.resolution) for layer in LAYERS)
    R = np.clip(albedo, 0.0, 1.0)
    return IntrinsicTriple(
        R=R,
        S=derive_shading(clean, R, cfg),
        N=derive_nonlambertian(final, clean),
        I=np.clip(final, 0.0, 1.0),
    )


def sintel_manifest(root: str | Path, resolution: int = 256, name: str = "sintel") -> DatasetManifest:
    """Scan a Sintel-layout directory; paths in the manifest are relative to ``root``."""
    root = Path(root)
    frames = []
    for scene_dir in sorted(p for p in (root / "albedo").iterdir() if p.is_dir()):
        for f in sorted(scene_dir.glob("frame_*.png")):
            idx = int(f.stem.split("_")[1])
            rel = {layer: str(Path(layer) / scene_dir.name / f.name) for layer in LAYERS}
            frames.append(FrameRecord(scene_id=scene_dir.name, frame_index=idx, **rel))
    if not frames:
        raise FrameLoadError(root / "albedo", "no frames found")
    return DatasetManifest(name=name, frames=tuple(frames), resolution=resolution)


def write_sintel_layout(
    manifest: DatasetManifest,
    triples: dict[FrameRecord, IntrinsicTriple],
    root: str | Path,
    cfg: SintelDerivationConfig | None = None,
) -> DatasetManifest:
    """Persist triples as albedo/clean/final PNGs plus ``manifest.json``.

    ``clean`` is written as ``S * shading_norm * (R + eps)`` so that
    ``derive_shading`` inverts it; with ``shading_norm=1`` the reloaded triple
    matches the original up to 8-bit quantization.
    """
    cfg = cfg or SintelDerivationConfig(resolution=manifest.resolution)
    root = Path(root)
    records = []
    for rec in manifest.frames:
        t = triples[rec]
        clean = t.S * cfg.shading_norm * (t.R + cfg.epsilon)
        layers = {"albedo": t.R, "clean": clean, "final": clean + t.N}
        rel = {}
        for layer, img in layers.items():
            p = Path(layer) / rec.scene_id / FRAME_PATTERN.format(rec.frame_index)
            write_layer(img, root / p)
            rel[layer] = str(p)
        records.append(FrameRecord(rec.scene_id, rec.frame_index, **rel))
    out = DatasetManifest(manifest.name, tuple(records), manifest.resolution, manifest.resize_filter)
    out.save(root / "manifest.json")
    return out


# --------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SyntheticSceneConfig:
    n_scenes: int = 8
    frames_per_scene: int = 8
    resolution: int = 64
    reflectance_patches: int = 12
    shading_frequency: float = 1.5
    shadow_probability: float = 0.5
    specular_blobs: int = 3
    frame_jitter_px: int = 4
    # light-direction rotation (radians) across one scene's timeline
    lighting_drift: float = 0.6
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_scenes", "frames_per_scene", "resolution", "reflectance_patches", "specular_blobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.frame_jitter_px < 0:
            raise ValueError("frame_jitter_px must be >= 0")
        if not 0.0 <= self.shadow_probability <= 1.0:
            raise ValueError("shadow_probability must be in [0, 1]")


def _voronoi_reflectance(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    centers = rng.uniform(0, n, size=(k, 2))
    colors = rng.uniform(0.1, 0.95, size=(k, 3))
    # toroidal distance keeps the map seamless under wrap-around shifts
    dy = np.abs(yy[None] - centers[:, 0, None, None])
    dx = np.abs(xx[None] - centers[:, 1, None, None])
    dy = np.minimum(dy, n - dy)
    dx = np.minimum(dx, n - dx)
    label = np.argmin(dy**2 + dx**2, axis=0)
    return np.moveaxis(colors[label], -1, 0)


@dataclass(frozen=True)
class _Lighting:
    theta: float
    phases: np.ndarray
    freqs: np.ndarray
    amps: np.ndarray
    lo: float
    hi: float
    tint: np.ndarray
    shadow: tuple[float, float, float] | None  # normal angle, offset, darkening factor


def _sample_lighting(rng: np.random.Generator, cfg: SyntheticSceneConfig) -> _Lighting:
    n_terms = 3
    lo = rng.uniform(0.05, 0.4)
    tint = rng.uniform(0.75, 1.0, size=3)
    shadow = None
    if rng.uniform() < cfg.shadow_probability:
        shadow = (rng.uniform(0, 2 * math.pi), rng.uniform(-0.25, 0.25), rng.uniform(0.3, 0.6))
    return _Lighting(
        theta=rng.uniform(0, 2 * math.pi),
        phases=rng.uniform(0, 2 * math.pi, size=n_terms),
        freqs=rng.uniform(0.25, 1.0, size=n_terms) * cfg.shading_frequency,
        amps=rng.uniform(0.3, 1.0, size=n_terms),
        lo=lo,
        hi=rng.uniform(max(lo + 0.3, 0.6), 1.0),
        tint=tint / tint.max(),
        shadow=shadow,
    )


def _shading(light: _Lighting, n: int, drift: float) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) / n
    field = np.zeros((n, n))
    for i, (f, a, ph) in enumerate(zip(light.freqs, light.amps, light.phases)):
        theta = light.theta + drift + i * 2.1
        u = xx * math.cos(theta) + yy * math.sin(theta)
        field += a * np.cos(2 * math.pi * f * u + ph)
    field = (field - field.min()) / max(field.max() - field.min(), 1e-9)
    gray = light.lo + (light.hi - light.lo) * field
    if light.shadow is not None:
        ang, off, dark = light.shadow
        ang += drift
        side = (xx - 0.5) * math.cos(ang) + (yy - 0.5) * math.sin(ang) - off
        gray = np.where(side > 0, gray * dark, gray)
    return np.clip(gray[None] * light.tint[:, None, None], 0.0, 1.0)


def _specular(rng: np.random.Generator, n: int, k: int, tint: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    out = np.zeros((n, n))
    scale = n / 64.0
    for _ in range(k):
        cy, cx = rng.uniform(0, n, size=2)
        sigma = rng.uniform(1.5, 4.0) * scale
        amp = rng.uniform(0.1, 0.5)
        dy = np.abs(yy - cy)
        dx = np.abs(xx - cx)
        dy = np.minimum(dy, n - dy)
        dx = np.minimum(dx, n - dx)
        out += amp * np.exp(-(dy**2 + dx**2) / (2 * sigma**2))
    return out[None] * (0.5 + 0.5 * tint[:, None, None])


def generate_synthetic_dataset(
    cfg: SyntheticSceneConfig | None = None,
) -> tuple[DatasetManifest, dict[FrameRecord, IntrinsicTriple]]:
    """Procedural scenes with exact ground truth.

    Each scene has one Voronoi reflectance map, one low-frequency shading field
    (optionally with a hard shadow half-plane) and a few specular blobs as the
    non-Lambertian layer. Frames of a scene are wrap-around translations along
    a per-scene pan direction, by at most ``frame_jitter_px`` pixels, while the
    light direction rotates by up to ``lighting_drift`` radians over the
    scene's timeline. ``I`` is clipped to [0, 1] and ``N`` is recomputed as
    ``I - R*S`` so the composition identity holds exactly.
    """
    cfg = cfg or SyntheticSceneConfig()
    n = cfg.resolution
    frames: list[FrameRecord] = []
    triples: dict[FrameRecord, IntrinsicTriple] = {}
    for s in range(cfg.n_scenes):
        rng = np.random.default_rng([cfg.seed, s])
        R0 = _voronoi_reflectance(rng, n, cfg.reflectance_patches)
        light = _sample_lighting(rng, cfg)
        N0 = _specular(rng, n, cfg.specular_blobs, light.tint)
        pan = rng.uniform(0, 2 * math.pi)
        scene_id = f"scene_{s:03d}"
        for t in range(cfg.frames_per_scene):
            tau = t / (cfg.frames_per_scene - 1) if cfg.frames_per_scene > 1 else 0.0
            shift = (
                int(round(cfg.frame_jitter_px * tau * math.sin(pan))),
                int(round(cfg.frame_jitter_px * tau * math.cos(pan))),
            )
            S0 = _shading(light, n, cfg.lighting_drift * tau)
            R = np.roll(R0, shift, axis=(1, 2)).astype(np.float32)
            S = np.roll(S0, shift, axis=(1, 2)).astype(np.float32)
            N = np.roll(N0, shift, axis=(1, 2)).astype(np.float32)
            lamb = R * S
            I = np.clip(lamb + N, 0.0, 1.0).astype(np.float32)
            N = np.maximum(I - lamb, 0.0).astype(np.float32)
            rec = FrameRecord(scene_id=scene_id, frame_index=t)
            frames.append(rec)
            triples[rec] = IntrinsicTriple(R=R, S=S, N=N, I=I, exact=True)
    manifest = DatasetManifest(name=f"synthetic-seed{cfg.seed}", frames=tuple(frames), resolution=n)
    return manifest, triples
