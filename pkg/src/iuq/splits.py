"""Train/test partitions of increasing strictness: random frame, temporal, scene."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .core import DatasetManifest, FrameRecord, dumps, group_frames_by_scene

SplitKind = Literal["random_frame", "temporal", "scene"]
SPLIT_KINDS: tuple[str, ...] = ("random_frame", "temporal", "scene")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    test_fraction: float | None = None
    test_scene_count: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SPLIT_KINDS:
            raise SplitError(f"unknown split kind {self.kind!r}")
        if self.kind == "scene":
            if self.test_scene_count is None or self.test_fraction is not None:
                raise SplitError("scene split takes test_scene_count only")
            if self.test_scene_count < 1:
                raise SplitError("test_scene_count must be >= 1")
        else:
            if self.test_fraction is None or self.test_scene_count is not None:
                raise SplitError(f"{self.kind} split takes test_fraction only")
            if not 0.0 < self.test_fraction < 1.0:
                raise SplitError("test_fraction must be in (0, 1)")

    @classmethod
    def default(cls, kind: str, seed: int = 0, test_fraction: float = 0.2, test_scene_count: int = 2) -> "SplitSpec":
        if kind == "scene":
            return cls(kind, test_scene_count=test_scene_count, seed=seed)
        return cls(kind, test_fraction=test_fraction, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "test_fraction": self.test_fraction,
            "test_scene_count": self.test_scene_count,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SplitResult:
    train: tuple[FrameRecord, ...]
    test: tuple[FrameRecord, ...]
    kind: str
    seed: int
    test_scenes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "test_scenes": list(self.test_scenes),
            "train": [f.to_dict() for f in self.train],
            "test": [f.to_dict() for f in self.test],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SplitResult":
        return cls(
            train=tuple(FrameRecord.from_dict(f) for f in d["train"]),
            test=tuple(FrameRecord.from_dict(f) for f in d["test"]),
            kind=d["kind"],
            seed=int(d["seed"]),
            test_scenes=tuple(d.get("test_scenes", ())),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SplitResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split(manifest: DatasetManifest, spec: SplitSpec) -> SplitResult:
    frames = list(manifest.frames)
    rng = np.random.default_rng([spec.seed, SPLIT_KINDS.index(spec.kind)])
    by_scene = group_frames_by_scene(frames)

    if spec.kind == "random_frame":
        order = rng.permutation(len(frames))
        n_test = math.ceil(spec.test_fraction * len(frames))
        test_idx = set(order[len(frames) - n_test:].tolist())
        test = [f for i, f in enumerate(frames) if i in test_idx]
        train = [f for i, f in enumerate(frames) if i not in test_idx]
        test_scenes: tuple[str, ...] = ()
    elif spec.kind == "temporal":
        train, test = [], []
        for scene, recs in by_scene.items():
            if len(recs) < 2:
                raise SplitError(f"temporal split needs >= 2 frames per scene; {scene} has {len(recs)}")
            idx = np.array([r.frame_index for r in recs], dtype=np.float64)
            cut = np.quantile(idx, 1.0 - spec.test_fraction)
            for r in recs:
                # boundary frames go to test
                (test if r.frame_index >= cut else train).append(r)
        test_scenes = ()
    else:
        scenes = sorted(by_scene)
        if len(scenes) < 2:
            raise SplitError("scene split needs at least 2 scenes")
        if spec.test_scene_count >= len(scenes):
            raise SplitError(f"test_scene_count={spec.test_scene_count} leaves no training scene (of {len(scenes)})")
        chosen = sorted(rng.choice(scenes, size=spec.test_scene_count, replace=False).tolist())
        chosen_set = set(chosen)
        test = [f for f in frames if f.scene_id in chosen_set]
        train = [f for f in frames if f.scene_id not in chosen_set]
        test_scenes = tuple(chosen)

    if not train or not test:
        raise SplitError(f"{spec.kind} split produced an empty partition ({len(train)} train / {len(test)} test)")
    return SplitResult(tuple(train), tuple(test), spec.kind, spec.seed, test_scenes)


@dataclass(frozen=True)
class SplitAudit:
    scene_overlap_count: int
    min_same_scene_pair: bool


def audit_split(result: SplitResult) -> SplitAudit:
    train_scenes = {f.scene_id for f in result.train}
    test_scenes = {f.scene_id for f in result.test}
    overlap = train_scenes & test_scenes
    return SplitAudit(scene_overlap_count=len(overlap), min_same_scene_pair=bool(overlap))
