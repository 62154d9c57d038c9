import numpy as np
import pytest
from hypothesis import given, strategies as st

from iuq.core import FrameRecord, IntrinsicTriple, validate_triple
from iuq.data import (
    FrameLoadError,
    LayerMismatchError,
    SintelDerivationConfig,
    SyntheticSceneConfig,
    derive_nonlambertian,
    derive_shading,
    generate_synthetic_dataset,
    load_sintel_frame,
    read_layer,
    resize,
    sintel_manifest,
    write_layer,
    write_sintel_layout,
)


def _corr(a, b):
    a, b = a.ravel() - a.mean(), b.ravel() - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def test_derive_shading_matches_formula():
    R = np.array([0.5, 0.0, 1.0], np.float32).reshape(3, 1, 1)
    clean = np.array([0.5, 0.3, 0.4], np.float32).reshape(3, 1, 1)
    S = derive_shading(clean, R, SintelDerivationConfig(epsilon=1e-4, shading_norm=2.0))
    expect = np.clip(np.array([0.5 / 0.5001, 0.3 / 1e-4, 0.4 / 1.0001]) / 2.0, 0, 1)
    assert np.allclose(S.ravel(), expect, atol=1e-6)


def test_derive_nonlambertian_clamps_at_zero():
    final = np.array([0.2, 0.5, 0.9], np.float32).reshape(3, 1, 1)
    clean = np.array([0.3, 0.5, 0.4], np.float32).reshape(3, 1, 1)
    assert np.allclose(derive_nonlambertian(final, clean).ravel(), [0.0, 0.0, 0.5])


def test_derivation_shape_mismatch():
    with pytest.raises(LayerMismatchError):
        derive_shading(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)))


def test_resize_identity_and_constant():
    img = np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32)
    assert np.array_equal(resize(img, 16), img)
    const = np.full((3, 20, 20), 0.25, np.float32)
    assert np.allclose(resize(const, 8), 0.25, atol=1e-6)


def test_layer_io_roundtrip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(3, 8, 8)).astype(np.float32)
    write_layer(img, tmp_path / "x.png")
    back = read_layer(tmp_path / "x.png")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_missing_layer_raises_with_path(tmp_path):
    with pytest.raises(FrameLoadError) as ei:
        read_layer(tmp_path / "nope.png")
    assert ei.value.path.endswith("nope.png")


def test_corrupt_layer_raises(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not a png")
    with pytest.raises(FrameLoadError):
        read_layer(p)


def test_synthetic_triples_are_valid(tiny_dataset):
    manifest, triples = tiny_dataset
    assert len(manifest.frames) == 16
    for rec in manifest.frames:
        assert validate_triple(triples[rec], resolution=32) == []


def test_synthetic_is_seed_deterministic():
    cfg = SyntheticSceneConfig(n_scenes=2, frames_per_scene=3, resolution=16, seed=5)
    m1, t1 = generate_synthetic_dataset(cfg)
    m2, t2 = generate_synthetic_dataset(cfg)
    assert m1 == m2
    for r in m1.frames:
        assert np.array_equal(t1[r].I, t2[r].I)
    _, t3 = generate_synthetic_dataset(SyntheticSceneConfig(n_scenes=2, frames_per_scene=3, resolution=16, seed=6))
    assert not np.array_equal(t1[m1.frames[0]].R, t3[m1.frames[0]].R)


def test_same_scene_reflectance_more_correlated_than_cross_scene():
    m, t = generate_synthetic_dataset(SyntheticSceneConfig())
    same, cross = [], []
    recs = list(m.frames)
    for i, a in enumerate(recs):
        for b in recs[i + 1 :]:
            c = _corr(t[a].R, t[b].R)
            (same if a.scene_id == b.scene_id else cross).append(c)
    assert np.mean(same) > np.mean(cross) + 0.3


def test_frames_within_scene_shift_by_at_most_jitter():
    cfg = SyntheticSceneConfig(n_scenes=3, frames_per_scene=5, resolution=32, frame_jitter_px=3, lighting_drift=0.0)
    m, t = generate_synthetic_dataset(cfg)
    for scene in m.scenes:
        recs = [r for r in m.frames if r.scene_id == scene]
        R0 = t[recs[0]].R
        for r in recs[1:]:
            found = any(
                np.array_equal(np.roll(R0, (dy, dx), axis=(1, 2)), t[r].R)
                for dy in range(-3, 4)
                for dx in range(-3, 4)
            )
            assert found


def test_sintel_layout_roundtrip(tmp_path, tiny_dataset):
    manifest, triples = tiny_dataset
    cfg = SintelDerivationConfig(shading_norm=1.0, resolution=32)
    written = write_sintel_layout(manifest, triples, tmp_path, cfg)
    scanned = sintel_manifest(tmp_path, resolution=32)
    assert [r.key for r in scanned.frames] == [r.key for r in written.frames]
    q = 1.0 / 255
    for rec in scanned.frames[:4]:
        orig = triples[FrameRecord(rec.scene_id, rec.frame_index)]
        back = load_sintel_frame(rec, cfg, tmp_path)
        assert np.abs(back.R - orig.R).max() <= q
        assert np.abs(back.I - orig.I).max() <= 2 * q
        # shading is recovered where reflectance is not tiny
        mask = np.broadcast_to(orig.R > 0.2, orig.S.shape)
        assert np.abs(back.S - orig.S)[mask].max() < 0.05


def test_load_detects_layer_resolution_mismatch(tmp_path):
    rec = FrameRecord("s", 1)
    write_layer(np.zeros((3, 8, 8)), tmp_path / "albedo/s/frame_0001.png")
    write_layer(np.zeros((3, 8, 8)), tmp_path / "clean/s/frame_0001.png")
    write_layer(np.zeros((3, 4, 4)), tmp_path / "final/s/frame_0001.png")
    with pytest.raises(LayerMismatchError):
        load_sintel_frame(rec, SintelDerivationConfig(resolution=8), tmp_path)


def test_empty_sintel_root(tmp_path):
    (tmp_path / "albedo").mkdir()
    with pytest.raises(FrameLoadError):
        sintel_manifest(tmp_path)


@given(
    st.floats(0.0, 1.0, allow_nan=False),
    st.floats(0.0, 1.0, allow_nan=False),
    st.floats(0.5, 4.0),
)
def test_derived_shading_in_unit_range(clean, albedo, norm):
    S = derive_shading(np.full((3, 1, 1), clean, np.float32), np.full((3, 1, 1), albedo, np.float32),
                       SintelDerivationConfig(shading_norm=norm))
    assert 0.0 <= S.min() and S.max() <= 1.0
