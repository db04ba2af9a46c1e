import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emptyroom import data_synth as ds
from emptyroom.exceptions import ConfigError, FormatError, GenerationError
from emptyroom.tensor_core import Rng


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from([16, 32]))
def test_scene_invariants(seed, h):
    s = ds.generate_scene(ds.SceneConfig(height=h, width=2 * h), Rng(seed))
    keep = np.broadcast_to(s.fg_mask == 0, s.full.shape)
    np.testing.assert_array_equal(s.full[keep], s.empty[keep])
    assert 0.05 <= s.fg_mask.mean() <= 0.40
    frac = np.bincount(s.gt_layout.ravel(), minlength=3) / s.gt_layout.size
    assert frac.min() >= 0.10 and frac.max() <= 0.80
    assert set(np.unique(s.fg_mask)) <= {0.0, 1.0}
    assert np.all(np.abs(s.full) < 1) and s.full.dtype == np.float32
    # bands run ceiling, wall, floor from the top
    assert np.all(s.gt_layout[0] == 0) and np.all(s.gt_layout[-1] == 2)
    assert np.all(np.diff(s.gt_layout, axis=0) >= 0)


def test_no_jitter_no_furniture_still_gets_a_rectangle():
    s = ds.generate_scene(ds.SceneConfig(band_jitter=0, n_furniture=(0, 0)), Rng(1))
    assert s.fg_mask.sum() > 0
    assert np.any(s.full != s.empty)


def test_impossible_config_raises():
    with pytest.raises(GenerationError):
        ds.generate_scene(ds.SceneConfig(n_furniture=(60, 60)), Rng(0))


@pytest.mark.parametrize("kw", [dict(height=8, width=16), dict(height=32, width=48), dict(n_furniture=(3, 1))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ds.SceneConfig(**kw)


def test_config_meta_round_trip():
    cfg = ds.SceneConfig(height=16, width=32, n_furniture=(2, 3), band_jitter=0.1, seed=9)
    assert ds.SceneConfig.from_meta(cfg.to_meta()) == cfg


def test_determinism():
    a = ds.generate_dataset(ds.SceneConfig(), 3, seed=4)
    b = ds.generate_dataset(ds.SceneConfig(), 3, seed=4)
    for x, y in zip(a, b):
        assert x.full.tobytes() == y.full.tobytes() and x.gt_layout.tobytes() == y.gt_layout.tobytes()
    assert a[0].full.tobytes() != a[1].full.tobytes()


def test_quantize_range():
    q = ds.quantize(np.array([-5.0, -1.0, 0.0, 1.0, 5.0]))
    assert q.min() == 1 and q.max() == 254
    v = ds.dequantize(np.arange(1, 255, dtype=np.uint8))
    np.testing.assert_array_equal(ds.quantize(v), np.arange(1, 255))


def test_round_trip(tmp_path):
    samples = ds.generate_dataset(ds.SceneConfig(height=16, width=32), 10, seed=2)
    ds.write_dataset(samples, tmp_path)
    back = ds.read_dataset(tmp_path)
    assert len(back) == 10
    for s, r in zip(samples, back):
        np.testing.assert_array_equal(s.full, r.full)
        np.testing.assert_array_equal(s.empty, r.empty)
        np.testing.assert_array_equal(s.fg_mask, r.fg_mask)
        np.testing.assert_array_equal(s.gt_layout, r.gt_layout)
        assert r.meta == s.meta and "rng_seed" in r.meta


def test_bytes_on_disk_deterministic(tmp_path):
    for sub in ("a", "b"):
        ds.write_dataset(ds.generate_dataset(ds.SceneConfig(height=16, width=32), 2, seed=8), tmp_path / sub)
    for f in sorted((tmp_path / "a").rglob("*.*")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_missing_mask_names_file(tmp_path):
    ds.write_dataset(ds.generate_dataset(ds.SceneConfig(height=16, width=32), 1), tmp_path)
    (tmp_path / "sample_00000" / "mask.pgm").unlink()
    with pytest.raises(FormatError, match="mask.pgm"):
        ds.read_dataset(tmp_path)


def test_corrupt_files(tmp_path):
    ds.write_dataset(ds.generate_dataset(ds.SceneConfig(height=16, width=32), 1), tmp_path)
    d = tmp_path / "sample_00000"
    raw = (d / "full.ppm").read_bytes()
    (d / "full.ppm").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="full.ppm"):
        ds.read_sample(d)
    (d / "full.ppm").write_bytes(b"P3" + raw[2:])
    with pytest.raises(FormatError):
        ds.read_sample(d)
    with pytest.raises(FormatError):
        ds.read_dataset(tmp_path / "nowhere")


def test_pnm_header_comments(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n# comment\n2 1\n255\n\x07\x09")
    np.testing.assert_array_equal(ds.read_pnm(p), [[7, 9]])
