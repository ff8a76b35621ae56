import numpy as np
import pytest

from labfew import synth


@pytest.fixture(scope="module")
def ds():
    return synth.make_synthetic_dataset(classes=20, per_class=6, size=24, seed=3)


def test_counts_and_disjoint_splits(ds):
    all_ids = []
    for name in ("train", "val", "test"):
        split = ds.split(name)
        all_ids.extend(split.class_ids)
        for imgs in split.class_images:
            assert imgs.shape == (6, 3, 24, 24)
            assert imgs.dtype == np.float32
            assert imgs.min() >= 0.0 and imgs.max() <= 1.0
    assert len(all_ids) == 20 and len(set(all_ids)) == 20
    assert len(ds.split("val").class_ids) == 5
    assert len(ds.split("test").class_ids) == 5


def test_images_differ_within_class(ds):
    imgs = ds.split("train").class_images[0]
    assert not np.array_equal(imgs[0], imgs[1])


def test_deterministic_given_seed():
    a = synth.make_synthetic_dataset(classes=10, per_class=2, size=16, seed=9)
    b = synth.make_synthetic_dataset(classes=10, per_class=2, size=16, seed=9)
    assert np.array_equal(a.split("test").class_images[0], b.split("test").class_images[0])
    assert a.class_attrs == b.class_attrs


def test_attribute_margins_at_least_twice_jitter(ds):
    attrs = list(ds.class_attrs.values())
    for i in range(len(attrs)):
        for j in range(i + 1, len(attrs)):
            dh = abs(attrs[i][0] - attrs[j][0])
            dh = min(dh, 360 - dh)
            dl = abs(attrs[i][1] - attrs[j][1])
            assert (dh >= 2 * synth.HUE_JITTER_DEG - 1e-9
                    or dl >= 2 * synth.LIGHT_JITTER - 1e-9), (attrs[i], attrs[j])


def test_split_difficulty_balanced(ds):
    # val and test should both span the hue wheel and both lightness bands
    for name in ("val", "test"):
        cids = ds.split(name).class_ids
        lights = {ds.class_attrs[c][1] for c in cids}
        assert len(lights) == 2
        hues = sorted(ds.class_attrs[c][0] for c in cids)
        gaps = np.diff(hues + [hues[0] + 360])
        assert max(gaps) <= 360 / len(cids) * 2 + 1e-9


def test_eval_splits_unique_band_shape(ds):
    # val/test classes must be separable through lightness-only channels
    for name in ("val", "test"):
        combos = [(ds.class_attrs[c][1], ds.class_attrs[c][2])
                  for c in ds.split(name).class_ids]
        assert len(set(combos)) == len(combos)


def test_class_floor_and_ceiling():
    with pytest.raises(ValueError, match="at least 10"):
        synth.make_synthetic_dataset(classes=5)
    with pytest.raises(ValueError, match="at most"):
        synth.make_synthetic_dataset(classes=40)


def test_save_load_roundtrip(tmp_path, ds):
    synth.save_dataset(ds, tmp_path / "data")
    for name in ("train", "val", "test"):
        assert (tmp_path / "data" / name).is_dir()
    back = synth.load_dataset(tmp_path / "data")
    for name in ("train", "val", "test"):
        orig, loaded = ds.split(name), back.split(name)
        assert len(orig.class_ids) == len(loaded.class_ids)
        by_name = {ds.class_names[c]: img
                   for c, img in zip(orig.class_ids, orig.class_images)}
        for cid, b in zip(loaded.class_ids, loaded.class_images):
            a = by_name[back.class_names[cid]]
            assert a.shape == b.shape
            assert np.max(np.abs(a - b)) <= 0.5 / 255 + 1e-6  # 8-bit quantization


def test_load_missing_split(tmp_path):
    with pytest.raises(ValueError, match="missing split"):
        synth.load_dataset(tmp_path)
