import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deyolo_toy.synth import (
    DatasetError, PairedSample, SceneConfig, cxcywh_to_xyxy, gen_scene, generate, make_splits,
    parse_label_file, read_dataset, read_manifest, render, sample_layout, sample_rng,
    split_counts, write_dataset, xyxy_to_cxcywh)

CFG = SceneConfig(seed=3)


def test_same_seed_is_bit_identical():
    a, b = gen_scene(sample_rng(3, 7), CFG), gen_scene(sample_rng(3, 7), CFG)
    assert np.array_equal(a.visible, b.visible) and np.array_equal(a.infrared, b.infrared)
    assert a.labels == b.labels
    c = gen_scene(sample_rng(4, 7), CFG)
    assert not np.array_equal(a.visible, c.visible)


def test_images_and_infrared_channels():
    s = gen_scene(sample_rng(0, 0), CFG)
    assert s.visible.shape == s.infrared.shape == (3, 128, 128)
    assert s.visible.min() >= 0 and s.visible.max() <= 1
    assert np.array_equal(s.infrared[0], s.infrared[1]) and np.array_equal(s.infrared[0], s.infrared[2])
    assert np.array_equal(np.round(s.visible * 255) / 255, s.visible)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10_000))
def test_layout_contract(seed, index):
    layout = sample_layout(sample_rng(seed, index), CFG)
    assert 1 <= len(layout.objects) <= 4
    for o in layout.objects:
        x1, y1, x2, y2 = o.box
        assert 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1
        assert 0 < x2 - x1 <= 0.3 and 0 < y2 - y1 <= 0.3
        assert 0.05 <= layout.illumination <= 0.3
    for i, a in enumerate(layout.objects):
        for b in layout.objects[:i]:
            iw = min(a.box[2], b.box[2]) - max(a.box[0], b.box[0])
            ih = min(a.box[3], b.box[3]) - max(a.box[1], b.box[1])
            inter = max(iw, 0) * max(ih, 0)
            area = lambda o: (o.box[2] - o.box[0]) * (o.box[3] - o.box[1])
            assert inter / (area(a) + area(b) - inter) < 0.2


def footprints(cls, n_scenes=60):
    """Peak absolute change an object of class ``cls`` makes to each modality,
    measured noise-free by rendering the scene with and without it."""
    out = []
    for i in range(n_scenes):
        layout = sample_layout(sample_rng(11, i), CFG)
        for k, o in enumerate(layout.objects):
            if o.class_id != cls:
                continue
            v_with, ir_with = render(layout, CFG)
            v_wo, ir_wo = render(layout, CFG, skip=[k])
            out.append((np.abs(v_with - v_wo).max(), np.abs(ir_with - ir_wo).max()))
    assert out, f"no objects of class {cls} sampled"
    return np.array(out)


def test_infrared_only_objects_are_invisible_in_visible():
    fp = footprints(2)
    assert fp[:, 0].max() < 2 * CFG.noise_sigma
    assert fp[:, 1].min() >= 0.4 - 1e-9


def test_visible_only_objects_are_invisible_in_infrared():
    fp = footprints(1)
    assert fp[:, 1].max() < 2 * CFG.noise_sigma
    assert fp[:, 0].min() >= 0.3 - 1e-9


def test_both_class_shows_in_both():
    fp = footprints(0)
    assert fp[:, 0].min() >= 0.3 - 1e-9 and fp[:, 1].min() >= 0.4 - 1e-9


def test_label_conversion_example():
    assert cxcywh_to_xyxy((0.5, 0.5, 0.25, 0.25)) == (0.375, 0.375, 0.625, 0.625)
    assert xyxy_to_cxcywh((0.375, 0.375, 0.625, 0.625)) == (0.5, 0.5, 0.25, 0.25)


def test_label_line_parsing(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("0 0.5 0.5 0.25 0.25\n")
    assert parse_label_file(p) == [(0, (0.375, 0.375, 0.625, 0.625))]


@pytest.mark.parametrize("line", ["0 0.5 0.5 0.25", "x 0.5 0.5 0.2 0.2", "1 0.5 0.5 -0.1 0.2",
                                  "1 0.5 1.5 0.1 0.2"])
def test_malformed_label_names_file_and_line(tmp_path, line):
    p = tmp_path / "bad.txt"
    p.write_text("0 0.5 0.5 0.25 0.25\n" + line + "\n")
    with pytest.raises(DatasetError, match=r"bad\.txt:2"):
        parse_label_file(p)


def test_round_trip_ten_samples(tmp_path):
    samples = generate(CFG, 10)
    write_dataset(samples, tmp_path, make_splits(6, 2, 2))
    back = read_dataset(tmp_path)
    assert [s.name for s in back] == [s.name for s in samples]
    for a, b in zip(samples, back):
        assert a.labels == b.labels
        assert np.abs(a.visible - b.visible).max() == 0
        assert np.abs(a.infrared - b.infrared).max() == 0
    assert [s.name for s in read_dataset(tmp_path, "val")] == ["000006", "000007"]
    assert read_manifest(tmp_path)["classes"] == ["both", "visible_only", "infrared_only"]


def test_orphan_visible_image_is_named(tmp_path):
    write_dataset(generate(CFG, 3), tmp_path)
    (tmp_path / "images" / "infrared" / "000001.png").unlink()
    with pytest.raises(DatasetError, match=r"visible/000001\.png"):
        read_dataset(tmp_path)


def test_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "nope")


def test_generate_uses_independent_streams():
    a = generate(CFG, 3)
    b = generate(CFG, 2, start=1)
    assert all(np.array_equal(x.visible, y.visible) for x, y in zip(a[1:], b))


def test_split_ratio():
    assert split_counts(100) == (60, 20, 20)
    splits = make_splits(60, 20, 20)
    assert [len(splits[k]) for k in ("train", "val", "test")] == [60, 20, 20]
    assert not set(splits["train"]) & set(splits["val"])


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(min_objects=3, max_objects=2)
    with pytest.raises(ValueError):
        SceneConfig(illumination=(0.5, 0.2))


def test_sample_type():
    s = generate(CFG, 1)[0]
    assert isinstance(s, PairedSample) and s.name == "000000"
    assert all(c in (0, 1, 2) for c, _ in s.labels)
