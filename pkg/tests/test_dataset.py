import os
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densitynet.dataset import (
    Manifest,
    SampleRecord,
    SynthConfig,
    assign_splits,
    binarize_density,
    canonical_density,
    generate_synthetic,
    oversample_minority,
    read_manifest,
    stratified_split,
    write_manifest,
)
from densitynet.imageio import read_image, read_pgm, read_unit_image, write_pgm

from oracles import band_energy


def make_manifest(n0, n1):
    recs = [SampleRecord(f"a{i}", f"/x/a{i}.pgm", "AB"[i % 2]) for i in range(n0)]
    recs += [SampleRecord(f"c{i}", f"/x/c{i}.pgm", "CD"[i % 2]) for i in range(n1)]
    return Manifest(recs)


class TestBinarize:
    @pytest.mark.parametrize("density,label", [("A", 0), ("B", 0), ("C", 1), ("D", 1), ("a", 0), (" d ", 1)])
    def test_categories(self, density, label):
        assert binarize_density(density) == label

    def test_unknown_category_named(self):
        with pytest.raises(ValueError, match="'E'"):
            binarize_density("E")

    def test_label_round_trip(self):
        for y in (0, 1):
            assert binarize_density(canonical_density(y)) == y

    def test_record_label_follows_density(self):
        assert SampleRecord("x", "p", "c").label == 1
        with pytest.raises(ValueError):
            SampleRecord("x", "p", "Z")


class TestManifest:
    def test_class_counts_recount(self):
        m = make_manifest(3, 7)
        assert m.class_counts == dict(Counter(r.label for r in m))

    def test_duplicate_ids_rejected(self):
        r = SampleRecord("same", "p", "A")
        with pytest.raises(ValueError, match="same"):
            Manifest([r, r])

    def test_csv_round_trip(self, tmp_path):
        img = tmp_path / "img"
        img.mkdir()
        recs = [SampleRecord(f"id{i}", str(img / f"id{i}.pgm"), "ABCD"[i], ["train", "val", "test", ""][i])
                for i in range(4)]
        path = tmp_path / "manifest.csv"
        write_manifest(Manifest(recs), path)
        text = path.read_text()
        assert text.splitlines()[0] == "image_id,path,density,split"
        assert "img/id0.pgm" in text  # stored relative to the CSV
        back = read_manifest(path)
        assert [(r.image_id, os.path.normpath(r.path), r.density, r.split) for r in back] == \
               [(r.image_id, os.path.normpath(r.path), r.density, r.split) for r in recs]

    def test_missing_columns(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("image_id,density\nx,A\n")
        with pytest.raises(ValueError, match="path"):
            read_manifest(p)


class TestStratifiedSplit:
    def test_five_and_five(self):
        train, val = stratified_split(make_manifest(5, 5), 0.8, seed=0)
        assert train.class_counts == {0: 4, 1: 4}
        assert val.class_counts == {0: 1, 1: 1}

    def test_proportions_preserved(self):
        train, val = stratified_split(make_manifest(10, 90), 0.8, seed=3)
        assert train.class_counts == {0: 8, 1: 72}
        assert val.class_counts == {0: 2, 1: 18}

    def test_deterministic(self):
        m = make_manifest(13, 41)
        a = stratified_split(m, 0.8, seed=7)
        b = stratified_split(m, 0.8, seed=7)
        assert [r.image_id for r in a[0]] == [r.image_id for r in b[0]]
        c = stratified_split(m, 0.8, seed=8)
        assert [r.image_id for r in a[0]] != [r.image_id for r in c[0]]

    def test_tiny_class_rejected(self):
        with pytest.raises(ValueError, match="class 0"):
            stratified_split(make_manifest(1, 5), 0.8, 0)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            stratified_split(make_manifest(5, 5), 1.0, 0)

    @settings(max_examples=60, deadline=None)
    @given(n0=st.integers(2, 40), n1=st.integers(2, 120), frac=st.floats(0.05, 0.95), seed=st.integers(0, 10_000))
    def test_partition_properties(self, n0, n1, frac, seed):
        m = make_manifest(n0, n1)
        train, val = stratified_split(m, frac, seed)
        # split then merge reproduces the input multiset, disjointly
        ids = [r.image_id for r in train] + [r.image_id for r in val]
        assert sorted(ids) == sorted(r.image_id for r in m)
        assert len(set(ids)) == len(ids)
        for c, n in ((0, n0), (1, n1)):
            got = train.class_counts.get(c, 0)
            assert abs(got - frac * n) <= 1.0 + 1e-9
            assert 1 <= got <= n - 1

    def test_assign_splits_three_way(self):
        m = assign_splits(make_manifest(20, 180), 0.2, 0.2, seed=1)
        counts = Counter((r.split, r.label) for r in m)
        assert counts[("test", 0)] == 4 and counts[("test", 1)] == 36
        assert counts[("val", 0)] == 3 and counts[("val", 1)] == 29
        assert counts[("train", 0)] == 13 and counts[("train", 1)] == 115
        assert [r.image_id for r in m] == [r.image_id for r in make_manifest(20, 180)]


class TestOversample:
    def test_balances(self):
        out = oversample_minority(make_manifest(3, 9), seed=0)
        assert out.class_counts == {0: 9, 1: 9}

    def test_already_balanced(self):
        assert oversample_minority(make_manifest(5, 5), 0).class_counts == {0: 5, 1: 5}

    def test_originals_retained(self):
        m = make_manifest(2, 7)
        out = oversample_minority(m, seed=4)
        assert {r.image_id for r in m} <= {r.image_id for r in out}

    def test_minority_is_whichever_is_smaller(self):
        out = oversample_minority(make_manifest(9, 3), seed=0)
        assert out.class_counts == {0: 9, 1: 9}

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            oversample_minority(make_manifest(0, 5), 0)

    def test_deterministic_shuffle(self):
        m = make_manifest(4, 11)
        a = [r.image_id for r in oversample_minority(m, 5)]
        assert a == [r.image_id for r in oversample_minority(m, 5)]
        assert a != [r.image_id for r in m] + a[len(m):]

    @settings(max_examples=50, deadline=None)
    @given(n0=st.integers(1, 30), n1=st.integers(1, 30), seed=st.integers(0, 1000))
    def test_never_removes_and_keeps_majority(self, n0, n1, seed):
        m = make_manifest(n0, n1)
        out = oversample_minority(m, seed)
        before, after = Counter(r.image_id for r in m), Counter(r.image_id for r in out)
        assert all(after[k] >= v for k, v in before.items())
        assert out.class_counts[0] == out.class_counts[1] == max(n0, n1)


class TestImageIO:
    def test_pgm_8bit_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm(tmp_path / "a.pgm", img)
        raw = read_pgm(tmp_path / "a.pgm")
        assert raw.shape == (3, 4)
        np.testing.assert_array_equal(raw, np.rint(img * 255))

    def test_pgm_16bit_unit_read(self, tmp_path):
        img = np.random.default_rng(0).random((5, 7))
        write_pgm(tmp_path / "b.pgm", img, maxval=65535)
        np.testing.assert_allclose(read_unit_image(tmp_path / "b.pgm"), img, atol=0.5 / 65535 + 1e-12)

    def test_png_read(self, tmp_path):
        from PIL import Image
        arr = (np.arange(20).reshape(4, 5) * 10).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "c.png")
        np.testing.assert_array_equal(read_image(tmp_path / "c.png"), arr)
        np.testing.assert_allclose(read_unit_image(tmp_path / "c.png"), arr / 255.0)

    def test_missing_and_corrupt(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_image(tmp_path / "none.pgm")
        (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError):
            read_pgm(tmp_path / "bad.pgm")


class TestSynthetic:
    def test_ratio_arithmetic(self, tmp_path):
        m = generate_synthetic(SynthConfig(n_total=100, imbalance_ratio=9, image_size=(16, 16)), tmp_path)
        assert sorted(m.class_counts.values()) == [10, 90]

    def test_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_total=12, image_size=(24, 16), seed=5)
        a = generate_synthetic(cfg, tmp_path / "a")
        b = generate_synthetic(cfg, tmp_path / "b")
        for ra, rb in zip(a, b):
            assert ra.image_id == rb.image_id and ra.density == rb.density
            assert open(ra.path, "rb").read() == open(rb.path, "rb").read()

    def test_per_record_seed_independent_of_count(self, tmp_path):
        # the same id draws the same pixels regardless of how many images are generated
        a = generate_synthetic(SynthConfig(n_total=6, image_size=(16, 16), seed=2, imbalance_ratio=1), tmp_path / "a")
        b = generate_synthetic(SynthConfig(n_total=9, image_size=(16, 16), seed=2, imbalance_ratio=1), tmp_path / "b")
        la, lb = {r.image_id: r.label for r in a}, {r.image_id: r.label for r in b}
        shared = [i for i in la if lb.get(i) == la[i]]
        assert shared
        for i in shared:
            pa = next(r.path for r in a if r.image_id == i)
            pb = next(r.path for r in b if r.image_id == i)
            assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_band_energy_separates_classes(self, tmp_path):
        cfg = SynthConfig(n_total=60, imbalance_ratio=2, image_size=(64, 64), texture_frequency_gap=2.0,
                          noise_sigma=0.01, seed=11)
        m = generate_synthetic(cfg, tmp_path)
        f1 = cfg.base_frequency * (1 + cfg.texture_frequency_gap)
        energy = {0: [], 1: []}
        for r in m:
            energy[r.label].append(band_energy(read_image(r.path) / 255.0, 0.8 * f1, 1.2 * f1))
        assert max(energy[0]) < min(energy[1])

    def test_density_letters_match_labels(self, tmp_path):
        m = generate_synthetic(SynthConfig(n_total=40, image_size=(8, 8)), tmp_path)
        assert all((r.density in "AB") == (r.label == 0) for r in m)

    def test_pixels_in_unit_range(self, tmp_path):
        m = generate_synthetic(SynthConfig(n_total=4, image_size=(16, 32), noise_sigma=0.5), tmp_path)
        img = read_image(m.records[0].path)
        assert img.shape == (32, 16)
        assert img.min() >= 0 and img.max() <= 255

    @pytest.mark.parametrize("bad", [dict(n_total=1), dict(imbalance_ratio=0.5), dict(texture_frequency_gap=0),
                                     dict(noise_sigma=-1)])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            SynthConfig(**bad)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            generate_synthetic(SynthConfig(n_total=2, image_size=(4, 4)), blocker / "sub")
