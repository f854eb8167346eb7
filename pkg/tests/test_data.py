import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from handcnn import data
from handcnn.errors import ConfigError, DataError

from oracles import logistic_probe


def write_manifest(path, rows, header="path,label"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


class TestLoadManifest:
    def test_two_entries(self, tmp_path):
        m = write_manifest(tmp_path / "m.csv", ["a.png,hand", "b.png,nohand"])
        entries = data.load_manifest(m)
        assert [(e.path, e.label) for e in entries] == [("a.png", "hand"), ("b.png", "nohand")]

    def test_wrong_case_label_fails_with_line_number(self, tmp_path):
        m = write_manifest(tmp_path / "m.csv", ["a.png,Hand"])
        with pytest.raises(DataError, match="line 2"):
            data.load_manifest(m)

    def test_duplicate_path(self, tmp_path):
        m = write_manifest(tmp_path / "m.csv", ["a.png,hand", "a.png,nohand"])
        with pytest.raises(DataError, match="line 3"):
            data.load_manifest(m)

    def test_missing_header(self, tmp_path):
        m = write_manifest(tmp_path / "m.csv", ["a.png,hand"], header="file,cls")
        with pytest.raises(DataError, match="line 1"):
            data.load_manifest(m)

    def test_four_thousand_entry_manifest(self, tmp_path):
        rows = [f"hand_{i}.png,hand" for i in range(2000)]
        rows += [f"nohand_{i}.png,nohand" for i in range(2000)]
        m = write_manifest(tmp_path / "m.csv", rows)
        assert len(data.load_manifest(m)) == 4000


class TestDecodeAndPrepare:
    def test_constant_midgray_is_resize_invariant(self, tmp_path):
        img = Image.new("RGB", (160, 120), (128, 128, 128))
        img.save(tmp_path / "gray.png")
        sample = data.decode_and_prepare(data.ManifestEntry("gray.png", "nohand"), tmp_path)
        assert sample.pixels.shape == (32, 32, 3)
        np.testing.assert_allclose(sample.pixels, 128 / 255, atol=1e-6)

    def test_hand_label_one_hot(self, tmp_path):
        Image.new("RGB", (40, 40)).save(tmp_path / "h.png")
        sample = data.decode_and_prepare(data.ManifestEntry("h.png", "hand"), tmp_path)
        np.testing.assert_array_equal(sample.label, [0.0, 1.0])
        nohand = data.decode_and_prepare(data.ManifestEntry("h.png", "nohand"), tmp_path)
        np.testing.assert_array_equal(nohand.label, [1.0, 0.0])

    def test_checkerboard_bilinear_average(self):
        # 2x2 checkerboard downscaled to 1x1 collapses to the plain average
        arr = np.array([[0.0, 255.0], [255.0, 0.0]], dtype=np.float32)
        out = data.resize_bilinear(np.stack([arr] * 3, axis=2), 1)
        np.testing.assert_allclose(out / 255.0, 0.5, atol=1e-6)

    def test_unreadable_image_names_path(self, tmp_path):
        (tmp_path / "junk.png").write_bytes(b"not an image")
        with pytest.raises(DataError, match="junk.png"):
            data.decode_and_prepare(data.ManifestEntry("junk.png", "hand"), tmp_path)

    def test_decode_deterministic(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, (120, 160, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "r.png")
        entry = data.ManifestEntry("r.png", "hand")
        a = data.decode_and_prepare(entry, tmp_path)
        b = data.decode_and_prepare(entry, tmp_path)
        assert np.array_equal(a.pixels, b.pixels)

    def test_pixels_in_unit_interval(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, (120, 160, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "r.png")
        pixels = data.load_image(tmp_path / "r.png")
        assert pixels.min() >= 0.0 and pixels.max() <= 1.0

    def test_hftn_fixture_decodes_bit_exact(self, tmp_path):
        from handcnn import tensor

        rng = np.random.default_rng(2)
        pixels = rng.random((32, 32, 3)).astype(np.float32)
        path = tmp_path / "fixture.hftn"
        tensor.write_hftn(path, pixels)
        assert np.array_equal(data.load_image(path), pixels)

    def test_hftn_fixture_resized_when_needed(self, tmp_path):
        from handcnn import tensor

        path = tmp_path / "big.hftn"
        tensor.write_hftn(path, np.full((64, 64, 3), 0.25, dtype=np.float32))
        out = data.load_image(path)
        assert out.shape == (32, 32, 3)
        np.testing.assert_allclose(out, 0.25, atol=1e-6)

    def test_hftn_fixture_wrong_rank_rejected(self, tmp_path):
        from handcnn import tensor

        path = tmp_path / "bad.hftn"
        tensor.write_hftn(path, np.zeros((32, 32), dtype=np.float32))
        with pytest.raises(DataError):
            data.load_image(path)


class TestMakeFolds:
    def test_balanced_4000_ten_folds(self):
        labels = ["hand"] * 2000 + ["nohand"] * 2000
        plan = data.make_folds(4000, 10, labels, seed=0)
        for train_idx, test_idx in plan.folds:
            assert len(test_idx) == 400
            assert len(train_idx) == 3600
            test_labels = [labels[i] for i in test_idx]
            assert test_labels.count("hand") == 200
            assert test_labels.count("nohand") == 200

    def test_smallest_stratified_case(self):
        labels = ["hand", "nohand", "hand", "nohand"]
        plan = data.make_folds(4, 2, labels, seed=1)
        for _, test_idx in plan.folds:
            test_labels = sorted(labels[i] for i in test_idx)
            assert test_labels == ["hand", "nohand"]

    def test_partition_property_n103(self):
        rng = np.random.default_rng(3)
        labels = ["hand" if rng.random() < 0.5 else "nohand" for _ in range(103)]
        while min(labels.count("hand"), labels.count("nohand")) < 10:
            labels = ["hand" if rng.random() < 0.5 else "nohand" for _ in range(103)]
        plan = data.make_folds(103, 10, labels, seed=3)
        seen = []
        for train_idx, test_idx in plan.folds:
            assert set(train_idx) | set(test_idx) == set(range(103))
            assert set(train_idx) & set(test_idx) == set()
            seen.extend(test_idx)
        assert sorted(seen) == list(range(103))

    def test_class_smaller_than_k(self):
        labels = ["hand"] * 5 + ["nohand"] * 30
        with pytest.raises(ConfigError):
            data.make_folds(35, 10, labels, seed=0)

    def test_k_larger_than_n(self):
        with pytest.raises(ConfigError):
            data.make_folds(4, 8, ["hand", "hand", "nohand", "nohand"], seed=0)

    @given(st.integers(2, 6), st.integers(0, 1000), st.data())
    @settings(max_examples=30, deadline=None)
    def test_partition_and_skew_properties(self, k, seed, draw):
        n_hand = draw.draw(st.integers(k, 4 * k))
        n_nohand = draw.draw(st.integers(k, 4 * k))
        labels = ["hand"] * n_hand + ["nohand"] * n_nohand
        n = len(labels)
        plan = data.make_folds(n, k, labels, seed=seed)
        seen = []
        for train_idx, test_idx in plan.folds:
            seen.extend(test_idx)
            counts = [sum(1 for i in test_idx if labels[i] == cls) for cls in ("hand", "nohand")]
            for count, total in zip(counts, (n_hand, n_nohand)):
                assert abs(count - total / k) <= 1   # per-fold class skew <= 1
        assert sorted(seen) == list(range(n))


class TestBatches:
    @staticmethod
    def samples(n, seed=0):
        return data.synth_dataset(n, seed)

    def test_two_full_batches_cover_all(self):
        samples = self.samples(64)
        seen = set()
        batches = list(data.batches(samples, 32, seed=0, epoch=0))
        assert len(batches) == 2
        for x, y in batches:
            assert x.shape == (32, 32, 32, 3)
            for row in x:
                seen.add(row.tobytes())
        assert len(seen) == 64

    def test_same_seed_epoch_identical(self):
        samples = self.samples(16)
        a = [x.tobytes() for x, _ in data.batches(samples, 4, seed=3, epoch=2)]
        b = [x.tobytes() for x, _ in data.batches(samples, 4, seed=3, epoch=2)]
        assert a == b

    def test_different_epoch_reshuffles(self):
        samples = self.samples(16)
        a = [x.tobytes() for x, _ in data.batches(samples, 4, seed=3, epoch=0)]
        b = [x.tobytes() for x, _ in data.batches(samples, 4, seed=3, epoch=1)]
        assert a != b

    def test_paper_epoch_draw_has_no_repeat_before_wrap(self):
        # 112 iterations of batch 32 over 3600 samples = 3584 draws, all distinct
        class FakeSample:
            __slots__ = ("pixels", "label")

            def __init__(self, i):
                self.pixels = np.full((1,), i, dtype=np.float32)
                self.label = np.array([1.0, 0.0], dtype=np.float32)

        samples = [FakeSample(i) for i in range(3600)]
        drawn = []
        for x, _ in data.batches(samples, 32, seed=0, epoch=0, count=112):
            assert x.shape[0] == 32
            drawn.extend(int(v) for v in x[:, 0])
        assert len(drawn) == 3584
        assert len(set(drawn)) == 3584

    def test_wraps_when_budget_exceeds_samples(self):
        samples = self.samples(8)
        batches = list(data.batches(samples, 8, seed=0, epoch=0, count=3))
        assert len(batches) == 3
        assert np.array_equal(batches[0][0], batches[1][0])

    def test_empty_samples(self):
        with pytest.raises(DataError):
            list(data.batches([], 4, seed=0, epoch=0))


class TestSynthDataset:
    def test_even_split(self):
        samples = data.synth_dataset(32, seed=0)
        hands = sum(1 for s in samples if s.label[1] == 1.0)
        assert hands == 16
        assert len(samples) == 32

    def test_pixel_range(self):
        for s in data.synth_dataset(10, seed=1):
            assert s.pixels.min() >= 0.0 and s.pixels.max() <= 1.0

    def test_odd_n_rejected(self):
        with pytest.raises(ConfigError):
            data.synth_dataset(7, seed=0)

    def test_deterministic_in_seed(self):
        a = data.synth_dataset(8, seed=5)
        b = data.synth_dataset(8, seed=5)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.pixels, s2.pixels)

    def test_linear_probe_separates(self):
        samples = data.synth_dataset(64, seed=0)
        pixels = np.stack([s.pixels for s in samples])
        labels01 = np.array([s.label[1] for s in samples])
        assert logistic_probe(pixels, labels01, steps=500) >= 0.9

    def test_write_synth_dataset_round_trips_through_manifest(self, tmp_path):
        manifest = data.write_synth_dataset(tmp_path, 8, seed=0)
        entries = data.load_manifest(manifest)
        assert len(entries) == 8
        samples = data.decode_all(entries, tmp_path)
        for sample in samples:
            assert sample.pixels.shape == (32, 32, 3)


class TestOneHot:
    def test_sums_to_one(self):
        for label in data.LABELS:
            assert data.one_hot(label).sum() == 1.0
