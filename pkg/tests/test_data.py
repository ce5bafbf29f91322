import numpy as np
import pytest

from cctvision import data as D
from cctvision import preprocess as pp
from cctvision.errors import DatasetError, ValidationError


@pytest.fixture
def folder_dataset(tmp_path):
    rng = np.random.default_rng(0)
    for folder, count in (("Normal", 3), ("COVID", 2)):
        d = tmp_path / folder
        d.mkdir()
        for i in range(count):
            img = pp.ImageU8(rng.integers(0, 256, (20, 20, 1)).astype(np.uint8))
            pp.write_png(img, d / f"img_{i}.png")
    return tmp_path


class TestScanFolder:
    def test_binary_enumeration(self, folder_dataset):
        man = D.scan_folder(folder_dataset)
        assert len(man.entries) == 5
        by_class = sorted(e.label for e in man.entries)
        assert by_class == [0, 0, 0, 1, 1]
        assert man.class_names == ["healthy", "diseased"]

    def test_unreadable_skipped_with_warning(self, folder_dataset):
        bad = folder_dataset / "Normal" / "broken.png"
        bad.write_bytes(b"not a png at all")
        with pytest.warns(UserWarning, match="broken.png"):
            man = D.scan_folder(folder_dataset)
        assert len(man.entries) == 5
        assert any("broken.png" in s for s in man.skipped)

    def test_deterministic_scan(self, folder_dataset):
        a = D.scan_folder(folder_dataset)
        b = D.scan_folder(folder_dataset)
        assert a.to_json() == b.to_json()

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetError):
            D.scan_folder(tmp_path / "nope")

    def test_manifest_json_round_trip(self, folder_dataset):
        man = D.split(D.scan_folder(folder_dataset), (0.6, 0.2, 0.2), seed=1)
        back = D.DatasetManifest.from_json(man.to_json())
        assert back.to_json() == man.to_json()


class TestSplit:
    def _manifest(self, per_class=100):
        entries = []
        for label, cname in ((0, "healthy"), (1, "diseased")):
            for i in range(per_class):
                entries.append(D.ManifestEntry(path=f"{cname}/{i}.png", label=label,
                                               class_name=cname))
        return D.DatasetManifest(entries=entries, class_names=["healthy", "diseased"])

    def test_all_train(self):
        man = D.split(self._manifest(), (1.0, 0.0, 0.0), seed=0)
        assert all(e.split == "train" for e in man.entries)

    def test_80_10_10_counts_per_class(self):
        man = D.split(self._manifest(100), (0.8, 0.1, 0.1), seed=3)
        for label in (0, 1):
            counts = {s: sum(1 for e in man.entries if e.label == label and e.split == s)
                      for s in ("train", "val", "test")}
            assert counts == {"train": 80, "val": 10, "test": 10}

    def test_same_seed_identical(self):
        a = D.split(self._manifest(), (0.7, 0.2, 0.1), seed=9)
        b = D.split(self._manifest(), (0.7, 0.2, 0.1), seed=9)
        assert [e.split for e in a.entries] == [e.split for e in b.entries]

    def test_disjoint_exhaustive_stratified(self):
        man = D.split(self._manifest(37), (0.6, 0.25, 0.15), seed=5)
        for label in (0, 1):
            per = [e.split for e in man.entries if e.label == label]
            assert len(per) == 37
            for s, f in (("train", 0.6), ("val", 0.25), ("test", 0.15)):
                assert abs(per.count(s) - 37 * f) <= 1.0 + 1e-9

    def test_bad_fractions(self):
        with pytest.raises(ValidationError):
            D.split(self._manifest(), (0.5, 0.2, 0.2), seed=0)


class TestSynthetic:
    def test_same_seed_identical(self):
        a = D.synth_generate(5, 32, seed=11)
        b = D.synth_generate(5, 32, seed=11)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_diseased_brighter_on_average(self):
        ds = D.synth_generate(100, 32, seed=12)
        m0 = ds.images[ds.labels == 0].mean()
        m1 = ds.images[ds.labels == 1].mean()
        assert m1 > m0

    def test_blob_center_inside_quadrant(self):
        ds = D.synth_generate(50, 64, seed=13)
        half = 32
        for label, blob in zip(ds.labels, ds.blobs):
            assert (blob is not None) == (label == 1)
            if blob is None:
                continue
            cy, cx = blob.center
            assert (cy >= half) == (blob.quadrant in (2, 3))
            assert (cx >= half) == (blob.quadrant in (1, 3))

    def test_validation(self):
        with pytest.raises(ValidationError):
            D.synth_generate(0, 32, seed=0)
        with pytest.raises(ValidationError):
            D.synth_generate(5, 8, seed=0)


class TestBatches:
    def _arrays(self, n=10):
        rng = np.random.default_rng(14)
        return rng.uniform(size=(n, 1, 4, 4)), np.arange(n) % 2

    def test_partial_final_batch(self):
        x, y = self._arrays(10)
        sizes = [len(yb) for _, yb in D.batches(x, y, 4, seed=0, epoch=0)]
        assert sizes == [4, 4, 2]

    def test_reshuffles_across_epochs(self):
        x, y = self._arrays(16)
        e0 = np.concatenate([yb for _, yb in D.batches(x, np.arange(16), 4, 0, 0)])
        e1 = np.concatenate([yb for _, yb in D.batches(x, np.arange(16), 4, 0, 1)])
        assert not np.array_equal(e0, e1)

    def test_same_seed_epoch_identical(self):
        x, y = self._arrays(12)
        a = np.concatenate([yb for _, yb in D.batches(x, np.arange(12), 5, 7, 3)])
        b = np.concatenate([yb for _, yb in D.batches(x, np.arange(12), 5, 7, 3)])
        assert np.array_equal(a, b)

    def test_indices_match_contents(self):
        x, y = self._arrays(9)
        for xb, yb, idx in D.batches(x, y, 4, 1, 0, return_indices=True):
            assert np.array_equal(xb.data, x[idx])
            assert np.array_equal(yb, y[idx])
