import numpy as np
import pytest

from cctvision import metrics as ME
from cctvision.errors import ValidationError


def brute_force_metrics(truth, pred, n):
    """Independent recompute of the whole report from raw pairs."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    per = []
    for c in range(n):
        tp = np.sum((truth == c) & (pred == c))
        fp = np.sum((truth != c) & (pred == c))
        fn = np.sum((truth == c) & (pred != c))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per.append((p, r, f, int(np.sum(truth == c))))
    macro = tuple(np.mean([x[i] for x in per]) for i in range(3))
    total = len(truth)
    weighted = tuple(sum(x[i] * x[3] for x in per) / total for i in range(3))
    acc = float(np.mean(truth == pred))
    return per, macro, weighted, acc


class TestConfusionMatrix:
    def test_perfect_predictions_diagonal(self):
        t = [0, 0, 1, 2, 2, 2]
        cm = ME.confusion_matrix(t, t, 3)
        assert np.array_equal(cm, np.diag([2, 1, 3]))

    def test_hand_count(self):
        cm = ME.confusion_matrix([0, 0, 1], [0, 1, 1], 2)
        assert np.array_equal(cm, [[1, 1], [0, 1]])

    def test_empty_input(self):
        assert np.array_equal(ME.confusion_matrix([], [], 2), np.zeros((2, 2)))

    def test_errors(self):
        with pytest.raises(ValidationError):
            ME.confusion_matrix([0, 1], [0], 2)
        with pytest.raises(ValidationError):
            ME.confusion_matrix([0, 2], [0, 1], 2)


class TestPrf1Report:
    def test_diagonal_all_ones(self):
        rep = ME.prf1_report(np.diag([5, 3, 2]))
        for c in rep.per_class:
            assert (c.precision, c.recall, c.f1) == (1.0, 1.0, 1.0)
        assert rep.accuracy == 1.0

    def test_hand_computation(self):
        rep = ME.prf1_report(np.array([[8, 2], [1, 9]]))
        c0 = rep.per_class[0]
        assert abs(c0.precision - 8 / 9) < 1e-12
        assert abs(c0.recall - 0.8) < 1e-12
        assert abs(c0.f1 - 2 * (8 / 9) * 0.8 / (8 / 9 + 0.8)) < 1e-12

    def test_zero_support_flagged(self):
        with pytest.warns(UserWarning, match="zero-denominator"):
            rep = ME.prf1_report(np.array([[5, 0], [0, 0]]))
        assert rep.per_class[1].recall == 0.0
        assert rep.per_class[1].degenerate

    @pytest.mark.filterwarnings("ignore:class .*zero-denominator")
    def test_brute_force_oracle_1000_instances(self):
        rng = np.random.default_rng(1000)
        for _ in range(1000):
            n = int(rng.integers(2, 5))
            size = int(rng.integers(1, 40))
            truth = rng.integers(0, n, size)
            pred = rng.integers(0, n, size)
            rep = ME.evaluate(truth, pred, n)
            per, macro, weighted, acc = brute_force_metrics(truth, pred, n)
            for c, (p, r, f, s) in zip(rep.per_class, per):
                assert abs(c.precision - p) <= 1e-12
                assert abs(c.recall - r) <= 1e-12
                assert abs(c.f1 - f) <= 1e-12
                assert c.support == s
            assert np.allclose(rep.macro_avg, macro, atol=1e-12)
            assert np.allclose(rep.weighted_avg, weighted, atol=1e-12)
            assert abs(rep.accuracy - acc) <= 1e-12
            assert abs(rep.accuracy + rep.hamming_loss - 1.0) <= 1e-12

    def test_weighted_recall_equals_accuracy(self):
        rng = np.random.default_rng(7)
        truth = rng.integers(0, 3, 200)
        pred = rng.integers(0, 3, 200)
        rep = ME.evaluate(truth, pred, 3)
        assert abs(rep.weighted_avg[1] - rep.accuracy) < 1e-12

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(8)
        truth = rng.integers(0, 3, 100)
        pred = rng.integers(0, 3, 100)
        perm = np.array([2, 0, 1])
        rep = ME.evaluate(truth, pred, 3)
        rep_p = ME.evaluate(perm[truth], perm[pred], 3)
        for c in range(3):
            a, b = rep.per_class[c], rep_p.per_class[perm[c]]
            assert abs(a.precision - b.precision) < 1e-12
            assert abs(a.f1 - b.f1) < 1e-12
        assert np.allclose(rep.macro_avg, rep_p.macro_avg, atol=1e-12)


class TestHammingLoss:
    def test_identical(self):
        assert ME.hamming_loss([1, 2, 3], [1, 2, 3]) == 0.0

    def test_disjoint(self):
        assert ME.hamming_loss([0, 0], [1, 1]) == 1.0

    def test_quarter(self):
        assert ME.hamming_loss([0, 1, 0, 1], [0, 1, 0, 0]) == 0.25

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            ME.hamming_loss([], [])


class TestPixelStats:
    def test_constant_128(self):
        img = np.full((8, 8), 128, dtype=np.uint8)
        (s,) = ME.pixel_stats([img], [0])
        assert abs(s.mean - 128 / 255) < 1e-9
        assert s.mean == s.max == s.min

    def test_full_range(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        img[0, 0] = 255
        (s,) = ME.pixel_stats([img], [1])
        assert s.min == 0.0 and s.max == 1.0

    def test_class_mean_of_means(self):
        imgs = [np.zeros((4, 4), dtype=np.uint8), np.full((4, 4), 255, dtype=np.uint8)]
        stats = ME.pixel_stats(imgs, [0, 0])
        assert abs(np.mean([s.mean for s in stats]) - 0.5) < 1e-12

    def test_csv_exports(self, tmp_path):
        rng = np.random.default_rng(2)
        imgs = [rng.integers(0, 256, (8, 8)).astype(np.uint8) for _ in range(10)]
        stats = ME.pixel_stats(imgs, rng.integers(0, 2, 10))
        ME.write_pixel_stats_csv(stats, tmp_path / "stats.csv")
        ME.write_pixel_kde_csv(stats, tmp_path / "kde.csv")
        lines = (tmp_path / "stats.csv").read_text().strip().splitlines()
        assert len(lines) == 11
        assert lines[0] == "path,label,mean,max,min"
        kde = (tmp_path / "kde.csv").read_text().strip().splitlines()
        assert kde[0] == "stat,label,x,density"
        assert len(kde) > 1
