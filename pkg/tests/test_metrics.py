import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adnexsynth.image import ClassId, LabelMaskSet
from adnexsynth.metrics import (ClassScore, dice, evaluate, hd95, read_scores_csv, recall, score_class,
                                surface_dice, write_scores_csv, write_summary_csv)
from oracles import hd95_bruteforce, random_mask_pair, surface_dice_bruteforce


def square(shape, y, x, s):
    m = np.zeros(shape, bool)
    m[y:y + s, x:x + s] = True
    return m


masks_20 = arrays(bool, (10, 10), elements=st.booleans())


class TestDice:
    def test_identical(self):
        m = square((10, 10), 2, 2, 4)
        assert dice(m, m) == 1.0

    def test_half_overlap(self):
        a = square((12, 12), 2, 2, 4)
        b = np.roll(a, 2, axis=1)
        assert dice(a, b) == 0.5

    def test_both_empty(self):
        z = np.zeros((4, 4), bool)
        assert dice(z, z) == 1.0

    def test_false_positive_on_empty_gt(self):
        z = np.zeros((4, 4), bool)
        assert dice(z, square((4, 4), 0, 0, 2)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


class TestRecall:
    def test_superset(self):
        gt = square((10, 10), 3, 3, 3)
        assert recall(gt, square((10, 10), 2, 2, 6)) == 1.0

    def test_disjoint(self):
        assert recall(square((10, 10), 0, 0, 3), square((10, 10), 5, 5, 3)) == 0.0

    def test_empty_conventions(self):
        z = np.zeros((5, 5), bool)
        assert recall(z, z) == 1.0
        assert recall(z, square((5, 5), 1, 1, 2)) == 0.0


class TestSurfaceDice:
    def test_identical_any_tolerance(self):
        m = square((16, 16), 3, 3, 8)
        for tol in (0, 1, 5):
            assert surface_dice(m, m, tol) == 1.0

    def test_translated_long_edges(self):
        gt = np.zeros((20, 80), bool)
        gt[5:12, 5:70] = True
        pred = np.zeros_like(gt)
        pred[5:12, 10:75] = True
        # only the vertical edge pairs 5 px apart are off by > 2; horizontal edges coincide
        assert surface_dice(gt, pred, 2) < surface_dice(gt, pred, 5)
        tall = np.zeros((80, 20), bool)
        tall[3:77, 4:8] = True
        shifted = np.zeros_like(tall)
        shifted[3:77, 12:16] = True
        assert surface_dice(tall, shifted, 2) < 0.1

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_bruteforce(self, seed):
        gt, pred = random_mask_pair(np.random.default_rng(seed))
        assert surface_dice(gt, pred, 3) == pytest.approx(surface_dice_bruteforce(gt, pred, 3), abs=1e-12)

    def test_empty_cases(self):
        z = np.zeros((6, 6), bool)
        assert surface_dice(z, z, 1) == 1.0
        assert surface_dice(z, square((6, 6), 1, 1, 2), 1) == 0.0
        assert surface_dice(square((6, 6), 1, 1, 2), z, 1) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(masks_20, masks_20, st.floats(0, 6), st.floats(0, 6))
    def test_symmetric_and_monotone(self, a, b, t1, t2):
        lo, hi = sorted((t1, t2))
        assert surface_dice(a, b, lo) == surface_dice(b, a, lo)
        assert surface_dice(a, b, lo) <= surface_dice(a, b, hi)


class TestHD95:
    def test_identical(self):
        m = square((10, 10), 2, 2, 5)
        assert hd95(m, m) == 0.0

    def test_single_pixels(self):
        a = np.zeros((10, 10), bool)
        b = np.zeros((10, 10), bool)
        a[1, 1] = True
        b[4, 5] = True
        assert hd95(a, b) == 5.0

    def test_empty_undefined(self):
        m = square((5, 5), 1, 1, 2)
        assert hd95(m, np.zeros_like(m)) is None
        assert hd95(np.zeros_like(m), np.zeros_like(m)) is None

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_bruteforce(self, seed):
        gt, pred = random_mask_pair(np.random.default_rng(50 + seed))
        assert hd95(gt, pred) == pytest.approx(hd95_bruteforce(gt, pred), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(masks_20, masks_20)
    def test_symmetric(self, a, b):
        if a.any() and b.any():
            assert hd95(a, b) == hd95(b, a)


class TestScores:
    def test_empty_pair(self):
        z = np.zeros((4, 4), bool)
        assert score_class(z, z) == ClassScore(1.0, 1.0, 1.0, None, True)

    def test_false_positive_only(self):
        z = np.zeros((4, 4), bool)
        s = score_class(z, square((4, 4), 1, 1, 2))
        assert (s.dsc, s.sdsc, s.recall, s.hd95, s.empty_pair) == (0.0, 0.0, 0.0, None, False)


def _random_sets(rng, n, shape=(20, 20)):
    out = {}
    for i in range(n):
        stack = np.zeros((4, *shape), bool)
        for k in range(4):
            if rng.random() < 0.7:
                stack[k] = random_mask_pair(rng, shape)[0]
        out[f"im{i}"] = LabelMaskSet(stack)
    return out


class TestEvaluate:
    def test_perfect_predictions(self):
        gt = _random_sets(np.random.default_rng(1), 4)
        rep = evaluate(gt, gt)
        for cls in ClassId:
            for m in ("dsc", "sdsc", "recall"):
                assert rep.summary[(cls, m)].mean == 1.0
            agg = rep.summary[(cls, "hd95")]
            assert agg.n == 0 or agg.mean == 0.0

    def test_single_image(self):
        rng = np.random.default_rng(2)
        gt, pred = _random_sets(rng, 1), _random_sets(rng, 1)
        rep = evaluate(gt, pred, 2.0)
        for row in rep.rows:
            for m in ("dsc", "sdsc", "recall"):
                agg = rep.summary[(row.cls, m)]
                assert agg.mean == row.score.value(m)
                assert agg.std == 0.0

    def test_five_images_against_recomputation(self):
        rng = np.random.default_rng(3)
        gt, pred = _random_sets(rng, 5), _random_sets(rng, 5)
        rep = evaluate(gt, pred, 3.0)
        for cls in ClassId:
            dsc = []
            sd = []
            hds = []
            for i in gt:
                g, p = gt[i][cls], pred[i][cls]
                inter = np.logical_and(g, p).sum()
                tot = g.sum() + p.sum()
                dsc.append(1.0 if tot == 0 else 2 * inter / tot)
                sd.append(surface_dice_bruteforce(g, p, 3.0))
                if g.any() and p.any():
                    hds.append(hd95_bruteforce(g, p))
            assert rep.summary[(cls, "dsc")].mean == pytest.approx(np.mean(dsc), abs=1e-12)
            assert rep.summary[(cls, "dsc")].std == pytest.approx(np.std(dsc, ddof=1), abs=1e-12)
            assert rep.summary[(cls, "sdsc")].mean == pytest.approx(np.mean(sd), abs=1e-12)
            assert rep.summary[(cls, "hd95")].n_hd95_defined == len(hds)
            if hds:
                assert rep.summary[(cls, "hd95")].mean == pytest.approx(np.mean(hds), abs=1e-12)

    def test_id_mismatch(self):
        gt = _random_sets(np.random.default_rng(4), 2)
        with pytest.raises(KeyError):
            evaluate(gt, {"other": gt["im0"], "im1": gt["im1"]})

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        rep = evaluate(_random_sets(rng, 3), _random_sets(rng, 3))
        write_scores_csv(rep, tmp_path / "s.csv")
        write_summary_csv(rep, tmp_path / "m.csv")
        rows = read_scores_csv(tmp_path / "s.csv")
        assert [(r.image_id, r.cls, r.score) for r in rows] == [(r.image_id, r.cls, r.score) for r in rep.rows]
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == "class,metric,mean,std,n,n_hd95_defined"
