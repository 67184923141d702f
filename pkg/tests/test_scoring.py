import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dream_vad.scoring import (
    PERFECT_PSNR,
    abnormality_score,
    clip_bank_distances,
    compactness_distance,
    distance_ratios,
    fill_perfect,
    frame_auc,
    minmax_normalize,
    psnr,
)
from oracles import avg_min_dist_oracle, compactness_oracle, pairwise_auc, unit_rows


def psnr_oracle(pred, target):
    n = pred.size
    mse = sum((a - b) ** 2 for a, b in zip(pred.ravel(), target.ravel())) / n
    return 10 * math.log10(max(pred.ravel()) / mse)


class TestPsnr:
    def test_hand_value(self):
        target = np.zeros((1, 10, 10))
        pred = target.copy()
        pred[0, 0, 0] = 1.0  # max 1
        # mse must be 0.01: 100 pixels, squared error total 1
        assert psnr(pred, target) == pytest.approx(20.0, abs=1e-12)

    def test_perfect(self, rng):
        x = rng.uniform(0, 1, size=(3, 4, 4))
        assert psnr(x, x.copy()) == PERFECT_PSNR

    def test_matches_formula(self, rng):
        for _ in range(10):
            pred, target = rng.uniform(0, 1, size=(3, 6, 5)), rng.uniform(0, 1, size=(3, 6, 5))
            assert psnr(pred, target) == pytest.approx(psnr_oracle(pred, target), abs=1e-8)

    def test_uses_max_not_squared_peak(self):
        pred = np.full((4,), 0.5)
        target = pred - 0.1
        assert psnr(pred, target) == pytest.approx(10 * math.log10(0.5 / 0.01), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(3), np.zeros(4))


class TestCompactnessDistance:
    def test_on_memory_rows(self, rng):
        p = unit_rows(rng, 3, 4)
        assert compactness_distance(torch.tensor(p[[1, 1, 0]]), torch.tensor(p)) == pytest.approx(0.0, abs=1e-14)

    def test_mean_of_two(self):
        # squared distances 0.1 and 0.3 to the single memory (1, 0)
        p = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        qs = []
        for d2 in (0.1, 0.3):
            a = math.acos(1 - d2 / 2)
            qs.append([math.cos(a), math.sin(a)])
        assert compactness_distance(torch.tensor(qs, dtype=torch.float64), p) == pytest.approx(0.2, abs=1e-12)

    def test_matches_oracle(self, rng):
        p, q = unit_rows(rng, 5, 4), unit_rows(rng, 9, 4)
        ref = compactness_oracle(q, p) / 9
        assert compactness_distance(torch.tensor(q), torch.tensor(p)) == pytest.approx(ref, abs=1e-10)


class TestMinMax:
    def test_affine(self):
        np.testing.assert_allclose(minmax_normalize([2, 4, 6]), [0, 0.5, 1])

    def test_constant(self):
        np.testing.assert_array_equal(minmax_normalize([5, 5, 5]), [0, 0, 0])

    def test_endpoints(self, rng):
        x = rng.normal(size=20)
        g = minmax_normalize(x)
        assert g[np.argmin(x)] == 0.0 and g[np.argmax(x)] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            minmax_normalize([])


class TestScore:
    def test_default_gamma(self):
        import inspect

        assert inspect.signature(abnormality_score).parameters["gamma"].default == 0.6

    def test_gamma_endpoints(self, rng):
        p, d = rng.uniform(20, 40, 30), rng.uniform(0, 1, 30)
        np.testing.assert_array_equal(abnormality_score(p, d, 1.0), 1.0 - minmax_normalize(p))
        np.testing.assert_array_equal(abnormality_score(p, d, 0.0), minmax_normalize(d))

    def test_matches_formula(self, rng):
        p, d = rng.uniform(20, 40, 15), rng.uniform(0, 1, 15)
        gp = [(x - p.min()) / (p.max() - p.min()) for x in p]
        gd = [(x - d.min()) / (d.max() - d.min()) for x in d]
        ref = [0.6 * (1 - a) + 0.4 * b for a, b in zip(gp, gd)]
        np.testing.assert_allclose(abnormality_score(p, d, 0.6), ref, atol=1e-8)

    def test_perfect_frames_take_video_max(self):
        p = np.array([10.0, PERFECT_PSNR, 30.0])
        np.testing.assert_array_equal(fill_perfect(p), [10.0, 30.0, 30.0])
        s = abnormality_score(p, np.zeros(3), 1.0)
        np.testing.assert_allclose(s, [1.0, 0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            abnormality_score([1, 2], [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0, 60), min_size=2, max_size=30),
        st.floats(0.0, 1.0),
        st.floats(0.1, 10.0),
        st.floats(-5.0, 5.0),
    )
    def test_range_and_affine_invariance(self, p, gamma, a, b):
        p = np.asarray(p)
        d = np.linspace(0, 1, len(p))[::-1]
        s = abnormality_score(p, d, gamma)
        assert ((s >= -1e-12) & (s <= 1 + 1e-12)).all()
        np.testing.assert_allclose(abnormality_score(a * p + b, 3 * d + 1, gamma), s, atol=1e-9)


class TestAuc:
    def test_perfect_and_inverted(self):
        assert frame_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert frame_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_matches_pairwise_oracle(self):
        s, l = [0.1, 0.4, 0.35, 0.8], [0, 1, 0, 1]
        assert frame_auc(s, l) == pytest.approx(pairwise_auc(s, l), abs=1e-12)

    def test_ties_count_half(self):
        assert frame_auc([0.5, 0.5], [0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError):
            frame_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone_invariance_and_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(4, 40))
        labels = r.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = np.round(r.uniform(0, 1, n), 2)  # rounding forces ties
        auc = frame_auc(scores, labels)
        assert auc == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)
        assert frame_auc(np.exp(3 * scores) - 7, labels) == pytest.approx(auc, abs=1e-12)


class TestDistances:
    def test_coincident(self, rng):
        p = unit_rows(rng, 3, 4)
        dNN, *_ = clip_bank_distances(torch.tensor(p[[0, 2]]), torch.tensor(p), torch.tensor(p), torch.tensor(p))
        assert dNN == pytest.approx(0.0, abs=1e-7)

    def test_single_query_two_memories(self):
        q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        p = torch.tensor([[0.0, 1.0], [0.6, 0.8]], dtype=torch.float64)
        d = clip_bank_distances(q, q, p, p)
        expected = min(math.sqrt(2.0), math.sqrt(0.4**2 + 0.8**2))
        assert d[0] == pytest.approx(expected, abs=1e-12)

    def test_matches_oracle(self, rng):
        qN, qA = unit_rows(rng, 7, 5), unit_rows(rng, 7, 5)
        pN, pA = unit_rows(rng, 4, 5), unit_rows(rng, 3, 5)
        got = clip_bank_distances(*(torch.tensor(x) for x in (qN, qA, pN, pA)))
        ref = (
            avg_min_dist_oracle(qN, pN),
            avg_min_dist_oracle(qN, pA),
            avg_min_dist_oracle(qA, pN),
            avg_min_dist_oracle(qA, pA),
        )
        np.testing.assert_allclose(got, ref, atol=1e-10)
        assert all(v >= 0 for v in got)

    def test_empty(self):
        with pytest.raises(ValueError):
            clip_bank_distances(torch.zeros(0, 3), torch.zeros(0, 3), torch.ones(1, 3), torch.ones(1, 3))

    def test_ratios(self):
        assert distance_ratios([1, 2], [1, 2], [3, 4], [3, 4]) == (1.0, 1.0)
        # three clips by hand: (0.1+0.2+0.3)/(1+1+1), (0.5+0.5+0.2)/(2+2+2)
        r_n, r_a = distance_ratios([0.1, 0.2, 0.3], [1, 1, 1], [2, 2, 2], [0.5, 0.5, 0.2])
        assert r_n == pytest.approx(0.2) and r_a == pytest.approx(0.2)

    def test_zero_denominator(self):
        with pytest.raises(ValueError):
            distance_ratios([1], [0], [1], [1])
