import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcap.cdi import (CLASS1, CLASS2, CdiRecord, OrientationError, bin_cdis, bin_lower_edge,
                       case_log_likelihood, estimate_cdi, log_likelihood_curve, orient_cdis,
                       read_cdi_csv, score_cases, write_cdi_csv)
from mlcap.irt import DichotomousItem, GradedItem, ItemBank, category_probs_grm, prob_correct_2pl, simulate_responses

from conftest import random_2pl_bank, random_grm_bank

GRID = np.round(np.arange(-4000, 4001) * 1e-3, 10)


def grid_argmax(codes, bank):
    return float(GRID[np.argmax(log_likelihood_curve(GRID, codes, bank))])


class TestLogLikelihood:
    def test_single_item_half(self):
        bank = ItemBank("dichotomous", [DichotomousItem(1.0, 0.0)])
        assert case_log_likelihood(0.0, [1], bank) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_symmetric_pair(self):
        bank = ItemBank("dichotomous", [DichotomousItem(1.2, 0.0), DichotomousItem(1.2, 0.0)])
        assert case_log_likelihood(0.0, [1, 0], bank) == pytest.approx(case_log_likelihood(0.0, [0, 1], bank))

    def test_sum_of_item_terms_2pl(self, rng):
        bank = random_2pl_bank(rng, 15)
        for _ in range(20):
            codes = rng.integers(0, 2, 15)
            theta = rng.uniform(-3, 3)
            p = np.array([prob_correct_2pl(theta, it) for it in bank.items])
            expected = np.sum(np.where(codes == 1, np.log(p), np.log1p(-p)))
            assert case_log_likelihood(theta, codes, bank) == pytest.approx(expected, abs=1e-12)

    def test_sum_of_item_terms_graded(self, rng):
        bank = random_grm_bank(rng, 6)
        for _ in range(20):
            codes = rng.integers(0, 4, 6)
            theta = rng.uniform(-3, 3)
            expected = sum(math.log(category_probs_grm(theta, it)[k]) for it, k in zip(bank.items, codes))
            assert case_log_likelihood(theta, codes, bank) == pytest.approx(expected, abs=1e-12)

    def test_curve_matches_pointwise(self, rng):
        bank = random_grm_bank(rng, 5)
        codes = rng.integers(0, 4, 5)
        t = np.linspace(-4, 4, 11)
        curve = log_likelihood_curve(t, codes, bank)
        assert curve == pytest.approx([case_log_likelihood(x, codes, bank) for x in t], abs=1e-12)

    def test_length_mismatch(self):
        bank = ItemBank("dichotomous", [DichotomousItem(1.0, 0.0)])
        with pytest.raises(ValueError):
            case_log_likelihood(0.0, [1, 0], bank)


class TestEstimate:
    def test_all_correct_clamped(self, bank20):
        rec = estimate_cdi(np.ones(20, int), bank20)
        assert rec.raw_cdi == 4.0 and rec.clamped

    def test_all_wrong_clamped(self, bank20):
        rec = estimate_cdi(np.zeros(20, int), bank20)
        assert rec.raw_cdi == -4.0 and rec.clamped

    def test_all_extreme_graded_clamped(self, grm_bank4):
        assert estimate_cdi([3, 3, 3, 3], grm_bank4).raw_cdi == 4.0
        assert estimate_cdi([0, 0, 0, 0], grm_bank4).raw_cdi == -4.0

    def test_symmetric_pair_root_at_zero(self):
        bank = ItemBank("dichotomous", [DichotomousItem(1.0, -1.0), DichotomousItem(1.0, 1.0)])
        rec = estimate_cdi([1, 0], bank)
        assert abs(rec.raw_cdi) <= 1e-6 and rec.converged and not rec.clamped

    def test_grid_oracle_2pl(self, rng):
        for _ in range(50):
            bank = random_2pl_bank(rng, 20)
            codes = rng.integers(0, 2, 20)
            rec = estimate_cdi(codes, bank)
            assert abs(rec.raw_cdi - grid_argmax(codes, bank)) <= 2e-3

    def test_grid_oracle_graded(self, rng):
        for _ in range(50):
            bank = random_grm_bank(rng, 6)
            codes = rng.integers(0, 4, 6)
            rec = estimate_cdi(codes, bank)
            assert abs(rec.raw_cdi - grid_argmax(codes, bank)) <= 2e-3

    def test_respects_category_map(self):
        collapsed = GradedItem(1.0, (-1.0, 1.0), category_map=(0, 1, 1, 2))
        plain = GradedItem(1.0, (-1.0, 1.0))
        a = estimate_cdi([2, 0], ItemBank("graded", [collapsed, plain], 4))
        b = estimate_cdi([1, 0], ItemBank("graded", [plain, plain], 3))
        assert a.raw_cdi == pytest.approx(b.raw_cdi, abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), flip=st.integers(0, 11))
    def test_monotone_in_score(self, seed, flip):
        rng = np.random.default_rng(seed)
        bank = random_2pl_bank(rng, 12)
        codes = rng.integers(0, 2, 12)
        codes[flip] = 0
        up = codes.copy()
        up[flip] = 1
        assert estimate_cdi(up, bank).raw_cdi >= estimate_cdi(codes, bank).raw_cdi - 1e-9

    def test_score_cases_carries_labels(self, bank20):
        rm, _ = simulate_responses(bank20, 30, seed=0)
        rm.class_labels = np.where(np.arange(30) % 2 == 0, CLASS1, CLASS2)
        recs = score_cases(rm, bank20)
        assert [r.case_id for r in recs] == list(range(30))
        assert [r.class_label for r in recs] == rm.class_labels.tolist()
        assert all(-4 <= r.raw_cdi <= 4 for r in recs)
        assert all(abs(r.raw_cdi) == 4.0 for r in recs if r.clamped)


class TestOrient:
    def test_examples(self):
        a, b = orient_cdis([CdiRecord(1, CLASS1, 0.80), CdiRecord(2, CLASS2, 0.80)])
        assert a.oriented_cdi == -0.80 and b.oriented_cdi == 0.80

    def test_rejects_double(self):
        once = orient_cdis([CdiRecord(1, CLASS1, 0.5)])
        with pytest.raises(OrientationError):
            orient_cdis(once)

    def test_unknown_class(self):
        with pytest.raises(ValueError):
            orient_cdis([CdiRecord(1, 7, 0.5)])

    def test_mixed_histogram(self, rng):
        raw = rng.normal(size=500)
        labels = rng.choice([CLASS1, CLASS2], 500)
        out = orient_cdis([CdiRecord(i, int(c), float(v)) for i, (c, v) in enumerate(zip(labels, raw))])
        manual = np.where(labels == CLASS1, -raw, raw)
        got = np.array([r.oriented_cdi for r in out])
        assert np.array_equal(got, manual)
        assert np.array_equal(np.abs(got), np.abs(raw))


class TestBins:
    def test_edges(self):
        assert bin_lower_edge(0.13) == 0.0
        assert bin_lower_edge(-0.25) == -0.25
        assert bin_lower_edge(0.25) == 0.25
        assert bin_lower_edge(-0.01) == -0.25

    def test_partition_and_histogram_oracle(self, rng):
        vals = rng.standard_normal(10_000)
        recs = orient_cdis([CdiRecord(i, CLASS2, float(v)) for i, v in enumerate(vals)])
        bins = bin_cdis(recs)
        members = [m for b in bins for m in b.member_ids]
        assert sorted(members) == list(range(10_000))
        lo = math.floor(vals.min() / 0.25)
        hi = math.floor(vals.max() / 0.25) + 1
        edges = np.arange(lo, hi + 1) * 0.25
        counts, _ = np.histogram(vals, bins=edges)
        by_edge = {b.lower_edge: len(b.member_ids) for b in bins}
        expected = {float(e): int(c) for e, c in zip(edges[:-1], counts) if c}
        assert by_edge == pytest.approx(expected)
        for b in bins:
            assert b.upper_edge - b.lower_edge == pytest.approx(0.25, abs=1e-12)
            assert abs(b.lower_edge / 0.25 - round(b.lower_edge / 0.25)) <= 1e-12

    def test_requires_orientation(self):
        with pytest.raises(OrientationError):
            bin_cdis([CdiRecord(0, CLASS2, 0.1)])


def test_csv_round_trip(tmp_path, rng):
    recs = orient_cdis([CdiRecord(i, int(rng.choice([1, 2])), float(rng.normal()), converged=bool(i % 3),
                                  clamped=False) for i in range(40)])
    path = tmp_path / "cdi.csv"
    write_cdi_csv(recs, path)
    assert path.read_text().splitlines()[0] == "case_id,class_label,raw_cdi,oriented_cdi,bin_lower,converged,clamped"
    assert read_cdi_csv(path) == recs
