import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcap.irt import (DegenerateItemError, DichotomousItem, FitConfig, GradedItem, ItemBank,
                       ResponseMatrix, UnseenCategoryError, category_probs_grm, cumulative_probs_grm,
                       fit_2pl, fit_grm, prob_correct_2pl, quadrature_grid, simulate_responses)

from conftest import random_2pl_bank, random_grm_bank


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestProbCorrect2PL:
    @pytest.mark.parametrize("alpha", [0.3, 1.0, 4.0])
    def test_inflection(self, alpha):
        assert prob_correct_2pl(0.7, DichotomousItem(alpha, 0.7)) == 0.5

    def test_ln3(self):
        assert prob_correct_2pl(math.log(3), DichotomousItem(1.0, 0.0)) == pytest.approx(0.75, abs=1e-15)

    def test_saturation(self):
        p = prob_correct_2pl(-50.0, DichotomousItem(2.0, 0.0))
        assert 0.0 < p <= 1e-15
        assert not math.isnan(prob_correct_2pl(700.0, DichotomousItem(1.0, 0.0)))
        assert prob_correct_2pl(-700.0, DichotomousItem(1.0, 0.0)) >= 0.0

    def test_vectorised(self):
        t = np.linspace(-3, 3, 7)
        out = prob_correct_2pl(t, DichotomousItem(1.3, 0.2))
        assert out.shape == (7,)
        assert out == pytest.approx([logistic(1.3 * (x - 0.2)) for x in t], abs=1e-15)

    def test_strictly_increasing_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a = rng.uniform(0.05, 5)
            b = rng.uniform(-3, 3)
            t1, t2 = np.sort(rng.uniform(-6, 6, 2))
            if t1 == t2:
                continue
            item = DichotomousItem(a, b)
            assert prob_correct_2pl(t1, item) < prob_correct_2pl(t2, item)


class TestCategoryProbs:
    def test_hand_evaluated(self):
        item = GradedItem(1.0, (-1.0, 0.0, 1.0))
        s1, sm1 = logistic(1.0), logistic(-1.0)
        expected = [1 - s1, s1 - 0.5, 0.5 - sm1, sm1]
        assert category_probs_grm(0.0, item) == pytest.approx(expected, abs=1e-14)
        assert expected == pytest.approx([0.2689, 0.2311, 0.2311, 0.2689], abs=1e-4)

    def test_far_left_mass_on_zero(self):
        p = category_probs_grm(-50.0, GradedItem(1.0, (-1.0, 0.0, 1.0)))
        assert p[0] >= 1 - 1e-10

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            GradedItem(1.0, (0.0, -1.0))
        with pytest.raises(ValueError):
            GradedItem(1.0, (0.0, 0.0))

    @settings(max_examples=200, deadline=None)
    @given(theta=st.floats(-30, 30), alpha=st.floats(0.05, 10),
           start=st.floats(-3, 3), gaps=st.lists(st.floats(0.01, 2), min_size=1, max_size=5))
    def test_normalised_and_nonnegative(self, theta, alpha, start, gaps):
        th = tuple(start + np.cumsum([0.0] + gaps[:-1]) + 0.0)
        th = tuple(np.asarray(th) + np.arange(len(th)) * 1e-6)
        item = GradedItem(alpha, th)
        p = category_probs_grm(theta, item)
        assert p.shape == (len(th) + 1,)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(theta=st.floats(-10, 10), alpha=st.floats(0.05, 10),
           th=st.lists(st.floats(-4, 4), min_size=2, max_size=5, unique=True))
    def test_cumulative_curves_nested(self, theta, alpha, th):
        th = tuple(sorted(th))
        if np.any(np.diff(th) <= 0):
            return
        cum = cumulative_probs_grm(theta, GradedItem(alpha, th))[0]
        assert np.all(np.diff(cum) <= 0)

    def test_matches_2pl_with_one_threshold(self):
        t = np.linspace(-4, 4, 17)
        p = category_probs_grm(t, GradedItem(1.7, (0.3,)))
        assert p[:, 1] == pytest.approx(prob_correct_2pl(t, DichotomousItem(1.7, 0.3)), abs=1e-14)


class TestSimulate:
    def test_deterministic(self, bank20):
        a, _ = simulate_responses(bank20, 300, seed=5)
        b, _ = simulate_responses(bank20, 300, seed=5)
        assert np.array_equal(a.codes, b.codes)

    def test_empirical_probability_near_zero(self):
        bank = ItemBank("dichotomous", [DichotomousItem(1.0, 0.0)])
        rm, theta = simulate_responses(bank, 100_000, seed=3)
        near = np.abs(theta) < 0.1
        # Monte-Carlo check against the model: P(correct | theta ~ 0) = 0.5
        assert rm.codes[near, 0].mean() == pytest.approx(0.5, abs=0.01)

    def test_graded_codes_in_range(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 2000, seed=1)
        assert rm.codes.min() >= 0 and rm.codes.max() <= 3
        assert set(np.unique(rm.codes)) == {0, 1, 2, 3}


class TestQuadrature:
    def test_grid(self):
        nodes, w = quadrature_grid(FitConfig())
        assert nodes.size == 61 and nodes[0] == -6 and nodes[-1] == 6
        assert w.sum() == pytest.approx(1.0)
        assert np.sum(w * nodes) == pytest.approx(0.0, abs=1e-12)
        assert np.sum(w * nodes**2) == pytest.approx(1.0, abs=1e-3)


def rmse(x, y):
    return float(np.sqrt(np.mean((np.asarray(x) - np.asarray(y)) ** 2)))


class TestFit2PL:
    def test_recovery(self, bank20):
        rm, _ = simulate_responses(bank20, 5000, seed=21)
        fit = fit_2pl(rm)
        assert fit.fit_info.converged
        assert rmse(fit.discriminations, bank20.discriminations) <= 0.15
        assert rmse([i.difficulty for i in fit.items], [i.difficulty for i in bank20.items]) <= 0.10
        assert np.all(fit.discriminations > 0)

    def test_loglik_monotone(self, bank20):
        rm, _ = simulate_responses(bank20, 1000, seed=2)
        trace = np.array(fit_2pl(rm).fit_info.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))

    def test_constant_column_rejected(self):
        codes = np.array([[1, 0], [1, 1], [1, 0], [1, 1]])
        with pytest.raises(DegenerateItemError) as err:
            fit_2pl(ResponseMatrix(np.arange(4), codes, item_names=["const", "ok"]))
        assert err.value.item == "const"

    def test_four_pattern_smoke(self):
        codes = np.array([[1, 1], [1, 0], [0, 1], [0, 0]])
        fit = fit_2pl(ResponseMatrix(np.arange(4), codes))
        params = np.r_[fit.discriminations, [i.difficulty for i in fit.items]]
        assert np.all(np.isfinite(params))
        trace = np.array(fit.fit_info.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-12)

    def test_needs_two_items(self):
        with pytest.raises(ValueError):
            fit_2pl(ResponseMatrix(np.arange(4), np.array([[0], [1], [0], [1]])))

    def test_nonconvergence_flagged(self, bank20):
        rm, _ = simulate_responses(bank20, 500, seed=4)
        fit = fit_2pl(rm, FitConfig(max_iter=2))
        assert not fit.fit_info.converged
        assert fit.fit_info.n_iter == 2
        assert np.all(np.isfinite(fit.discriminations))

    def test_different_start_same_answer(self, bank20):
        rm, _ = simulate_responses(bank20, 2000, seed=8)
        cfg = FitConfig()
        a = fit_2pl(rm, cfg)
        start = ItemBank("dichotomous", [DichotomousItem(2.5, it.difficulty + 0.5) for it in bank20.items])
        b = fit_2pl(rm, cfg, init=start)
        pa = np.r_[a.discriminations, [i.difficulty for i in a.items]]
        pb = np.r_[b.discriminations, [i.difficulty for i in b.items]]
        assert np.max(np.abs(pa - pb)) <= 10 * cfg.tol


class TestFitGRM:
    def test_recovery(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 5000, seed=31)
        fit = fit_grm(rm)
        assert fit.fit_info.converged
        assert rmse(fit.discriminations, grm_bank4.discriminations) <= 0.15
        true_th = np.array([i.thresholds for i in grm_bank4.items])
        fit_th = np.array([i.thresholds for i in fit.items])
        assert rmse(fit_th, true_th) <= 0.12

    def test_all_zero_item_degenerate(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 500, seed=1)
        codes = rm.codes.copy()
        codes[:, 2] = 0
        with pytest.raises(DegenerateItemError):
            fit_grm(ResponseMatrix(rm.case_ids, codes, item_names=rm.item_names, n_categories=4))

    def test_quartile_coded_data(self, rng):
        z = rng.standard_normal(3000)
        raw = z[:, None] + rng.standard_normal((3000, 4))
        codes = np.column_stack([np.searchsorted(np.quantile(c, [0.25, 0.5, 0.75]), c, side="left")
                                 for c in raw.T])
        assert np.all(np.bincount(codes[:, 0]) == 750)
        fit = fit_grm(ResponseMatrix(np.arange(3000), codes, n_categories=4))
        for it in fit.items:
            assert np.all(np.isfinite(it.thresholds))
            assert np.all(np.diff(it.thresholds) > 0)

    def test_unseen_category_collapsed(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 3000, seed=6)
        codes = rm.codes.copy()
        codes[codes[:, 1] == 2, 1] = 1
        fit = fit_grm(ResponseMatrix(rm.case_ids, codes, item_names=rm.item_names, n_categories=4))
        item = fit.items[1]
        assert item.category_map == (0, 1, 1, 2)
        assert len(item.thresholds) == 2
        assert fit.fit_info.remapped_items == {rm.item_names[1]: [0, 1, 1, 2]}

    def test_unseen_bottom_category_is_error(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 500, seed=6)
        codes = rm.codes.copy()
        codes[codes[:, 0] == 0, 0] = 1
        with pytest.raises(UnseenCategoryError):
            fit_grm(ResponseMatrix(rm.case_ids, codes, item_names=rm.item_names, n_categories=4))

    def test_loglik_monotone(self, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 1500, seed=3)
        trace = np.array(fit_grm(rm).fit_info.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))


class TestBankSerialisation:
    def test_round_trip(self, tmp_path, grm_bank4):
        rm, _ = simulate_responses(grm_bank4, 800, seed=2)
        fit = fit_grm(rm)
        path = tmp_path / "bank.json"
        fit.save(path)
        doc = json.loads(path.read_text())
        assert doc["format"] == "mlcap.itembank" and doc["version"] == 1
        back = ItemBank.load(path)
        assert back.model_kind == "graded"
        assert [i.thresholds for i in back.items] == [i.thresholds for i in fit.items]
        assert back.to_dict() == fit.to_dict()

    def test_rejects_other_documents(self):
        with pytest.raises(ValueError):
            ItemBank.from_dict({"format": "something"})

    def test_homogeneous(self):
        with pytest.raises(ValueError):
            ItemBank("dichotomous", [DichotomousItem(1, 0), GradedItem(1, (0.0,))])
        with pytest.raises(ValueError):
            ItemBank("dichotomous", [])

    def test_fit_config_from_dict(self):
        assert FitConfig.from_dict({"tol": 1e-3}).tol == 1e-3
        with pytest.raises(ValueError):
            FitConfig.from_dict({"bogus": 1})
