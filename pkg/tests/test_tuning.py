import mpmath
import numpy as np
import pytest

from multinomial_mc.data import SyntheticSpec, generate_truth, sample_observations
from multinomial_mc.links import ConditionalLogitLink
from multinomial_mc.solver import SolverConfig
from multinomial_mc.tuning import (GAUSSIAN, LOGISTIC, cross_validate, fit_model, fit_path,
                                   fold_indices, grid_size, lambda_from_constant, lambda_grid,
                                   null_threshold, slice_decompositions, theoretical_lambda,
                                   validation_score)

from conftest import random_observations


def mp_lambda(L, nu, n, m1, m2):
    mpmath.mp.dps = 40
    d, m = mpmath.mpf(m1 + m2), mpmath.mpf(min(m1, m2))
    return 6 * mpmath.mpf(L) * mpmath.sqrt(2 * mpmath.mpf(nu) * mpmath.log(d) / (m * n))


class TestTheoreticalLambda:
    @pytest.mark.parametrize("L,nu,n,m1,m2", [
        (0.5, 1.0, 10_000, 100, 100),
        (0.5, 1.0, 50_000, 1000, 600),
        (0.9, 2.5, 500_000, 1000, 600),
        (0.75, 1.3, 123_457, 943, 1682),
        (0.62, 4.0, 1_000, 7, 3),
    ])
    def test_matches_extended_precision(self, L, nu, n, m1, m2):
        got = lambda_from_constant(L, nu, n, m1, m2)
        assert got == pytest.approx(float(mp_lambda(L, nu, n, m1, m2)), rel=1e-12)

    def test_worked_example(self):
        # L = 1/2, nu = 1, 100x100, n = 1e4: lam = 3 sqrt(2 log 200 / 1e6)
        expected = 3 * mpmath.sqrt(2 * mpmath.log(200) / (100 * mpmath.mpf(10) ** 4))
        assert lambda_from_constant(0.5, 1.0, 10_000, 100, 100) == pytest.approx(float(expected), rel=1e-12)

    def test_uses_link_lipschitz_constant(self):
        gamma = 1.3
        L = 1 / (1 + mpmath.exp(-gamma))
        got = theoretical_lambda(ConditionalLogitLink(2), gamma, 1.0, 10_000, 100, 100)
        assert got == pytest.approx(float(mp_lambda(L, 1.0, 10_000, 100, 100)), rel=1e-12)

    def test_scaling_laws(self):
        base = lambda_from_constant(0.5, 1.0, 10_000, 50, 40)
        assert lambda_from_constant(0.5, 1.0, 40_000, 50, 40) == pytest.approx(base / 2, rel=1e-14)
        assert lambda_from_constant(0.5, 2.0, 10_000, 50, 40) == pytest.approx(base * np.sqrt(2), rel=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            lambda_from_constant(0.5, 1.0, 0, 5, 5)


class TestGrid:
    def test_size_natural_log(self):
        assert grid_size(1000) == 5
        assert grid_size(10_000) == 6
        assert grid_size(500_000) == 8
        assert grid_size(1) == 1

    def test_geometric(self):
        g = lambda_grid(2.0, 1000)
        assert g.size == 5 and g[0] == 2.0 and g[-1] == pytest.approx(2e-3)
        ratios = g[1:] / g[:-1]
        np.testing.assert_allclose(ratios, ratios[0])
        assert np.all(np.diff(g) < 0)

    def test_single_point(self):
        assert lambda_grid(0.3, 1).tolist() == [0.3]
        obs = random_observations(np.random.default_rng(0), 5, 4, 2, 30)
        cv = cross_validate(obs, LOGISTIC, folds=3, lambdas=[0.05])
        assert cv.best_lambda == 0.05 and cv.scores.size == 1

    def test_bad_ceiling(self):
        with pytest.raises(ValueError):
            lambda_grid(0.0, 100)


class TestCrossValidation:
    @pytest.fixture(scope="class")
    @staticmethod
    def instance():
        truth = generate_truth(SyntheticSpec(40, 30, 2, seed=1))
        return sample_observations(truth, None, 3000, seed=2)

    def test_ceiling_gives_null_model_on_every_fold(self, instance):
        cv = cross_validate(instance, LOGISTIC, folds=5, seed=3, patience=None)
        for k, part in enumerate(fold_indices(instance.n, 5, 3)):
            mask = np.ones(instance.n, bool)
            mask[part] = False
            fit = fit_model(instance.subset(mask), LOGISTIC, SolverConfig(lam=cv.ceiling))
            assert all(d.n_atoms == 0 for d in slice_decompositions(fit))
        assert cv.lambdas[0] == cv.ceiling
        assert cv.ceiling >= null_threshold(instance, LOGISTIC)

    def test_best_beats_endpoints(self, instance):
        cv = cross_validate(instance, LOGISTIC, folds=5, seed=0, patience=None)
        assert np.all(np.isfinite(cv.scores))
        assert cv.scores[cv.best_index] <= min(cv.scores[0], cv.scores[-1])
        assert cv.scores[cv.best_index] == cv.scores.min()

    def test_scores_are_fold_means(self, instance):
        cv = cross_validate(instance, GAUSSIAN, folds=4, seed=0, patience=None)
        np.testing.assert_allclose(cv.scores, cv.fold_scores.mean(axis=0))
        assert cv.fold_scores.shape == (4, grid_size(instance.n))

    def test_early_stop_marks_skipped_points(self, instance):
        full = cross_validate(instance, LOGISTIC, folds=3, seed=1, patience=None)
        early = cross_validate(instance, LOGISTIC, folds=3, seed=1, patience=1)
        done = np.isfinite(early.scores)
        np.testing.assert_allclose(early.scores[done], full.scores[done])
        assert early.best_lambda in early.lambdas[done]

    def test_ties_go_to_larger_lambda(self, instance, monkeypatch):
        import multinomial_mc.tuning as tuning
        monkeypatch.setattr(tuning, "validation_score", lambda *a, **k: 1.0)
        cv = cross_validate(instance, LOGISTIC, folds=3, patience=None)
        assert cv.best_lambda == cv.lambdas[0]

    def test_deterministic_folds(self):
        a, b = fold_indices(101, 5, 7), fold_indices(101, 5, 7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        merged = np.sort(np.concatenate(a))
        np.testing.assert_array_equal(merged, np.arange(101))
        assert {p.size for p in a} <= {20, 21}

    def test_threads_do_not_change_result(self, instance):
        a = cross_validate(instance, LOGISTIC, folds=3, seed=2)
        b = cross_validate(instance, LOGISTIC, folds=3, seed=2, threads=3)
        np.testing.assert_array_equal(a.fold_scores, b.fold_scores)

    def test_too_few_observations(self):
        obs = random_observations(np.random.default_rng(0), 3, 3, 2, 3)
        with pytest.raises(ValueError):
            cross_validate(obs, LOGISTIC, folds=5)


class TestPathAndScores:
    def test_warm_path_not_worse_than_cold(self, rng):
        obs = random_observations(rng, 25, 20, 3, 600)
        link = ConditionalLogitLink(3)
        base = SolverConfig(lam=1.0)
        lambdas = lambda_grid(null_threshold(obs, LOGISTIC, link), obs.n)
        warm = fit_path(obs, LOGISTIC, lambdas, base, link)
        for lam, fits in zip(lambdas, warm):
            cold = fit_model(obs, LOGISTIC, SolverConfig(lam=float(lam)), link)
            for w, c in zip(fits, cold):
                bound = w.epsilon * (w.decomposition.weights.sum() + c.decomposition.weights.sum() / 2)
                assert w.objective <= c.objective + bound + 1e-12

    def test_validation_nll_oracle(self, rng):
        obs = random_observations(rng, 6, 5, 3, 200)
        link = ConditionalLogitLink(3)
        fit = fit_model(obs, LOGISTIC, SolverConfig(lam=0.01), link)
        probs = link.class_probabilities(np.stack(
            [np.array([f.decomposition.left[i] * f.decomposition.right[j] @ f.decomposition.weights
                       for i, j in zip(obs.rows, obs.cols)]) for f in fit], axis=1))
        oracle = -np.mean(np.log(probs[np.arange(obs.n), obs.labels - 1]))
        assert validation_score(fit, obs, LOGISTIC, link) == pytest.approx(oracle, rel=1e-10)

    def test_validation_mse(self, rng):
        obs = random_observations(rng, 6, 5, 4, 100)
        fit = fit_model(obs, GAUSSIAN, SolverConfig(lam=0.05))
        pred = fit.means(obs.rows, obs.cols)
        assert validation_score(fit, obs, GAUSSIAN) == pytest.approx(np.mean((obs.labels - pred) ** 2))

    def test_unknown_model(self, rng):
        with pytest.raises(ValueError):
            fit_model(random_observations(rng, 3, 3, 2, 10), "probit", SolverConfig(lam=0.1))
