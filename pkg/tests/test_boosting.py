import numpy as np
import pytest
from scipy import optimize

from msgamlss import baselearners as bl
from msgamlss.baselearners import BaseLearnerSpec, LearnerBank, default_specs
from msgamlss.boosting import (
    BoostConfig,
    PredictorEnsemble,
    boost_state,
    select_across_parameters,
    select_within_parameter,
    weighted_gradients,
    weighted_loglik,
)
from msgamlss.errors import NoCandidateError
from msgamlss.families import NegativeBinomial, Normal

NORMAL = Normal()
NB = NegativeBinomial()


def reference_boost(family, y, X, w, specs, n_stop, offsets, sl=0.1):
    """Plain loop: one learner fitted at a time, log-likelihoods re-evaluated from scratch."""
    eta = [np.full(len(y), float(o)) for o in offsets]
    trace = []
    for _ in range(n_stop):
        theta = family.theta_from_eta(eta)
        best = None
        for k in range(family.K):
            g = w * family.gradient(y, theta, k)
            fits = [bl.fit(s, X, g) for s in specs[k]]
            j = int(np.argmin([f.rss for f in fits]))
            trial = list(eta)
            trial[k] = eta[k] + sl * bl.predict(fits[j], X)
            ll = float(np.sum(w * family.log_density(y, family.theta_from_eta(trial))))
            if best is None or ll > best[0]:
                best = (ll, k, j, fits[j].coefficients, trial)
        ll, k, j, coef, eta = best
        trace.append((k, j, coef, ll))
    return trace, eta


@pytest.fixture
def toy(rng):
    X = rng.uniform(-1, 1, size=(10, 3))
    y = 1.0 + 2.0 * X[:, 1] + rng.normal(scale=np.exp(0.5 * X[:, 2]))
    return y, X


def banks_for(specs, X):
    return [LearnerBank(list(s), X) for s in specs]


class TestGradients:
    def test_zero_weights(self, rng):
        y = rng.normal(size=6)
        g = weighted_gradients(NORMAL, y, [np.zeros(6), np.zeros(6)], np.zeros(6))
        assert np.all(g == 0)

    def test_unit_weights_equal_plain(self, rng):
        y = rng.normal(size=6)
        eta = [rng.normal(size=6), rng.normal(size=6)]
        np.testing.assert_array_equal(weighted_gradients(NORMAL, y, eta, np.ones(6)),
                                      NORMAL.gradients(y, NORMAL.theta_from_eta(eta)))

    def test_half_weight_example(self):
        g = weighted_gradients(NORMAL, np.array([2.0]), [np.zeros(1), np.zeros(1)], np.array([0.5]))
        assert g[0, 0] == 1.0
        # finite difference of the weighted summand
        h = 1e-6
        f = lambda e: weighted_loglik(NORMAL, np.array([2.0]), [np.array([e]), np.zeros(1)], np.array([0.5]))
        assert (f(h) - f(-h)) / (2 * h) == pytest.approx(1.0, rel=1e-8)


class TestSelection:
    def test_exact_linear_fit_wins(self, rng):
        X = rng.uniform(-1, 1, size=(40, 5))
        bank = LearnerBank(default_specs("linear", 5), X)
        rss, _ = bank.fit_all(0.4 - 3.0 * X[:, 3])
        assert select_within_parameter(rss) == 3
        assert rss[3] == pytest.approx(0.0, abs=1e-10)

    def test_tie_goes_to_lower_index(self, rng):
        X = rng.uniform(-1, 1, size=(40, 4))
        X[:, 2] = X[:, 1]
        bank = LearnerBank(default_specs("linear", 4), X)
        rss, _ = bank.fit_all(X[:, 1] + 0.1 * rng.normal(size=40))
        assert select_within_parameter(rss) == 1
        assert select_within_parameter([3.0, 1.0, 1.0]) == 1

    def test_exhaustive_rss(self, rng):
        X = rng.uniform(-1, 1, size=(30, 5))
        bank = LearnerBank(default_specs("linear", 5), X)
        for _ in range(20):
            g = rng.normal(size=30)
            rss, _ = bank.fit_all(g)
            brute = []
            for j in range(5):
                A = np.column_stack([np.ones(30), X[:, j]])
                r = g - A @ np.linalg.lstsq(A, g, rcond=None)[0]
                brute.append(r @ r)
            np.testing.assert_allclose(rss, brute, rtol=1e-10)
            assert select_within_parameter(rss) == int(np.argmin(brute))

    def test_all_degenerate(self):
        with pytest.raises(NoCandidateError):
            select_within_parameter([np.inf, np.inf])

    def test_across_parameters(self):
        assert select_across_parameters([-3.0]) == 0
        assert select_across_parameters([-5.0, -4.0]) == 1
        assert select_across_parameters([None, -9.0]) == 1
        with pytest.raises(NoCandidateError):
            select_across_parameters([None, None])


class TestBoostState:
    def test_zero_iterations(self, toy):
        y, X = toy
        res = boost_state(0, NORMAL, y, np.ones(10), banks_for([default_specs("linear", 3)] * 2, X), BoostConfig(0))
        assert all(e.updates == [] for e in res.ensembles)
        assert res.ensembles[0].offset == pytest.approx(y.mean())

    def test_matches_reference_trace(self, toy, rng):
        y, X = toy
        w = rng.uniform(0.1, 1.0, size=10)
        specs = [default_specs("linear", 3), [BaseLearnerSpec("intercept")] + default_specs("linear", 3)]
        offsets = [0.3, -0.2]
        res = boost_state(0, NORMAL, y, w, banks_for(specs, X), BoostConfig(3, reject_decrease=False), offsets)
        trace, eta = reference_boost(NORMAL, y, X, w, specs, 3, offsets)
        assert res.iterations == 3
        for k, e in enumerate(res.ensembles):
            ref = [(j, c) for kk, j, c, _ in trace if kk == k]
            assert [u[0] for u in e.updates] == [j for j, _ in ref]
            for (_, c, step), (_, rc) in zip(e.updates, ref):
                assert step == 0.1
                np.testing.assert_allclose(c, rc, atol=1e-12)
        np.testing.assert_allclose(res.eta, np.array(eta), atol=1e-12)
        assert res.loglik == pytest.approx(trace[-1][3], abs=1e-10)

    def test_eta_reproducible_from_ensemble(self, toy):
        y, X = toy
        specs = [default_specs("pspline", 3), default_specs("linear", 3)]
        banks = banks_for(specs, X)
        res = boost_state(0, NORMAL, y, np.ones(10), banks, BoostConfig(40))
        for k, e in enumerate(res.ensembles):
            np.testing.assert_allclose(e.training_eta(banks[k]), res.eta[k], atol=1e-12)
            np.testing.assert_allclose(e.evaluate(X, banks[k].definitions()), res.eta[k], atol=1e-12)

    def test_loglik_non_decreasing(self, toy):
        y, X = toy
        banks = banks_for([default_specs("linear", 3)] * 2, X)
        lls = [boost_state(0, NORMAL, y, np.ones(10), banks, BoostConfig(n)).loglik for n in range(0, 60, 5)]
        assert np.all(np.diff(lls) >= -1e-12)

    def test_intercept_converges_to_mle(self, rng):
        y = rng.normal(3.0, 1.5, size=200)
        banks = banks_for([[BaseLearnerSpec("intercept")]] * 2, np.zeros((200, 1)))
        res = boost_state(0, NORMAL, y, np.ones(200), banks, BoostConfig(1000), offsets=[0.0, 0.0])
        assert res.eta[0, 0] == pytest.approx(y.mean(), abs=1e-3)
        assert np.exp(res.eta[1, 0]) == pytest.approx(y.std(), abs=1e-3)

    def test_weighted_offsets_are_weighted_mle(self, rng):
        y = rng.normal(3.0, 2.0, size=200)
        w = rng.uniform(0, 1, size=200)
        banks = banks_for([[BaseLearnerSpec("intercept")]] * 2, np.zeros((200, 1)))
        res = boost_state(0, NORMAL, y, w, banks, BoostConfig(1000))
        mean = np.average(y, weights=w)
        sd = np.sqrt(np.average((y - mean) ** 2, weights=w))
        assert res.eta[0, 0] == pytest.approx(mean, abs=1e-3)
        assert np.exp(res.eta[1, 0]) == pytest.approx(sd, abs=1e-3)

    def test_nbinom_single_state_approaches_mle(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 500)
        mu, s = np.exp(2 + 2 * x), np.exp(2 * x)
        y = rng.negative_binomial(s, s / (s + mu)).astype(float)

        def nll(p):
            return -NB.log_density(y, [np.exp(p[0] + p[1] * x), np.exp(p[2] + p[3] * x)]).sum()

        mle = optimize.minimize(nll, [1.0, 0.0, 0.0, 0.0], method="BFGS").x
        banks = banks_for([default_specs("linear", 1)] * 2, x[:, None])

        def slope(n):
            res = boost_state(0, NB, y, np.ones(500), banks, BoostConfig(n))
            return sum(step * c[1] for _, c, step in res.ensembles[0].updates), res

        (early, _), (late, res) = slope(100), slope(3000)
        # at the optimum a further step can only lower the likelihood
        assert res.stopped_early and res.iterations < 3000
        assert abs(early) < abs(mle[1])
        assert abs(late - mle[1]) < 1e-3
        assert abs(late - mle[1]) < abs(early - mle[1])

    def test_bank_count_checked(self, toy):
        y, X = toy
        with pytest.raises(ValueError):
            boost_state(0, NORMAL, y, np.ones(10), banks_for([default_specs("linear", 3)], X), BoostConfig(1))


class TestEnsemble:
    def test_summaries(self):
        e = PredictorEnsemble(0, 0, 1.0, [(2, np.array([0.0, 1.0]), 0.1), (2, np.array([1.0, 1.0]), 0.1),
                                          (0, np.array([0.0, 3.0]), 0.1)])
        assert e.selection_counts(3).tolist() == [1, 0, 2]
        np.testing.assert_allclose(e.selection_frequency(3), [1 / 3, 0, 2 / 3])
        agg = e.aggregate_coefficients()
        np.testing.assert_allclose(agg[2], [0.1, 0.2])
        np.testing.assert_allclose(agg[0], [0.0, 0.3])

    def test_known_linear_evaluation(self):
        spec = BaseLearnerSpec("linear", 1)
        e = PredictorEnsemble(0, 1, 0.5, [(0, np.array([1.0, 2.0]), 0.1)])
        X = np.array([[9.0, 0.0], [9.0, 1.0], [9.0, -2.0]])
        np.testing.assert_allclose(e.evaluate(X, [(spec, None)]), [0.6, 0.8, 0.2])
        np.testing.assert_allclose(NB.theta_from_eta([np.zeros(1), e.evaluate(X[:1], [(spec, None)])])[1],
                                   np.exp(0.6))
