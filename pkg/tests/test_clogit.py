import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_log
from relchoice.clogit import (ChoiceData, ChoiceRecord, FitResult, IdentifiabilityError,
                              _fd_hessian, _newton, choice_probabilities, fit, full_choice_data,
                              gradient, hessian, log_likelihood, loglik_full_oracle)
from relchoice.event_graph import GraphState, replay
from relchoice.features import build_spec_synthetic
from relchoice.reduce import reduce_events
from relchoice.sampling import Uniform


def random_data(rng, n=10, d=3, k_range=(2, 7), log_q=True) -> ChoiceData:
    recs = []
    for _ in range(n):
        k = int(rng.integers(*k_range))
        lq = -rng.uniform(0, 3, k) if log_q else np.zeros(k)
        recs.append(ChoiceRecord(rng.normal(size=(k, d)), lq, int(rng.integers(k))))
    return ChoiceData.from_records(recs)


def simulate(rng, theta, n, k) -> ChoiceData:
    d = len(theta)
    X = rng.normal(size=(n * k, d))
    u = (X @ theta).reshape(n, k)
    p = np.exp(u - u.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    chosen = (p.cumsum(1) < rng.random((n, 1))).sum(1)
    return ChoiceData(X, np.zeros(n * k), np.arange(n + 1) * k, chosen)


def naive_loglik(theta, data):
    total = 0.0
    for rec in data.records():
        w = np.exp(rec.X @ theta - rec.log_q)
        total += math.log(w[rec.chosen] / w.sum())
    return total


class TestLogLikelihood:
    def test_uniform_softmax(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5 * 4, 2))
        data = ChoiceData(X, np.full(20, -1.3), np.arange(6) * 4, [0, 1, 2, 3, 0])
        assert log_likelihood(np.zeros(2), data) == pytest.approx(-5 * math.log(4))

    def test_closed_form(self):
        rec = ChoiceRecord([[1.0], [0.0]], [0.0, 0.0], 0)
        assert log_likelihood([2.0], [rec]) == pytest.approx(2 - math.log(math.exp(2) + 1))
        assert log_likelihood([2.0], [rec]) == pytest.approx(-0.1269, abs=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        data = random_data(rng)
        theta = rng.normal(size=3)
        assert log_likelihood(theta, data) == pytest.approx(naive_loglik(theta, data), rel=1e-12)

    def test_dimension_mismatch(self):
        data = random_data(np.random.default_rng(0))
        with pytest.raises(ValueError, match="shape"):
            log_likelihood(np.zeros(2), data)

    def test_large_coefficients_do_not_overflow(self):
        rec = ChoiceRecord([[50.0], [49.0], [0.0]], np.zeros(3), 0)
        ll = log_likelihood([13.4], [rec])
        assert np.isfinite(ll) and ll <= 0

    def test_uniform_q_cancels_exactly(self):
        rng = np.random.default_rng(3)
        data = random_data(rng, log_q=False)
        shifted = ChoiceData(data.X, np.full(data.n_rows, math.log(0.125)), data.offsets,
                             data.chosen)
        theta = rng.normal(size=3)
        assert log_likelihood(theta, shifted) == pytest.approx(log_likelihood(theta, data),
                                                               rel=4 * np.finfo(float).eps)
        np.testing.assert_allclose(gradient(theta, shifted), gradient(theta, data),
                                   rtol=1e-14, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-50, 50))
def test_translation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    data = random_data(rng, n=4)
    theta = rng.normal(size=3)
    p = choice_probabilities(theta, data)
    moved = ChoiceData(data.X, data.log_q - c, data.offsets, data.chosen)
    np.testing.assert_allclose(choice_probabilities(theta, moved), p, rtol=1e-9, atol=1e-15)
    sums = np.add.reduceat(p, data.offsets[:-1])
    np.testing.assert_allclose(sums, 1.0, rtol=1e-12)
    assert log_likelihood(theta, data) <= 0


class TestGradient:
    def test_symmetric_softmax(self):
        recs = [ChoiceRecord([[1.0], [0.0]], [0, 0], 0), ChoiceRecord([[1.0], [0.0]], [0, 0], 1)]
        np.testing.assert_allclose(gradient([0.0], recs), [0.5 + (-0.5)])
        np.testing.assert_allclose(gradient([0.0], recs[:1]), [0.5])

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        data = random_data(rng, n=20, d=4)
        theta = rng.normal(size=4)
        g = gradient(theta, data)
        h = 1e-5
        fd = np.array([(log_likelihood(theta + h * e, data) - log_likelihood(theta - h * e, data))
                       / (2 * h) for e in np.eye(4)])
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)) <= 1e-6

    def test_analytic_hessian(self):
        rng = np.random.default_rng(1)
        data = random_data(rng, n=30, d=3)
        theta = rng.normal(size=3)
        np.testing.assert_allclose(hessian(theta, data), _fd_hessian(theta, data),
                                   rtol=1e-6, atol=1e-6)
        assert np.all(np.linalg.eigvalsh(hessian(theta, data)) <= 1e-12)


class TestFit:
    def test_recovery_monte_carlo(self):
        truth = np.array([1.0, -1.0])
        good = 0
        for seed in range(100):
            res = fit(simulate(np.random.default_rng(seed), truth, 2000, 10))
            assert res.converged
            good += np.max(np.abs(res.theta - truth)) <= 0.1
        assert good >= 95

    def test_gradient_small_at_optimum(self):
        data = simulate(np.random.default_rng(4), np.array([0.5, -0.2, 1.0]), 3000, 8)
        res = fit(data, tol=1e-8)
        assert res.converged and res.grad_norm <= 1e-8
        assert np.max(np.abs(gradient(res.theta, data))) / len(data) <= 1e-8

    def test_se_coverage(self):
        truth = np.array([0.7, -0.4])
        cover = np.zeros(2)
        for seed in range(200):
            res = fit(simulate(np.random.default_rng(1000 + seed), truth, 300, 5))
            cover += np.abs(res.theta - truth) <= 1.96 * res.se
        assert np.all(np.abs(cover / 200 - 0.95) < 0.045)

    def test_se_match_inverse_information(self):
        data = simulate(np.random.default_rng(2), np.array([0.3, 0.6]), 800, 6)
        res = fit(data)
        cov = np.linalg.inv(-hessian(res.theta, data))
        np.testing.assert_allclose(res.se, np.sqrt(np.diag(cov)), rtol=1e-5)

    def test_starting_point_immaterial(self):
        data = simulate(np.random.default_rng(5), np.array([1.0, 2.0, -1.0]), 1000, 6)
        a = fit(data)
        b = fit(data, theta0=[3.0, -3.0, 3.0])
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-4)

    def test_loglik_non_decreasing_over_iterations(self):
        data = simulate(np.random.default_rng(6), np.array([1.0, -0.5]), 500, 5)
        seen = [_newton(np.full(2, 4.0), data, 0.0, k)[1] for k in range(8)]
        assert all(b >= a - 1e-12 * abs(a) for a, b in zip(seen, seen[1:]))
        assert seen[-1] > seen[0]

    def test_newton_needs_few_iterations(self):
        data = simulate(np.random.default_rng(7), np.array([0.5, -0.2, 1.0]), 3000, 8)
        res = fit(data)
        assert res.converged and res.iterations <= 10

    def test_without_standard_errors(self):
        data = simulate(np.random.default_rng(8), np.array([0.5, -0.2]), 500, 4)
        a, b = fit(data), fit(data, with_se=False)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.se_available and np.all(np.isnan(b.se))

    def test_separable_data(self):
        recs = [ChoiceRecord([[1.0], [0.0]], [0, 0], 0) for _ in range(5)]
        res = fit(recs)
        assert not res.converged and "diverged" in res.message

    def test_identifiability_names_column(self):
        rng = np.random.default_rng(0)
        data = random_data(rng, n=5, d=2)
        X = data.X.copy()
        X[:, 1] = np.repeat(rng.normal(size=5), data.sizes)
        bad = ChoiceData(X, data.log_q, data.offsets, data.chosen, ["a", "b"])
        with pytest.raises(IdentifiabilityError, match="'b'"):
            fit(bad)

    def test_singular_information_gives_nan_se(self):
        rng = np.random.default_rng(0)
        data = simulate(rng, np.array([0.5]), 200, 4)
        dup = ChoiceData(np.hstack([data.X, data.X]), data.log_q, data.offsets, data.chosen)
        res = fit(dup)
        assert res.converged
        assert not res.se_available and np.all(np.isnan(res.se))
        assert res.to_dict()["se"] == [None, None]

    def test_json_round_trip(self):
        data = simulate(np.random.default_rng(1), np.array([0.5, 1.0]), 300, 4)
        res = fit(data, names=["a", "b"])
        res.meta = {"spec_hash": "abc", "sampling_config": {"policy": "uniform", "s": 4}}
        d = json.loads(res.to_json())
        for key in ("theta", "se", "loglik", "n_records", "converged", "iterations",
                    "spec_hash", "sampling_config"):
            assert key in d
        back = FitResult.from_dict(d)
        np.testing.assert_array_equal(back.theta, res.theta)
        assert back.names == ("a", "b") and back.meta["spec_hash"] == "abc"

    def test_empty(self):
        with pytest.raises(ValueError):
            fit([])


class TestChoiceData:
    def test_prefix_and_records(self):
        data = random_data(np.random.default_rng(2), n=6)
        pre = data.prefix(3)
        assert len(pre) == 3
        for a, b in zip(pre.records(), data.records()[:3]):
            np.testing.assert_array_equal(a.X, b.X)
        assert log_likelihood(np.ones(3), ChoiceData.concat([pre, pre])) == pytest.approx(
            2 * log_likelihood(np.ones(3), pre))

    def test_validation(self):
        with pytest.raises(ValueError):
            ChoiceRecord([[1.0]], [0.0], 0)
        with pytest.raises(ValueError):
            ChoiceRecord([[1.0], [np.nan]], [0.0, 0.0], 0)
        with pytest.raises(ValueError):
            ChoiceData(np.zeros((4, 1)), np.zeros(4), [0, 3, 4], [0, 0])


class TestFullOracle:
    def setup_method(self):
        ev = random_log(30, 400, 8)
        self.state = replay(GraphState(30), ev[:200])
        self.events = ev[200:]
        self.spec = build_spec_synthetic()

    def test_theta_zero(self):
        ll = loglik_full_oracle(np.zeros(8), self.state, self.events, self.spec)
        assert ll == pytest.approx(-len(self.events) * math.log(29))

    def test_matches_full_choice_data(self):
        theta = np.random.default_rng(0).normal(size=8) * 0.3
        data = full_choice_data(self.state, self.events, self.spec)
        assert loglik_full_oracle(theta, self.state, self.events, self.spec) == pytest.approx(
            log_likelihood(theta, data), rel=1e-12)
        assert self.state.n_events == 200

    def test_cap(self):
        with pytest.raises(ValueError, match="cap"):
            loglik_full_oracle(np.zeros(8), GraphState(50), [], self.spec, max_nodes=10)

    def test_whole_set_sampling_reproduces_full_fit(self):
        spec = build_spec_synthetic().subset(["log_in_event_count", "log_pair_count",
                                              "log_reverse_pair_count", "log_fof_count"])
        full = fit(full_choice_data(self.state, self.events, spec))
        sampled = reduce_events(self.state, self.events, spec, {"u": Uniform(30)}, seed=1)["u"]
        res = fit(sampled)
        np.testing.assert_allclose(res.theta, full.theta, atol=1e-6)
