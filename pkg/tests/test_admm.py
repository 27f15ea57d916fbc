import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_projection
from mimo_image.admm import (
    AdmmConfig,
    candidate_labels,
    detect_vector,
    detect_vectors,
    lagrangian,
    ml_oracle,
    mu_update,
    precompute_factor,
    s_update,
    u_update,
    write_trace_csv,
)
from mimo_image.channel import LinkParams, draw_channel, transmit_vectors
from mimo_image.constellation import build_qam, in_polytope, project_to_polytope, slice_array
from mimo_image.errors import (
    ConfigurationError,
    ContractViolationError,
    DivergenceError,
    SearchSpaceError,
    ShapeError,
)

pytestmark = pytest.mark.property


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def reference_detect(y, h, rho, cfg, spec):
    """Textbook loop built from the public single-step functions."""
    factor = precompute_factor(h, rho, cfg.beta)
    s = h.h.conj().T @ y
    u = project_to_polytope(s, spec)
    mu = np.zeros_like(s)
    trace = [lagrangian(s, u, mu, y, h, rho, cfg.beta, spec)]
    for _ in range(cfg.max_iterations):
        s = s_update(factor, y, u, mu, cfg.beta)
        u = u_update(s, mu, spec)
        mu = mu_update(mu, u, s, cfg.alpha)
        trace.append(lagrangian(s, u, mu, y, h, rho, cfg.beta, spec))
        if abs(trace[-1] - trace[-2]) <= cfg.epsilon:
            break
    return s, np.array(trace)


class TestFactor:
    def test_zero_channel_gives_b_over_beta(self):
        f = precompute_factor(np.zeros((4, 2), dtype=complex), rho=3.0, beta=2.0)
        b = np.array([1 + 2j, -3j])
        np.testing.assert_allclose(f.solve(b), b / 2, rtol=1e-15)

    def test_matches_explicit_inverse(self, rng):
        h = draw_channel(8, 4, rng)
        rho, beta = 3.7, 1.26
        f = precompute_factor(h, rho, beta)
        a = rho * h.h.conj().T @ h.h + beta * np.eye(4)
        b = crandn(rng, 4)
        expected = np.linalg.inv(a) @ b
        assert np.linalg.norm(f.solve(b) - expected) / np.linalg.norm(expected) < 1e-10

    def test_k_by_k(self, rng):
        f = precompute_factor(draw_channel(64, 4, rng), 1.0, 1.0)
        assert f.matrix.shape == (4, 4) and f.k == 4

    def test_batched_solve_matches_rows(self, rng):
        h = draw_channel(8, 3, rng)
        f = precompute_factor(h, 2.0, 1.0)
        b = crandn(rng, 5, 3)
        np.testing.assert_allclose(f.solve(b), np.stack([f.solve(r) for r in b]), atol=1e-13)

    def test_stacked_channels(self, rng):
        hs = crandn(rng, 3, 6, 2) / np.sqrt(2)
        f = precompute_factor(hs, 2.0, 1.0)
        b = crandn(rng, 3, 2)
        for z in range(3):
            single = precompute_factor(hs[z], 2.0, 1.0)
            np.testing.assert_allclose(f.solve(b)[z], single.solve(b[z]), atol=1e-12)

    @pytest.mark.parametrize("beta", [0.0, -1.0])
    def test_invalid_beta(self, beta):
        with pytest.raises(ConfigurationError):
            precompute_factor(np.eye(2, dtype=complex), 1.0, beta)


class TestSUpdate:
    def test_scalar_case(self):
        h = np.array([[1.0 + 0j]])
        f = precompute_factor(h, rho=1.0, beta=1.0)
        s = s_update(f, np.array([1.0 + 0j]), np.array([1.0 + 0j]), np.array([0j]), 1.0)
        assert s[0] == pytest.approx(1.0)

    def test_zero_input(self, rng):
        h = draw_channel(6, 2, rng)
        f = precompute_factor(h, 2.0, 1.26)
        u = crandn(rng, 2)
        s = s_update(f, np.zeros(6, dtype=complex), u, u.copy(), 1.26)
        np.testing.assert_allclose(s, 0, atol=1e-15)

    def test_matches_stacked_least_squares(self, rng):
        h = draw_channel(10, 4, rng)
        rho, beta = 5.0, 1.26
        f = precompute_factor(h, rho, beta)
        y, u, mu = crandn(rng, 10), crandn(rng, 4), crandn(rng, 4)
        s = s_update(f, y, u, mu, beta)
        # min 1/2||y - sqrt(rho) H s||^2 + beta/2||u - s - mu||^2 as one least-squares problem
        a = np.vstack([np.sqrt(rho) * h.h, np.sqrt(beta) * np.eye(4)])
        b = np.concatenate([y, np.sqrt(beta) * (u - mu)])
        oracle = np.linalg.lstsq(a, b, rcond=None)[0]
        np.testing.assert_allclose(s, oracle, atol=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0), st.floats(0.05, 10.0))
    def test_gradient_vanishes(self, seed, rho, beta):
        g = np.random.default_rng(seed)
        h = draw_channel(8, 3, g)
        f = precompute_factor(h, rho, beta)
        y, u, mu = crandn(g, 8), crandn(g, 3), crandn(g, 3)
        s = s_update(f, y, u, mu, beta)
        grad = -np.sqrt(rho) * h.h.conj().T @ (y - np.sqrt(rho) * h.h @ s) - beta * (u - s - mu)
        scale = 1 + np.sqrt(rho) * np.linalg.norm(h.h.conj().T @ y) + beta * np.linalg.norm(u - mu)
        assert np.linalg.norm(grad) <= 1e-8 * scale

    def test_shape_mismatch(self, rng):
        f = precompute_factor(draw_channel(4, 2, rng), 1.0, 1.0)
        with pytest.raises(ShapeError):
            s_update(f, np.zeros(4), np.zeros(3), np.zeros(3), 1.0)


class TestUUpdate:
    def test_inside_is_sum(self, qam16):
        u = u_update(np.array([0.1 + 0.1j]), np.array([0.05 - 0.2j]), qam16)
        np.testing.assert_allclose(u, [0.15 - 0.1j])

    def test_saturates(self, qam16):
        c = qam16.clip_limit
        u = u_update(np.array([5 + 0j]), np.array([0 - 9j]), qam16)
        np.testing.assert_allclose(u, [c - 1j * c])

    def test_matches_grid_projection(self, rng, qam256):
        s, mu = crandn(rng, 500), crandn(rng, 500)
        u = u_update(s, mu, qam256)
        oracle = grid_projection(s + mu, qam256.clip_limit)
        assert np.max(np.abs(u - oracle)) <= 2 * qam256.clip_limit / 300
        assert in_polytope(u, qam256, tol=0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_always_feasible(self, seed):
        g = np.random.default_rng(seed)
        spec = build_qam(int(g.choice([4, 16, 64, 256])))
        u = u_update(10 * crandn(g, 4), 10 * crandn(g, 4), spec)
        assert in_polytope(u, spec, tol=0.0)


class TestMuUpdate:
    def test_consensus_leaves_mu(self, rng):
        mu, s = crandn(rng, 3), crandn(rng, 3)
        np.testing.assert_array_equal(mu_update(mu, s, s, 1.62), mu)

    def test_step(self):
        mu = mu_update(np.zeros(2, dtype=complex), np.array([1 + 0j, 0j]), np.zeros(2), 1.62)
        np.testing.assert_allclose(mu, [-1.62, 0])

    def test_two_steps_accumulate(self, rng):
        mu0, u1, s1, u2, s2 = (crandn(rng, 4) for _ in range(5))
        a = 1.62
        got = mu_update(mu_update(mu0, u1, s1, a), u2, s2, a)
        np.testing.assert_allclose(got, mu0 - a * ((u1 - s1) + (u2 - s2)), atol=1e-14)

    def test_invalid_alpha(self):
        with pytest.raises(ConfigurationError):
            mu_update(np.zeros(1), np.zeros(1), np.zeros(1), 0.0)


class TestLagrangian:
    def test_all_zero(self):
        z = np.zeros(2, dtype=complex)
        assert lagrangian(z, z, z, np.zeros(4), np.ones((4, 2)), 1.0, 1.26) == 0.0

    def test_noiseless_consensus_is_zero(self, rng, qam16):
        h = draw_channel(8, 2, rng)
        s = qam16.points[[3, 9]]
        y = np.sqrt(2.0) * (s @ h.h.T)
        assert lagrangian(s, s, np.zeros(2), y, h, 2.0, 1.26, qam16) <= 1e-20

    def test_extended_precision_oracle(self, rng):
        h = draw_channel(6, 3, rng)
        rho, beta = 4.2, 1.26
        s, u, mu, y = crandn(rng, 3), crandn(rng, 3), crandn(rng, 3), crandn(rng, 6)
        got = lagrangian(s, u, mu, y, h, rho, beta)
        L = np.clongdouble
        hl = h.h.astype(L)
        r = y.astype(L) - np.sqrt(np.longdouble(rho)) * (hl @ s.astype(L))
        p = u.astype(L) - s.astype(L) - mu.astype(L)
        ref = (np.sum(np.abs(r) ** 2) + np.longdouble(beta) * np.sum(np.abs(p) ** 2)) / 2
        assert got == pytest.approx(float(ref), rel=1e-12)

    def test_infeasible_u_raises(self, qam4):
        z = np.zeros(1, dtype=complex)
        with pytest.raises(ContractViolationError):
            lagrangian(z, np.array([5 + 0j]), z, np.zeros(1), np.ones((1, 1)), 1.0, 1.0, qam4)

    def test_batch_rows(self, rng):
        h = draw_channel(5, 2, rng)
        args = [crandn(rng, 4, 2), crandn(rng, 4, 2), crandn(rng, 4, 2), crandn(rng, 4, 5)]
        rows = lagrangian(*args, h, 2.0, 1.0)
        for z in range(4):
            assert rows[z] == pytest.approx(lagrangian(*(a[z] for a in args), h, 2.0, 1.0))


class TestDetector:
    def _setup(self, seed, m=64, k=4, order=256, snr_db=5.0, count=200):
        g = np.random.default_rng(seed)
        spec = build_qam(order)
        h = draw_channel(m, k, g)
        labels = g.integers(0, order, (count, k))
        params = LinkParams.from_snr(snr_db)
        y = transmit_vectors(h, spec.points[labels], params, seed)
        return spec, h, labels, params, y

    def test_noiseless_is_exact(self):
        spec, h, labels, _, _ = self._setup(1)
        params = LinkParams(rho=10.0, sigma2=1e-40)
        y = transmit_vectors(h, spec.points[labels], params, 0)
        cfg = AdmmConfig()
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        np.testing.assert_array_equal(out.labels, labels)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_batch_matches_reference_loop(self, seed):
        spec, h, _, params, y = self._setup(seed, count=30)
        cfg = AdmmConfig()
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        for z in range(30):
            s_ref, trace_ref = reference_detect(y[z], h, params.rho, cfg, spec)
            np.testing.assert_allclose(out.relaxed[z], s_ref, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(out.trace(z), trace_ref, rtol=1e-9)
            assert out.labels[z].tolist() == slice_array(s_ref, spec)[0].tolist()

    def test_single_matches_batch(self):
        spec, h, _, params, y = self._setup(4, count=10)
        cfg = AdmmConfig()
        f = precompute_factor(h, params.rho, cfg.beta)
        batch = detect_vectors(y, h, f, params, cfg, spec)
        for z in range(10):
            one = detect_vector(y[z], h, f, params, cfg, spec)
            np.testing.assert_array_equal(one.labels, batch.labels[z])
            assert one.iterations == batch.iterations[z]
            np.testing.assert_allclose(one.state.lagrangian_history, batch.trace(z), rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([4, 16, 256]), st.floats(-5, 20))
    def test_stopping_rule_and_feasibility(self, seed, order, snr_db):
        spec, h, _, params, y = self._setup(seed, m=8, k=2, order=order, snr_db=snr_db, count=5)
        cfg = AdmmConfig(max_iterations=30)
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        assert in_polytope(out.u, spec, tol=0.0)
        for z in range(5):
            n = out.iterations[z]
            t = out.trace(z)
            assert 1 <= n <= cfg.max_iterations
            assert np.all(np.isfinite(t))
            assert np.all(np.isnan(out.traces[z, n + 1 :]))
            # earlier iterations did not meet the rule
            assert np.all(np.abs(np.diff(t[:-1])) > cfg.epsilon)
            assert abs(t[-1] - t[-2]) <= cfg.epsilon or n == cfg.max_iterations
        np.testing.assert_array_equal(out.symbols, spec.points[out.labels])

    def test_median_iterations(self):
        spec, h, _, params, y = self._setup(9, count=2000)
        cfg = AdmmConfig()
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        assert np.median(out.iterations) <= 10

    def test_deterministic(self):
        spec, h, _, params, y = self._setup(3, count=50)
        cfg = AdmmConfig()
        f = precompute_factor(h, params.rho, cfg.beta)
        a = detect_vectors(y, h, f, params, cfg, spec)
        b = detect_vectors(y, h, f, params, cfg, spec)
        np.testing.assert_array_equal(a.traces, b.traces)

    def test_per_vector_channels(self, rng, qam16):
        hs = crandn(rng, 20, 8, 2) / np.sqrt(2)
        labels = rng.integers(0, 16, (20, 2))
        params = LinkParams(rho=10.0, sigma2=1e-40)
        y = transmit_vectors(hs, qam16.points[labels], params, 0)
        cfg = AdmmConfig()
        out = detect_vectors(y, hs, precompute_factor(hs, params.rho, cfg.beta), params, cfg, qam16)
        np.testing.assert_array_equal(out.labels, labels)

    def test_non_finite_input_diverges(self):
        spec, h, _, params, y = self._setup(0, count=3)
        y[1, 0] = np.nan
        cfg = AdmmConfig()
        with pytest.raises(DivergenceError) as info:
            detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        assert info.value.iteration == 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflow_diverges(self):
        spec, h, _, params, y = self._setup(0, count=3)
        cfg = AdmmConfig(alpha=1e200)
        with pytest.raises(DivergenceError):
            detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)

    def test_factor_mismatch(self):
        spec, h, _, params, y = self._setup(0, count=2)
        cfg = AdmmConfig()
        with pytest.raises(ConfigurationError):
            detect_vectors(y, h, precompute_factor(h, params.rho, 2.0), params, cfg, spec)

    @pytest.mark.parametrize(
        "kwargs", [{"beta": 0}, {"alpha": -1}, {"epsilon": 0}, {"max_iterations": 0}]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigurationError):
            AdmmConfig(**kwargs)

    def test_single_iteration_cap(self):
        spec, h, _, params, y = self._setup(0, count=10)
        cfg = AdmmConfig(max_iterations=1)
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        assert np.all(out.iterations == 1)

    def test_trace_csv(self, tmp_path):
        spec, h, _, params, y = self._setup(0, count=4)
        cfg = AdmmConfig()
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, spec)
        path = tmp_path / "traces.csv"
        write_trace_csv(out, path)
        rows = list(csv.DictReader(path.open()))
        assert set(rows[0]) == {"vector_index", "iteration", "lagrangian_value"}
        assert len(rows) == int(np.sum(out.iterations + 1))
        first = [float(r["lagrangian_value"]) for r in rows if r["vector_index"] == "0"]
        assert first == out.trace(0).tolist()


class TestMlOracle:
    def test_noiseless_recovers_input(self, rng, qam16):
        h = draw_channel(6, 2, rng)
        s = qam16.points[[5, 12]]
        sym, labels = ml_oracle(np.sqrt(3.0) * h.h @ s, h, 3.0, qam16)
        assert labels.tolist() == [5, 12]
        np.testing.assert_array_equal(sym, s)

    def test_single_antenna_is_scalar_scan(self, rng, qam16):
        for _ in range(50):
            h = draw_channel(4, 1, rng)
            y = crandn(rng, 4)
            rho = 2.0
            hv = h.h[:, 0]
            z = np.vdot(hv, y) / (np.sqrt(rho) * np.vdot(hv, hv).real)
            expected = int(np.argmin(np.abs(qam16.points - z)))
            _, labels = ml_oracle(y, h, rho, qam16)
            assert labels[0] == expected

    def test_enumerates_all_candidates(self):
        lab = candidate_labels(np.arange(16), 4, 2)
        assert len({tuple(r) for r in lab}) == 16
        assert lab[0].tolist() == [0, 0] and lab[-1].tolist() == [3, 3]

    def test_search_space_limit(self, rng, qam256):
        h = draw_channel(8, 3, rng)
        with pytest.raises(SearchSpaceError, match="16777216"):
            ml_oracle(np.zeros(8), h, 1.0, qam256)

    def test_admm_agrees_with_oracle(self, qam4):
        # K=2, 4-QAM, M=8, SNR 15 dB, 1000 vectors
        g = np.random.default_rng(2024)
        h = draw_channel(8, 2, g)
        labels = g.integers(0, 4, (1000, 2))
        params = LinkParams.from_snr(15.0)
        y = transmit_vectors(h, qam4.points[labels], params, 2024)
        cfg = AdmmConfig()
        t0 = time.perf_counter()
        out = detect_vectors(y, h, precompute_factor(h, params.rho, cfg.beta), params, cfg, qam4)
        elapsed = time.perf_counter() - t0
        ml = np.array([ml_oracle(y[z], h, params.rho, qam4)[1] for z in range(1000)])
        agree = np.mean(np.all(out.labels == ml, axis=1))
        assert agree >= 0.99
        assert elapsed < 5.0
