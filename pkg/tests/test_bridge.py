"""Closed-form bridge math against hand values and brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgecm.bridge import (
    BridgeEndpoints,
    BridgeError,
    BridgeSchedule,
    ProcessState,
    analytic_flow,
    conditional_score,
    integrate_pf_ode,
    mean,
    perturb,
    pf_ode_drift,
    sde_drift,
    simulate_sde,
    std,
    time_grid,
    write_probe_csv,
)

# Eq-8 interior point for (eps, T, rho, N) = (0.001, 0.999, 7, 30),
# evaluated once with mpmath at 60 digits and frozen here.
T2_EXTENDED = 1.483988809821570863136854e-3


def scalar_endpoints(x=1.0, y=3.0):
    return BridgeEndpoints(x_clean=np.float64(x), y_noisy=np.float64(y))


class TestTimeGrid:
    def test_endpoints_exact(self):
        grid = time_grid(0.001, 0.999, 7.0, 30)
        assert grid[0] == 0.001
        assert grid[-1] == 0.999

    def test_t2_matches_extended_precision(self):
        mpmath = pytest.importorskip("mpmath")
        grid = time_grid(0.001, 0.999, 7.0, 30)
        assert abs(grid[1] - T2_EXTENDED) / T2_EXTENDED < 1e-12
        # recompute the frozen constant to guard against transcription slips
        mpmath.mp.dps = 60
        eps, tmax, rho = map(mpmath.mpf, ("0.001", "0.999", "7"))
        lo, hi = eps ** (1 / rho), tmax ** (1 / rho)
        ref = (lo + (hi - lo) / 29) ** rho
        assert abs(float(ref) - T2_EXTENDED) / T2_EXTENDED < 1e-15

    def test_domain_violations(self):
        with pytest.raises(BridgeError):
            time_grid(0.0, 0.999, 7.0, 30)
        with pytest.raises(BridgeError):
            time_grid(0.5, 0.4, 7.0, 30)
        with pytest.raises(BridgeError):
            time_grid(0.001, 0.999, 0.5, 30)
        with pytest.raises(BridgeError):
            time_grid(0.001, 0.999, 7.0, 1)

    @settings(max_examples=100, deadline=None)
    @given(
        eps=st.floats(1e-6, 0.4),
        t_max=st.floats(0.5, 1 - 1e-6),
        rho=st.floats(1.0, 20.0),
        n=st.integers(2, 200),
    )
    def test_grid_property(self, eps, t_max, rho, n):
        grid = time_grid(eps, t_max, rho, n)
        assert grid[0] == eps and grid[-1] == t_max
        assert np.all(np.diff(grid) > 0)
        assert np.all((grid >= eps) & (grid <= t_max))

    def test_schedule_dataclass(self):
        sched = BridgeSchedule()
        assert sched.n_steps == 30
        assert len(sched.grid) == 30
        with pytest.raises(BridgeError):
            BridgeSchedule(epsilon=0.5, t_max=0.4)


class TestMoments:
    def test_mean_scalar(self):
        assert mean(scalar_endpoints(1.0, 3.0), 0.3) == pytest.approx(1.6, abs=1e-15)

    def test_mean_limits(self):
        ep = scalar_endpoints(1.0, 3.0)
        assert mean(ep, 1e-12) == pytest.approx(1.0, abs=1e-9)
        assert mean(ep, 1 - 1e-12) == pytest.approx(3.0, abs=1e-9)

    def test_std_values(self):
        assert std(0.5) == 0.5
        assert std(0.0) == 0.0
        assert std(1.0) == 0.0
        assert std(0.25) == pytest.approx(0.4330127018922193, abs=1e-15)

    def test_std_domain(self):
        with pytest.raises(BridgeError):
            std(-0.1)
        with pytest.raises(BridgeError):
            std(1.1)


class TestPerturb:
    def test_zero_noise_is_mean(self):
        ep = scalar_endpoints()
        state = perturb(ep, 0.3, np.float64(0.0))
        assert state.x_t == pytest.approx(1.6, abs=1e-15)

    def test_terminal_time_near_noisy_end(self):
        ep = scalar_endpoints(1.0, 3.0)
        state = perturb(ep, 0.999, np.float64(0.0))
        assert abs(state.x_t - 3.0) <= (1 - 0.999) * abs(1.0 - 3.0) + 1e-12

    def test_shared_noise_pair_identity(self):
        rng = np.random.default_rng(0)
        shape = (2, 5, 4)
        ep = BridgeEndpoints(rng.standard_normal(shape), rng.standard_normal(shape))
        z = rng.standard_normal(shape)
        t_n, t_n1 = 0.2, 0.35
        a = perturb(ep, t_n, z).x_t
        b = perturb(ep, t_n1, z).x_t
        expected = (ep.y_noisy - ep.x_clean) * (t_n1 - t_n) + (std(t_n1) - std(t_n)) * z
        np.testing.assert_allclose(b - a, expected, rtol=0, atol=1e-14)

    def test_shape_mismatch(self):
        ep = BridgeEndpoints(np.zeros(3), np.zeros(3))
        with pytest.raises(BridgeError):
            perturb(ep, 0.5, np.zeros(4))


class TestDrifts:
    def test_fixed_point_at_noisy_end(self):
        state = ProcessState(x_t=np.float64(3.0), y=np.float64(3.0), t=0.5)
        assert sde_drift(state) == 0.0

    def test_sde_drift_scalar(self):
        state = ProcessState(x_t=np.float64(2.0), y=np.float64(3.0), t=0.5)
        assert sde_drift(state) == pytest.approx(2.0, abs=1e-15)

    def test_pole_growth(self):
        drifts = [
            abs(sde_drift(ProcessState(np.float64(2.0), np.float64(3.0), t)))
            for t in (0.9, 0.99, 0.999)
        ]
        assert drifts[0] < drifts[1] < drifts[2]
        assert drifts[2] == pytest.approx(1.0 / (1 - 0.999), rel=1e-12)

    def test_drift_rejects_t_past_one(self):
        with pytest.raises(BridgeError):
            sde_drift(ProcessState(np.float64(0.0), np.float64(0.0), 1.0))


class TestScore:
    def test_zero_at_mean(self):
        ep = scalar_endpoints()
        state = perturb(ep, 0.4, np.float64(0.0))
        assert conditional_score(state, ep) == 0.0

    def test_hand_value(self):
        ep = scalar_endpoints(1.0, 3.0)
        state = ProcessState(np.float64(2.5), np.float64(3.0), 0.5)
        assert conditional_score(state, ep) == pytest.approx(-2.0, abs=1e-12)

    def test_inverse_variance_scaling(self):
        ep = scalar_endpoints(0.0, 0.0)
        dev = 0.3
        for t in (0.2, 0.5, 0.7):
            state = ProcessState(np.float64(dev), np.float64(0.0), t)
            score = conditional_score(state, ep)
            assert score == pytest.approx(-dev / (t * (1 - t)), rel=1e-12)

    def test_matches_log_density_finite_differences(self):
        # d/dx log N(x; mu, sigma^2) via central differences
        rng = np.random.default_rng(1)
        ep = BridgeEndpoints(rng.standard_normal(6), rng.standard_normal(6))
        t = 0.37
        state = perturb(ep, t, rng.standard_normal(6))
        var = t * (1 - t)
        mu = mean(ep, t)

        def logp(x):
            return -0.5 * np.sum((x - mu) ** 2) / var

        h = 1e-6
        fd = np.zeros(6)
        for i in range(6):
            up, down = state.x_t.copy(), state.x_t.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (logp(up) - logp(down)) / (2 * h)
        score = conditional_score(state, ep)
        assert np.max(np.abs(score - fd) / np.abs(fd)) < 1e-6


class TestPfOde:
    def test_hand_value(self):
        ep = scalar_endpoints(1.0, 3.0)
        state = ProcessState(np.float64(2.5), np.float64(3.0), 0.5)
        assert pf_ode_drift(state, ep) == pytest.approx(2.0, abs=1e-12)

    def test_on_mean_line_drift_is_endpoint_gap(self):
        rng = np.random.default_rng(2)
        ep = BridgeEndpoints(rng.standard_normal(5), rng.standard_normal(5))
        for t in (0.1, 0.5, 0.9):
            state = perturb(ep, t, np.zeros(5))
            np.testing.assert_allclose(
                pf_ode_drift(state, ep), ep.y_noisy - ep.x_clean, atol=1e-10
            )

    def test_deviation_dynamics(self):
        # e(t) = x_t - mean(t) evolves as de/dt = e * (1 - 2t) / (2 t (1 - t)):
        # check by central differences along the exact flow
        ep = scalar_endpoints(0.5, 2.5)
        t0, e0 = 0.3, 0.2
        state0 = ProcessState(np.float64(mean(ep, t0) + e0), np.float64(2.5), t0)
        h = 1e-6
        e_up = analytic_flow(state0, ep, t0 + h) - mean(ep, t0 + h)
        e_down = analytic_flow(state0, ep, t0 - h) - mean(ep, t0 - h)
        de_dt = (e_up - e_down) / (2 * h)
        expected = e0 * (1 - 2 * t0) / (2 * t0 * (1 - t0))
        assert de_dt == pytest.approx(expected, rel=1e-6)


class TestAnalyticFlow:
    def test_mean_stays_on_mean(self):
        ep = scalar_endpoints()
        state = perturb(ep, 0.4, np.float64(0.0))
        assert analytic_flow(state, ep, 0.8) == pytest.approx(
            float(mean(ep, 0.8)), abs=1e-14
        )

    def test_contraction_toward_epsilon(self):
        ep = scalar_endpoints()
        t0, eps = 0.5, 0.001
        state = ProcessState(np.float64(mean(ep, t0) + 1.0), np.float64(3.0), t0)
        dev = analytic_flow(state, ep, eps) - mean(ep, eps)
        assert dev == pytest.approx(std(eps) / std(t0), rel=1e-12)

    def test_rk4_matches_analytic(self):
        rng = np.random.default_rng(3)
        shape = (2, 4, 3)
        ep = BridgeEndpoints(rng.standard_normal(shape), rng.standard_normal(shape))
        state = perturb(ep, 0.2, rng.standard_normal(shape))
        exact = analytic_flow(state, ep, 0.85)
        num = integrate_pf_ode(state, ep, 0.85, n_rk4_steps=2000)
        rel = np.linalg.norm(num - exact) / np.linalg.norm(exact)
        assert rel <= 1e-6


class TestSimulateSde:
    def test_zero_noise_recovers_mean_path(self):
        ep = scalar_endpoints(1.0, 3.0)
        probes = simulate_sde(ep, n_paths=1, n_substeps=1000, noise_scale=0.0)
        for p in probes:
            assert abs(float(p.empirical_mean) - float(p.analytic_mean)) < 2e-3

    def test_moments_small_run(self):
        ep = scalar_endpoints(0.0, 0.0)
        probes = simulate_sde(ep, n_paths=4000, n_substeps=1000, seed=11)
        for p in probes:
            se = np.sqrt(p.analytic_var / p.n_paths)
            assert p.mean_err < 4 * se
            assert abs(p.empirical_var / p.analytic_var - 1) < 0.08

    def test_worker_count_does_not_change_results(self):
        ep = scalar_endpoints()
        a = simulate_sde(ep, n_paths=2500, n_substeps=1000, seed=5, workers=1)
        b = simulate_sde(ep, n_paths=2500, n_substeps=1000, seed=5, workers=3)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.empirical_mean, pb.empirical_mean)
            assert pa.empirical_var == pb.empirical_var

    def test_substep_floor(self):
        with pytest.raises(BridgeError):
            simulate_sde(scalar_endpoints(), n_paths=10, n_substeps=100)

    def test_probe_csv(self, tmp_path):
        ep = scalar_endpoints()
        probes = simulate_sde(ep, n_paths=1000, n_substeps=1000, seed=1)
        out = tmp_path / "probes.csv"
        write_probe_csv(out, probes)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "t,empirical_mean_err,empirical_var,analytic_var,n_paths,seed"
        assert len(lines) == 4
