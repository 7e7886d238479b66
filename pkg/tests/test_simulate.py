"""Path-simulator tests.

Oracles: Gaussian closed forms for the constant-coefficient family, the
exponential-decay mean of the mean-reverting family, an independently coded
plain-loop Euler scheme, and the analytic step-size bias of the
mean-reverting chain for the weak-order study.
"""

import math

import numpy as np
import pytest

from sdelab import builtin_family
from sdelab.rng import block_normals, derive_seed, path_normals
from sdelab.simulate import (
    PathEnsemble,
    SimConfig,
    SimulationError,
    exit_time_stats,
    occupation_profile,
    simulate_ensemble,
    weak_error_study,
)


def _cfg(**kw):
    base = dict(dt=1e-2, t_final=1.0, n_paths=500, master_seed=42)
    base.update(kw)
    return SimConfig(**base)


class TestRng:
    def test_normals_are_pure_functions_of_key(self):
        a = path_normals(7, 3, 20, 2)
        b = path_normals(7, 3, 20, 2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, path_normals(7, 4, 20, 2))
        assert not np.array_equal(a, path_normals(8, 3, 20, 2))

    def test_block_matches_per_path(self):
        idx = np.array([0, 5, 9])
        blk = block_normals(11, idx, 8, 2)
        for i, p in enumerate(idx):
            np.testing.assert_array_equal(blk[i], path_normals(11, int(p), 8, 2))

    def test_standard_normal_moments(self):
        z = path_normals(1, 0, 50_000, 2).ravel()
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02

    def test_derive_seed_distinct(self):
        seeds = {derive_seed(5, i, j) for i in range(4) for j in range(4)}
        assert len(seeds) == 16
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)


class TestSimConfig:
    def test_grid_divisibility(self):
        with pytest.raises(SimulationError, match="integer multiple"):
            SimConfig(dt=0.3, t_final=1.0, n_paths=10, master_seed=0)

    def test_unknown_scheme(self):
        with pytest.raises(SimulationError, match="unknown scheme"):
            _cfg(scheme="milstein")

    def test_n_steps(self):
        assert _cfg(dt=1e-3, t_final=0.25).n_steps == 250


class TestEnsembleBasics:
    def test_initial_states(self, brownian2):
        ens = simulate_ensemble(brownian2, [0.5, -0.5], _cfg(n_paths=64))
        np.testing.assert_array_equal(ens.states[:, 0, :], np.tile([0.5, -0.5], (64, 1)))
        assert ens.states.shape == (64, 101, 2)
        np.testing.assert_allclose(ens.times[-1], 1.0)

    def test_bitwise_determinism_same_seed(self, ou2):
        e1 = simulate_ensemble(ou2, [1.0, 0.0], _cfg(n_paths=128))
        e2 = simulate_ensemble(ou2, [1.0, 0.0], _cfg(n_paths=128))
        np.testing.assert_array_equal(e1.states, e2.states)

    def test_bitwise_determinism_any_worker_count(self, ou2):
        cfg = _cfg(n_paths=5000, t_final=0.2, dt=1e-2)
        e1 = simulate_ensemble(ou2, [1.0, 0.0], cfg, workers=1)
        e3 = simulate_ensemble(ou2, [1.0, 0.0], cfg, workers=3)
        e8 = simulate_ensemble(ou2, [1.0, 0.0], cfg, workers=8)
        np.testing.assert_array_equal(e1.states, e3.states)
        np.testing.assert_array_equal(e1.states, e8.states)
        np.testing.assert_array_equal(e1.occupation_near, e8.occupation_near)

    def test_prefix_stability_in_path_count(self, ou2):
        # per-path keying: the first paths do not change when more are added
        small = simulate_ensemble(ou2, [1.0, 0.0], _cfg(n_paths=50))
        large = simulate_ensemble(ou2, [1.0, 0.0], _cfg(n_paths=80))
        np.testing.assert_array_equal(small.states, large.states[:50])

    def test_different_seed_differs(self, brownian2):
        e1 = simulate_ensemble(brownian2, [0.0, 0.0], _cfg(master_seed=1, n_paths=16))
        e2 = simulate_ensemble(brownian2, [0.0, 0.0], _cfg(master_seed=2, n_paths=16))
        assert not np.array_equal(e1.states, e2.states)

    def test_state_at(self, brownian2):
        ens = simulate_ensemble(brownian2, [0.0, 0.0], _cfg(n_paths=8))
        np.testing.assert_array_equal(ens.state_at(0.0), ens.states[:, 0, :])
        np.testing.assert_array_equal(ens.state_at(1.0), ens.states[:, -1, :])
        with pytest.raises(SimulationError, match="step grid"):
            ens.state_at(0.005)

    def test_path_keys_recorded(self, brownian2):
        ens = simulate_ensemble(brownian2, [0.0, 0.0], _cfg(n_paths=5, master_seed=9))
        np.testing.assert_array_equal(ens.path_keys[:, 0], 9)
        np.testing.assert_array_equal(ens.path_keys[:, 1], np.arange(5))


class TestAgainstClosedForms:
    def test_brownian_terminal_law(self, brownian2):
        # X_T ~ N(x0, T I) exactly at any dt
        ens = simulate_ensemble(brownian2, [1.0, 2.0], _cfg(n_paths=20_000, dt=0.05))
        xt = ens.state_at(1.0)
        se = 1.0 / math.sqrt(20_000)
        assert abs(xt[:, 0].mean() - 1.0) < 4 * se
        assert abs(xt[:, 1].mean() - 2.0) < 4 * se
        assert abs(xt[:, 0].var() - 1.0) < 0.05
        assert abs(np.cov(xt.T)[0, 1]) < 0.05

    def test_ou_mean_decay(self, ou2):
        ens = simulate_ensemble(ou2, [2.0, 0.0], _cfg(n_paths=10_000, dt=1e-3))
        xt = ens.state_at(1.0)
        exact = 2.0 * math.exp(-1.0)
        se = xt[:, 0].std() / math.sqrt(10_000)
        assert abs(xt[:, 0].mean() - exact) < 4 * se + 1e-3

    def test_against_independent_plain_loop(self, ou2):
        # independently coded scheme with its own generator
        rng = np.random.default_rng(2024)
        n, dt, steps = 4000, 0.01, 100
        x = np.tile([1.5, -0.5], (n, 1))
        for _ in range(steps):
            x = x - x * dt + math.sqrt(dt) * rng.standard_normal((n, 2))
        ens = simulate_ensemble(ou2, [1.5, -0.5], _cfg(n_paths=4000, dt=0.01))
        ours = ens.state_at(1.0)
        for k in range(2):
            se = math.hypot(x[:, k].std(), ours[:, k].std()) / math.sqrt(n)
            assert abs(x[:, k].mean() - ours[:, k].mean()) < 4 * se

    def test_radial_against_independent_plain_loop(self, radial2):
        rng = np.random.default_rng(77)
        n, dt, steps = 4000, 0.01, 50
        x = np.tile([1.0, 0.0], (n, 1))
        for _ in range(steps):
            scale = np.sum(x * x, axis=1) ** 0.0625  # |x|^{alpha/2}, alpha=1/4
            x = x + math.sqrt(dt) * scale[:, None] * rng.standard_normal((n, 2))
        ens = simulate_ensemble(radial2, [1.0, 0.0], _cfg(n_paths=4000, dt=0.01, t_final=0.5))
        ours = ens.state_at(0.5)
        m_ref = np.sum(x * x, axis=1).mean()
        m_our = np.sum(ours * ours, axis=1).mean()
        se = math.hypot(np.sum(x * x, 1).std(), np.sum(ours * ours, 1).std()) / math.sqrt(n)
        assert abs(m_ref - m_our) < 4 * se


class TestExitAndExplosion:
    def test_brownian_never_exits_far_ball(self, brownian2):
        ens = simulate_ensemble(
            brownian2, [0.0, 0.0], _cfg(n_paths=2000, r_exit=10.0)
        )
        st = exit_time_stats(ens)
        assert st.n_exited == 0 and st.exit_fraction == 0.0

    def test_cubic_drift_exits_fast(self):
        c = builtin_family("brownian", 2, drift="cubic_outward")
        ens = simulate_ensemble(
            c, [1.0, 0.0], _cfg(n_paths=1000, dt=1e-3, r_exit=10.0)
        )
        st = exit_time_stats(ens)
        assert st.exit_fraction > 0.8
        # deterministic blow-up of dr/dt = r^3 from r=1 reaches 10 at t ~ 0.495;
        # noise spreads exits around that and strands some paths near the origin
        assert 0.2 < st.exit_time_quantiles["q50"] < 0.8

    def test_frozen_after_exit(self):
        c = builtin_family("brownian", 2, drift="cubic_outward")
        ens = simulate_ensemble(c, [1.0, 0.0], _cfg(n_paths=50, dt=1e-3, r_exit=10.0))
        for i in range(50):
            k = ens.exit_step[i]
            if k >= 0:
                assert np.linalg.norm(ens.states[i, k]) >= 10.0
                np.testing.assert_array_equal(
                    ens.states[i, k:], np.tile(ens.states[i, k], (ens.states.shape[1] - k, 1))
                )

    def test_start_outside_ball_exits_at_zero(self, brownian2):
        ens = simulate_ensemble(brownian2, [12.0, 0.0], _cfg(n_paths=4, r_exit=10.0))
        np.testing.assert_array_equal(ens.exit_step, 0)
        np.testing.assert_array_equal(ens.states[:, -1, :], ens.states[:, 0, :])

    def test_explosion_flagged_and_frozen(self):
        c = builtin_family("brownian", 2, drift="cubic_outward")
        ens = simulate_ensemble(c, [2.0, 0.0], _cfg(n_paths=32, dt=1e-2))
        assert np.all(ens.exploded)
        assert np.all(np.isfinite(ens.states))
        k = int(ens.exploded_step[0])
        np.testing.assert_array_equal(ens.states[0, k:], np.tile(ens.states[0, k], (101 - k, 1)))

    def test_exit_stats_requires_absorption(self, brownian2):
        ens = simulate_ensemble(brownian2, [0.0, 0.0], _cfg(n_paths=4))
        with pytest.raises(SimulationError):
            exit_time_stats(ens)


class TestOccupation:
    def test_exact_zero_occupation_away_from_origin(self, radial2):
        ens = simulate_ensemble(radial2, [1.0, 0.0], _cfg(n_paths=500, dt=1e-2))
        np.testing.assert_array_equal(ens.occupation_exact, 0.0)

    def test_zero_version_traps_chain_at_origin(self, radial2):
        # with the exact-zero version both dispersion and drift vanish at 0,
        # so the chain started there never moves: occupation is the horizon.
        # this is the representative sensitivity the law probes care about.
        ens = simulate_ensemble(radial2, [0.0, 0.0], _cfg(n_paths=64, dt=1e-2))
        np.testing.assert_allclose(ens.occupation_exact, 1.0)
        np.testing.assert_array_equal(ens.states, 0.0)

    def test_origin_version_never_touches_null_set(self):
        c = builtin_family("radial_degenerate", 2, alpha=0.25, gamma=1.0)
        ens = simulate_ensemble(c, [0.0, 0.0], _cfg(n_paths=64, dt=1e-2))
        np.testing.assert_array_equal(ens.occupation_exact, 0.0)

    def test_profile_monotone_and_zero_row(self, radial2):
        ens = simulate_ensemble(radial2, [1.0, 0.0], _cfg(n_paths=500, dt=1e-2))
        rows = occupation_profile(ens, [0.2, 0.1, 0.05, 0.025, 0.0])
        means = [r.mean_occupation for r in rows]
        assert all(a >= b for a, b in zip(means, means[1:]))
        assert rows[-1].eps == 0.0 and rows[-1].mean_occupation == 0.0

    def test_profile_counts_by_hand(self, radial2):
        ens = simulate_ensemble(radial2, [1.0, 0.0], _cfg(n_paths=20, dt=0.1, t_final=0.5))
        w = np.sum(ens.states[:, :5, :] ** 2, axis=2) ** 0.125
        expect = 0.1 * np.sum(w < 0.9, axis=1).mean()
        row = occupation_profile(ens, [0.9])[0]
        assert np.isclose(row.mean_occupation, expect)

    def test_near_eps_config_tally(self, radial2):
        cfg = _cfg(n_paths=50, dt=1e-2, near_degeneracy_eps=0.8)
        ens = simulate_ensemble(radial2, [1.0, 0.0], cfg)
        w = np.sum(ens.states[:, :100, :] ** 2, axis=2) ** 0.125
        np.testing.assert_allclose(ens.occupation_near, 1e-2 * np.sum(w < 0.8, axis=1))


class TestWeakOrder:
    def test_ou_first_order_bias_ratio(self, ou2):
        # analytic chain mean: x0 (1 - dt)^{T/dt}; bias differences halve
        res = weak_error_study(
            ou2, [2.0, 0.0], lambda x: x[:, 0], 1.0,
            [4e-3, 2e-3, 1e-3], 10_000, master_seed=3,
        )
        est = dict(zip(res["dt"], res["estimates"]))
        for dtv in (4e-3, 2e-3, 1e-3):
            n = round(1.0 / dtv)
            chain_mean = 2.0 * (1.0 - dtv) ** n
            assert abs(est[dtv] - chain_mean) < 5e-3
        d1, d2 = res["successive_diffs"]
        assert 0.8 * 2.0 < d1 / d2 < 1.2 * 2.0

    def test_brownian_estimates_coincide_to_rounding(self, brownian2):
        # the chain is exact in law at every dt; with common increments the
        # terminal states agree up to float reassociation
        res = weak_error_study(
            brownian2, [0.0, 0.0], lambda x: np.tanh(x[:, 0] + x[:, 1]), 1.0,
            [4e-3, 2e-3, 1e-3], 2000, master_seed=5,
        )
        est = res["estimates"]
        assert max(est) - min(est) < 1e-12

    def test_ratio_validation(self, brownian2):
        with pytest.raises(SimulationError, match="integer multiple"):
            weak_error_study(
                brownian2, [0.0, 0.0], lambda x: x[:, 0], 1.0,
                [3e-3, 1e-3, 7e-4], 100, master_seed=0,
            )
