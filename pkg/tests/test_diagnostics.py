"""Tests for the law-level diagnostics: two-sample marginal tests, the
variant probe, the occupation-functional audit and the MC-vs-PDE cross-check."""

import math

import numpy as np
import pytest

from sdelab.coefficients import (
    CoefficientSet,
    DiffusionMatrix,
    DispersionFactor,
    Exponents,
    InverseWeight,
    builtin_family,
)
from sdelab.density import solve_density
from sdelab.diagnostics import (
    DiagnosticsError,
    KrylovAudit,
    LawVariant,
    TwoSampleResult,
    feynman_kac_crosscheck,
    krylov_audit,
    marginal_two_sample,
    uniqueness_probe,
)
from sdelab.grids import BoxGrid, GridField, SmoothBump
from sdelab.rng import derive_seed
from sdelab.simulate import SimConfig, simulate_ensemble


def _comonotone_2d():
    """Fully correlated noise: one Brownian motion driving both coordinates.

    Same standard-normal marginals as the 2-d brownian family at every time,
    but the joint law is degenerate on the diagonal."""

    def a_fn(x):
        return np.ones(x.shape[:-1] + (2, 2))

    def zero(x):
        return np.zeros(x.shape)

    def s_fn(x):
        return np.ones(x.shape[:-1] + (2, 1))

    return CoefficientSet(
        matrix=DiffusionMatrix(2, a_fn, zero),
        factor=DispersionFactor(2, 1, s_fn),
        inv_weight=InverseWeight(
            fn=lambda x: np.ones(x.shape[:-1]),
            null_fn=lambda x: np.zeros(x.shape[:-1], dtype=bool),
            representative_tag="unit",
            has_zeros=False,
        ),
        drift=zero,
        psi_drift=zero,
        exponents=Exponents(math.inf, math.inf, math.inf),
        family={"name": "comonotone"},
    )


def _ensemble(c, n_paths, master_seed, dt=0.05, t_final=1.0, x0=(0.0, 0.0)):
    cfg = SimConfig(dt=dt, t_final=t_final, n_paths=n_paths, master_seed=master_seed)
    return simulate_ensemble(c, x0, cfg)


class TestTwoSampleResult:
    def test_inconsistent_reject_flag_rejected(self):
        with pytest.raises(DiagnosticsError, match="inconsistent"):
            TwoSampleResult(
                statistic=0.5, n1=10, n2=10, threshold=1.0, reject=True,
                level=0.05, breakdown=(),
            )

    def test_negative_statistic_rejected(self):
        with pytest.raises(DiagnosticsError, match="nonnegative"):
            TwoSampleResult(
                statistic=-0.1, n1=10, n2=10, threshold=1.0, reject=False,
                level=0.05, breakdown=(),
            )


class TestMarginalTwoSample:
    def test_identical_ensembles_give_zero(self, brownian2):
        e1 = _ensemble(brownian2, 2000, 11)
        e2 = _ensemble(brownian2, 2000, 11)
        res = marginal_two_sample(e1, e2, 1.0, level=0.01)
        assert res.statistic == 0.0
        assert not res.reject
        assert all(entry["statistic"] == 0.0 for entry in res.breakdown)

    def test_independent_null_accepts(self, brownian2):
        e1 = _ensemble(brownian2, 10_000, derive_seed(11, 1))
        e2 = _ensemble(brownian2, 10_000, derive_seed(11, 2))
        res = marginal_two_sample(e1, e2, 1.0, level=0.01)
        assert not res.reject
        assert res.statistic <= 1.0
        assert res.n1 == res.n2 == 10_000
        for entry in res.breakdown[:2]:
            assert entry["method"] == "asymptotic"

    def test_energy_level_below_permutation_resolution(self, brownian2):
        # 199 permutations resolve levels down to 1/200; at 1% split over
        # three tests the energy critical value is infinite by design
        e1 = _ensemble(brownian2, 1500, derive_seed(12, 1))
        e2 = _ensemble(brownian2, 1500, derive_seed(12, 2))
        res = marginal_two_sample(e1, e2, 1.0, level=0.01)
        energy = res.breakdown[-1]
        assert energy["name"] == "energy"
        assert math.isinf(energy["critical"])
        assert energy["normalized"] == 0.0

    def test_symmetric_under_swap(self, brownian2):
        e1 = _ensemble(brownian2, 1200, derive_seed(13, 1))
        e2 = _ensemble(brownian2, 1200, derive_seed(13, 2))
        r12 = marginal_two_sample(e1, e2, 1.0, level=0.05)
        r21 = marginal_two_sample(e2, e1, 1.0, level=0.05)
        assert r12.statistic == r21.statistic
        assert r12.reject == r21.reject
        for a, b in zip(r12.breakdown, r21.breakdown):
            assert a["statistic"] == b["statistic"]
            assert a["critical"] == b["critical"]

    def test_mean_shift_rejects_on_first_coordinate(self, brownian2):
        drifted = builtin_family("brownian", 2, drift=(1.0, 0.0))
        e1 = _ensemble(brownian2, 10_000, derive_seed(11, 1))
        e2 = _ensemble(drifted, 10_000, derive_seed(11, 2))
        res = marginal_two_sample(e1, e2, 1.0, level=0.01)
        assert res.reject
        worst = max(res.breakdown, key=lambda e: e["normalized"])
        assert worst["name"] == "ks_coordinate_0"
        assert worst["normalized"] > 5.0

    def test_small_sample_permutation_path(self, brownian2):
        half = builtin_family("brownian", 2, drift=(0.5, 0.0))
        e1 = _ensemble(brownian2, 400, derive_seed(11, 3))
        shifted = _ensemble(half, 400, derive_seed(11, 4))
        null = _ensemble(brownian2, 400, derive_seed(11, 4))
        res = marginal_two_sample(e1, shifted, 1.0, level=0.05)
        assert res.reject
        assert res.breakdown[0]["method"] == "permutation"
        res0 = marginal_two_sample(e1, null, 1.0, level=0.05)
        assert not res0.reject

    def test_energy_detects_pure_dependence(self, brownian2):
        # equal marginals, different joint law: KS blind, energy decisive
        e1 = _ensemble(brownian2, 4096, derive_seed(21, 1))
        e2 = _ensemble(_comonotone_2d(), 4096, derive_seed(21, 2))
        res = marginal_two_sample(e1, e2, 1.0, level=0.05)
        assert res.reject
        worst = max(res.breakdown, key=lambda e: e["normalized"])
        assert worst["name"] == "energy"
        assert all(e["normalized"] <= 1.0 for e in res.breakdown[:2])

    def test_dimension_mismatch_rejected(self, brownian2):
        b3 = builtin_family("brownian", 3)
        e1 = _ensemble(brownian2, 50, 1)
        cfg = SimConfig(dt=0.1, t_final=0.5, n_paths=50, master_seed=2)
        e3 = simulate_ensemble(b3, (0.0, 0.0, 0.0), cfg)
        with pytest.raises(DiagnosticsError, match="dimension"):
            marginal_two_sample(e1, e3, 0.5)

    def test_bad_level_rejected(self, brownian2):
        e1 = _ensemble(brownian2, 50, 1)
        with pytest.raises(DiagnosticsError, match="level"):
            marginal_two_sample(e1, e1, 1.0, level=1.5)


class TestUniquenessProbe:
    def test_gamma_variants_accept(self):
        rad = lambda g: builtin_family(
            "radial_degenerate", 2, alpha=0.25, gamma=g
        )
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=1500, master_seed=33)
        rep = uniqueness_probe(
            rad(1.0),
            [LawVariant("gamma=0.5", c=rad(0.5)), LawVariant("gamma=2", c=rad(2.0))],
            (0.0, 0.0),
            [0.25, 0.5],
            cfg,
            level=0.01,
        )
        assert rep.passed
        occ = rep.clause("occupation_route")
        assert occ.value == 0.0
        assert len(rep.meta["comparisons"]) == 2

    def test_drift_negative_control_rejects(self, brownian2):
        drifted = builtin_family("brownian", 2, drift=(0.5, 0.0))
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=1500, master_seed=34)
        rep = uniqueness_probe(
            brownian2,
            [LawVariant("no_drift"), LawVariant("drift", c=drifted)],
            (0.0, 0.0),
            [0.5],
            cfg,
            level=0.01,
        )
        assert not rep.passed
        assert not rep.clause("no_rejection[no_drift|drift]@t=0.5").passed

    def test_null_set_occupation_reported_not_failed(self):
        # the default radial representative freezes the chain at the origin,
        # so the whole horizon is spent on the degeneracy set
        rad0 = builtin_family("radial_degenerate", 2, alpha=0.25)
        cfg = SimConfig(dt=5e-3, t_final=0.25, n_paths=400, master_seed=35)
        rep = uniqueness_probe(
            rad0,
            [LawVariant("copy_a"), LawVariant("copy_b")],
            (0.0, 0.0),
            [0.25],
            cfg,
            level=0.01,
        )
        assert rep.passed
        occ = rep.clause("occupation_route")
        assert occ.value == pytest.approx(0.25)
        assert "not certified" in occ.detail

    def test_variant_list_too_short(self, brownian2):
        cfg = SimConfig(dt=0.1, t_final=0.5, n_paths=50, master_seed=1)
        with pytest.raises(DiagnosticsError, match="two variants"):
            uniqueness_probe(brownian2, [LawVariant("only")], (0.0, 0.0), [0.5], cfg)

    def test_common_seed_null_set_variants_bitwise_identical(self):
        # representatives differing only on the (never-visited) degeneracy
        # set produce bitwise identical chains under a common master seed
        lo = builtin_family("radial_degenerate", 2, alpha=0.25, gamma=0.5)
        hi = builtin_family("radial_degenerate", 2, alpha=0.25, gamma=2.0)
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=300, master_seed=77)
        e_lo = simulate_ensemble(lo, (0.3, 0.2), cfg)
        e_hi = simulate_ensemble(hi, (0.3, 0.2), cfg)
        assert np.array_equal(e_lo.states, e_hi.states)
        assert np.max(e_lo.occupation_exact) == 0.0


def _one(x, t):
    return np.ones(x.shape[:-1])


def _zero(x, t):
    return np.zeros(x.shape[:-1])


def _near_origin(x, t):
    return (np.linalg.norm(x, axis=-1) < 0.1).astype(float)


class TestKrylovAudit:
    def test_zero_payload(self, brownian2):
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=500, master_seed=44)
        audit = krylov_audit(brownian2, (0.0, 0.0), 10.0, 0.25, [_zero], cfg)[0]
        assert audit.estimate == 0.0
        assert audit.stderr == 0.0
        assert audit.ratio == 0.0

    def test_constant_payload_closed_forms(self, brownian2):
        # no path leaves the ball, so every path integral equals the horizon
        # exactly; the mixed norm has the closed form (pi R^2)^(1/6) T^(1/3)
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=2000, master_seed=44)
        audit = krylov_audit(brownian2, (0.0, 0.0), 10.0, 0.25, [_one], cfg)[0]
        assert audit.estimate == pytest.approx(0.25, abs=1e-12)
        assert audit.stderr <= 1e-12
        assert audit.meta["exit_fraction"] == 0.0
        closed = (math.pi * 100.0) ** (1.0 / 6.0) * 0.25 ** (1.0 / 3.0)
        assert audit.f_norm == pytest.approx(closed, rel=1e-3)
        assert math.isfinite(audit.ratio)

    def test_homogeneity_on_common_paths(self, brownian2):
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=1000, master_seed=44)
        audits = krylov_audit(
            brownian2, (0.0, 0.0), 10.0, 0.25, [_one, _near_origin], cfg
        )
        for audit in audits:
            hom = audit.meta["homogeneity"]
            assert hom["estimate_gap"] <= 1e-12
            assert hom["ratio_gap"] <= 1e-12

    def test_degenerate_family_ratio_stable_in_dt(self):
        rad = builtin_family("radial_degenerate", 2, alpha=0.25, gamma=1.0)
        ratios = {}
        for dt in (4e-3, 2e-3):
            cfg = SimConfig(dt=dt, t_final=0.5, n_paths=2000, master_seed=55)
            audits = krylov_audit(
                rad, (0.0, 0.0), 1.5, 0.5, [_one, _near_origin], cfg
            )
            ratios[dt] = [a.ratio for a in audits]
        for coarse, fine in zip(ratios[4e-3], ratios[2e-3]):
            assert math.isfinite(coarse) and math.isfinite(fine)
            assert 0.5 <= coarse / fine <= 2.0

    def test_unbounded_payload_rejected(self, brownian2):
        def inverse_norm(x, t):
            with np.errstate(divide="ignore"):
                return 1.0 / np.linalg.norm(x, axis=-1)

        cfg = SimConfig(dt=5e-3, t_final=0.1, n_paths=50, master_seed=9)
        with pytest.raises(DiagnosticsError, match="non-finite"):
            krylov_audit(brownian2, (1.0, 0.0), 2.0, 0.1, [inverse_norm], cfg)

    def test_bad_payload_shape_rejected(self, brownian2):
        def bad(x, t):
            return np.ones(x.shape[:-1] + (2,))

        cfg = SimConfig(dt=5e-3, t_final=0.1, n_paths=50, master_seed=9)
        with pytest.raises(DiagnosticsError, match="shape"):
            krylov_audit(brownian2, (0.0, 0.0), 2.0, 0.1, [bad], cfg)

    def test_empty_dictionary_rejected(self, brownian2):
        cfg = SimConfig(dt=5e-3, t_final=0.1, n_paths=50, master_seed=9)
        with pytest.raises(DiagnosticsError, match="empty"):
            krylov_audit(brownian2, (0.0, 0.0), 2.0, 0.1, [], cfg)


def _gauss_quarter(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.sum(x * x, axis=-1) / (2.0 * 0.25))


BOUNDS4 = ((-4.0, 4.0), (-4.0, 4.0))


class TestFeynmanKac:
    def test_brownian_triple_agreement(self, brownian2):
        # MC, PDE and the Gaussian convolution closed form all agree
        dens = solve_density(brownian2, BOUNDS4, 65)
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=20_000, master_seed=71)
        rep = feynman_kac_crosscheck(
            brownian2, dens, _gauss_quarter, (0.0, 0.0), 0.25, cfg, 2.5e-3
        )
        assert rep.passed
        m = rep.meta
        closed = 0.25 / (0.25 + 0.25)
        assert abs(m["mc_estimate"] - closed) <= m["budget"]
        assert abs(m["pde_value"] - closed) <= m["budget"]
        assert m["mass_leakage"] < 1e-4

    def test_ou_clipped_coordinate(self, ou2):
        # E[x1 at t] = exp(-t) x1(0); the clip sits far outside the bulk
        def clipped_x1(x):
            return np.clip(np.asarray(x, dtype=float)[..., 0], -3.0, 3.0)

        dens = solve_density(ou2, BOUNDS4, 65)
        cfg = SimConfig(dt=2e-3, t_final=1.0, n_paths=20_000, master_seed=73)
        rep = feynman_kac_crosscheck(
            ou2, dens, clipped_x1, (1.0, 0.0), 1.0, cfg, 1e-2
        )
        assert rep.passed
        m = rep.meta
        closed = math.exp(-1.0)
        assert abs(m["mc_estimate"] - closed) <= m["budget"]
        assert abs(m["pde_value"] - closed) <= m["budget"]

    def test_degenerate_radial_budget(self):
        rad = builtin_family("radial_degenerate", 2, alpha=0.25)
        bump = SmoothBump((0.7, 0.7), 0.1)
        dens = solve_density(rad, ((-3.0, 3.0), (-3.0, 3.0)), 65)
        cfg = SimConfig(dt=2e-3, t_final=0.25, n_paths=20_000, master_seed=56)
        rep = feynman_kac_crosscheck(
            rad, dens, lambda x: bump(np.asarray(x, dtype=float)),
            (0.5, 0.5), 0.25, cfg, 2.5e-3,
        )
        assert rep.passed
        assert rep.clause("mc_pde_within_budget").passed
        assert rep.meta["mass_leakage"] < 0.01

    def test_leaky_box_is_inconclusive(self, brownian2):
        def wide(x):
            x = np.asarray(x, dtype=float)
            return np.exp(-np.sum(x * x, axis=-1) / 8.0)

        dens = solve_density(brownian2, ((-1.0, 1.0), (-1.0, 1.0)), 33)
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=4000, master_seed=75)
        rep = feynman_kac_crosscheck(
            brownian2, dens, wide, (0.0, 0.0), 0.5, cfg, 5e-3
        )
        assert not rep.passed
        assert not rep.clause("box_retains_payload_mass").passed
        assert rep.meta["verdict"] == "inconclusive"
        assert "enlarge" in rep.clause("box_retains_payload_mass").detail

    def test_x0_near_boundary_rejected(self, brownian2):
        dens = solve_density(brownian2, BOUNDS4, 33)
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=100, master_seed=1)
        with pytest.raises(DiagnosticsError, match="inside the box"):
            feynman_kac_crosscheck(
                brownian2, dens, _gauss_quarter, (4.0, 0.0), 0.5, cfg, 5e-3
            )

    def test_odd_step_count_rejected(self, brownian2):
        dens = solve_density(brownian2, BOUNDS4, 33)
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=100, master_seed=1)
        with pytest.raises(DiagnosticsError, match="even"):
            feynman_kac_crosscheck(
                brownian2, dens, _gauss_quarter, (0.0, 0.0), 0.5, cfg, 0.1
            )

    def test_foreign_grid_payload_rejected(self, brownian2):
        dens = solve_density(brownian2, BOUNDS4, 33)
        other = BoxGrid(((-2.0, 2.0), (-2.0, 2.0)), 33)
        payload = GridField(other, np.ones(other.shape))
        cfg = SimConfig(dt=5e-3, t_final=0.5, n_paths=100, master_seed=1)
        with pytest.raises(DiagnosticsError, match="different grid"):
            feynman_kac_crosscheck(
                brownian2, dens, payload, (0.0, 0.0), 0.5, cfg, 5e-3
            )
