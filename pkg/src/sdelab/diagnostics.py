"""Law-level verification on top of the path and PDE layers.

Three kinds of checks live here.  Two-sample tests compare fixed-time
marginals of path ensembles: a Kolmogorov-Smirnov statistic per coordinate
plus one joint energy-distance statistic, Bonferroni-combined at the declared
level.  The variant probe runs these tests across coefficient representatives
that differ only on the degeneracy set (or across step sizes), where equality
in law is expected; it also records the discrete occupation of the degeneracy
set, since the comparison is only meaningful when paths never sit on it.  The
occupation-functional audit bounds Monte-Carlo estimates of
``E[integral_0^{T ^ D_R} f(X_s, s) ds]`` against the mixed space-time norm
``L^{2d+2}`` in space, ``L^{d+1}`` in time of ``f`` on the ball, reporting the
empirical ratio.  Finally the cross-check compares a Monte-Carlo terminal
expectation with the parabolic solve of the same quantity, with an error
budget built from the Monte-Carlo standard error and Richardson differences
of the PDE value in space and time.

All randomness beyond the ensembles themselves (permutations, subsampling) is
seeded from content digests of the inputs, so repeated runs and swapped
argument orders produce identical numbers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .coefficients import CoefficientSet
from .density import DensityField, psi_weights, solve_density
from .grids import BoxGrid, GridField
from .reporting import DiagnosticReport
from .rng import derive_seed, permutation_rng
from .semigroup import evolve
from .simulate import PathEnsemble, SimConfig, simulate_ensemble

_PERMUTATIONS = 199
_ENERGY_SUBSAMPLE = 1024
_ASYMPTOTIC_MIN = 1000


class DiagnosticsError(ValueError):
    """Raised for invalid diagnostic inputs."""


# -- two-sample marginal test -------------------------------------------------

def _sample_digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _pair_seed(h1: str, h2: str) -> int:
    lo, hi = sorted((h1, h2))
    return int(hashlib.sha256(f"{lo}:{hi}".encode()).hexdigest()[:16], 16)


def _ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample sup distance between empirical CDFs (tie-safe)."""
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    ca = np.searchsorted(a, grid, side="right") / len(a)
    cb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.abs(ca - cb).max())


def _ks_asymptotic_critical(n1: int, n2: int, alpha: float) -> float:
    c = math.sqrt(-math.log(alpha / 2.0) / 2.0)
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def _perm_quantile(stats: np.ndarray, alpha: float) -> float:
    """Critical value of a permutation test: reject when obs > quantile.

    With B permutations the achievable levels are multiples of 1/(B+1); an
    ``alpha`` below that resolution yields an infinite critical value (the
    test cannot reject at that level).
    """
    b = len(stats)
    k = math.ceil((1.0 - alpha) * (b + 1))
    if k > b:
        return math.inf
    return float(np.sort(stats)[k - 1])


def _energy_statistic(dist: np.ndarray, n1: int) -> float:
    n2 = dist.shape[0] - n1
    s_xx = float(dist[:n1, :n1].sum())
    s_yy = float(dist[n1:, n1:].sum())
    s_xy = float(dist[:n1, n1:].sum())
    return 2.0 * s_xy / (n1 * n2) - s_xx / n1**2 - s_yy / n2**2


def _energy_perm_stats(
    dist: np.ndarray, n1: int, rng: np.random.Generator, b: int
) -> np.ndarray:
    """Energy statistics under label permutation, via indicator algebra.

    For a relabelling with first-group indicator z the three block sums
    follow from ``z' D z``, ``z' D 1`` and the total, so all permutations
    cost one matrix product instead of B matrix rebuilds.
    """
    n = dist.shape[0]
    n2 = n - n1
    row = dist.sum(axis=1)
    s_tot = float(row.sum())
    z = np.zeros((b, n))
    for i in range(b):
        z[i, rng.permutation(n)[:n1]] = 1.0
    s_xx = np.einsum("bn,bn->b", z @ dist, z)
    t = z @ row
    s_yy = s_tot - 2.0 * t + s_xx
    s_xy = t - s_xx
    return 2.0 * s_xy / (n1 * n2) - s_xx / n1**2 - s_yy / n2**2


def _normalized(raw: float, critical: float) -> float:
    if raw == 0.0:
        return 0.0
    if critical == 0.0:
        return math.inf
    return raw / critical


@dataclass(frozen=True)
class TwoSampleResult:
    """Combined marginal comparison at one time.

    ``statistic`` is the worst test statistic in units of its critical
    value (so the common ``threshold`` is 1); ``breakdown`` lists every
    component test with its raw statistic and critical value.
    """

    statistic: float
    n1: int
    n2: int
    threshold: float
    reject: bool
    level: float
    breakdown: tuple

    def __post_init__(self):
        if self.statistic < 0:
            raise DiagnosticsError("statistic must be nonnegative")
        if self.reject != (self.statistic > self.threshold):
            raise DiagnosticsError("reject flag inconsistent with statistic")


def marginal_two_sample(
    e1: PathEnsemble, e2: PathEnsemble, t: float, level: float = 0.01
) -> TwoSampleResult:
    """Test equality of the time-``t`` marginals of two ensembles.

    Runs one Kolmogorov-Smirnov test per coordinate and one joint
    energy-distance test, each at ``level / (d + 1)``; the result rejects
    when any component exceeds its critical value.  KS critical values are
    asymptotic for sample sizes of at least 1000 and permutation-calibrated
    below that; the energy test is always permutation-calibrated (199
    permutations, at most 1024 points subsampled per ensemble).  Permutation
    and subsampling streams are seeded from digests of the two marginal
    samples, symmetrically, so swapping the arguments changes nothing.
    """
    if e1.dim != e2.dim:
        raise DiagnosticsError(
            f"ensembles have different dimensions {e1.dim} and {e2.dim}"
        )
    if not 0.0 < level < 1.0:
        raise DiagnosticsError("level must lie in (0, 1)")
    x = np.asarray(e1.state_at(t), dtype=float)
    y = np.asarray(e2.state_at(t), dtype=float)
    n1, n2 = len(x), len(y)
    d = e1.dim
    alpha = level / (d + 1)

    hx, hy = _sample_digest(x), _sample_digest(y)
    seed = _pair_seed(hx, hy)
    # canonical internal order so the pooled data, and with it every
    # permutation draw, is invariant under swapping the arguments
    if hy < hx:
        (x, y), (hx, hy) = (y, x), (hy, hx)
    m1 = len(x)

    breakdown = []
    use_asymptotic = min(n1, n2) >= _ASYMPTOTIC_MIN
    for j in range(d):
        raw = _ks_statistic(x[:, j], y[:, j])
        if use_asymptotic:
            crit = _ks_asymptotic_critical(n1, n2, alpha)
            method = "asymptotic"
        else:
            pooled = np.concatenate([x[:, j], y[:, j]])
            rng = permutation_rng(derive_seed(seed, j))
            stats = np.empty(_PERMUTATIONS)
            for i in range(_PERMUTATIONS):
                perm = rng.permutation(len(pooled))
                stats[i] = _ks_statistic(pooled[perm[:m1]], pooled[perm[m1:]])
            crit = _perm_quantile(stats, alpha)
            method = "permutation"
        breakdown.append(
            {
                "name": f"ks_coordinate_{j}",
                "statistic": raw,
                "critical": crit,
                "normalized": _normalized(raw, crit),
                "method": method,
            }
        )

    xs = _subsample(x, hx)
    ys = _subsample(y, hy)
    pooled = np.concatenate([xs, ys], axis=0)
    dist = cdist(pooled, pooled)
    raw = _energy_statistic(dist, len(xs))
    rng = permutation_rng(derive_seed(seed, d))
    stats = _energy_perm_stats(dist, len(xs), rng, _PERMUTATIONS)
    crit = _perm_quantile(stats, alpha)
    breakdown.append(
        {
            "name": "energy",
            "statistic": raw,
            "critical": crit,
            "normalized": _normalized(raw, crit),
            "method": "permutation",
            "subsample": [len(xs), len(ys)],
        }
    )

    statistic = max(entry["normalized"] for entry in breakdown)
    return TwoSampleResult(
        statistic=statistic,
        n1=n1,
        n2=n2,
        threshold=1.0,
        reject=statistic > 1.0,
        level=level,
        breakdown=tuple(breakdown),
    )


def _subsample(sample: np.ndarray, digest_hex: str) -> np.ndarray:
    n = len(sample)
    if n <= _ENERGY_SUBSAMPLE:
        return sample
    rng = permutation_rng(int(digest_hex[:16], 16))
    idx = np.sort(rng.choice(n, _ENERGY_SUBSAMPLE, replace=False))
    return sample[idx]


# -- uniqueness probe ---------------------------------------------------------

@dataclass(frozen=True)
class LawVariant:
    """One entry of a variant comparison.

    ``c`` overrides the base coefficients (a representative differing on the
    degeneracy set, say); ``dt`` and ``scheme`` override the base simulation
    configuration.  Unset fields fall back to the probe's base inputs.
    """

    label: str
    c: CoefficientSet | None = None
    dt: float | None = None
    scheme: str | None = None


def uniqueness_probe(
    c_base: CoefficientSet,
    variants: Sequence[LawVariant],
    x0,
    t_checks: Sequence[float],
    cfg: SimConfig,
    level: float = 0.01,
    workers: int = 1,
) -> DiagnosticReport:
    """Compare fixed-time marginals across coefficient or scheme variants.

    Each variant is simulated with an independent master seed derived from
    the base configuration.  Every pair of variants is compared at every
    time in ``t_checks`` with :func:`marginal_two_sample` at the level
    ``level / (pairs * times)``, so the whole probe has familywise level
    ``level``; the report passes when no comparison rejects.

    The discrete occupation of the degeneracy set is recorded per variant.
    The comparison certifies equality in law only when that occupation is
    exactly zero for every variant; positive occupation is reported as a
    scope restriction, not as a failure of the probe itself.
    """
    variants = list(variants)
    if len(variants) < 2:
        raise DiagnosticsError("need at least two variants to compare")
    t_checks = [float(t) for t in t_checks]
    if not t_checks:
        raise DiagnosticsError("need at least one check time")

    ensembles = []
    variant_meta = []
    for i, var in enumerate(variants):
        c = var.c if var.c is not None else c_base
        overrides = {"master_seed": derive_seed(cfg.master_seed, i)}
        if var.dt is not None:
            overrides["dt"] = float(var.dt)
        if var.scheme is not None:
            overrides["scheme"] = var.scheme
        cfg_i = replace(cfg, **overrides)
        ens = simulate_ensemble(c, x0, cfg_i, workers=workers)
        ensembles.append(ens)
        variant_meta.append(
            {
                "label": var.label,
                "family": c.family.get("name", "custom"),
                "dt": cfg_i.dt,
                "scheme": cfg_i.scheme,
                "master_seed": cfg_i.master_seed,
                "occupation_exact_max": float(np.max(ens.occupation_exact)),
                "occupation_exact_mean": float(np.mean(ens.occupation_exact)),
                "n_exploded": int(np.sum(ens.exploded)),
            }
        )

    n_pairs = len(variants) * (len(variants) - 1) // 2
    per_test = level / (n_pairs * len(t_checks))
    report = DiagnosticReport(
        check=f"uniqueness_probe[{c_base.family.get('name', 'custom')}]",
        meta={
            "level": level,
            "per_comparison_level": per_test,
            "x0": list(np.asarray(x0, dtype=float)),
            "t_checks": t_checks,
            "base_config": cfg.to_dict(),
            "variants": variant_meta,
            "comparisons": [],
        },
    )

    for i in range(len(variants)):
        for j in range(i + 1, len(variants)):
            for t in t_checks:
                res = marginal_two_sample(
                    ensembles[i], ensembles[j], t, level=per_test
                )
                worst = max(res.breakdown, key=lambda e: e["normalized"])
                name = (
                    f"no_rejection[{variants[i].label}|{variants[j].label}]"
                    f"@t={t:g}"
                )
                report.add(
                    name,
                    not res.reject,
                    value=res.statistic,
                    threshold=res.threshold,
                    detail=f"worst component {worst['name']}",
                )
                report.meta["comparisons"].append(
                    {
                        "pair": [variants[i].label, variants[j].label],
                        "t": t,
                        "statistic": res.statistic,
                        "breakdown": list(res.breakdown),
                    }
                )

    max_occ = max(v["occupation_exact_max"] for v in variant_meta)
    if max_occ == 0.0:
        detail = "degeneracy set never occupied; equal-law comparison applies"
    else:
        hit = [
            v["label"] for v in variant_meta if v["occupation_exact_max"] > 0
        ]
        detail = (
            f"occupation_exact > 0 for {hit}; marginal comparison reported "
            "but equality in law is not certified on this run"
        )
    report.add("occupation_route", True, value=max_occ, detail=detail)
    return report


# -- occupation-functional audit ----------------------------------------------

@dataclass(frozen=True)
class KrylovAudit:
    """Monte-Carlo bound trace for one space-time payload ``f``.

    ``estimate`` is the ensemble mean of the path integral of ``f`` up to
    the exit time from the ball, ``f_norm`` the mixed-norm of ``f`` on the
    ball-time window, and ``ratio`` their quotient, the empirical constant.
    """

    estimate: float
    stderr: float
    f_norm: float
    ratio: float
    meta: dict = field(default_factory=dict)


def _path_integral_weights(
    stop_index: np.ndarray, n_slices: int, dt: float
) -> np.ndarray:
    """Trapezoid weights per path over ``[0, stop_index * dt]``."""
    k = np.arange(n_slices)[None, :]
    stop = stop_index[:, None]
    interior = (k > 0) & (k < stop)
    endpoint = (stop > 0) & ((k == 0) | (k == stop))
    return dt * interior + 0.5 * dt * endpoint


def _payload_on_paths(f: Callable, ens: PathEnsemble, label: str) -> np.ndarray:
    vals = np.asarray(
        f(ens.states, ens.times[None, :]), dtype=float
    )
    if vals.shape != ens.states.shape[:2]:
        raise DiagnosticsError(
            f"payload {label} returned shape {vals.shape}, expected "
            f"{ens.states.shape[:2]}"
        )
    if not np.all(np.isfinite(vals)):
        raise DiagnosticsError(
            f"payload {label} is non-finite on simulated paths; the audit "
            "needs functions bounded on the ball-time window"
        )
    return vals


def _mixed_norm(
    f: Callable,
    radius: float,
    t_final: float,
    dim: int,
    label: str,
    n_space: int,
    n_time: int,
) -> float:
    """Midpoint quadrature of the ``L^{2d+2}`` in space, ``L^{d+1}`` in time
    norm of ``f`` over the centered ball times ``(0, t_final)``."""
    q = 2 * dim + 2
    r = dim + 1
    h = 2.0 * radius / n_space
    axis = -radius + (np.arange(n_space) + 0.5) * h
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, dim)
    inside = np.linalg.norm(pts, axis=1) <= radius
    pts = pts[inside]
    cell = h**dim
    t_axis = (np.arange(n_time) + 0.5) * (t_final / n_time)
    accum = 0.0
    for t in t_axis:
        vals = np.asarray(f(pts, np.full(len(pts), t)), dtype=float)
        if vals.shape != (len(pts),):
            raise DiagnosticsError(
                f"payload {label} returned shape {vals.shape} on quadrature "
                f"points, expected ({len(pts)},)"
            )
        if not np.all(np.isfinite(vals)):
            raise DiagnosticsError(
                f"payload {label} is non-finite on the ball-time window"
            )
        space = float(np.sum(np.abs(vals) ** q) * cell)
        accum += space ** (r / q) * (t_final / n_time)
    return accum ** (1.0 / r)


def krylov_audit(
    c: CoefficientSet,
    x0,
    radius: float,
    t_final: float,
    f_dictionary: Sequence[Callable],
    cfg: SimConfig,
    workers: int = 1,
    quad_space: int = 65,
    quad_time: int = 64,
    homogeneity_scale: float = 3.7,
) -> list:
    """Audit the path-integral bound for each payload in the dictionary.

    One ensemble is simulated with absorption at ``radius``; every payload
    is integrated along the same paths by trapezoid up to the exit time, so
    the audits share their randomness.  Each audit also re-runs its own
    payload scaled by ``homogeneity_scale`` on the same paths and records
    the relative defect of estimate and ratio homogeneity in ``meta``
    (both scale linearly, so the defects sit at rounding level).
    """
    if radius <= 0:
        raise DiagnosticsError("radius must be positive")
    if not f_dictionary:
        raise DiagnosticsError("payload dictionary is empty")
    cfg_run = replace(cfg, t_final=float(t_final), r_exit=float(radius))
    ens = simulate_ensemble(c, x0, cfg_run, workers=workers)

    n_slices = cfg_run.n_steps + 1
    stop = np.where(ens.exit_step >= 0, ens.exit_step, cfg_run.n_steps)
    stop = np.where(
        ens.exploded_step >= 0, np.minimum(stop, ens.exploded_step), stop
    )
    weights = _path_integral_weights(stop, n_slices, cfg_run.dt)
    exit_fraction = float(np.mean(ens.exit_step >= 0))

    lam = float(homogeneity_scale)
    audits = []
    for i, f in enumerate(f_dictionary):
        label = getattr(f, "__name__", None) or f"f{i}"
        vals = _payload_on_paths(f, ens, label)
        integrals = np.sum(weights * vals, axis=1)
        estimate = float(np.mean(integrals))
        stderr = float(np.std(integrals) / math.sqrt(len(integrals)))
        f_norm = _mixed_norm(
            f, radius, t_final, c.dim, label, quad_space, quad_time
        )
        if f_norm > 0.0:
            ratio = estimate / f_norm
        else:
            ratio = 0.0 if estimate == 0.0 else math.inf

        scaled_vals = np.asarray(lam * vals, dtype=float)
        est_scaled = float(np.mean(np.sum(weights * scaled_vals, axis=1)))
        norm_scaled = f_norm * lam
        denom = abs(lam * estimate) + 1e-300
        est_gap = abs(est_scaled - lam * estimate) / denom
        if f_norm > 0.0:
            ratio_gap = abs(est_scaled / norm_scaled - ratio) / (
                abs(ratio) + 1e-300
            )
        else:
            ratio_gap = 0.0

        audits.append(
            KrylovAudit(
                estimate=estimate,
                stderr=stderr,
                f_norm=f_norm,
                ratio=ratio,
                meta={
                    "label": label,
                    "family": c.family.get("name", "custom"),
                    "n_paths": cfg_run.n_paths,
                    "dt": cfg_run.dt,
                    "t_final": float(t_final),
                    "radius": float(radius),
                    "exit_fraction": exit_fraction,
                    "master_seed": cfg_run.master_seed,
                    "quad_space": quad_space,
                    "quad_time": quad_time,
                    "homogeneity": {
                        "scale": lam,
                        "estimate_gap": est_gap,
                        "ratio_gap": ratio_gap,
                    },
                },
            )
        )
    return audits


# -- Monte-Carlo vs PDE cross-check -------------------------------------------

def _datum_on_grid(f0, grid: BoxGrid):
    """Split the terminal payload into grid values and a point evaluator."""
    if isinstance(f0, GridField):
        if f0.grid.shape != grid.shape or f0.grid.bounds != grid.bounds:
            raise DiagnosticsError("payload lives on a different grid")
        if f0.is_vector:
            raise DiagnosticsError("payload must be scalar")
        return np.array(f0.values), f0.interpolate
    if callable(f0):
        vals = np.asarray(f0(grid.points()), dtype=float)
        if vals.shape != grid.shape:
            raise DiagnosticsError(
                f"payload callable returned shape {vals.shape} on the grid"
            )
        return vals, f0
    raise DiagnosticsError("payload must be a GridField or a callable")


def _coarse_values(f0, fine_values: np.ndarray, grid_c: BoxGrid) -> np.ndarray:
    if isinstance(f0, GridField):
        d = grid_c.dim
        return np.array(fine_values[(slice(None, None, 2),) * d])
    return np.asarray(f0(grid_c.points()), dtype=float)


def _point_value(grid: BoxGrid, values: np.ndarray, x0: np.ndarray) -> float:
    return float(GridField(grid, values).interpolate(x0[None, :])[0])


def feynman_kac_crosscheck(
    c: CoefficientSet,
    dens: DensityField,
    f0,
    x0,
    t_final: float,
    cfg: SimConfig,
    pde_dt: float,
    workers: int = 1,
) -> DiagnosticReport:
    """Cross-check ``E[f0(X_T)]`` against the parabolic solve at ``x0``.

    The Monte-Carlo side simulates ``cfg.n_paths`` paths from ``x0`` and
    averages ``f0`` at the final time; any configured exit radius is ignored
    (both sides must see the free dynamics).  The PDE side evolves ``f0`` backward
    on the density's grid and reads the value at ``x0``; the grid-error
    budget is the Richardson difference against a once-coarsened grid plus
    the difference against a doubled time step.  The check passes when the
    two sides agree within ``3 * (stderr + spatial + temporal)``.

    A payload whose mass (against the stationary volume ``rho psi dx``)
    leaks more than 1 percent through the box boundary over the horizon
    makes the comparison inconclusive; the report then fails with an
    explicit instruction to enlarge the box.
    """
    grid = dens.grid
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (grid.dim,):
        raise DiagnosticsError(f"x0 must have shape ({grid.dim},)")
    margin = grid.spacing
    if np.any(x0 < grid.lo + margin) or np.any(x0 > grid.hi - margin):
        raise DiagnosticsError(
            "x0 must lie strictly inside the box, at least one spacing from "
            "every face"
        )
    n_steps = t_final / pde_dt
    if pde_dt <= 0 or abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, n_steps):
        raise DiagnosticsError("t_final must be an integer multiple of pde_dt")
    if int(round(n_steps)) % 2:
        raise DiagnosticsError(
            "t_final / pde_dt must be even: the temporal error is estimated "
            "at the doubled step"
        )

    f_vals, f_eval = _datum_on_grid(f0, grid)

    # the comparison is defined for the free dynamics: a configured exit
    # radius would freeze Monte-Carlo paths the PDE side keeps evolving
    cfg_run = replace(cfg, t_final=float(t_final), r_exit=None)
    ens = simulate_ensemble(c, x0, cfg_run, workers=workers)
    terminal = np.asarray(f_eval(ens.state_at(t_final)), dtype=float)
    mc = float(np.mean(terminal))
    stderr = float(np.std(terminal) / math.sqrt(len(terminal)))
    n_exploded = int(np.sum(ens.exploded))
    del ens

    u_fine = evolve(c, dens, GridField(grid, f_vals), t_final, pde_dt)
    pde = _point_value(grid, u_fine.values[-1], x0)

    u_half = evolve(c, dens, GridField(grid, f_vals), t_final, 2.0 * pde_dt)
    temporal = abs(pde - _point_value(grid, u_half.values[-1], x0))

    grid_c = grid.coarsen()
    dens_c = solve_density(
        c,
        grid.bounds,
        grid_c.n,
        normalization=dens.normalization,
        anchor=dens.anchor_point,
    )
    u_coarse = evolve(
        c, dens_c, GridField(grid_c, _coarse_values(f0, f_vals, grid_c)),
        t_final, pde_dt,
    )
    spatial = abs(pde - _point_value(grid_c, u_coarse.values[-1], x0))

    budget = 3.0 * (stderr + spatial + temporal)

    vol = grid.trapezoid_weights()
    station = dens.rho.values * psi_weights(c, grid) * vol
    if np.all(f_vals >= 0.0):
        mass0 = float(np.sum(station * f_vals))
        mass_t = float(np.sum(station * u_fine.values[-1]))
    else:
        u_abs = evolve(c, dens, GridField(grid, np.abs(f_vals)), t_final, pde_dt)
        mass0 = float(np.sum(station * np.abs(f_vals)))
        mass_t = float(np.sum(station * u_abs.values[-1]))
    if mass0 <= 0.0:
        raise DiagnosticsError("payload carries no mass on the box")
    leakage = 1.0 - mass_t / mass0

    report = DiagnosticReport(
        check=f"feynman_kac_crosscheck[{c.family.get('name', 'custom')}]",
        meta={
            "x0": list(x0),
            "t_final": float(t_final),
            "mc_estimate": mc,
            "mc_stderr": stderr,
            "mc_n_paths": cfg_run.n_paths,
            "mc_dt": cfg_run.dt,
            "mc_master_seed": cfg_run.master_seed,
            "mc_n_exploded": n_exploded,
            "pde_value": pde,
            "pde_coarse_value": _point_value(grid_c, u_coarse.values[-1], x0),
            "pde_dt": float(pde_dt),
            "grid_n": list(grid.n),
            "spatial_error": spatial,
            "temporal_error": temporal,
            "budget": budget,
            "mass_leakage": leakage,
        },
    )
    report.add(
        "mc_pde_within_budget",
        abs(mc - pde) <= budget,
        value=abs(mc - pde),
        threshold=budget,
        detail=(
            f"budget = 3*(stderr {stderr:.3g} + spatial {spatial:.3g} "
            f"+ temporal {temporal:.3g})"
        ),
    )
    leak_ok = leakage <= 0.01
    report.add(
        "box_retains_payload_mass",
        leak_ok,
        value=leakage,
        threshold=0.01,
        detail="" if leak_ok else "inconclusive: enlarge the box",
    )
    if not leak_ok:
        report.meta["verdict"] = "inconclusive"
    return report
