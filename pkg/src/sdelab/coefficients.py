"""Coefficient fields for Ito equations with a degenerate scalar dispersion scaling.

The model class: ``dX = sigma_hat(X) dW + G(X) dt`` where the dispersion
factors as ``sigma_hat = sqrt(w) * sigma`` with

* ``sigma`` a continuous, locally uniformly elliptic d x m factor with
  ``A = sigma sigma^T`` symmetric and Sobolev-regular,
* ``w`` a pointwise-chosen Borel version of a nonnegative inverse weight that
  may vanish on a Lebesgue-null set Z and may be discontinuous.

The inverse weight is the reciprocal of a locally integrable weight ``psi``
(``psi = 1/w`` where ``w > 0``, extended by ``+inf`` on Z).  Several audits
need ``psi * G`` as a single locally p-integrable datum, so families supply it
directly instead of dividing by ``w``.

All evaluation callables are vectorized over a leading batch axis:
points ``x`` of shape ``(..., d)`` map to ``A -> (..., d, d)``,
``sigma -> (..., d, m)``, ``w -> (...,)``, ``G -> (..., d)``.
Instances are frozen and hold pure functions, so sharing across threads is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class CoefficientError(ValueError):
    """Raised for invalid coefficient definitions or parameters."""


class DegenerateMatrixError(CoefficientError):
    """Raised when an ellipticity probe finds a non-positive Rayleigh quotient."""


def _batchpoints(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d,):
        raise CoefficientError(f"points must have trailing dimension {d}, got {x.shape}")
    return x


# -- building blocks ----------------------------------------------------------

@dataclass(frozen=True)
class InverseWeight:
    """Pointwise-defined Borel version of the inverse weight ``w = 1/psi``.

    ``fn`` evaluates ``w >= 0``; ``null_fn`` decides membership in the
    degeneracy set ``Z = {sqrt(w) = 0}`` by exact evaluation (no tolerance).
    ``representative_tag`` names the chosen version: versions that differ only
    on a Lebesgue-null set induce the same equation class but distinct
    simulators, which is exactly what the law diagnostics compare.
    ``has_zeros`` declares whether Z is nonempty for this version; it cannot be
    inferred from a black-box callable and drives the occupation-condition
    routing.
    """

    fn: Callable
    null_fn: Callable
    representative_tag: str
    has_zeros: bool

    def __call__(self, x) -> np.ndarray:
        v = np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)
        return v

    def null_set_indicator(self, x) -> np.ndarray:
        return np.asarray(self.null_fn(np.asarray(x, dtype=float)), dtype=bool)

    def sqrt(self, x) -> np.ndarray:
        return np.sqrt(self(x))


@dataclass(frozen=True)
class DispersionFactor:
    """Continuous d x m dispersion factor ``sigma`` with ``A = sigma sigma^T``."""

    dim: int
    m: int
    fn: Callable

    def __post_init__(self):
        if self.dim < 2:
            raise CoefficientError("state dimension must be at least 2")
        if self.m < 1:
            raise CoefficientError("noise dimension must be at least 1")

    def __call__(self, x) -> np.ndarray:
        x = _batchpoints(x, self.dim)
        s = np.asarray(self.fn(x), dtype=float)
        if s.shape != x.shape[:-1] + (self.dim, self.m):
            raise CoefficientError(
                f"sigma returned shape {s.shape}, expected (..., {self.dim}, {self.m})"
            )
        return s


def fd_row_divergence(matrix_fn: Callable, dim: int) -> Callable:
    """Row divergence ``(sum_j d_j a_ij)_i`` by centered differences.

    Step ``1e-5 * (1 + |x|)`` balances truncation against rounding for
    coefficients of moderate scale.
    """

    def row_div(x):
        x = _batchpoints(x, dim)
        h = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))
        out = np.zeros(x.shape)
        for j in range(dim):
            xp = x.copy()
            xm = x.copy()
            xp[..., j] += h
            xm[..., j] -= h
            dj = (matrix_fn(xp) - matrix_fn(xm)) / (2.0 * h)[..., None, None]
            out += dj[..., :, j]
        return out

    return row_div


@dataclass(frozen=True)
class DiffusionMatrix:
    """Symmetric diffusion matrix ``A`` with its row divergence.

    ``row_div_fn`` evaluates ``(sum_j d_j a_ij)_i``; pass ``None`` to fall back
    to centered finite differences of ``fn``.
    """

    dim: int
    fn: Callable
    row_div_fn: Callable | None = None

    def __call__(self, x) -> np.ndarray:
        x = _batchpoints(x, self.dim)
        a = np.asarray(self.fn(x), dtype=float)
        if a.shape != x.shape[:-1] + (self.dim, self.dim):
            raise CoefficientError(
                f"A returned shape {a.shape}, expected (..., {self.dim}, {self.dim})"
            )
        return a

    def row_divergence(self, x) -> np.ndarray:
        fn = self.row_div_fn
        if fn is None:
            fn = fd_row_divergence(self.fn, self.dim)
        x = _batchpoints(x, self.dim)
        g = np.asarray(fn(x), dtype=float)
        if g.shape != x.shape:
            raise CoefficientError(f"row divergence returned shape {g.shape}")
        return g

    def asymmetry(self, x) -> float:
        a = self(x)
        return float(np.max(np.abs(a - np.swapaxes(a, -1, -2))))


@dataclass(frozen=True)
class Exponents:
    """Declared local integrability exponents ``(p, q, s)``.

    ``p`` governs the matrix entries and ``psi*G``; ``q`` the weight ``psi``;
    ``s`` is the companion exponent tied to ``q`` by ``1/q + 1/s < 2/d``.
    ``math.inf`` encodes essentially bounded.
    """

    p: float
    q: float
    s: float


@dataclass(frozen=True)
class CoefficientSet:
    """Complete coefficient bundle for one equation.

    ``psi_drift`` evaluates ``psi * G`` as a single finite-a.e. field (the
    datum of the density equation); for families with nowhere-vanishing
    inverse weight it is just ``G / w``.
    ``drift_locally_bounded`` is declared metadata used by the condition
    checks (boundedness of a black-box callable is not decidable).
    """

    matrix: DiffusionMatrix
    factor: DispersionFactor
    inv_weight: InverseWeight
    drift: Callable
    psi_drift: Callable
    exponents: Exponents
    family: dict = field(default_factory=dict)
    drift_locally_bounded: bool = True

    def __post_init__(self):
        d = self.dim
        e = self.exponents
        if not e.p > d:
            raise CoefficientError(f"need p > d, got p={e.p}, d={d}")
        if not e.q > d / 2:
            raise CoefficientError(f"need q > d/2, got q={e.q}")
        if not e.s > d / 2:
            raise CoefficientError(f"need s > d/2, got s={e.s}")
        if (0.0 if math.isinf(e.q) else 1.0 / e.q) + (
            0.0 if math.isinf(e.s) else 1.0 / e.s
        ) >= 2.0 / d:
            raise CoefficientError("need 1/q + 1/s < 2/d")

    @property
    def dim(self) -> int:
        return self.matrix.dim

    @property
    def noise_dim(self) -> int:
        return self.factor.m

    def A(self, x) -> np.ndarray:
        return self.matrix(x)

    def G(self, x) -> np.ndarray:
        x = _batchpoints(x, self.dim)
        g = np.asarray(self.drift(x), dtype=float)
        if g.shape != x.shape:
            raise CoefficientError(f"drift returned shape {g.shape}")
        return g

    def psi_G(self, x) -> np.ndarray:
        x = _batchpoints(x, self.dim)
        g = np.asarray(self.psi_drift(x), dtype=float)
        if g.shape != x.shape:
            raise CoefficientError(f"psi*drift returned shape {g.shape}")
        return g

    def sigma_hat(self, x) -> np.ndarray:
        return eval_sigma_hat(self, x)


# -- operations ---------------------------------------------------------------

def eval_sigma_hat(c: CoefficientSet, x) -> np.ndarray:
    """Effective dispersion ``sqrt(w) * sigma`` at points ``x``.

    Rows vanish identically on the degeneracy set because ``sqrt(w) = 0``
    there; no special casing.
    """
    x = _batchpoints(x, c.dim)
    root = c.inv_weight.sqrt(x)
    return root[..., None, None] * c.factor(x)


def _default_probes(c: CoefficientSet, n: int = 64, radius: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(0)
    z = rng.standard_normal((n, c.dim))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / c.dim)
    return z * r[:, None]


def check_factorization(c: CoefficientSet, probes=None, tol: float = 1e-10):
    """Verify ``A = sigma sigma^T`` and symmetry of ``A`` on probe points.

    Returns a report whose ``factorization_gap`` clause holds the worst
    entrywise gap and the offending point.
    """
    from .reporting import DiagnosticReport

    if probes is None:
        probes = _default_probes(c)
    probes = _batchpoints(probes, c.dim)
    a = c.A(probes)
    s = c.factor(probes)
    gap = np.abs(a - np.einsum("...ik,...jk->...ij", s, s))
    worst = np.max(gap, axis=(-1, -2))
    i = int(np.argmax(worst))
    asym = float(np.max(np.abs(a - np.swapaxes(a, -1, -2))))
    rep = DiagnosticReport(
        check="factorization",
        meta={"n_probes": int(probes.shape[0]), "tol": tol},
    )
    rep.add(
        "factorization_gap",
        worst[i] <= tol,
        value=float(worst[i]),
        threshold=tol,
        detail=f"worst at x={np.round(probes[i], 6).tolist()}",
    )
    rep.add("matrix_symmetry", asym <= tol, value=asym, threshold=tol)
    return rep


@dataclass(frozen=True)
class EllipticityEstimate:
    """Monte Carlo Rayleigh-quotient range of ``A`` over a ball."""

    lambda_min: float
    lambda_max: float
    n_samples: int
    seed: int


def estimate_ellipticity(
    c: CoefficientSet, center, radius: float, n_samples: int = 4096, seed: int = 0
) -> EllipticityEstimate:
    """Sampled local ellipticity bounds of ``A`` on a ball.

    Draws ``x`` uniformly in the ball and unit directions ``xi`` uniformly on
    the sphere, and returns the extreme values of ``<A(x) xi, xi>``.  These
    are inner estimates: the true local bounds bracket them.
    """
    center = np.asarray(center, dtype=float)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, c.dim))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    r = radius * rng.random(n_samples) ** (1.0 / c.dim)
    x = center + z * r[:, None]
    xi = rng.standard_normal((n_samples, c.dim))
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    q = np.einsum("ni,nij,nj->n", xi, c.A(x), xi)
    lam, Lam = float(np.min(q)), float(np.max(q))
    if lam <= 0.0:
        raise DegenerateMatrixError(
            f"non-positive Rayleigh quotient {lam:.3e} at a probe point; "
            "the elliptic factor must be strictly elliptic on balls"
        )
    return EllipticityEstimate(lam, Lam, n_samples, seed)


# -- builtin families ---------------------------------------------------------

def _identity_matrix_field(d: int) -> DiffusionMatrix:
    eye = np.eye(d)

    def fn(x):
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    def zero_div(x):
        return np.zeros(x.shape)

    return DiffusionMatrix(d, fn, zero_div)


def _identity_factor(d: int) -> DispersionFactor:
    eye = np.eye(d)

    def fn(x):
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    return DispersionFactor(d, d, fn)


def _unit_inverse_weight() -> InverseWeight:
    return InverseWeight(
        fn=lambda x: np.ones(x.shape[:-1]),
        null_fn=lambda x: np.zeros(x.shape[:-1], dtype=bool),
        representative_tag="unit",
        has_zeros=False,
    )


def _drift_field(drift, d: int):
    """Normalize a drift spec (None | const vector | named | callable).

    Returns ``(fn, locally_bounded, spec)`` where ``spec`` is the
    JSON-serializable form used in family metadata.
    """
    if drift is None:
        return (lambda x: np.zeros(x.shape)), True, None
    if isinstance(drift, str):
        if drift == "cubic_outward":
            def fn(x):
                return x * np.sum(x * x, axis=-1, keepdims=True)

            return fn, True, "cubic_outward"
        raise CoefficientError(f"unknown named drift {drift!r}")
    if callable(drift):
        return drift, True, "<callable>"
    g = np.asarray(drift, dtype=float)
    if g.shape != (d,):
        raise CoefficientError(f"constant drift must have shape ({d},)")

    def fn(x):
        return np.broadcast_to(g, x.shape).copy()

    return fn, True, g.tolist()


def _companion_s(d: int, q: float) -> float:
    # 1/s = (2/d - 1/q)/2 sits strictly inside the admissible window.
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    return 2.0 / (2.0 / d - inv_q)


def _brownian(d: int, drift=None) -> CoefficientSet:
    g, bounded, spec = _drift_field(drift, d)
    q = math.inf
    return CoefficientSet(
        matrix=_identity_matrix_field(d),
        factor=_identity_factor(d),
        inv_weight=_unit_inverse_weight(),
        drift=g,
        psi_drift=g,
        exponents=Exponents(p=2 * d + 2, q=q, s=_companion_s(d, q)),
        family={"name": "brownian", "dim": d, "params": {"drift": spec}},
        drift_locally_bounded=bounded,
    )


def _ornstein_uhlenbeck(d: int, rate: float = 1.0) -> CoefficientSet:
    if rate <= 0:
        raise CoefficientError("mean-reversion rate must be positive")

    def g(x):
        return -rate * x

    q = math.inf
    return CoefficientSet(
        matrix=_identity_matrix_field(d),
        factor=_identity_factor(d),
        inv_weight=_unit_inverse_weight(),
        drift=g,
        psi_drift=g,
        exponents=Exponents(p=2 * d + 2, q=q, s=_companion_s(d, q)),
        family={"name": "ornstein_uhlenbeck", "dim": d, "params": {"rate": rate}},
    )


def _radial_inverse_weight(d, alpha, gamma, phi) -> InverseWeight:
    if phi is None:
        phi_fn = lambda x: np.ones(x.shape[:-1])
    else:
        phi_fn = phi

    if gamma is None:
        def fn(x):
            r2 = np.sum(x * x, axis=-1)
            return r2 ** (alpha / 2.0) / phi_fn(x)

        def null_fn(x):
            return np.all(x == 0.0, axis=-1)

        return InverseWeight(fn, null_fn, "zero_at_origin", has_zeros=True)

    if gamma <= 0:
        raise CoefficientError("representative value at the origin must be positive")

    def fn(x):
        r2 = np.sum(x * x, axis=-1)
        v = r2 ** (alpha / 2.0)
        v = np.where(r2 == 0.0, gamma * gamma, v)
        return v / phi_fn(x)

    def null_fn(x):
        return np.zeros(x.shape[:-1], dtype=bool)

    return InverseWeight(fn, null_fn, f"origin_value={gamma:g}", has_zeros=False)


def _radial_degenerate(
    d: int, alpha: float, gamma: float | None = None, drift=None, phi=None,
    q: float | None = None,
) -> CoefficientSet:
    """Power-law degenerate weight: ``w = |x|^alpha / phi(x)``.

    Needs ``0 < alpha < 2`` so the weight ``psi`` stays locally integrable to
    some power above ``d/2``.  ``gamma`` selects the version with value
    ``gamma^2/phi(0)`` at the origin (empty degeneracy set); the default
    version vanishes exactly at the origin.
    """
    if not 0.0 < alpha < 2.0:
        raise CoefficientError(
            f"alpha={alpha} out of admissible range (0, 2) for a locally "
            "integrable weight with q > d/2"
        )
    g, bounded, spec = _drift_field(drift, d)
    iw = _radial_inverse_weight(d, alpha, gamma, phi)

    if q is None:
        q_low, q_high = 2.0 * d + 2.0, d / alpha
        if q_high > q_low:
            q = min(q_low + 2.0, 0.5 * (q_low + q_high))
        else:
            q = 0.5 * (d / 2.0 + q_high)

    def psi_g(x):
        w = iw(x)
        gv = g(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = gv / w[..., None]
        return np.where(np.isfinite(out), out, 0.0) if np.any(w == 0) else out

    if drift is None:
        psi_g = lambda x: np.zeros(x.shape)

    params = {"alpha": alpha, "gamma": gamma, "drift": spec}
    return CoefficientSet(
        matrix=_identity_matrix_field(d),
        factor=_identity_factor(d),
        inv_weight=iw,
        drift=g,
        psi_drift=psi_g,
        exponents=Exponents(p=2 * d + 2, q=q, s=_companion_s(d, q)),
        family={"name": "radial_degenerate", "dim": d, "params": params},
        drift_locally_bounded=bounded,
    )


def _piecewise_weight(d: int, cells=None, background: float = 1.0) -> CoefficientSet:
    """Piecewise-constant ``sqrt(w)``: value ``v_i`` on box cell i, else background.

    Cell values must be positive: a zero on a set of positive measure would
    make the weight non-integrable there.
    """
    cells = list(cells or [])
    parsed = []
    for cell in cells:
        b = np.asarray(cell["bounds"], dtype=float)
        v = float(cell["value"])
        if b.shape != (d, 2):
            raise CoefficientError(f"cell bounds must have shape ({d}, 2)")
        if v <= 0.0:
            raise CoefficientError(
                "cell value must be positive so the weight stays locally integrable"
            )
        parsed.append((b, v))
    if background <= 0.0:
        raise CoefficientError("background value must be positive")

    def root_fn(x):
        out = np.full(x.shape[:-1], float(background))
        for b, v in parsed:
            inside = np.all((x >= b[:, 0]) & (x < b[:, 1]), axis=-1)
            out = np.where(inside, v, out)
        return out

    iw = InverseWeight(
        fn=lambda x: root_fn(x) ** 2,
        null_fn=lambda x: np.zeros(x.shape[:-1], dtype=bool),
        representative_tag="piecewise_cells",
        has_zeros=False,
    )

    def psi_g(x):
        return np.zeros(x.shape)

    q = math.inf
    spec_cells = [
        {"bounds": b.tolist(), "value": v} for b, v in parsed
    ]
    return CoefficientSet(
        matrix=_identity_matrix_field(d),
        factor=_identity_factor(d),
        inv_weight=iw,
        drift=lambda x: np.zeros(x.shape),
        psi_drift=psi_g,
        exponents=Exponents(p=2 * d + 2, q=q, s=_companion_s(d, q)),
        family={
            "name": "piecewise_weight",
            "dim": d,
            "params": {"cells": spec_cells, "background": background},
        },
    )


def _hyperplane_jump(
    d: int,
    weight_left: float = 0.5,
    weight_right: float = 2.0,
    drift_left=None,
    drift_right=None,
) -> CoefficientSet:
    """Weight and drift jump across the hyperplane ``{x_1 = 0}``.

    ``sqrt(w)`` takes the left value for ``x_1 < 0`` and the right value for
    ``x_1 >= 0``; the constant drift vectors jump the same way.  The elliptic
    factor stays the identity (the matrix must remain Sobolev-regular, so the
    discontinuity lives entirely in the weight and drift).
    """
    if weight_left <= 0 or weight_right <= 0:
        raise CoefficientError("jump weights must be positive")
    gl = np.zeros(d) if drift_left is None else np.asarray(drift_left, dtype=float)
    gr = np.zeros(d) if drift_right is None else np.asarray(drift_right, dtype=float)
    if gl.shape != (d,) or gr.shape != (d,):
        raise CoefficientError(f"jump drifts must have shape ({d},)")

    def side(x):
        return x[..., 0] >= 0.0

    iw = InverseWeight(
        fn=lambda x: np.where(side(x), weight_right**2, weight_left**2),
        null_fn=lambda x: np.zeros(x.shape[:-1], dtype=bool),
        representative_tag="hyperplane_sides",
        has_zeros=False,
    )

    def g(x):
        return np.where(side(x)[..., None], gr, gl)

    def psi_g(x):
        return np.where(
            side(x)[..., None], gr / weight_right**2, gl / weight_left**2
        )

    q = math.inf
    return CoefficientSet(
        matrix=_identity_matrix_field(d),
        factor=_identity_factor(d),
        inv_weight=iw,
        drift=g,
        psi_drift=psi_g,
        exponents=Exponents(p=2 * d + 2, q=q, s=_companion_s(d, q)),
        family={
            "name": "hyperplane_jump",
            "dim": d,
            "params": {
                "weight_left": weight_left,
                "weight_right": weight_right,
                "drift_left": gl.tolist(),
                "drift_right": gr.tolist(),
            },
        },
    )


_FAMILIES = {
    "brownian": _brownian,
    "ornstein_uhlenbeck": _ornstein_uhlenbeck,
    "radial_degenerate": _radial_degenerate,
    "piecewise_weight": _piecewise_weight,
    "hyperplane_jump": _hyperplane_jump,
}


def builtin_family(name: str, dim: int = 2, **params) -> CoefficientSet:
    """Construct a builtin coefficient family by name.

    Known names: ``brownian``, ``ornstein_uhlenbeck``, ``radial_degenerate``,
    ``piecewise_weight``, ``hyperplane_jump``.
    """
    try:
        builder = _FAMILIES[name]
    except KeyError:
        raise CoefficientError(
            f"unknown family {name!r}; known: {sorted(_FAMILIES)}"
        ) from None
    try:
        return builder(dim, **params)
    except TypeError as exc:
        raise CoefficientError(f"bad parameters for family {name!r}: {exc}") from None
