"""Checkable sufficient conditions for non-explosion and uniqueness-in-law.

Three groups of checks:

* a pointwise dissipativity margin against a log-modulated quadratic growth
  bound (controls explosion),
* declared-exponent arithmetic: the regularity regime that the uniqueness
  results need, and the admissible integrability window for power-law
  degenerate weights,
* routing of the degeneracy-occupation requirement: either the inverse weight
  never vanishes (nothing to check on paths) or a path-integrability probe is
  required.

All checks operate on a :class:`~sdelab.coefficients.CoefficientSet`; the
pointwise ones evaluate coefficients only off the degeneracy set, where the
inverse weight is available as a finite positive number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .grids import BoxGrid
from .reporting import DiagnosticReport


class ConditionError(ValueError):
    """Raised for invalid inputs to a condition check."""


class NullSetPointError(ConditionError):
    """Raised when a pointwise almost-everywhere check is probed on the degeneracy set."""


@dataclass(frozen=True)
class ConditionMargin:
    """Pointwise dissipativity record: ``margin = rhs - lhs >= 0`` means satisfied."""

    point: tuple
    lhs: float
    rhs: float
    margin: float


@dataclass(frozen=True)
class ExponentWindow:
    """Admissible weight-integrability exponents for a power-law degeneracy.

    ``(q_low, q_high)`` is the open interval of exponents ``q`` compatible
    with both the uniqueness regime (``q > q_low``) and local integrability of
    the weight (``q < q_high``); ``q_high = inf`` when the degeneracy exponent
    is zero.
    """

    q_low: float
    q_high: float

    @property
    def nonempty(self) -> bool:
        return self.q_high > self.q_low

    def contains(self, q: float) -> bool:
        return self.q_low < q < self.q_high

    def companion_ok(self, q: float, s: float, d: int) -> bool:
        """Whether ``(q, s)`` satisfies ``s > d/2`` and ``1/q + 1/s < 2/d``."""
        inv_q = 0.0 if math.isinf(q) else 1.0 / q
        inv_s = 0.0 if math.isinf(s) else 1.0 / s
        return s > d / 2.0 and inv_q + inv_s < 2.0 / d


def _growth_lhs(c: CoefficientSet, x: np.ndarray) -> np.ndarray:
    """Vectorized left side of the dissipativity bound (finite off the null set)."""
    a = c.A(x)
    g = c.G(x)
    w = c.inv_weight(x)
    r2 = np.sum(x * x, axis=-1)
    ax_x = np.einsum("...ij,...j,...i->...", a, x, x)
    tr = np.trace(a, axis1=-2, axis2=-1)
    return -ax_x * w / (r2 + 1.0) + 0.5 * tr * w + np.sum(g * x, axis=-1)


def _growth_rhs(x: np.ndarray, bound_constant: float) -> np.ndarray:
    r2 = np.sum(x * x, axis=-1)
    return bound_constant * (r2 + 1.0) * (np.log(r2 + 1.0) + 1.0)


def growth_margin(c: CoefficientSet, x, bound_constant: float) -> ConditionMargin:
    """Dissipativity margin at a single point for a given growth constant.

    The bound compares the weighted quadratic-form and trace terms plus the
    radial drift component against ``M (|x|^2+1)(ln(|x|^2+1)+1)``.  It is an
    almost-everywhere statement, so probing a degeneracy-set point is a usage
    error, reported distinctly.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (c.dim,):
        raise ConditionError(f"expected a single point of shape ({c.dim},)")
    if bool(c.inv_weight.null_set_indicator(x)):
        raise NullSetPointError(
            "the growth bound is an almost-everywhere statement; "
            f"x={x.tolist()} lies in the degeneracy set, probe off it"
        )
    lhs = float(_growth_lhs(c, x[None])[0])
    rhs = float(_growth_rhs(x[None], bound_constant)[0])
    return ConditionMargin(point=tuple(x), lhs=lhs, rhs=rhs, margin=rhs - lhs)


def min_M_on_grid(c: CoefficientSet, bounds, resolution: int) -> float:
    """Smallest nonnegative growth constant making the margin >= 0 on a grid.

    Evaluates the dissipativity quotient on every non-degenerate node of a
    vertex grid over ``bounds`` and returns ``max(0, max lhs/denominator)``.
    Degeneracy-set nodes are skipped (the bound is almost-everywhere).
    """
    grid = BoxGrid(bounds, resolution)
    if grid.dim != c.dim:
        raise ConditionError("bounds dimension does not match the coefficients")
    x = grid.flat_points()
    keep = ~c.inv_weight.null_set_indicator(x)
    x = x[keep]
    if x.size == 0:
        raise ConditionError("all grid nodes lie in the degeneracy set")
    lhs = _growth_lhs(c, x)
    denom = _growth_rhs(x, 1.0)
    return float(max(0.0, np.max(lhs / denom)))


def exponent_window(d: int, alpha: float) -> ExponentWindow:
    """Admissible ``q`` interval for a degeneracy exponent ``alpha`` in dimension d.

    The lower end ``2d+2`` comes from the uniqueness regime, the upper end
    ``d/alpha`` from local integrability of the weight to the power ``q``;
    the window is nonempty exactly when ``alpha (2d+2) < d``.
    """
    if d < 2:
        raise ConditionError("dimension must be at least 2")
    if alpha < 0:
        raise ConditionError("degeneracy exponent must be nonnegative")
    q_low = 2.0 * d + 2.0
    q_high = math.inf if alpha == 0.0 else d / alpha
    return ExponentWindow(q_low=q_low, q_high=q_high)


def a4prime_check(c: CoefficientSet) -> DiagnosticReport:
    """Audit the declared exponents against the uniqueness regime.

    Clauses: ``p = 2d+2`` exactly; ``q > 2d+2``; nonempty companion window for
    ``s`` (reported as the interval ``(d/2, (2/d - 1/q)^{-1})``); declared
    local boundedness of the drift.
    """
    d = c.dim
    e = c.exponents
    rep = DiagnosticReport(
        check="uniqueness_regime_exponents",
        meta={"dim": d, "p": e.p, "q": e.q, "s": e.s, "family": c.family},
    )
    p_target = 2.0 * d + 2.0
    rep.add(
        "p_matches_regime",
        e.p == p_target,
        value=e.p,
        threshold=p_target,
        detail=f"need p = 2d+2 = {p_target:g}",
    )
    rep.add(
        "q_above_regime_floor",
        e.q > p_target,
        value=(math.inf if math.isinf(e.q) else e.q),
        threshold=p_target,
        detail="need q > 2d+2",
    )
    inv_q = 0.0 if math.isinf(e.q) else 1.0 / e.q
    s_lo = d / 2.0
    s_hi = math.inf if 2.0 / d - inv_q <= 0 else 1.0 / (2.0 / d - inv_q)
    # an admissible companion s exists iff 1/q < 2/d (s = inf always works then)
    rep.add(
        "companion_exponent_window_nonempty",
        inv_q < 2.0 / d,
        value=s_hi,
        threshold=s_lo,
        detail=(
            "any s > d/2 works (q essentially infinite)"
            if math.isinf(e.q)
            else f"window ({s_lo:g}, {s_hi:g})"
        ),
    )
    rep.add(
        "declared_s_admissible",
        ExponentWindow(0.0, math.inf).companion_ok(e.q, e.s, d),
        value=(math.inf if math.isinf(e.s) else e.s),
        detail="need s > d/2 and 1/q + 1/s < 2/d",
    )
    rep.add(
        "drift_locally_bounded",
        c.drift_locally_bounded,
        detail="declared metadata",
    )
    return rep


def occupation_condition_route(c: CoefficientSet) -> str:
    """How to certify that paths spend zero time on the degeneracy set.

    ``strictly_positive``: the chosen version of the inverse weight never
    vanishes, so the requirement holds trivially.  ``integrability_probe``:
    the version has zeros, so a path-functional probe (expected weighted
    occupation of bounded sets stays finite) is required.
    """
    return "integrability_probe" if c.inv_weight.has_zeros else "strictly_positive"
