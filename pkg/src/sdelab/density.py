"""Stationary reference density of the weighted generator.

Solves the conservation form ``div( (1/2) A grad(rho) + c rho ) = 0`` with
``c = (1/2) (row-div A) - psi G``, natural (zero-flux) boundary conditions and
a point normalization.  The weight itself never enters the solve: ``psi G`` is
taken as a single datum, which keeps the system finite even where the inverse
weight vanishes.

Discretization: vertex-centered finite volumes on a box grid.  Each dual face
carries a Scharfetter-Gummel two-point flux with harmonically averaged
diagonal diffusion and the advective coefficient evaluated at the face
midpoint, so piecewise coefficients with interfaces on grid planes are seen
one-sidedly by every face.  The resulting matrix has positive off-diagonal
entries, nonpositive diagonal and exactly zero column sums, so it is the
transpose of a Markov generator: existence, uniqueness up to scale and strict
positivity of the discrete solution follow structurally.  The flux is exact
on each face for densities of the form ``exp(linear potential)``, so constant
and Gaussian kernels are reproduced at machine precision.

The solved density induces the drift split ``G = beta + B``: ``beta`` is the
symmetric part determined by ``(rho, A, psi)`` and ``B`` the leftover, whose
weighted flux ``rho psi B`` must be weakly divergence free.  Audits measure
weak-form defects against smooth compactly supported test functions; the
divergence audit pairs the scheme's own face fluxes with analytic test
gradients, which is zero to rounding whenever the discrete kernel is exact
and decays at the scheme's order otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientSet
from .grids import BoxGrid, GridField, default_bump_dictionary
from .reporting import DiagnosticReport


class DensityError(RuntimeError):
    """Raised when the discrete density problem is ill-posed or leaves the
    guaranteed regime (sign change, singularity beyond the one-dimensional
    kernel, unsupported coefficient structure)."""


def _bernoulli(t: np.ndarray) -> np.ndarray:
    """B(t) = t / (e^t - 1), stable near 0 and for large |t|."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 1e-5
    ts = t[small]
    out[small] = 1.0 - ts / 2.0 + ts * ts / 12.0
    tl = t[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.where(tl > 700.0, 0.0, tl / np.expm1(tl))
    return out


def patch_nonfinite(values: np.ndarray, lattice_dim: int, what: str) -> np.ndarray:
    """Replace non-finite entries by the mean of finite axis neighbours.

    Data defined only almost everywhere (weights, ``psi G``) can be singular
    on isolated lattice points; those get the face-averaged value.  The first
    ``lattice_dim`` axes are treated as the lattice.  Raises if whole regions
    are non-finite.
    """
    v = np.array(values, dtype=float)
    for _ in range(3):
        bad = ~np.isfinite(v)
        if not bad.any():
            return v
        acc = np.zeros_like(v)
        cnt = np.zeros(v.shape, dtype=float)
        for k in range(lattice_dim):
            for shift in (1, -1):
                nb = np.roll(v, shift, axis=k)
                edge = [slice(None)] * v.ndim
                edge[k] = 0 if shift == 1 else -1
                nb[tuple(edge)] = np.nan
                good = np.isfinite(nb) & bad
                acc[good] += nb[good]
                cnt[good] += 1.0
        fix = bad & (cnt > 0)
        v[fix] = acc[fix] / cnt[fix]
    if not np.isfinite(v).all():
        raise DensityError(f"{what} is non-finite on clustered lattice points")
    return v


def _diagonal_entries(c: CoefficientSet, pts: np.ndarray, dim: int) -> np.ndarray:
    """Values of diag(A), verifying the matrix is diagonal at the points."""
    a = c.A(pts)
    diag = np.einsum("...kk->...k", a)
    off = a - (diag[..., None] * np.eye(dim))
    scale = max(1.0, float(np.max(np.abs(diag))))
    if np.max(np.abs(off)) > 1e-12 * scale:
        raise DensityError(
            "the box solver supports diagonal diffusion matrices only; "
            f"found off-diagonal entries up to {np.max(np.abs(off)):.3e}"
        )
    if np.min(diag) <= 0:
        raise DensityError("diagonal diffusion entries must be positive")
    return diag


def advective_coefficient(
    c: CoefficientSet, pts: np.ndarray, lattice_dim: int
) -> np.ndarray:
    """Values of ``c = (1/2) row-div A - psi G``, patched where singular."""
    half_div = 0.5 * c.matrix.row_divergence(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_g = c.psi_G(pts)
    psi_g = patch_nonfinite(psi_g, lattice_dim, "psi * G")
    return half_div - psi_g


def psi_weights(c: CoefficientSet, grid: BoxGrid) -> np.ndarray:
    """Node values of the weight ``psi = 1 / w``, face-averaged on the null set."""
    w = c.inv_weight(grid.points())
    with np.errstate(divide="ignore"):
        psi = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), np.inf)
    return patch_nonfinite(psi, grid.dim, "the weight")


def _axis_weight_vectors(grid: BoxGrid) -> list:
    out = []
    for b, m in zip(grid.bounds, grid.n):
        h = (b[1] - b[0]) / (m - 1)
        w = np.full(m, h)
        w[0] = w[-1] = 0.5 * h
        out.append(w)
    return out


class _FaceScheme:
    """Per-axis Scharfetter-Gummel face coefficients for a coefficient set.

    For the faces along axis k, ``w_left`` and ``w_right`` give the two-point
    flux ``J = w_right rho_R - w_left rho_L`` per unit dual-face area, and
    ``area`` the dual-face areas (products of transverse axis weights).
    """

    def __init__(self, c: CoefficientSet, grid: BoxGrid):
        self.grid = grid
        self.w_left = []
        self.w_right = []
        self.area = []
        node_diag = _diagonal_entries(c, grid.points(), grid.dim)
        axis_w = _axis_weight_vectors(grid)
        h = grid.spacing
        d = grid.dim
        for k in range(d):
            sl_l = [slice(None)] * d
            sl_r = [slice(None)] * d
            sl_l[k] = slice(0, -1)
            sl_r[k] = slice(1, None)
            a_l = 0.5 * node_diag[tuple(sl_l) + (k,)]
            a_r = 0.5 * node_diag[tuple(sl_r) + (k,)]
            d_face = 2.0 * a_l * a_r / (a_l + a_r)

            mid = grid.points()[tuple(sl_l)].copy()
            mid[..., k] += 0.5 * h[k]
            v_face = advective_coefficient(c, mid, d)[..., k]

            lam = v_face * h[k] / d_face
            self.w_right.append(d_face / h[k] * _bernoulli(-lam))
            self.w_left.append(d_face / h[k] * _bernoulli(lam))

            area = np.ones(())
            for j in range(d):
                vec = np.ones(grid.shape[j] - 1) if j == k else axis_w[j]
                area = np.multiply.outer(area, vec)
            self.area.append(area)

    def face_fluxes(self, rho: np.ndarray) -> list:
        """Per-axis SG fluxes of a node field, per unit area."""
        out = []
        d = self.grid.dim
        for k in range(d):
            sl_l = [slice(None)] * d
            sl_r = [slice(None)] * d
            sl_l[k] = slice(0, -1)
            sl_r[k] = slice(1, None)
            out.append(
                self.w_right[k] * rho[tuple(sl_r)] - self.w_left[k] * rho[tuple(sl_l)]
            )
        return out

    def node_flux_field(self, rho: np.ndarray) -> np.ndarray:
        """Flux vector field at nodes, averaging the adjacent face fluxes.

        Outer boundary faces carry zero flux by the boundary condition, so
        boundary nodes average the single interior face with zero.
        """
        d = self.grid.dim
        field = np.zeros(self.grid.shape + (d,))
        for k, flux in enumerate(self.face_fluxes(rho)):
            up = [slice(None)] * d
            lo = [slice(None)] * d
            up[k] = slice(1, None)
            lo[k] = slice(0, -1)
            field[tuple(up) + (k,)] += 0.5 * flux
            field[tuple(lo) + (k,)] += 0.5 * flux
        return field

    def assemble(self) -> sp.csr_matrix:
        """Finite-volume matrix with ``(K rho)_i ~ vol_i div(F(rho))_i``.

        Exactly zero column sums (discrete conservation) and the sign
        structure of a transposed Markov generator.
        """
        grid = self.grid
        d = grid.dim
        shape = grid.shape
        n_nodes = int(np.prod(shape))
        flat = np.arange(n_nodes).reshape(shape)
        rows, cols, data = [], [], []
        for k in range(d):
            sl_l = [slice(None)] * d
            sl_r = [slice(None)] * d
            sl_l[k] = slice(0, -1)
            sl_r[k] = slice(1, None)
            left = flat[tuple(sl_l)].ravel()
            right = flat[tuple(sl_r)].ravel()
            fr = (self.area[k] * self.w_right[k]).ravel()
            fl = (self.area[k] * self.w_left[k]).ravel()
            # flux J = w_r rho_R - w_l rho_L enters row L with +, row R with -
            rows += [left, left, right, right]
            cols += [right, left, left, right]
            data += [fr, -fl, fl, -fr]
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_nodes, n_nodes),
        ).tocsr()


@dataclass
class DensityField:
    """Solved stationary density on a grid.

    ``rho`` is strictly positive; ``grad_rho`` holds centered finite
    differences.  ``normalization`` is ``"anchor"`` (value 1 at
    ``anchor_point``) or ``"mass"`` (unit weighted mass).  ``residual_norm``
    is the weak-form defect of the scheme's flux field against the builtin
    test dictionary, scaled by the test gradient norm (a discrete dual norm);
    it is zero to rounding whenever the discrete solution is an exact kernel
    element (constant and Gaussian cases).
    """

    rho: GridField
    grad_rho: GridField
    anchor_point: np.ndarray
    normalization: str
    residual_norm: float
    meta: dict

    @property
    def grid(self) -> BoxGrid:
        return self.rho.grid


def _nearest_node(grid: BoxGrid, x: np.ndarray) -> tuple:
    return tuple(
        int(np.argmin(np.abs(ax - x[k]))) for k, ax in enumerate(grid.axes())
    )


def _require_interior_support(grid: BoxGrid, bump) -> None:
    sb = bump.support_bounds()
    lo, hi = sb[:, 0], sb[:, 1]
    for k, (a, b) in enumerate(grid.bounds):
        if lo[k] <= a or hi[k] >= b:
            raise DensityError(
                f"test function support [{lo[k]:.3g}, {hi[k]:.3g}] touches the "
                f"box boundary along axis {k}"
            )


def weak_defect(grid: BoxGrid, flux_values: np.ndarray, bump) -> tuple:
    """(integral of <flux, grad(bump)>, L2 and sup norms of grad(bump))."""
    pts = grid.points()
    gu = bump.gradient(pts)
    w = grid.trapezoid_weights()
    defect = float(np.sum(w * np.sum(flux_values * gu, axis=-1)))
    grad_l2 = float(np.sqrt(np.sum(w * np.sum(gu * gu, axis=-1))))
    grad_sup = float(np.max(np.abs(gu)))
    return defect, grad_l2, grad_sup


def solve_density(
    c: CoefficientSet,
    bounds,
    n: int,
    normalization: str = "anchor",
    anchor=None,
) -> DensityField:
    """Solve the stationary density problem on a box grid.

    ``normalization="anchor"`` fixes value 1 at the node nearest ``anchor``
    (box center by default); ``"mass"`` rescales to unit weighted mass
    afterwards.  Raises :class:`DensityError` if the anchored system is
    singular (kernel dimension above one) or the solution changes sign
    (enlarge the box or refine the grid).
    """
    grid = BoxGrid(bounds, n)
    if grid.dim != c.dim:
        raise DensityError("bounds dimension does not match the coefficients")
    if normalization not in ("anchor", "mass"):
        raise DensityError(f"unknown normalization {normalization!r}")

    scheme = _FaceScheme(c, grid)
    K = scheme.assemble()

    anchor_x = grid.center if anchor is None else np.asarray(anchor, dtype=float)
    anchor_idx = _nearest_node(grid, anchor_x)
    anchor_flat = int(np.ravel_multi_index(anchor_idx, grid.shape))
    anchor_point = np.array([grid.axes()[k][anchor_idx[k]] for k in range(grid.dim)])

    n_nodes = K.shape[0]
    A_sys = K.tolil()
    A_sys.rows[anchor_flat] = [anchor_flat]
    A_sys.data[anchor_flat] = [1.0]
    rhs = np.zeros(n_nodes)
    rhs[anchor_flat] = 1.0
    sol = spla.spsolve(A_sys.tocsr(), rhs)
    if not np.all(np.isfinite(sol)):
        raise DensityError(
            "anchored system is singular: the flux matrix kernel has dimension "
            "above one on this grid"
        )

    rho = sol.reshape(grid.shape)
    if np.min(rho) <= 0.0:
        raise DensityError(
            f"density changes sign on the grid (min {np.min(rho):.3e}); "
            "enlarge the box or refine the grid"
        )

    if normalization == "mass":
        psi = psi_weights(c, grid)
        mass = float(np.sum(grid.trapezoid_weights() * rho * psi))
        rho = rho / mass

    rho_field = GridField(grid, rho)
    grad = rho_field.gradient()

    flux = scheme.node_flux_field(rho)
    defect = 0.0
    for bump in default_bump_dictionary(grid):
        val, grad_l2, _ = weak_defect(grid, flux, bump)
        defect = max(defect, abs(val) / grad_l2)

    return DensityField(
        rho=rho_field,
        grad_rho=grad,
        anchor_point=anchor_point,
        normalization=normalization,
        residual_norm=defect,
        meta={
            "bounds": [list(b) for b in grid.bounds],
            "n": list(grid.n),
            "family": c.family,
            "anchor_index": list(anchor_idx),
        },
    )


@dataclass
class DriftDecomposition:
    """Split ``G = beta + B`` induced by a solved density.

    ``beta = (row-div A) w / 2 + (A grad rho) w / (2 rho)`` with ``w`` the
    inverse weight; on the degeneracy set (``null_mask``) it is set to 0 and
    flagged.  ``rho_psi_B`` is the weighted flux of the leftover part through
    the identity
    ``rho psi B = rho (psi G) - rho (row-div A)/2 - (A grad rho)/2``,
    finite everywhere and equal to ``rho * psi * B`` wherever the weight is
    finite.
    """

    beta: GridField
    B: GridField
    rho_psi_B: GridField
    null_mask: np.ndarray


def compute_beta(c: CoefficientSet, dens: DensityField) -> DriftDecomposition:
    grid = dens.grid
    pts = grid.points()
    w = c.inv_weight(pts)
    null = c.inv_weight.null_set_indicator(pts)
    rho = dens.rho.values
    grad_rho = dens.grad_rho.values
    diag_a = _diagonal_entries(c, pts, grid.dim)
    row_div = c.matrix.row_divergence(pts)
    a_grad = diag_a * grad_rho

    beta = 0.5 * row_div * w[..., None] + a_grad * (w / (2.0 * rho))[..., None]
    beta = np.where(null[..., None], 0.0, beta)
    b_vec = c.G(pts) - beta

    with np.errstate(divide="ignore", invalid="ignore"):
        psi_g = c.psi_G(pts)
    psi_g = patch_nonfinite(psi_g, grid.dim, "psi * G")
    rho_psi_b = rho[..., None] * psi_g - 0.5 * rho[..., None] * row_div - 0.5 * a_grad

    return DriftDecomposition(
        beta=GridField(grid, beta),
        B=GridField(grid, b_vec),
        rho_psi_B=GridField(grid, rho_psi_b),
        null_mask=null,
    )


def verify_preinvariance(
    c: CoefficientSet,
    dens: DensityField,
    test_functions=None,
    tol: float = 1e-4,
) -> DiagnosticReport:
    """Stationarity audit: the weighted measure kills the generator.

    For each smooth compactly supported ``f`` the quadrature of
    ``(1/2) rho tr(A Hess f) + rho <psi G, grad f>`` over the box must vanish
    up to ``tol * sup|Hess f|``.  The inverse weight cancels against the
    weight in this form, so degenerate nodes need no special handling.  The
    report meta tracks the split of each residual into the symmetric part
    (stationary flux of ``rho`` paired with the test gradient) and the
    leftover-drift part (the nodal ``rho_psi_B`` field); the two parts sum to
    the residual exactly.
    """
    grid = dens.grid
    pts = grid.points()
    rho = dens.rho.values
    diag_a = _diagonal_entries(c, pts, grid.dim)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_g = c.psi_G(pts)
    psi_g = patch_nonfinite(psi_g, grid.dim, "psi * G")
    row_div = c.matrix.row_divergence(pts)
    sym_flux = 0.5 * rho[..., None] * row_div + 0.5 * diag_a * dens.grad_rho.values
    quad_w = grid.trapezoid_weights()
    bumps = test_functions if test_functions is not None else default_bump_dictionary(grid)

    rep = DiagnosticReport(
        check="preinvariance",
        meta={"tol": tol, "n": list(grid.n), "family": c.family,
              "symmetric_part": [], "leftover_part": []},
    )
    for i, f in enumerate(bumps):
        _require_interior_support(grid, f)
        grad_f = f.gradient(pts)
        hess = f.hessian(pts)
        tr_term = 0.5 * rho * np.sum(diag_a * np.einsum("...kk->...k", hess), axis=-1)
        drift_term = rho * np.sum(psi_g * grad_f, axis=-1)
        integral = float(np.sum(quad_w * (tr_term + drift_term)))
        scale = float(np.max(np.abs(hess)))
        sym = float(np.sum(quad_w * (tr_term + np.sum(sym_flux * grad_f, axis=-1))))
        rep.meta["symmetric_part"].append(sym)
        rep.meta["leftover_part"].append(integral - sym)
        rep.add(
            f"stationarity_bump_{i}",
            abs(integral) <= tol * scale,
            value=abs(integral),
            threshold=tol * scale,
            detail=f"center={np.asarray(f.center).tolist()}",
        )
    return rep


def verify_divergence_free(
    c: CoefficientSet,
    dens: DensityField,
    dec: DriftDecomposition | None = None,
    test_functions=None,
    tol: float = 1e-3,
) -> DiagnosticReport:
    """Audit that the weighted leftover flux ``rho psi B`` is divergence free.

    The headline value per test function pairs the scheme's face-flux
    representation of ``rho psi B`` (minus the stationary flux of ``rho``)
    with the analytic test gradient; it vanishes to rounding whenever the
    discrete density is an exact kernel element, and decays at the scheme's
    order otherwise.  Pass threshold: ``tol * sup|grad u|``.  The defect of
    the nodal ``rho_psi_B`` field, limited by the accuracy of the centered
    density gradient, is tracked in meta as ``field_defect``.
    """
    if dec is None:
        dec = compute_beta(c, dens)
    grid = dens.grid
    scheme = _FaceScheme(c, grid)
    flux = -scheme.node_flux_field(dens.rho.values)
    bumps = test_functions if test_functions is not None else default_bump_dictionary(grid)
    rep = DiagnosticReport(
        check="divergence_free",
        meta={"tol": tol, "n": list(grid.n), "family": c.family, "field_defect": []},
    )
    for i, u in enumerate(bumps):
        _require_interior_support(grid, u)
        val, _, grad_sup = weak_defect(grid, flux, u)
        nodal, _, _ = weak_defect(grid, dec.rho_psi_B.values, u)
        rep.meta["field_defect"].append(nodal)
        rep.add(
            f"weighted_flux_bump_{i}",
            abs(val) <= tol * grad_sup,
            value=abs(val),
            threshold=tol * grad_sup,
            detail=f"center={np.asarray(u.center).tolist()}",
        )
    return rep
