"""Euler-Maruyama path ensembles with exit absorption and occupation tallies.

The chain is ``X_{k+1} = X_k + sigma_hat(X_k) sqrt(dt) xi_k + G(X_k) dt`` with
iid standard normal ``xi_k``; on the degeneracy set the dispersion rows vanish
so the noise switches off there exactly.  Paths are absorbed (frozen at the
crossing state) once they leave the ball of radius ``r_exit``, and frozen at
their last finite state if an update produces a non-finite value.

Per-path tallies track discrete occupation of the degeneracy set
(``dt * #{k < n_steps : w(X_k) = 0}``, left-endpoint rule) and of its
``eps``-neighbourhoods in weight value (``w(X_k) < eps``).

Paths are partitioned into fixed-size blocks; each block's states are a pure
function of the master seed and the block's path indices, so any worker count
produces bitwise identical ensembles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .rng import block_normals, path_key

_BLOCK = 4096  # fixed path-block size; results must not depend on it


class SimulationError(ValueError):
    """Raised for invalid simulation configuration or inputs."""


@dataclass(frozen=True)
class SimConfig:
    """Ensemble configuration.

    ``t_final`` must be an integer multiple of ``dt`` (within rounding).
    ``r_exit = None`` disables exit absorption.  ``near_degeneracy_eps`` sets
    the weight threshold of the near-degeneracy tally.
    """

    dt: float
    t_final: float
    n_paths: int
    master_seed: int
    scheme: str = "euler_maruyama"
    r_exit: float | None = None
    near_degeneracy_eps: float = 0.05

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0:
            raise SimulationError("dt and t_final must be positive")
        if self.n_paths < 1:
            raise SimulationError("need at least one path")
        if self.scheme != "euler_maruyama":
            raise SimulationError(
                f"unknown scheme {self.scheme!r}; only 'euler_maruyama' is provided"
            )
        if self.r_exit is not None and self.r_exit <= 0:
            raise SimulationError("r_exit must be positive or None")
        if self.near_degeneracy_eps < 0:
            raise SimulationError("near_degeneracy_eps must be nonnegative")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise SimulationError(
                f"t_final={self.t_final} is not an integer multiple of dt={self.dt}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "t_final": self.t_final,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "scheme": self.scheme,
            "r_exit": self.r_exit,
            "near_degeneracy_eps": self.near_degeneracy_eps,
        }


@dataclass
class PathEnsemble:
    """Simulated ensemble with per-path bookkeeping.

    ``states`` has shape ``(n_paths, n_steps + 1, d)``; ``states[:, 0]`` is
    the common start point.  ``exit_step[i]`` is the first state index with
    ``|X| >= r_exit`` (``-1`` if never), after which the path is frozen;
    ``exploded_step`` likewise marks the first non-finite update (``-1`` if
    none), with the path frozen at its last finite state.  ``path_keys`` are
    the per-path substream keys ``(master_seed, path_index)``.
    """

    config: SimConfig
    x0: np.ndarray
    times: np.ndarray
    states: np.ndarray
    exit_step: np.ndarray
    exploded_step: np.ndarray
    occupation_exact: np.ndarray
    occupation_near: np.ndarray
    path_keys: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def exploded(self) -> np.ndarray:
        return self.exploded_step >= 0

    def state_at(self, t: float) -> np.ndarray:
        """Marginal slice at a time on the step grid, shape ``(n_paths, d)``."""
        k = t / self.config.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise SimulationError(f"t={t} is not on the step grid (dt={self.config.dt})")
        k = int(round(k))
        if not 0 <= k <= self.config.n_steps:
            raise SimulationError(f"t={t} outside the simulated horizon")
        return self.states[:, k, :]


def _step_block(
    c: CoefficientSet,
    x: np.ndarray,
    xi: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One Euler-Maruyama update for a batch of states (no bookkeeping)."""
    root_dt = math.sqrt(dt)
    with np.errstate(over="ignore", invalid="ignore"):
        noise = np.einsum("bij,bj->bi", c.sigma_hat(x), xi)
        return x + root_dt * noise + c.G(x) * dt


def _simulate_block(
    c: CoefficientSet,
    x0: np.ndarray,
    cfg: SimConfig,
    path_indices: np.ndarray,
    out_states: np.ndarray,
    out_exit: np.ndarray,
    out_exploded: np.ndarray,
) -> None:
    """Simulate one path block, writing into preallocated slices."""
    n_steps, dt = cfg.n_steps, cfg.dt
    b = len(path_indices)
    xi_all = block_normals(cfg.master_seed, path_indices, n_steps, c.noise_dim)

    x = np.tile(x0, (b, 1))
    out_states[:, 0] = x
    exit_step = np.full(b, -1, dtype=np.int64)
    exploded_step = np.full(b, -1, dtype=np.int64)
    active = np.ones(b, dtype=bool)
    if cfg.r_exit is not None:
        out_now = np.linalg.norm(x, axis=1) >= cfg.r_exit
        exit_step[out_now] = 0
        active &= ~out_now

    for k in range(n_steps):
        if not np.any(active):
            out_states[:, k + 1] = x
            continue
        xn = _step_block(c, x, xi_all[:, k, :], dt)
        bad = active & ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            exploded_step[bad] = k + 1
            active &= ~bad
        moved = active
        x = np.where(moved[:, None], xn, x)
        if cfg.r_exit is not None:
            with np.errstate(over="ignore"):
                crossed = moved & (np.linalg.norm(x, axis=1) >= cfg.r_exit)
            if np.any(crossed):
                exit_step[crossed] = k + 1
                active &= ~crossed
        out_states[:, k + 1] = x

    out_exit[:] = exit_step
    out_exploded[:] = exploded_step


def simulate_ensemble(
    c: CoefficientSet, x0, cfg: SimConfig, workers: int = 1
) -> PathEnsemble:
    """Run the ensemble described by ``cfg`` from the common start ``x0``.

    ``workers`` only sets the thread count over path blocks; the result is
    bitwise identical for any value.  Exploded paths are flagged and frozen,
    never dropped.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (c.dim,):
        raise SimulationError(f"x0 must have shape ({c.dim},), got {x0.shape}")
    if workers < 1:
        raise SimulationError("workers must be at least 1")

    n, n_steps, d = cfg.n_paths, cfg.n_steps, c.dim
    states = np.empty((n, n_steps + 1, d))
    exit_step = np.empty(n, dtype=np.int64)
    exploded_step = np.empty(n, dtype=np.int64)

    blocks = [
        np.arange(s, min(s + _BLOCK, n), dtype=np.int64) for s in range(0, n, _BLOCK)
    ]

    def run(idx: np.ndarray) -> None:
        sl = slice(int(idx[0]), int(idx[-1]) + 1)
        _simulate_block(
            c, x0, cfg, idx, states[sl], exit_step[sl], exploded_step[sl]
        )

    if workers == 1 or len(blocks) == 1:
        for idx in blocks:
            run(idx)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))

    # occupation tallies: left-endpoint rule over the first n_steps states
    occ_exact = np.empty(n)
    occ_near = np.empty(n)
    eps = cfg.near_degeneracy_eps
    for idx in blocks:
        sl = slice(int(idx[0]), int(idx[-1]) + 1)
        w = c.inv_weight(states[sl, :n_steps, :])
        occ_exact[sl] = cfg.dt * np.sum(w == 0.0, axis=1)
        occ_near[sl] = cfg.dt * np.sum(w < eps, axis=1)

    keys = np.empty((n, 2), dtype=np.uint64)
    for i in range(n):
        keys[i] = path_key(cfg.master_seed, i)

    ens = PathEnsemble(
        config=cfg,
        x0=x0,
        times=np.arange(n_steps + 1) * cfg.dt,
        states=states,
        exit_step=exit_step,
        exploded_step=exploded_step,
        occupation_exact=occ_exact,
        occupation_near=occ_near,
        path_keys=keys,
    )
    return attach_coefficients(ens, c)


@dataclass(frozen=True)
class ExitStats:
    """Exit summary over an ensemble with absorption enabled."""

    r_exit: float
    n_paths: int
    n_exited: int
    exit_fraction: float
    exit_time_quantiles: dict


def exit_time_stats(ens: PathEnsemble) -> ExitStats:
    """Exit fraction and quantiles of the exit time among exited paths."""
    if ens.config.r_exit is None:
        raise SimulationError("ensemble was simulated without exit absorption")
    exited = ens.exit_step >= 0
    n_ex = int(np.sum(exited))
    qs = {}
    if n_ex:
        t_exit = ens.exit_step[exited] * ens.config.dt
        for q in (0.25, 0.5, 0.75, 0.9):
            qs[f"q{int(q * 100)}"] = float(np.quantile(t_exit, q))
    return ExitStats(
        r_exit=float(ens.config.r_exit),
        n_paths=ens.n_paths,
        n_exited=n_ex,
        exit_fraction=n_ex / ens.n_paths,
        exit_time_quantiles=qs,
    )


@dataclass(frozen=True)
class OccupationRow:
    eps: float
    mean_occupation: float
    max_occupation: float


def occupation_profile(ens: PathEnsemble, eps_list: Sequence[float]) -> list:
    """Mean/max discrete occupation of weight sublevel sets per threshold.

    For ``eps > 0`` the tally counts states with ``w(X_k) < eps``; the
    ``eps = 0`` row is the exact-zero tally.  Rows are returned in the given
    order; occupation is monotone non-increasing as ``eps`` decreases.
    """
    dt = ens.config.dt
    rows = []
    w = None
    for eps in eps_list:
        if eps < 0:
            raise SimulationError("eps must be nonnegative")
        if eps == 0.0:
            occ = ens.occupation_exact
        else:
            if w is None:
                w = _ensemble_weights(ens)
            occ = dt * np.sum(w < eps, axis=1)
        rows.append(
            OccupationRow(
                eps=float(eps),
                mean_occupation=float(np.mean(occ)),
                max_occupation=float(np.max(occ)),
            )
        )
    return rows


def _ensemble_weights(ens: PathEnsemble) -> np.ndarray:
    c = getattr(ens, "_coefficients", None)
    if c is None:
        raise SimulationError(
            "occupation_profile with eps > 0 needs the ensemble's coefficients; "
            "attach them via attach_coefficients(ens, c)"
        )
    return c.inv_weight(ens.states[:, : ens.config.n_steps, :])


def attach_coefficients(ens: PathEnsemble, c: CoefficientSet) -> PathEnsemble:
    """Record the generating coefficients on the ensemble for later audits."""
    ens._coefficients = c
    return ens


def weak_error_study(
    c: CoefficientSet,
    x0,
    payoff: Callable,
    t_final: float,
    dt_list: Sequence[float],
    n_paths: int,
    master_seed: int,
) -> dict:
    """Terminal-payoff estimates at several step sizes with common randomness.

    All levels consume the same underlying increments: normals are generated
    at the finest level and aggregated (sums of ``r`` fine normals over
    ``sqrt(r)``) for coarser levels, so successive differences of the
    estimates expose the scheme's order with the Monte Carlo noise largely
    cancelled.  Every ``dt`` must be an integer multiple of the finest one.

    Returns a dict with ``dt`` (descending), ``estimates``, ``stderr`` and
    ``successive_diffs``.
    """
    x0 = np.asarray(x0, dtype=float)
    dts = sorted(set(float(v) for v in dt_list), reverse=True)
    fine = dts[-1]
    ratios = []
    for v in dts:
        r = v / fine
        if abs(r - round(r)) > 1e-9:
            raise SimulationError(
                f"dt={v} is not an integer multiple of the finest dt={fine}"
            )
        ratios.append(int(round(r)))
    n_fine = int(round(t_final / fine))
    if abs(n_fine * fine - t_final) > 1e-9 * t_final:
        raise SimulationError("t_final must be an integer multiple of the finest dt")
    for r in ratios:
        if n_fine % r:
            raise SimulationError(f"step ratio {r} does not divide {n_fine} fine steps")

    m = c.noise_dim
    sums = np.zeros(len(dts))
    sq_sums = np.zeros(len(dts))
    for s in range(0, n_paths, _BLOCK):
        idx = np.arange(s, min(s + _BLOCK, n_paths), dtype=np.int64)
        b = len(idx)
        xi_fine = block_normals(master_seed, idx, n_fine, m)
        for li, (dv, r) in enumerate(zip(dts, ratios)):
            if r == 1:
                xi = xi_fine
            else:
                xi = xi_fine.reshape(b, n_fine // r, r, m).sum(axis=2) / math.sqrt(r)
            x = np.tile(x0, (b, 1))
            for k in range(n_fine // r):
                x = _step_block(c, x, xi[:, k, :], dv)
            vals = np.asarray(payoff(x), dtype=float)
            sums[li] += vals.sum()
            sq_sums[li] += np.sum(vals * vals)

    est = sums / n_paths
    var = np.maximum(sq_sums / n_paths - est**2, 0.0)
    stderr = np.sqrt(var / n_paths)
    return {
        "dt": dts,
        "estimates": est.tolist(),
        "stderr": stderr.tolist(),
        "successive_diffs": [float(est[i] - est[i + 1]) for i in range(len(dts) - 1)],
    }
