"""Reproducible noise streams.

Every normal variate is a pure function of ``(master_seed, path, step,
component)``: the counter-based Philox generator is keyed by the pair
``(master_seed, path)``, and the draw for ``(step, component)`` sits at the
fixed counter position ``step * m + component`` within that stream.  Variates
are produced by inverse CDF from open-interval uniforms ``(raw + 0.5) / 2^64``,
so no endpoint can reach 0 or 1.  Results therefore never depend on scheduling
or worker partitioning.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_TWO64 = float(2**64)


def _as_u64(value: int, name: str) -> int:
    v = int(value)
    if not 0 <= v < 2**64:
        raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")
    return v


def path_key(master_seed: int, path_index: int) -> tuple:
    """The Philox key pair identifying one path's substream."""
    return (_as_u64(master_seed, "master_seed"), _as_u64(path_index, "path_index"))


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    key = np.array(path_key(master_seed, path_index), dtype=_U64)
    return np.random.Generator(np.random.Philox(key=key))


def path_normals(master_seed: int, path_index: int, n_steps: int, m: int) -> np.ndarray:
    """Standard normals for one path, shape ``(n_steps, m)``."""
    g = path_generator(master_seed, path_index)
    raw = g.integers(0, 2**64, size=(n_steps, m), dtype=_U64)
    return ndtri((raw.astype(float) + 0.5) / _TWO64)


def block_normals(
    master_seed: int, path_indices: np.ndarray, n_steps: int, m: int
) -> np.ndarray:
    """Normals for a batch of paths, shape ``(len(path_indices), n_steps, m)``.

    Raw words are gathered per path (each from its own keyed stream) and the
    inverse CDF is applied once over the whole block.
    """
    raw = np.empty((len(path_indices), n_steps, m), dtype=_U64)
    for i, p in enumerate(path_indices):
        g = path_generator(master_seed, int(p))
        raw[i] = g.integers(0, 2**64, size=(n_steps, m), dtype=_U64)
    return ndtri((raw.astype(float) + 0.5) / _TWO64)


def derive_seed(master_seed: int, *indices: int) -> int:
    """Independent sub-seed for a labelled purpose (variant, control, audit).

    Deterministic function of the master seed and the index tuple via seed
    sequence spawning; distinct tuples give statistically independent streams.
    """
    ss = np.random.SeedSequence(
        entropy=_as_u64(master_seed, "master_seed"),
        spawn_key=tuple(_as_u64(i, "index") for i in indices),
    )
    return int(ss.generate_state(1, _U64)[0])


def permutation_rng(seed: int) -> np.random.Generator:
    """Generator for permutation tests and subsampling; plain PCG64 stream."""
    return np.random.default_rng(_as_u64(seed, "seed"))
