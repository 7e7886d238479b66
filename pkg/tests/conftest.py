"""Shared fixtures: the builtin families at their standard test parameters."""

import pytest

from sdelab import builtin_family


@pytest.fixture(scope="session")
def brownian2():
    return builtin_family("brownian", 2)


@pytest.fixture(scope="session")
def ou2():
    return builtin_family("ornstein_uhlenbeck", 2)


@pytest.fixture(scope="session")
def radial2():
    return builtin_family("radial_degenerate", 2, alpha=0.25)


@pytest.fixture(scope="session")
def piecewise2():
    return builtin_family(
        "piecewise_weight",
        2,
        cells=[
            {"bounds": [[-1.0, 0.0], [-1.0, 0.0]], "value": 0.5},
            {"bounds": [[0.0, 1.0], [0.0, 1.0]], "value": 2.0},
        ],
        background=1.0,
    )


@pytest.fixture(scope="session")
def jump2():
    return builtin_family(
        "hyperplane_jump",
        2,
        weight_left=0.5,
        weight_right=2.0,
        drift_left=[0.3, 0.0],
        drift_right=[-0.2, 0.1],
    )
