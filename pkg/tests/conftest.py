"""Shared fixtures and independent oracles for the test suite."""

import math

import numpy as np
import pytest

import latticesde as lat


def brute_force_neighbors(points, rho):
    """All-pairs closed-ball neighbor table; the oracle for the cell grid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    neighbors = []
    for i in range(n):
        d2 = np.sum((points - points[i]) ** 2, axis=1)
        neighbors.append(np.flatnonzero(d2 <= rho * rho).astype(np.int64))
    return neighbors


def lattice_1d(lo=-10, hi=10, rho=1.5):
    pts = [[float(j)] for j in range(lo, hi + 1)]
    return lat.configuration_from_points(pts, rho=rho, box_halfwidth=float(hi))


@pytest.fixture(scope="session")
def single_site_config():
    return lat.configuration_from_points([[0.0]], rho=1.0)


@pytest.fixture(scope="session")
def poisson_1d():
    return lat.sample_configuration(2.0, 5.0, 1, 1.0, 42)


@pytest.fixture(scope="session")
def ou_model():
    return lat.make_model("linear", 1.0, sigma0=math.sqrt(2.0), p=2.0)


@pytest.fixture(scope="session")
def ou_ensemble(single_site_config, ou_model):
    """Reference single-site linear run: 1e4 paths, dt = 1e-3, T = 1."""
    zeta = lat.WeightedSeq(single_site_config, np.zeros(1))
    return lat.simulate_truncated(
        ou_model, single_site_config, [0], zeta, 1.0, 1e-3, 10_000, 123,
        scheme="explicit",
    )


@pytest.fixture(scope="session")
def cubic_setup():
    """Cubic model on the 1-d window used by the finite-volume criteria."""
    config = lat.sample_configuration(2.0, 10.0, 1, 1.0, 314)
    model = lat.make_model(
        "cubic", 0.0, kernel="constant", kernel_cap=0.05, rho=1.0,
        sigma0=0.1, sigma1=0.0, sigma2=0.02, p=4.0,
    )
    zeta = lat.WeightedSeq(config, np.ones(config.n_sites))
    return config, model, zeta


@pytest.fixture(scope="session")
def level_ensembles(cubic_setup):
    """Four coupled truncation levels, shared by the moment and Cauchy criteria."""
    config, model, zeta = cubic_setup
    levels = lat.exhaustion_sequence(config, 4)
    from latticesde.convergence import simulate_levels

    ensembles = simulate_levels(
        model, config, levels, zeta, 1.0, 0.01, 2000, 271, scheme="tamed",
    )
    return config, model, zeta, levels, ensembles
