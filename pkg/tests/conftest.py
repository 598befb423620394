"""Shared fixtures: the bivariate study family and a few random-model helpers."""

import numpy as np
import pytest

import carma_qml as cq

# true parameter of the shipped simulation-study configuration
THETA0 = np.array([-1.0, -2.0, 1.0, -2.0, -3.0, 1.0, 2.0, 0.4751, -0.1622, 0.3708])
STUDY_LOWER = [-2.5, -3.5, -0.5, -3.5, -4.5, -0.5, 0.5, 0.05, -0.6, 0.05]
STUDY_UPPER = [0.5, -0.5, 2.5, -0.5, -1.5, 2.5, 3.5, 1.2, 0.6, 1.2]

S31 = np.sqrt(31.0)
STUDY_NIG = dict(mu=(-1.5 / S31, -1.0 / S31), alpha=3.0, beta=(1.0, 1.0),
                 delta=1.0, Delta=((1.25, -0.5), (-0.5, 1.0)))


@pytest.fixture(scope="session")
def study_family():
    return cq.echelon_family((1, 2), STUDY_LOWER, STUDY_UPPER)


@pytest.fixture(scope="session")
def study_model(study_family):
    return cq.theta_to_model(study_family, THETA0)


@pytest.fixture(scope="session")
def study_sampled(study_model):
    return cq.sample_ct_model(study_model, 1.0)


@pytest.fixture(scope="session")
def study_nig():
    return cq.NigParams(**STUDY_NIG)


@pytest.fixture(scope="session")
def study_data(study_model, study_nig):
    """One replicate of the simulation study: L = 2000 bivariate rows."""
    path = cq.euler_simulate(study_model, study_nig, T=2000.0, dt=0.01,
                             seed=20250815)
    return cq.sample_path(path, 1.0)


def random_stable_ct(rng, n, m=None, d=None):
    """A random stable ContinuousSSM: eigenvalues shifted left of -0.05."""
    m = n if m is None else m
    d = n if d is None else d
    a = rng.normal(size=(n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + 0.05 + rng.uniform(0, 1)) * np.eye(n)
    b = rng.normal(size=(n, m))
    c = rng.normal(size=(d, n))
    w = rng.normal(size=(m, m))
    sigma = w @ w.T + 0.1 * np.eye(m)
    return cq.ContinuousSSM(A=a, B=b, C=c, sigma_L=sigma)


def random_schur(rng, n, rho=0.8):
    """Random n-by-n matrix rescaled to spectral radius rho."""
    f = rng.normal(size=(n, n))
    return f * (rho / max(np.max(np.abs(np.linalg.eigvals(f))), 1e-12))
