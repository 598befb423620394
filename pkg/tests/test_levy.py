"""Driver increments, Euler paths, and grid extraction.

Closed-form moment formulas (computed inline, not via the library) anchor
the NIG sampler; the matrix exponential and the stationary Lyapunov equation
anchor the Euler scheme.
"""

import numpy as np
import pytest
import scipy.linalg as sla

import carma_qml as cq
from carma_qml.errors import (
    DimensionError,
    GridError,
    NotPositiveDefiniteError,
    ParameterError,
)

from conftest import STUDY_NIG

NIG_COV_PRINTED = np.array([[0.4751, -0.1622], [-0.1622, 0.3708]])


def scalar_ou():
    return cq.ContinuousSSM(A=[[-1.0]], B=[[1.0]], C=[[1.0]], sigma_L=[[1.0]])


# --------------------------------------------------------- NIG parameters


def test_nig_study_moments_closed_form(study_nig):
    # hand arithmetic, independent of the class helpers
    beta = np.array(STUDY_NIG["beta"])
    dmat = np.array(STUDY_NIG["Delta"])
    mu = np.array(STUDY_NIG["mu"])
    kappa_sq = STUDY_NIG["alpha"] ** 2 - beta @ dmat @ beta
    assert kappa_sq == pytest.approx(31.0 / 4.0, abs=1e-14)
    assert study_nig.kappa == pytest.approx(np.sqrt(31.0) / 2.0, rel=1e-15)

    kappa = np.sqrt(kappa_sq)
    mean = mu + STUDY_NIG["delta"] * (dmat @ beta) / kappa
    assert np.max(np.abs(mean)) <= 1e-15
    assert np.max(np.abs(study_nig.increment_mean(1.0))) <= 1e-15

    db = dmat @ beta
    cov = dmat / kappa + np.outer(db, db) / kappa**3
    assert np.max(np.abs(cov - NIG_COV_PRINTED)) <= 5e-4
    assert np.allclose(study_nig.increment_covariance(1.0), cov, atol=1e-14)


def test_nig_rejects_bad_parameters():
    with pytest.raises(ParameterError):  # kappa^2 <= 0
        cq.NigParams(mu=(0.0, 0.0), alpha=1.0, beta=(1.0, 1.0), delta=1.0,
                     Delta=np.eye(2))
    with pytest.raises(ParameterError):  # det != 1
        cq.NigParams(mu=(0.0, 0.0), alpha=3.0, beta=(0.0, 0.0), delta=1.0,
                     Delta=2.0 * np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        cq.NigParams(mu=(0.0, 0.0), alpha=3.0, beta=(0.0, 0.0), delta=1.0,
                     Delta=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ParameterError):
        cq.NigParams(mu=(0.0,), alpha=-1.0, beta=(0.0,), delta=1.0,
                     Delta=[[1.0]])
    with pytest.raises(DimensionError):
        cq.NigParams(mu=(0.0, 0.0), alpha=3.0, beta=(0.0,), delta=1.0,
                     Delta=np.eye(2))


# ------------------------------------------------------------ increments


def test_brownian_increment_scaling():
    inc = cq.levy_increments(cq.BrownianParams(sigma=np.eye(2)), 0.01,
                             1_000_000, seed=1)
    emp = np.cov(inc.T)
    assert np.linalg.norm(emp - 0.01 * np.eye(2)) <= 0.01 * np.linalg.norm(
        0.01 * np.eye(2)
    )


def test_nig_increment_moments_monte_carlo(study_nig):
    inc = cq.levy_increments(study_nig, 1.0, 1_000_000, seed=2)
    mean = inc.mean(axis=0)
    assert np.max(np.abs(mean)) <= 0.005
    emp = np.cov(inc.T)
    assert np.linalg.norm(emp - NIG_COV_PRINTED) <= 0.02 * np.linalg.norm(
        NIG_COV_PRINTED
    )


def test_nig_cumulant_additivity(study_nig):
    dt = 0.5
    a = cq.levy_increments(study_nig, dt, 400_000, seed=3)
    b = cq.levy_increments(study_nig, 2 * dt, 200_000, seed=4)
    # per-unit-time moments must agree across step sizes
    assert np.allclose(a.mean(axis=0) / dt, b.mean(axis=0) / (2 * dt),
                       atol=0.01)
    ca = np.cov(a.T) / dt
    cb = np.cov(b.T) / (2 * dt)
    assert np.linalg.norm(ca - cb) <= 0.05 * np.linalg.norm(ca)


def test_increment_argument_validation(study_nig):
    with pytest.raises(GridError):
        cq.levy_increments(study_nig, 0.0, 10)
    with pytest.raises(ParameterError):
        cq.levy_increments(study_nig, 0.1, -5)


# ------------------------------------------------------------ Euler paths


def euler_final_error(dt):
    a = np.array([[-1.0, 0.3], [0.0, -0.5]])
    m = cq.ContinuousSSM(A=a, B=np.eye(2), C=np.eye(2), sigma_L=None)
    x0 = np.array([1.0, -1.0])
    path = cq.euler_simulate(m, cq.BrownianParams(sigma=np.zeros((2, 2))),
                             T=2.0, dt=dt, x0=x0, seed=0)
    want = sla.expm(a * 2.0) @ x0
    return np.linalg.norm(path.states[-1] - want) / np.linalg.norm(want)


def test_euler_zero_noise_matches_expm():
    err = euler_final_error(0.01)
    assert err <= 0.02
    ratio = euler_final_error(0.02) / err
    assert 1.6 <= ratio <= 2.6  # first-order scheme: error halves with dt


def test_euler_scalar_ou_stationary_variance():
    path = cq.euler_simulate(scalar_ou(), cq.BrownianParams(sigma=[[1.0]]),
                             T=100_000.0, dt=0.01, seed=11)
    gamma0 = cq.solve_lyapunov_ct(np.array([[-1.0]]), np.array([[1.0]]))
    y = path.observations_full[:, 0]
    assert np.var(y) == pytest.approx(gamma0[0, 0], rel=0.03)


def test_euler_shapes_and_determinism(study_model, study_nig):
    p1 = cq.euler_simulate(study_model, study_nig, T=50.0, dt=0.01, seed=9)
    p2 = cq.euler_simulate(study_model, study_nig, T=50.0, dt=0.01, seed=9)
    assert p1.states.shape == (5001, 3)
    assert p1.observations_full.shape == (5001, 2)
    assert p1.n_steps == 5000
    assert p1.horizon == pytest.approx(50.0)
    assert np.array_equal(p1.states, p2.states)
    assert np.array_equal(p1.observations_full, p2.observations_full)
    assert np.array_equal(p1.observations_full, p1.states @ study_model.C.T)
    p3 = cq.euler_simulate(study_model, study_nig, T=50.0, dt=0.01, seed=10)
    assert not np.array_equal(p1.states, p3.states)


def test_euler_weak_error_monotone_in_dt():
    gamma0 = 0.5
    errs = []
    for i, dt in enumerate((0.04, 0.02, 0.01)):
        path = cq.euler_simulate(scalar_ou(), cq.BrownianParams(sigma=[[1.0]]),
                                 T=200_000.0, dt=dt, seed=40 + i)
        errs.append(abs(np.var(path.observations_full[:, 0]) - gamma0))
    assert errs[0] > errs[1] > errs[2]


def test_euler_argument_validation(study_model, study_nig):
    with pytest.raises(GridError):
        cq.euler_simulate(study_model, study_nig, T=1.0, dt=0.0)
    with pytest.raises(GridError):
        cq.euler_simulate(study_model, study_nig, T=0.005, dt=0.01)
    with pytest.raises(DimensionError):
        cq.euler_simulate(study_model, study_nig, T=1.0, dt=0.01,
                          x0=[1.0, 2.0])
    with pytest.raises(ParameterError):
        cq.euler_simulate(study_model, study_nig, T=1.0, dt=0.01,
                          x0="stationary")  # no Gaussian stationary law
    with pytest.raises(ParameterError):
        cq.euler_simulate(study_model, study_nig, T=1.0, dt=0.01, x0="origin")
    with pytest.raises(DimensionError):
        cq.euler_simulate(study_model, cq.BrownianParams(sigma=np.eye(3)),
                          T=1.0, dt=0.01)


def test_euler_stationary_start_gaussian():
    m = scalar_ou()
    path = cq.euler_simulate(m, cq.BrownianParams(sigma=[[1.0]]), T=1.0,
                             dt=0.01, x0="stationary", seed=5)
    assert path.states[0, 0] != 0.0  # drew from N(0, Gamma_0)


# ------------------------------------------------------------ sample_path


def test_sample_path_study_grid(study_model, study_nig):
    path = cq.euler_simulate(study_model, study_nig, T=2000.0, dt=0.01, seed=6)
    y = cq.sample_path(path, 1.0)
    assert y.shape == (2000, 2)
    # row k is the observation at time (k+1) h
    assert np.array_equal(y[0], path.observations_full[100])
    assert np.array_equal(y[-1], path.observations_full[200_000])


def test_sample_path_identity_stride(study_model, study_nig):
    path = cq.euler_simulate(study_model, study_nig, T=5.0, dt=0.01, seed=7)
    y = cq.sample_path(path, 0.01)
    assert np.array_equal(y, path.observations_full[1:])


def test_sample_path_rejects_misaligned_h(study_model, study_nig):
    path = cq.euler_simulate(study_model, study_nig, T=5.0, dt=0.01, seed=8)
    with pytest.raises(GridError):
        cq.sample_path(path, 0.015)
    with pytest.raises(GridError):
        cq.sample_path(path, -1.0)
