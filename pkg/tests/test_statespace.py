"""Model types, the sampling map, second-order quantities, and diagnostics.

Independent oracles: adaptive Fourier inversion of the spectral density,
truncated aliasing sums, and Monte-Carlo covariance of fine-grid noise
integrals.
"""

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

import carma_qml as cq
from carma_qml.errors import (
    DimensionError,
    GridError,
    NotPositiveDefiniteError,
    ParameterError,
    SingularMatrixError,
    StabilityError,
)

from conftest import random_stable_ct


def scalar_ou(a=1.0, b=1.0, c=1.0, sigma=1.0):
    return cq.ContinuousSSM(A=[[-a]], B=[[b]], C=[[c]], sigma_L=[[sigma]])


# ------------------------------------------------------------ model types


def test_continuous_ssm_dimensions(study_model):
    assert study_model.N == 3
    assert study_model.d == 2
    assert study_model.m == 2
    assert study_model.is_stable


def test_continuous_ssm_rejects_mismatched_b():
    with pytest.raises(DimensionError):
        cq.ContinuousSSM(A=np.eye(3) * -1, B=np.ones((2, 2)), C=np.ones((1, 3)),
                         sigma_L=np.eye(2))


def test_continuous_ssm_sigma_optional():
    m = cq.ContinuousSSM(A=[[-1.0]], B=[[1.0]], C=[[1.0]], sigma_L=None)
    with pytest.raises(ParameterError):
        m.require_sigma()


def test_discrete_ssm_defaults_and_block_psd():
    m = cq.DiscreteSSM(F=[[0.5]], H=[[1.0]], Q=[[1.0]])
    assert np.array_equal(m.S, [[0.0]])
    assert np.array_equal(m.R, [[0.0]])
    with pytest.raises(NotPositiveDefiniteError):
        # R couples Q and S into an indefinite block covariance
        cq.DiscreteSSM(F=[[0.5]], H=[[1.0]], Q=[[1.0]], S=[[1.0]], R=[[5.0]])


# ------------------------------------------------------------- sampling


def test_sample_scalar_closed_forms():
    d = cq.sample_ct_model(scalar_ou(), 1.0)
    assert d.F[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-13)
    assert d.H[0, 0] == 1.0
    assert d.Q[0, 0] == pytest.approx((1.0 - np.exp(-2.0)) / 2.0, rel=1e-12)
    assert np.all(d.S == 0.0) and np.all(d.R == 0.0)


@pytest.mark.parametrize("h", [0.0, -0.5])
def test_sample_rejects_bad_grid(h):
    with pytest.raises(GridError):
        cq.sample_ct_model(scalar_ou(), h)


def test_sample_rejects_unstable():
    m = cq.ContinuousSSM(A=[[0.1]], B=[[1.0]], C=[[1.0]], sigma_L=[[1.0]])
    with pytest.raises(StabilityError):
        cq.sample_ct_model(m, 1.0)


def test_sampled_noise_covariance_monte_carlo(study_model):
    # N^(h) = int_0^h e^{A(h-u)} B dL(u);  fine Riemann sum with Gaussian
    # increments has covariance -> Q as the mesh refines
    m = study_model
    h, steps, n_draws = 1.0, 100, 100_000
    dt = h / steps
    rng = np.random.default_rng(99)
    chol = np.linalg.cholesky(m.sigma_L)
    weights = np.stack([sla.expm(m.A * (h - (j + 0.5) * dt)) @ m.B @ chol
                        for j in range(steps)])  # midpoint rule
    chunks = []
    for _ in range(10):
        z = rng.standard_normal((n_draws // 10, steps, m.m))
        chunks.append(np.einsum("jnk,sjk->sn", weights, z) * np.sqrt(dt))
    draws = np.vstack(chunks)
    emp = np.cov(draws.T)
    q = cq.sample_ct_model(m, h).Q
    assert np.linalg.norm(emp - q) <= 0.02 * np.linalg.norm(q)


# ------------------------------------------------------ transfer function


def test_transfer_scalar_at_zero():
    assert cq.transfer_function(scalar_ou(), 0.0) == pytest.approx(1.0)


def test_transfer_normalization_nu11():
    fam = cq.echelon_family((1, 1),
                            [-3, -2, -2, -3, 0.05, -0.6, 0.05],
                            [-0.5, 2, 2, -0.5, 2.0, 0.6, 2.0])
    model = cq.theta_to_model(fam, np.array([-1.0, 0.4, 0.3, -2.0, 1.0, 0.0, 1.0]))
    h0 = cq.transfer_function(model, 0.0)
    assert np.linalg.norm(h0 + np.eye(2)) <= 1e-10


def test_transfer_rejects_resolvent_pole():
    with pytest.raises(SingularMatrixError):
        cq.transfer_function(scalar_ou(a=1.0), -1.0)


# ------------------------------------------------------ spectral densities


def test_spectral_ct_scalar_ou_at_zero():
    f = cq.spectral_density_ct(scalar_ou(), 0.0)
    assert f[0, 0] == pytest.approx(1.0 / (2.0 * np.pi), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 5000), omega=st.floats(-30.0, 30.0))
def test_spectral_ct_hermitian_psd_and_reflection(seed, omega):
    rng = np.random.default_rng(seed)
    m = random_stable_ct(rng, 3, m=2, d=2)
    f = cq.spectral_density_ct(m, omega)
    assert np.linalg.norm(f - f.conj().T) <= 1e-12 * (1.0 + np.linalg.norm(f))
    assert np.min(np.linalg.eigvalsh(f)) >= -1e-12
    # reflection symmetry of a real process: f(-w) = conj(f(w)) = f(w)^T
    g = cq.spectral_density_ct(m, -omega)
    assert np.allclose(g, f.conj(), atol=1e-13)
    assert np.allclose(g, f.T, atol=1e-13)


def test_spectral_ct_fourier_inversion():
    m = scalar_ou()
    lag = 1.0

    def integrand(w):
        return (cq.spectral_density_ct(m, w) * np.exp(1j * w * lag)).real

    val, _ = scipy.integrate.quad_vec(integrand, -200.0, 200.0,
                                      epsabs=1e-9, epsrel=1e-9)
    want = cq.autocovariance_ct(m, lag)
    assert np.linalg.norm(val - want) <= 1e-4 * np.linalg.norm(want)


def test_spectral_dt_ar1_at_zero():
    m = cq.DiscreteSSM(F=[[0.5]], H=[[1.0]], Q=[[1.0]])
    assert cq.spectral_density_dt(m, 0.0)[0, 0] == pytest.approx(4.0, rel=1e-12)


def test_spectral_dt_hermitian_psd_many_omegas(study_sampled):
    rng = np.random.default_rng(5)
    for omega in rng.uniform(-np.pi, np.pi, size=100):
        f = cq.spectral_density_dt(study_sampled, omega)
        assert np.linalg.norm(f - f.conj().T) <= 1e-12 * (1.0 + np.linalg.norm(f))
        assert np.min(np.linalg.eigvalsh(f)) >= -1e-12


@pytest.mark.parametrize("omega", [0.0, 0.7, 2.0, np.pi])
def test_spectral_folding_identity_scalar(omega):
    # (2 pi)^-1 f_dt(omega) = h^-1 sum_k f_ct((omega + 2 pi k) / h)
    m = scalar_ou()
    h = 1.0
    dt = cq.sample_ct_model(m, h)
    lhs = cq.spectral_density_dt(dt, omega)[0, 0].real / (2.0 * np.pi)
    k = np.arange(-10_000, 10_001)
    rhs = np.sum([cq.spectral_density_ct(m, w)[0, 0].real
                  for w in (omega + 2.0 * np.pi * k) / h]) / h
    assert abs(lhs - rhs) <= 1e-6


# --------------------------------------------------------- autocovariance


def test_autocov_lag0_is_c_gamma0_ct(study_model):
    m = study_model
    gamma0 = cq.solve_lyapunov_ct(m.A, m.B @ m.sigma_L @ m.B.T)
    assert np.allclose(cq.autocovariance_ct(m, 0.0), m.C @ gamma0 @ m.C.T,
                       atol=1e-13)


def test_autocov_scalar_ou_closed_form():
    got = cq.autocovariance_ct(scalar_ou(), 1.0)
    assert got[0, 0] == pytest.approx(np.exp(-1.0) / 2.0, rel=1e-12)


def test_autocov_rejects_negative_lag():
    with pytest.raises(ParameterError):
        cq.autocovariance_ct(scalar_ou(), -1.0)


def test_autocov_matches_long_gaussian_path():
    m = scalar_ou()
    path = cq.euler_simulate(m, cq.BrownianParams(sigma=[[1.0]]),
                             T=100_000.0, dt=0.01, seed=42)
    y = cq.sample_path(path, 1.0)[:, 0]
    y = y - y.mean()
    n = y.size
    for lag in (0, 1, 2):
        emp = float(y[: n - lag] @ y[lag:]) / n
        want = cq.autocovariance_ct(m, float(lag))[0, 0]
        assert emp == pytest.approx(want, rel=0.05)


def test_sampled_lag1_matches_ct_autocov(study_model):
    # C e^{Ah} Gamma0 C^T == H F Gamma0_dt H^T for the sampled chain
    m = study_model
    h = 1.0
    dt = cq.sample_ct_model(m, h)
    gamma0_dt = sla.solve_discrete_lyapunov(dt.F, dt.Q)
    lhs = cq.autocovariance_ct(m, h)
    rhs = dt.H @ dt.F @ gamma0_dt @ dt.H.T
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * (1.0 + np.linalg.norm(lhs))


# ------------------------------------------------------------ diagnostics


def test_report_detects_unreachable_repeated_mode():
    m = cq.ContinuousSSM(A=np.diag([-1.0, -1.0]), B=[[1.0], [0.0]],
                         C=[[1.0, 1.0]], sigma_L=[[1.0]])
    rep = cq.structural_report(m, 1.0)
    assert not rep.controllable
    assert not rep.minimal


def test_report_kalman_bertram_violation_at_plus_minus_i_pi():
    m = cq.ContinuousSSM(A=[[-1.0, np.pi], [-np.pi, -1.0]], B=np.eye(2),
                         C=np.eye(2), sigma_L=np.eye(2))
    rep = cq.structural_report(m, 1.0)
    # lambda_1 - lambda_2 = 2 pi i is an exact aliasing difference at h = 1
    assert not rep.kalman_bertram_ok


def test_report_study_family_at_theta0(study_model):
    rep = cq.structural_report(study_model, 1.0)
    assert rep.minimal and rep.controllable and rep.observable
    assert rep.stable
    assert rep.spectrum_in_strip
    assert rep.kalman_bertram_ok
    assert rep.mcmillan_degree_bound == 3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_report_minimal_iff_controllable_and_observable(seed):
    rng = np.random.default_rng(seed)
    m = random_stable_ct(rng, int(rng.integers(2, 5)), m=2, d=2)
    rep = cq.structural_report(m, 1.0)
    assert rep.minimal == (rep.controllable and rep.observable)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.floats(0.1, 3.0))
def test_strip_implies_kalman_bertram(seed, h):
    rng = np.random.default_rng(seed)
    m = random_stable_ct(rng, 4, m=2, d=2)
    rep = cq.structural_report(m, h)
    if rep.spectrum_in_strip:
        assert rep.kalman_bertram_ok


def test_aliasing_identity_on_a_2d_model():
    # companion model with C B = 0: the spectral density decays like
    # omega^-4, so truncating the fold at |k| <= 1e4 costs far below 1e-6
    # (a relative-degree-one model would leave an O(1e-5) tail there)
    m = cq.ContinuousSSM(A=[[0.0, 1.0], [-2.0, -3.0]], B=[[0.0], [1.0]],
                         C=[[1.0, 0.0]], sigma_L=[[1.0]])
    h = 0.7
    dt = cq.sample_ct_model(m, h)
    omega = 1.3
    lhs = cq.spectral_density_dt(dt, omega)[0, 0].real / (2.0 * np.pi)
    k = np.arange(-10_000, 10_001)
    rhs = np.sum([cq.spectral_density_ct(m, w)[0, 0].real
                  for w in (omega + 2.0 * np.pi * k) / h]) / h
    assert abs(lhs - rhs) <= 1e-6
