"""Quasi maximum likelihood machinery for sampled state space models.

Given observations Y_1, ..., Y_L of a discrete model (F, H, Q, S, R), the
steady-state Kalman filter produces pseudo-innovations through

    Xhat_n = (F - K H) Xhat_{n-1} + K Y_{n-1},      Xhat_1 = init,
    eps_n  = Y_n - H Xhat_n,

and the quasi log-likelihood (times -2) is

    L(theta) = sum_n [ d log 2 pi + log det V + eps_n' V^{-1} eps_n ].

The filter recursion is linear, so the effect of the initial predictor state
decays geometrically at the spectral radius of F - K H.

Standard errors come from the sandwich Xi = (1/L) J^{-1} I J^{-1}: J is the
finite-difference Hessian of L/L, and I is a spectral-at-zero estimate from
an order-s least-squares autoregression fitted to the per-observation score
rows. `fisher_rank_check` probes local identifiability through the rank of
the Jacobian of the filter fingerprint psi = (vec HK, vec HFK, ...,
vec HF^{j0}K, vec V).

All derivatives are central finite differences with per-coordinate step
eps_machine^(1/3) * max(1, |theta_i|).
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    DataError,
    DimensionError,
    ParameterError,
    SingularMatrixError,
    StabilityError,
)
from .mcarma import ModelFamily, theta_to_model
from .statespace import DiscreteSSM, sample_ct_model

__all__ = [
    "SteadyStateFilter",
    "QmlEvaluation",
    "SandwichCovariance",
    "steady_state_filter",
    "quasi_loglik",
    "quasi_loglik_discrete",
    "score_sequence",
    "sandwich_covariance",
    "fisher_rank_check",
    "finite_difference_hessian",
    "default_ar_order",
    "fd_steps",
]

#: central-difference step factor, eps^(1/3)
FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)

#: relative singular-value threshold for the identifiability Jacobian
FISHER_RANK_TOL = 1e-7

_LOG_2PI = float(np.log(2.0 * np.pi))


def _filter_loop(phi, gain, hmat, vinv, data, init):
    # Explicit element loops: these matrices are tiny (N <= ~10) and BLAS
    # dispatch per step costs more than the arithmetic.
    n_obs, d = data.shape
    n_state = phi.shape[0]
    innov = np.empty((n_obs, d))
    quad = np.empty(n_obs)
    x = init.copy()
    xnext = np.empty(n_state)
    for n in range(n_obs):
        for a in range(d):
            acc = data[n, a]
            for b in range(n_state):
                acc -= hmat[a, b] * x[b]
            innov[n, a] = acc
        q = 0.0
        for a in range(d):
            row = 0.0
            for b in range(d):
                row += vinv[a, b] * innov[n, b]
            q += innov[n, a] * row
        quad[n] = q
        for a in range(n_state):
            acc = 0.0
            for b in range(n_state):
                acc += phi[a, b] * x[b]
            for c in range(d):
                acc += gain[a, c] * data[n, c]
            xnext[a] = acc
        for a in range(n_state):
            x[a] = xnext[a]
    return innov, quad


try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit

    _filter_jit = njit(cache=True)(_filter_loop)
except ImportError:  # pragma: no cover
    _filter_jit = None


def _run_filter(phi, gain, hmat, vinv, data, init):
    use_jit = _filter_jit is not None and not os.environ.get(
        "CARMA_QML_DISABLE_NUMBA"
    )
    fn = _filter_jit if use_jit else _filter_loop
    return fn(
        np.ascontiguousarray(phi),
        np.ascontiguousarray(gain),
        np.ascontiguousarray(hmat),
        np.ascontiguousarray(vinv),
        np.ascontiguousarray(data),
        np.ascontiguousarray(init),
    )


@dataclass(frozen=True)
class SteadyStateFilter:
    """Stationary filter quantities: Riccati solution, gain, innovation
    covariance with its inverse and log-determinant, and the predictor matrix
    F - K H (spectral radius < 1)."""

    omega: np.ndarray
    gain: np.ndarray
    innov_cov: np.ndarray
    innov_cov_inverse: np.ndarray
    log_det_innov_cov: float
    predictor: np.ndarray


@dataclass(frozen=True)
class QmlEvaluation:
    """-2 log quasi-likelihood with its per-observation decomposition."""

    minus2_loglik: float
    innovations: np.ndarray
    per_term: np.ndarray


@dataclass(frozen=True)
class SandwichCovariance:
    """Asymptotic covariance Xi = (1/L) J^{-1} I J^{-1} and its factors."""

    J_hat: np.ndarray
    I_hat: np.ndarray
    xi_hat: np.ndarray
    ar_order: int
    stderr: np.ndarray


def steady_state_filter(m: DiscreteSSM) -> SteadyStateFilter:
    """Solve the Riccati equation of ``m`` and package the filter.

    Raises the underlying solver errors for non-stationary models and
    `StabilityError` if the resulting predictor is not Schur stable.
    """
    omega = linalg.solve_dare(m.F, m.H, m.Q, m.S, m.R)
    gain, v = linalg.kalman_gain(m.F, m.H, omega, m.S, m.R)
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("innovation covariance V not positive definite") from exc
    d = v.shape[0]
    vinv = np.linalg.solve(v, np.eye(d))
    vinv = linalg.symmetrize(vinv)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    predictor = m.F - gain @ m.H
    rho = linalg.spectral_radius(predictor)
    if rho >= 1.0:
        raise StabilityError(
            f"filter predictor F - KH has spectral radius {rho:.6f} >= 1"
        )
    return SteadyStateFilter(
        omega=omega,
        gain=gain,
        innov_cov=v,
        innov_cov_inverse=vinv,
        log_det_innov_cov=logdet,
        predictor=predictor,
    )


def _validate_data(data, d: int) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataError(f"data must be an L x d array, got ndim {arr.ndim}")
    if arr.shape[0] < 2:
        raise DataError(f"need at least 2 observations, got {arr.shape[0]}")
    if arr.shape[1] != d:
        raise DimensionError(
            f"data has {arr.shape[1]} columns but the model output is {d}-dimensional"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("data contain NaN or infinite values")
    return arr


def quasi_loglik_discrete(m: DiscreteSSM, data, init=None) -> QmlEvaluation:
    """Evaluate the quasi log-likelihood of a discrete model directly."""
    arr = _validate_data(data, m.d)
    filt = steady_state_filter(m)
    return _evaluate_filter(filt, m.H, arr, init)


def _evaluate_filter(filt: SteadyStateFilter, hmat, data, init) -> QmlEvaluation:
    n_state = filt.predictor.shape[0]
    if init is None:
        x0 = np.zeros(n_state)
    else:
        x0 = np.asarray(init, dtype=float).ravel()
        if x0.shape != (n_state,):
            raise DimensionError(f"init must have length {n_state}, got {x0.shape}")
        if not np.all(np.isfinite(x0)):
            raise ParameterError("init has non-finite entries")
    innov, quad = _run_filter(
        filt.predictor, filt.gain, hmat, filt.innov_cov_inverse, data, x0
    )
    d = data.shape[1]
    per_term = d * _LOG_2PI + filt.log_det_innov_cov + quad
    return QmlEvaluation(
        minus2_loglik=float(np.sum(per_term)),
        innovations=innov,
        per_term=per_term,
    )


def quasi_loglik(
    family: ModelFamily, theta, data, h: float, init=None
) -> QmlEvaluation:
    """-2 log quasi-likelihood of ``theta`` for equidistant data at spacing h.

    Builds the continuous model for ``theta``, samples it at ``h``, solves the
    steady-state filter and runs the pseudo-innovation recursion with initial
    predictor state ``init`` (default: zero vector). Invalid ``theta`` raises
    the decoding errors of `theta_to_model`.
    """
    model = theta_to_model(family, theta)
    dssm = sample_ct_model(model, h)
    arr = _validate_data(data, dssm.d)
    filt = steady_state_filter(dssm)
    return _evaluate_filter(filt, dssm.H, arr, init)


def fd_steps(theta: np.ndarray) -> np.ndarray:
    """Per-coordinate central-difference steps eps^(1/3) * max(1, |theta|)."""
    theta = np.asarray(theta, dtype=float)
    return FD_STEP * np.maximum(1.0, np.abs(theta))


def _require_interior(family: ModelFamily, theta: np.ndarray, steps: np.ndarray):
    if np.any(theta - steps < family.theta_lower) or np.any(
        theta + steps > family.theta_upper
    ):
        raise ParameterError(
            "theta is closer to the box boundary than the finite-difference step"
        )


def score_sequence(family: ModelFamily, theta, data, h: float) -> np.ndarray:
    """L x r array of per-observation score rows (gradients of the per-term
    quasi log-likelihood values, by central finite differences)."""
    theta = np.asarray(theta, dtype=float).ravel()
    steps = fd_steps(theta)
    _require_interior(family, theta, steps)
    cols = []
    for i in range(family.r):
        e = steps[i]
        up = theta.copy()
        up[i] += e
        dn = theta.copy()
        dn[i] -= e
        f_up = quasi_loglik(family, up, data, h).per_term
        f_dn = quasi_loglik(family, dn, data, h).per_term
        cols.append((f_up - f_dn) / (2.0 * e))
    return np.column_stack(cols)


def finite_difference_hessian(func, theta, steps=None) -> np.ndarray:
    """Symmetrized central-difference Hessian of a scalar function.

    ``func`` may raise; exceptions propagate. Steps default to
    `fd_steps(theta)`.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    r = theta.size
    if steps is None:
        steps = fd_steps(theta)
    else:
        steps = np.asarray(steps, dtype=float).ravel()
    f0 = float(func(theta))
    hess = np.empty((r, r))
    for i in range(r):
        ei = steps[i]
        up = theta.copy()
        up[i] += ei
        dn = theta.copy()
        dn[i] -= ei
        hess[i, i] = (float(func(up)) - 2.0 * f0 + float(func(dn))) / (ei * ei)
    for i in range(r):
        for j in range(i + 1, r):
            ei, ej = steps[i], steps[j]
            pp = theta.copy()
            pp[i] += ei
            pp[j] += ej
            pm = theta.copy()
            pm[i] += ei
            pm[j] -= ej
            mp = theta.copy()
            mp[i] -= ei
            mp[j] += ej
            mm = theta.copy()
            mm[i] -= ei
            mm[j] -= ej
            val = (
                float(func(pp)) - float(func(pm)) - float(func(mp)) + float(func(mm))
            ) / (4.0 * ei * ej)
            hess[i, j] = val
            hess[j, i] = val
    return linalg.symmetrize(hess)


def default_ar_order(n_obs: int) -> int:
    """Score-autoregression order floor((L / log L)^(1/3))."""
    if n_obs < 3:
        return 0
    return int(np.floor((n_obs / np.log(n_obs)) ** (1.0 / 3.0)))


def sandwich_covariance(
    family: ModelFamily, theta_hat, data, h: float, s: int | None = None
) -> SandwichCovariance:
    """Sandwich covariance Xi = (1/L) J^{-1} I J^{-1} at the estimate.

    J is the finite-difference Hessian of the average objective; I comes from
    an order-``s`` least-squares autoregression of the score rows:
    with coefficient matrices Phi_1..Phi_s and residual second-moment matrix
    Sigma_U, ``I = Phi(1)^{-1} Sigma_U Phi(1)^{-T}`` where
    ``Phi(1) = I_r + sum_i Phi_i``. ``s = None`` selects
    floor((L/log L)^(1/3)); ``s = 0`` reduces I to the sample second moment
    of the scores. Raises `SingularMatrixError` for singular J (flat
    likelihood, see `fisher_rank_check`) or singular Phi(1).
    """
    theta_hat = np.asarray(theta_hat, dtype=float).ravel()
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    n_obs = arr.shape[0]
    r = family.r
    if s is None:
        s = default_ar_order(n_obs)
    s = int(s)
    if s < 0:
        raise ParameterError(f"AR order s must be nonnegative, got {s}")
    if n_obs <= s * r + r:
        raise DataError(
            f"need more than s*r + r = {s * r + r} observations for the AR({s}) "
            f"score regression, got {n_obs}"
        )
    steps = fd_steps(theta_hat)
    _require_interior(family, theta_hat, steps)

    def objective(th):
        return quasi_loglik(family, th, arr, h).minus2_loglik

    j_hat = finite_difference_hessian(objective, theta_hat, steps) / n_obs
    scores = score_sequence(family, theta_hat, arr, h)

    if s == 0:
        sigma_u = scores.T @ scores / n_obs
        phi_one = np.eye(r)
    else:
        yblk = scores[s:]
        xblk = np.hstack([scores[s - i : n_obs - i] for i in range(1, s + 1)])
        coef, *_ = np.linalg.lstsq(xblk, yblk, rcond=None)
        resid = yblk - xblk @ coef
        sigma_u = resid.T @ resid / (n_obs - s)
        phi_sum = np.zeros((r, r))
        for i in range(1, s + 1):
            g_i = coef[(i - 1) * r : i * r].T
            phi_sum += -g_i
        phi_one = np.eye(r) + phi_sum
    sigma_u = linalg.symmetrize(sigma_u)

    try:
        tmp = np.linalg.solve(phi_one, sigma_u)
        i_hat = np.linalg.solve(phi_one, tmp.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("score autoregression Phi(1) is singular") from exc
    i_hat = linalg.symmetrize(i_hat)

    try:
        ji = np.linalg.solve(j_hat, i_hat)
        xi = np.linalg.solve(j_hat, ji.T).T / n_obs
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "Hessian J is singular: the likelihood is flat in some direction "
            "(check identifiability with fisher_rank_check)"
        ) from exc
    xi = linalg.symmetrize(xi)

    w, vecs = np.linalg.eigh(xi)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if w[0] < -1e-8 * scale:
        warnings.warn(
            f"sandwich covariance indefinite: clamping eigenvalues {w[w < 0.0]}",
            RuntimeWarning,
            stacklevel=2,
        )
    if w[0] < 0.0:
        xi = linalg.symmetrize(vecs @ np.diag(np.clip(w, 0.0, None)) @ vecs.T)

    return SandwichCovariance(
        J_hat=j_hat,
        I_hat=i_hat,
        xi_hat=xi,
        ar_order=s,
        stderr=np.sqrt(np.clip(np.diag(xi), 0.0, None)),
    )


def fisher_rank_check(
    family: ModelFamily, theta0, j0: int, h: float = 1.0
) -> tuple:
    """Local identifiability probe: rank of the Jacobian of the filter
    fingerprint psi(theta) = (vec HK, vec HFK, ..., vec HF^{j0}K, vec V).

    Returns ``(rank, passed)`` with ``passed = (rank == r)``; the numerical
    rank uses the relative singular-value threshold 1e-7 (finite-difference
    Jacobian noise floor).
    """
    j0 = int(j0)
    if j0 < 1:
        raise ParameterError(f"j0 must be a positive integer, got {j0}")
    theta0 = np.asarray(theta0, dtype=float).ravel()
    steps = fd_steps(theta0)
    _require_interior(family, theta0, steps)

    def psi(th):
        model = theta_to_model(family, th)
        dssm = sample_ct_model(model, h)
        filt = steady_state_filter(dssm)
        pieces = []
        mat = dssm.H @ filt.gain
        pieces.append(mat.ravel(order="F"))
        fk = filt.gain
        for _ in range(j0):
            fk = dssm.F @ fk
            pieces.append((dssm.H @ fk).ravel(order="F"))
        pieces.append(filt.innov_cov.ravel(order="F"))
        return np.concatenate(pieces)

    cols = []
    for i in range(family.r):
        e = steps[i]
        up = theta0.copy()
        up[i] += e
        dn = theta0.copy()
        dn[i] -= e
        cols.append((psi(up) - psi(dn)) / (2.0 * e))
    jac = np.column_stack(cols)
    sv = np.linalg.svd(jac, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sv > FISHER_RANK_TOL * sv[0]))
    return rank, rank == family.r
