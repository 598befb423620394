"""Continuous- and discrete-time linear state space models.

The continuous model is

    dX(t) = A X(t) dt + B dL(t),      Y(t) = C X(t),

with ``A`` (N x N), ``B`` (N x m), ``C`` (d x N) and driving-noise covariance
``sigma_L`` (m x m, the covariance of L over unit time). The discrete model is

    X_n = F X_{n-1} + Z_{n-1},        Y_n = H X_n + W_n,

with joint noise covariance ``[[Q, R], [R^T, S]]`` for ``(Z_n, W_n)``.

This module provides the sampling map between the two (matrix exponential plus
Van Loan noise Gramian), second-order quantities (transfer function, spectral
densities in both time scales, autocovariance function) and structural
diagnostics (controllability/observability/minimality, the eigenvalue-spacing
sampling criterion, the spectrum strip check).

Convention note: the continuous spectral density carries the factor
``1/(2 pi)``; the discrete one does not. The folding identity that links them
is ``f_dt(omega) / (2 pi) = (1/h) * sum_k f_ct((omega + 2 pi k) / h)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DimensionError,
    GridError,
    NotPositiveDefiniteError,
    ParameterError,
    SingularMatrixError,
    StabilityError,
)

__all__ = [
    "ContinuousSSM",
    "DiscreteSSM",
    "StructuralReport",
    "sample_ct_model",
    "transfer_function",
    "spectral_density_ct",
    "spectral_density_dt",
    "autocovariance_ct",
    "structural_report",
    "numerical_rank",
]

#: singular values below this fraction of the largest count as zero
RANK_TOL = 1e-9

#: tolerance for the eigenvalue-spacing (aliasing) criterion
KALMAN_BERTRAM_TOL = 1e-9


def _arr(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class ContinuousSSM:
    """Continuous-time model (A, B, C) with optional driving covariance.

    ``sigma_L`` may be ``None`` for purely structural uses (rank diagnostics,
    transfer function); operations that need second moments require it.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_L: np.ndarray | None = None

    def __post_init__(self):
        a = _arr(self.A, "A")
        b = _arr(self.B, "B")
        c = _arr(self.C, "C")
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"A must be square, got {a.shape}")
        n = a.shape[0]
        if b.shape[0] != n:
            raise DimensionError(f"B has {b.shape[0]} rows, expected {n}")
        if c.shape[1] != n:
            raise DimensionError(f"C has {c.shape[1]} cols, expected {n}")
        sig = self.sigma_L
        if sig is not None:
            sig = _arr(sig, "sigma_L")
            m = b.shape[1]
            if sig.shape != (m, m):
                raise DimensionError(f"sigma_L {sig.shape} does not match B {b.shape}")
            if np.linalg.norm(sig - sig.T) > 1e-12 * (1.0 + np.linalg.norm(sig)):
                raise NotPositiveDefiniteError("sigma_L must be symmetric")
            sig = linalg.symmetrize(sig)
            try:
                np.linalg.cholesky(sig)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError("sigma_L must be positive definite") from exc
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "sigma_L", sig)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    @property
    def is_stable(self) -> bool:
        """True iff every eigenvalue of A has strictly negative real part."""
        return bool(np.all(self.eigenvalues().real < 0.0))

    def require_sigma(self) -> np.ndarray:
        if self.sigma_L is None:
            raise ParameterError("model has no driving covariance sigma_L attached")
        return self.sigma_L


@dataclass(frozen=True)
class DiscreteSSM:
    """Discrete-time model (F, H, Q, S, R); S and R default to zero."""

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    S: np.ndarray | None = None
    R: np.ndarray | None = None

    def __post_init__(self):
        f = _arr(self.F, "F")
        h = _arr(self.H, "H")
        q = _arr(self.Q, "Q")
        if f.shape[0] != f.shape[1]:
            raise DimensionError(f"F must be square, got {f.shape}")
        n = f.shape[0]
        d = h.shape[0]
        if h.shape[1] != n:
            raise DimensionError(f"H has {h.shape[1]} cols, expected {n}")
        if q.shape != (n, n):
            raise DimensionError(f"Q must be {n}x{n}, got {q.shape}")
        s = np.zeros((d, d)) if self.S is None else _arr(self.S, "S")
        r = np.zeros((n, d)) if self.R is None else _arr(self.R, "R")
        if s.shape != (d, d) or r.shape != (n, d):
            raise DimensionError(f"noise blocks S{s.shape}, R{r.shape} inconsistent")
        q = linalg.symmetrize(q)
        s = linalg.symmetrize(s)
        block = np.block([[q, r], [r.T, s]])
        w = np.linalg.eigvalsh(linalg.symmetrize(block))
        scale = max(float(np.max(np.abs(w))), 1e-300)
        if w[0] < -linalg.PSD_TOL * scale:
            raise NotPositiveDefiniteError(
                f"noise block covariance [[Q,R],[R^T,S]] indefinite (eig {w[0]:.3e})"
            )
        object.__setattr__(self, "F", f)
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "R", r)

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def spectral_radius(self) -> float:
        return linalg.spectral_radius(self.F)


@dataclass(frozen=True)
class StructuralReport:
    """Outcome of the structural diagnostics on a continuous model."""

    controllable: bool
    observable: bool
    minimal: bool
    stable: bool
    kalman_bertram_ok: bool
    spectrum_in_strip: bool
    mcmillan_degree_bound: int
    eigenvalues_of_A: tuple = field(default_factory=tuple)


def numerical_rank(m: np.ndarray, rel_tol: float = RANK_TOL) -> int:
    """Rank by singular values: below ``rel_tol * s_max`` counts as zero."""
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def sample_ct_model(m: ContinuousSSM, h: float) -> DiscreteSSM:
    """Exact discretization of a stable continuous model at spacing ``h``.

    Returns the discrete model with ``F = e^{Ah}``, ``H = C``,
    ``Q = int_0^h e^{Au} B sigma_L B^T e^{A^T u} du`` and ``S = 0``, ``R = 0``
    (the sampled process is observed without measurement noise).
    """
    if h <= 0:
        raise GridError(f"sampling spacing h must be positive, got {h}")
    sigma = m.require_sigma()
    eig = m.eigenvalues()
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0.0:
        raise StabilityError(
            f"cannot sample an unstable model: eigenvalue {worst}", eigenvalue=worst
        )
    f = linalg.expm(m.A * float(h))
    q = linalg.vanloan_gramian(m.A, m.B, sigma, h)
    d, n = m.d, m.N
    return DiscreteSSM(F=f, H=m.C.copy(), Q=q, S=np.zeros((d, d)), R=np.zeros((n, d)))


def transfer_function(m: ContinuousSSM, z: complex) -> np.ndarray:
    """Rational transfer function ``C (zI - A)^{-1} B`` at one complex point."""
    z = complex(z)
    eig = m.eigenvalues()
    dist = np.min(np.abs(eig - z))
    if dist < 1e-12:
        raise SingularMatrixError(
            f"z={z} is within 1e-12 of an eigenvalue of A (resolvent pole)"
        )
    n = m.N
    try:
        sol = np.linalg.solve(z * np.eye(n) - m.A, m.B.astype(complex))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"zI - A singular at z={z}") from exc
    return m.C @ sol


def _hermitize(f: np.ndarray) -> np.ndarray:
    return 0.5 * (f + f.conj().T)


def spectral_density_ct(m: ContinuousSSM, omega: float) -> np.ndarray:
    """Spectral density of the continuous output at angular frequency ``omega``.

    ``f(omega) = (2 pi)^{-1} H(i omega) sigma_L H(-i omega)^T`` with ``H`` the
    transfer function; Hermitian PSD for every real ``omega``.
    """
    sigma = m.require_sigma()
    hw = transfer_function(m, 1j * float(omega))
    f = (hw @ sigma @ hw.conj().T) / (2.0 * np.pi)
    return _hermitize(f)


def spectral_density_dt(m: DiscreteSSM, omega: float) -> np.ndarray:
    """Spectral density of the discrete output (no ``1/(2 pi)`` factor).

    For the general model this is ``G Q G* + G R + (G R)* + S`` with
    ``G = H (e^{i omega} I - F)^{-1}``; with ``S = R = 0`` (a sampled
    continuous model) it reduces to
    ``C (e^{i omega} I - F)^{-1} Q (e^{-i omega} I - F^T)^{-1} C^T``.
    """
    z = np.exp(1j * float(omega))
    n = m.N
    g = m.H @ np.linalg.solve(z * np.eye(n) - m.F, np.eye(n, dtype=complex))
    gr = g @ m.R
    f = g @ m.Q @ g.conj().T + gr + gr.conj().T + m.S
    return _hermitize(f)


def autocovariance_ct(m: ContinuousSSM, lag: float) -> np.ndarray:
    """Autocovariance ``gamma(lag) = C e^{A lag} Gamma_0 C^T`` for lag >= 0.

    ``Gamma_0`` solves ``A Gamma_0 + Gamma_0 A^T + B sigma_L B^T = 0``.
    Negative lags are the caller's job via ``gamma(-h) = gamma(h)^T``.
    """
    if lag < 0:
        raise ParameterError("lag must be nonnegative; use gamma(-h) = gamma(h)^T")
    sigma = m.require_sigma()
    gamma0 = linalg.solve_lyapunov_ct(m.A, m.B @ sigma @ m.B.T)
    if lag == 0:
        return m.C @ gamma0 @ m.C.T
    return m.C @ linalg.expm(m.A * float(lag)) @ gamma0 @ m.C.T


def _controllability(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def _observability(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    blocks = [c]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ a)
    return np.vstack(blocks)


def structural_report(m: ContinuousSSM, h: float) -> StructuralReport:
    """Structural and sampling diagnostics for a continuous model.

    Rank tests on the controllability matrix ``[B, AB, ..., A^{N-1}B]`` and
    the stacked observability matrix; minimality is their conjunction. The
    eigenvalue-spacing check flags pairs with ``lambda - lambda' = 2 pi i k/h``
    for integer ``k != 0`` (aliasing risk under sampling at spacing ``h``);
    the strip check requires every ``|Im lambda| < pi / h``.
    """
    if h <= 0:
        raise GridError(f"sampling spacing h must be positive, got {h}")
    eig = m.eigenvalues()
    ctrb = _controllability(m.A, m.B)
    obsv = _observability(m.A, m.C)
    controllable = numerical_rank(ctrb) == m.N
    observable = numerical_rank(obsv) == m.N
    stable = bool(np.all(eig.real < 0.0))

    kb_ok = True
    for i in range(len(eig)):
        for j in range(len(eig)):
            if i == j:
                continue
            delta = eig[i] - eig[j]
            if abs(delta.real) > KALMAN_BERTRAM_TOL:
                continue
            k = int(np.round(delta.imag * h / (2.0 * np.pi)))
            if k != 0 and abs(delta.imag - 2.0 * np.pi * k / h) <= KALMAN_BERTRAM_TOL:
                kb_ok = False
    strip = bool(np.all(np.abs(eig.imag) < np.pi / h))

    report = StructuralReport(
        controllable=controllable,
        observable=observable,
        minimal=controllable and observable,
        stable=stable,
        kalman_bertram_ok=kb_ok,
        spectrum_in_strip=strip,
        mcmillan_degree_bound=numerical_rank(obsv @ ctrb),
        eigenvalues_of_A=tuple(sorted(map(complex, eig), key=lambda z: (z.real, z.imag))),
    )
    assert report.minimal == (report.controllable and report.observable)
    return report
