"""Driving-noise generation and Euler simulation of the state equation.

Two driver families are supported: Brownian motion with covariance Sigma per
unit time, and the normal-inverse Gaussian (NIG) process with parameters
(mu, alpha, beta, delta, Delta). An NIG increment over time dt is generated
by the exact variance-mean mixture

    W ~ InverseGaussian(mean = delta*dt / kappa, shape = (delta*dt)^2),
    X = mu*dt + W * Delta beta + sqrt(W) * chol(Delta) Z,    Z ~ N(0, I),

with kappa^2 = alpha^2 - beta' Delta beta > 0. First and second moments per
unit time are mu + delta*Delta*beta/kappa and
delta*Delta/kappa + delta*(Delta beta)(Delta beta)'/kappa^3; the sampler is
validated against these closed forms (the mixture convention itself is pinned
only through those moments).

Paths of dX = A X dt + B dL are generated with the explicit Euler scheme
X_{k+1} = X_k + A X_k dt + B dL_k on a fine grid and observed through C;
`sample_path` extracts the equidistant coarse observations used for
estimation. Randomness comes from numpy's counter-based Philox generator so
runs are reproducible from the recorded integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    DimensionError,
    GridError,
    NotPositiveDefiniteError,
    ParameterError,
)
from .statespace import ContinuousSSM

__all__ = [
    "BrownianParams",
    "NigParams",
    "SimulatedPath",
    "levy_increments",
    "euler_simulate",
    "sample_path",
]


def _psd_factor(sigma: np.ndarray, what: str) -> np.ndarray:
    """Symmetric PSD square root factor; tolerates singular covariances."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionError(f"{what} must be square, got {sigma.shape}")
    if np.linalg.norm(sigma - sigma.T) > 1e-12 * (1.0 + np.linalg.norm(sigma)):
        raise NotPositiveDefiniteError(f"{what} must be symmetric")
    w, v = np.linalg.eigh(linalg.symmetrize(sigma))
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if w[0] < -linalg.PSD_TOL * scale:
        raise NotPositiveDefiniteError(f"{what} has negative eigenvalue {w[0]:.3e}")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


@dataclass(frozen=True)
class BrownianParams:
    """Brownian driver with covariance ``sigma`` per unit time (PSD)."""

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 0:
            sig = sig.reshape(1, 1)
        _psd_factor(sig, "Brownian covariance")
        object.__setattr__(self, "sigma", sig)

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    def increment_mean(self, dt: float = 1.0) -> np.ndarray:
        return np.zeros(self.m)

    def increment_covariance(self, dt: float = 1.0) -> np.ndarray:
        return self.sigma * dt


@dataclass(frozen=True)
class NigParams:
    """Normal-inverse Gaussian driver (mu, alpha, beta, delta, Delta).

    Requires ``kappa^2 = alpha^2 - beta' Delta beta > 0``, ``Delta`` symmetric
    positive definite with unit determinant, and nonnegative alpha, delta.
    """

    mu: np.ndarray
    alpha: float
    beta: np.ndarray
    delta: float
    Delta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        dmat = np.asarray(self.Delta, dtype=float)
        if dmat.ndim == 0:
            dmat = dmat.reshape(1, 1)
        m = mu.size
        if beta.size != m or dmat.shape != (m, m):
            raise DimensionError(
                f"inconsistent NIG dimensions: mu {mu.shape}, beta {beta.shape}, "
                f"Delta {dmat.shape}"
            )
        alpha = float(self.alpha)
        delta = float(self.delta)
        if alpha < 0.0 or delta < 0.0:
            raise ParameterError("alpha and delta must be nonnegative")
        _psd_factor(dmat, "Delta")
        try:
            np.linalg.cholesky(dmat)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("Delta must be positive definite") from exc
        det = float(np.linalg.det(dmat))
        if abs(det - 1.0) > 1e-8:
            raise ParameterError(f"Delta must have determinant 1, got {det!r}")
        kappa_sq = alpha**2 - float(beta @ dmat @ beta)
        if kappa_sq <= 0.0:
            raise ParameterError(
                f"need alpha^2 - beta' Delta beta > 0, got {kappa_sq!r}"
            )
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "Delta", dmat)

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def kappa(self) -> float:
        return float(np.sqrt(self.alpha**2 - self.beta @ self.Delta @ self.beta))

    def increment_mean(self, dt: float = 1.0) -> np.ndarray:
        return dt * (self.mu + self.delta * (self.Delta @ self.beta) / self.kappa)

    def increment_covariance(self, dt: float = 1.0) -> np.ndarray:
        db = self.Delta @ self.beta
        kappa = self.kappa
        return dt * (
            self.delta / kappa * self.Delta
            + self.delta / kappa**3 * np.outer(db, db)
        )


@dataclass(frozen=True)
class SimulatedPath:
    """A fine-grid Euler path: states X and observations Y = C X."""

    dt: float
    states: np.ndarray
    observations_full: np.ndarray
    seed: int

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt


def _fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))


def _rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _draw_increments(kind, dt: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(kind, BrownianParams):
        factor = _psd_factor(kind.sigma, "Brownian covariance") * np.sqrt(dt)
        return rng.standard_normal((n, kind.m)) @ factor.T
    if isinstance(kind, NigParams):
        kappa = kind.kappa
        delta_t = kind.delta * dt
        w = rng.wald(delta_t / kappa, delta_t**2, size=n)
        z = rng.standard_normal((n, kind.m))
        chol = np.linalg.cholesky(kind.Delta)
        db = kind.Delta @ kind.beta
        return kind.mu * dt + w[:, None] * db + np.sqrt(w)[:, None] * (z @ chol.T)
    raise ParameterError(f"unknown driver kind {type(kind).__name__}")


def levy_increments(kind, dt: float, n: int, seed=None) -> np.ndarray:
    """n i.i.d. increments of the driving process over steps of length dt."""
    if dt <= 0:
        raise GridError(f"dt must be positive, got {dt}")
    n = int(n)
    if n < 0:
        raise ParameterError(f"n must be nonnegative, got {n}")
    if seed is None:
        seed = _fresh_seed()
    return _draw_increments(kind, float(dt), n, _rng_from_seed(seed))


def _euler_loop(a, b, incr, x0, dt):
    n_steps = incr.shape[0]
    n_state = a.shape[0]
    m = b.shape[1]
    out = np.empty((n_steps + 1, n_state))
    for i in range(n_state):
        out[0, i] = x0[i]
    for k in range(n_steps):
        for i in range(n_state):
            acc = 0.0
            for j in range(n_state):
                acc += a[i, j] * out[k, j]
            val = out[k, i] + acc * dt
            for j in range(m):
                val += b[i, j] * incr[k, j]
            out[k + 1, i] = val
    return out


try:  # pragma: no cover
    from numba import njit

    _euler_jit = njit(cache=True)(_euler_loop)
except ImportError:  # pragma: no cover
    _euler_jit = None


def _run_euler(a, b, incr, x0, dt):
    import os

    use_jit = _euler_jit is not None and not os.environ.get("CARMA_QML_DISABLE_NUMBA")
    fn = _euler_jit if use_jit else _euler_loop
    return fn(
        np.ascontiguousarray(a),
        np.ascontiguousarray(b),
        np.ascontiguousarray(incr),
        np.ascontiguousarray(x0),
        float(dt),
    )


def euler_simulate(
    m: ContinuousSSM, kind, T: float, dt: float, x0=None, seed=None
) -> SimulatedPath:
    """Euler path of dX = A X dt + B dL on the grid 0, dt, ..., ⌊T/dt⌋dt.

    ``x0`` may be a state vector, None (zero start) or ``"stationary"``,
    which draws X(0) from the Gaussian stationary law — only meaningful for
    Brownian drivers and rejected otherwise. The path is reproducible from
    the recorded seed (one Philox stream drives the optional stationary draw
    and then the increments).
    """
    if dt <= 0:
        raise GridError(f"dt must be positive, got {dt}")
    if T < dt:
        raise GridError(f"horizon T = {T} shorter than one step dt = {dt}")
    if m.B.shape[1] != _kind_dim(kind):
        raise DimensionError(
            f"driver dimension {_kind_dim(kind)} does not match B columns {m.B.shape[1]}"
        )
    if seed is None:
        seed = _fresh_seed()
    rng = _rng_from_seed(seed)
    n_steps = int(np.floor(T / dt + 1e-9))

    if isinstance(x0, str):
        if x0 != "stationary":
            raise ParameterError(f"unknown x0 option {x0!r}")
        if not isinstance(kind, BrownianParams):
            raise ParameterError(
                "stationary start is only available for Brownian drivers "
                "(the stationary law is Gaussian only in that case)"
            )
        gamma0 = linalg.solve_lyapunov_ct(m.A, m.B @ kind.sigma @ m.B.T)
        start = _psd_factor(gamma0, "stationary covariance") @ rng.standard_normal(m.N)
    elif x0 is None:
        start = np.zeros(m.N)
    else:
        start = np.asarray(x0, dtype=float).ravel()
        if start.shape != (m.N,):
            raise DimensionError(f"x0 must have length {m.N}, got {start.shape}")

    incr = _draw_increments(kind, float(dt), n_steps, rng)
    states = _run_euler(m.A, m.B, incr, start, dt)
    return SimulatedPath(
        dt=float(dt),
        states=states,
        observations_full=states @ m.C.T,
        seed=int(seed),
    )


def _kind_dim(kind) -> int:
    if isinstance(kind, (BrownianParams, NigParams)):
        return kind.m
    raise ParameterError(f"unknown driver kind {type(kind).__name__}")


def sample_path(path: SimulatedPath, h: float) -> np.ndarray:
    """Equidistant observations Y(h), Y(2h), ..., Y(Lh) with L = ⌊T/h⌋.

    ``h`` must be an integer multiple of the fine step within 1e-9 relative
    tolerance; otherwise a `GridError` is raised.
    """
    if h <= 0:
        raise GridError(f"h must be positive, got {h}")
    stride = int(round(h / path.dt))
    if stride < 1 or abs(h - stride * path.dt) > 1e-9 * max(h, path.dt):
        raise GridError(
            f"h = {h} is not an integer multiple of the simulation step {path.dt}"
        )
    n_coarse = path.n_steps // stride
    idx = stride * np.arange(1, n_coarse + 1)
    return path.observations_full[idx]
