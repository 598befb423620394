"""Dense real-matrix kernels the rest of the package builds on.

Four primitives, all operating on plain ``numpy.ndarray``:

* :func:`expm` -- matrix exponential (scaling-and-squaring, Pade degree 13,
  delegated to scipy which implements exactly that scheme),
* :func:`solve_lyapunov_ct` -- continuous Lyapunov equation
  ``A X + X A^T + W = 0`` for stable ``A``,
* :func:`solve_dare` -- the stabilizing solution of the discrete algebraic
  Riccati equation of the steady-state Kalman filter,
* :func:`vanloan_gramian` -- the noise Gramian
  ``int_0^h e^{Au} B Sigma B^T e^{A^T u} du`` via the block-matrix
  exponential.

Conventions: every symmetric output is explicitly symmetrized
(``(X + X^T)/2``) before any definiteness check; eigenvalues down to
``-1e-10 * ||X||`` are accepted as zero and clamped.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as _sla

from .errors import (
    ConvergenceError,
    DimensionError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    StabilityError,
)

__all__ = [
    "expm",
    "solve_lyapunov_ct",
    "solve_dare",
    "kalman_gain",
    "vanloan_gramian",
    "riccati_residual",
    "symmetrize",
    "spectral_radius",
]

#: relative eigenvalue tolerance for "PSD up to rounding"
PSD_TOL = 1e-10

#: successive-iterate tolerance for the Riccati solvers
DARE_TOL = 1e-13

#: iteration cap for the fixed-point Riccati fallback
DARE_MAX_ITER = 10_000


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains non-finite entries")
    return a


def symmetrize(x: np.ndarray) -> np.ndarray:
    """Return ``(x + x.T) / 2``."""
    return 0.5 * (x + x.T)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m)))) if m.size else 0.0


def _clamp_psd(x: np.ndarray, what: str) -> np.ndarray:
    """Symmetrize and clamp rounding-level negative eigenvalues to zero.

    Raises if an eigenvalue is negative beyond ``PSD_TOL`` relative to the
    matrix scale (then the input is genuinely indefinite, not just noisy).
    """
    x = symmetrize(x)
    w = np.linalg.eigvalsh(x)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if w[0] < -PSD_TOL * scale:
        raise NotPositiveDefiniteError(
            f"{what} has negative eigenvalue {w[0]:.3e} (scale {scale:.3e})"
        )
    if w[0] < 0.0:
        w_full, v = np.linalg.eigh(x)
        x = symmetrize((v * np.clip(w_full, 0.0, None)) @ v.T)
    return x


def expm(m) -> np.ndarray:
    """Matrix exponential ``e^M`` of a square real matrix.

    Scaling-and-squaring with a degree-13 Pade approximant (scipy's
    implementation of that algorithm). Exact to working precision for
    nilpotent and diagonal inputs.
    """
    a = _as_matrix(m, "M")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got {a.shape}")
    return _sla.expm(a)


def solve_lyapunov_ct(a, w) -> np.ndarray:
    """Solve ``A X + X A^T + W = 0`` for stable ``A`` and symmetric PSD ``W``.

    For ``N <= 30`` the equation is solved directly as the Kronecker-vectorized
    linear system ``(I (x) A + A (x) I) vec X = -vec W``; larger problems fall
    back to a Bartels-Stewart reduction. The result is symmetrized.

    Raises
    ------
    StabilityError
        if some eigenvalue of ``A`` has nonnegative real part (the offending
        eigenvalue is attached to the exception).
    """
    a = _as_matrix(a, "A")
    w = _as_matrix(w, "W")
    n = a.shape[0]
    if a.shape[0] != a.shape[1] or w.shape != a.shape:
        raise DimensionError(f"incompatible shapes A{a.shape}, W{w.shape}")
    eig = np.linalg.eigvals(a)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0.0:
        raise StabilityError(
            f"A is not stable: eigenvalue {worst} has Re >= 0", eigenvalue=worst
        )
    w = symmetrize(w)
    if n <= 30:
        eye = np.eye(n)
        lhs = np.kron(eye, a) + np.kron(a, eye)
        x = np.linalg.solve(lhs, -w.reshape(-1)).reshape(n, n)
    else:
        x = _sla.solve_continuous_lyapunov(a, -w)
    return symmetrize(x)


def riccati_residual(f, h, q, s, r, omega) -> float:
    """Frobenius norm of the DARE defect at ``omega``.

    The equation is the steady-state filter Riccati equation
    ``O = F O F^T + Q - (F O H^T + R)(H O H^T + S)^{-1}(F O H^T + R)^T``.
    """
    foh = f @ omega @ h.T + r
    v = symmetrize(h @ omega @ h.T + s)
    res = f @ omega @ f.T + q - foh @ np.linalg.solve(v, foh.T) - omega
    return float(np.linalg.norm(res))


def _smith_stein(phi: np.ndarray, w: np.ndarray, max_doublings: int = 200) -> np.ndarray:
    """Solve ``X = phi X phi^T + W`` by the doubling (squared Smith) iteration.

    ``X_{j+1} = X_j + M_j X_j M_j^T``, ``M_{j+1} = M_j^2`` converges
    quadratically whenever the spectral radius of ``phi`` is below one.
    """
    x = symmetrize(w)
    m = phi
    for _ in range(max_doublings):
        mn = float(np.linalg.norm(m))
        if mn < 3e-9:  # remaining tail is O(||M||^2 ||X||) ~ 1e-17 ||X||
            return symmetrize(x)
        if not np.isfinite(mn) or mn > 1e150:
            break
        x = x + m @ x @ m.T
        m = m @ m
    raise ConvergenceError("Stein doubling iteration did not converge (rho(phi) >= 1?)")


def _dare_fixed_point(f, h, q, s, r, tol, max_iter):
    """Iterate the Riccati recursion from ``Omega_0 = Q`` to a fixed point."""
    omega = symmetrize(q)
    for _ in range(max_iter):
        foh = f @ omega @ h.T + r
        v = symmetrize(h @ omega @ h.T + s)
        try:
            gain_t = np.linalg.solve(v, foh.T)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("H Omega H^T + S singular during iteration") from exc
        nxt = symmetrize(f @ omega @ f.T + q - foh @ gain_t)
        if np.linalg.norm(nxt - omega) <= tol * max(1.0, np.linalg.norm(nxt)):
            return nxt
        omega = nxt
    raise ConvergenceError(f"Riccati fixed-point iteration: no convergence in {max_iter} steps")


def solve_dare(f, h, q, s, r, *, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Stabilizing solution of the steady-state filter Riccati equation.

    ``Omega = F Omega F^T + Q - (F Omega H^T + R)(H Omega H^T + S)^{-1}
    (F Omega H^T + R)^T`` with noise block covariance ``[[Q, R], [R^T, S]]``.

    The primary scheme is a Newton (gain-update) iteration where each inner
    closed-loop Stein equation is solved by a structure-preserving doubling
    iteration; this is quadratically convergent and, unlike textbook doubling
    initialization, well defined for singular ``S`` (sampled continuous-time
    models have ``S = 0``). Starting from gain 0 is valid because ``F`` is
    required to be Schur stable. If the Newton path breaks down, a plain
    fixed-point iteration of the Riccati recursion from ``Omega_0 = Q`` is
    used as fallback (tolerance ``tol`` on successive iterates, ``max_iter``
    cap).

    Raises
    ------
    StabilityError
        spectral radius of ``F`` is not < 1.
    ConvergenceError
        no scheme reached the residual target.
    """
    f = _as_matrix(f, "F")
    h = _as_matrix(h, "H")
    q = _as_matrix(q, "Q")
    s = _as_matrix(s, "S")
    r = _as_matrix(r, "R")
    n, d = f.shape[0], h.shape[0]
    if f.shape != (n, n) or h.shape != (d, n) or q.shape != (n, n) \
            or s.shape != (d, d) or r.shape != (n, d):
        raise DimensionError(
            f"inconsistent DARE shapes F{f.shape} H{h.shape} Q{q.shape} S{s.shape} R{r.shape}"
        )
    eig = np.linalg.eigvals(f)
    worst = eig[np.argmax(np.abs(eig))]
    if abs(worst) >= 1.0:
        raise StabilityError(
            f"F is not Schur stable: eigenvalue {worst} has |.| >= 1", eigenvalue=worst
        )
    q = symmetrize(q)
    s = symmetrize(s)

    omega = None
    try:
        gain = np.zeros((n, d))
        prev = None
        for _ in range(100):
            phi = f - gain @ h
            w = q + gain @ s @ gain.T - r @ gain.T - gain @ r.T
            cur = _smith_stein(phi, w)
            v = symmetrize(h @ cur @ h.T + s)
            gain = np.linalg.solve(v, (f @ cur @ h.T + r).T).T
            if prev is not None and \
                    np.linalg.norm(cur - prev) <= tol * max(1.0, np.linalg.norm(cur)):
                omega = cur
                break
            prev = cur
    except (ConvergenceError, np.linalg.LinAlgError):
        omega = None

    if omega is None or riccati_residual(f, h, q, s, r, omega) > 1e-10 * (1.0 + np.linalg.norm(q)):
        omega = _dare_fixed_point(f, h, q, s, r, tol, max_iter)

    res = riccati_residual(f, h, q, s, r, omega)
    if res > 1e-10 * (1.0 + np.linalg.norm(q)):
        raise ConvergenceError(f"DARE residual {res:.3e} above tolerance")
    return _clamp_psd(omega, "DARE solution")


def kalman_gain(f, h, omega, s, r):
    """Steady-state gain and innovation covariance from a Riccati solution.

    Returns ``(K, V)`` with ``K = (F Omega H^T + R)(H Omega H^T + S)^{-1}``
    and ``V = H Omega H^T + S`` (symmetrized, required positive definite).

    Raises
    ------
    SingularMatrixError
        if ``V`` is singular -- a degenerate/unidentifiable model.
    """
    f = _as_matrix(f, "F")
    h = _as_matrix(h, "H")
    omega = _as_matrix(omega, "Omega")
    s = _as_matrix(s, "S")
    r = _as_matrix(r, "R")
    v = symmetrize(h @ omega @ h.T + s)
    try:
        cho = _sla.cho_factor(v)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("innovation covariance V is not positive definite") from exc
    k = _sla.cho_solve(cho, (f @ omega @ h.T + r).T).T
    return k, v


def vanloan_gramian(a, b, sigma, h) -> np.ndarray:
    """Noise Gramian ``int_0^h e^{Au} B Sigma B^T e^{A^T u} du``.

    Computed from one exponential of the block matrix
    ``[[A, B Sigma B^T], [0, -A^T]] * h``: with ``E = expm(...)`` the Gramian
    is ``E[:N, N:] @ E[:N, :N].T``. Works for any square ``A`` (stability not
    required on a finite horizon). The result is symmetrized and clamped PSD.
    """
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    sigma = _as_matrix(sigma, "Sigma")
    if h <= 0:
        raise DimensionError(f"horizon h must be positive, got {h}")
    if np.linalg.norm(sigma - sigma.T) > 1e-12 * (1.0 + np.linalg.norm(sigma)):
        raise NotPositiveDefiniteError("Sigma must be symmetric")
    n = a.shape[0]
    if b.shape[0] != n:
        raise DimensionError(f"A is {a.shape} but B is {b.shape}")
    if sigma.shape != (b.shape[1], b.shape[1]):
        raise DimensionError(f"Sigma {sigma.shape} does not match B {b.shape}")
    # Split the horizon so the block exponential stays well conditioned: its
    # lower-right block grows like e^{+||A||u} even for stable A, which
    # amplifies rounding on stiff models over long horizons. Compute on
    # h / 2^k and double back through G(2u) = G(u) + e^{Au} G(u) e^{A^T u}.
    doublings = 0
    scale = float(np.linalg.norm(a, 1)) * float(h)
    if scale > 0.5:
        doublings = min(60, int(np.ceil(np.log2(scale / 0.5))))
    step = float(h) / 2.0**doublings
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = a
    blk[:n, n:] = b @ sigma @ b.T
    blk[n:, n:] = -a.T
    e = _sla.expm(blk * step)
    f = e[:n, :n]
    gram = e[:n, n:] @ f.T
    for _ in range(doublings):
        gram = gram + f @ gram @ f.T
        f = f @ f
    return _clamp_psd(gram, "Van Loan Gramian")
