"""Echelon-form parametrizations of multivariate CARMA models.

A d-dimensional CARMA process with autoregressive order p and moving-average
order q < p is determined by matrix polynomials

    P(z) = P_lead z^p + A_1 z^{p-1} + ... + A_p,
    Q(z) = B_0 z^q + B_1 z^{q-1} + ... + B_q,

or equivalently by a state space triple (A, B, C) of dimension N with transfer
function C (zI - A)^{-1} B = P(z)^{-1} Q(z). To make the map from parameters
to transfer functions injective we use canonical echelon forms indexed by a
Kronecker multi-index nu = (nu_1, ..., nu_d) with N = nu_1 + ... + nu_d:
free coefficients alpha_{ij,k} (k = 1..nu_ij, nu_ij = min(nu_i + [i > j],
nu_j)) pin down A and the AR polynomial, the input matrix B carries the
remaining freedom, and C selects the first component of each sub-block.

The off-diagonal echelon AR polynomial entries have degree strictly below
max(nu), so for unequal nu_i the leading coefficient ``P_lead`` is the 0/1
diagonal ``diag(nu_i == p)`` rather than the identity; ``McarmaPolynomials``
stores it explicitly and the companion-form realization requires a monic
family (equal nu_i).

An optional stationarity-friendly normalization fixes the transfer function
at zero to ``H(0) = -I_d``; it pins d of the rows of K = T B (T the echelon
change of basis, ``|det T| = 1``) to AR coefficients and leaves the other
N - d rows free.

``ModelFamily`` bundles a structure, a box of admissible parameters and a
slot map sending each coordinate of theta into alpha / free-input / noise
covariance entries; ``theta_to_model`` is the map actually optimized over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    ParameterError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    StabilityError,
)
from .statespace import ContinuousSSM

__all__ = [
    "KroneckerStructure",
    "McarmaPolynomials",
    "ModelFamily",
    "echelon_ssm",
    "echelon_mfd",
    "mcarma_to_ssm",
    "echelon_family",
    "theta_to_model",
    "vech_indices",
]


@dataclass(frozen=True)
class KroneckerStructure:
    """Kronecker index nu = (nu_1, ..., nu_d), all entries >= 1."""

    nu: tuple

    def __post_init__(self):
        nu = tuple(int(v) for v in self.nu)
        if len(nu) == 0:
            raise ParameterError("nu must have at least one entry")
        if any(v < 1 for v in nu):
            raise ParameterError(f"Kronecker indices must be >= 1, got {nu}")
        object.__setattr__(self, "nu", nu)

    @property
    def d(self) -> int:
        return len(self.nu)

    @property
    def N(self) -> int:
        return sum(self.nu)

    @property
    def p(self) -> int:
        return max(self.nu)

    def nu_ij(self, i: int, j: int) -> int:
        """Number of free alpha coefficients in block (i, j), 0-based."""
        extra = 1 if i > j else 0
        return min(self.nu[i] + extra, self.nu[j])

    def block_start(self, i: int) -> int:
        return sum(self.nu[:i])

    @property
    def n_alpha(self) -> int:
        d = self.d
        return sum(self.nu_ij(i, j) for i in range(d) for j in range(d))


def _alpha_table(structure: KroneckerStructure, alpha) -> dict:
    """Normalize alpha input to {(i, j): 1-d array of length nu_ij}."""
    d = structure.d
    table = {}
    for i in range(d):
        for j in range(d):
            nij = structure.nu_ij(i, j)
            raw = alpha.get((i, j)) if hasattr(alpha, "get") else alpha[i][j]
            vec = np.zeros(nij) if raw is None else np.asarray(raw, dtype=float).ravel()
            if vec.shape != (nij,):
                raise DimensionError(
                    f"alpha[{i},{j}] must have length {nij}, got {vec.shape}"
                )
            table[(i, j)] = vec
    return table


def _assemble_A(structure: KroneckerStructure, alpha: dict) -> np.ndarray:
    """State matrix: shift blocks on the diagonal, alpha rows at block ends."""
    n = structure.N
    a = np.zeros((n, n))
    for i in range(structure.d):
        ri = structure.block_start(i)
        ni = structure.nu[i]
        for l in range(ni - 1):
            a[ri + l, ri + l + 1] = 1.0
        for j in range(structure.d):
            cj = structure.block_start(j)
            vec = alpha[(i, j)]
            a[ri + ni - 1, cj : cj + len(vec)] = vec
    return a


def _assemble_C(structure: KroneckerStructure) -> np.ndarray:
    c = np.zeros((structure.d, structure.N))
    for i in range(structure.d):
        c[i, structure.block_start(i)] = 1.0
    return c


def _assemble_T(structure: KroneckerStructure, alpha: dict) -> np.ndarray:
    """Echelon change of basis T with K = T B; always ``|det T| = 1``.

    Block (i, j) entry (l, k) (1-based within the block) is
    ``-alpha_{ij, l+k}`` when ``l + k <= nu_ij`` plus ``1`` when ``i == j``
    and ``l + k == nu_i + 1``.
    """
    n = structure.N
    t = np.zeros((n, n))
    for i in range(structure.d):
        ri = structure.block_start(i)
        ni = structure.nu[i]
        for j in range(structure.d):
            cj = structure.block_start(j)
            nj = structure.nu[j]
            nij = structure.nu_ij(i, j)
            vec = alpha[(i, j)]
            for l in range(1, ni + 1):
                for k in range(1, nj + 1):
                    val = 0.0
                    if l + k <= nij:
                        val -= vec[l + k - 1]
                    if i == j and l + k == ni + 1:
                        val += 1.0
                    t[ri + l - 1, cj + k - 1] = val
    return t


def _free_rows(structure: KroneckerStructure) -> list:
    starts = {structure.block_start(i) for i in range(structure.d)}
    return [r for r in range(structure.N) if r not in starts]


def _check_normalization(normalization, d: int):
    if normalization is None:
        return False
    norm = np.asarray(normalization, dtype=float)
    if norm.shape != (d, d) or not np.allclose(norm, -np.eye(d), atol=1e-12):
        raise ParameterError("only the H(0) = -I normalization is supported")
    return True


def _assemble_K(structure: KroneckerStructure, alpha: dict, bfree: np.ndarray) -> np.ndarray:
    """Input matrix in echelon coordinates under H(0) = -I.

    Row ``block_start(i)`` equals ``(alpha_{i1,1}, ..., alpha_{id,1})``; the
    remaining N - d rows are free and filled from ``bfree`` top to bottom.
    """
    d = structure.d
    n = structure.N
    free = _free_rows(structure)
    bfree = np.asarray(bfree, dtype=float).reshape(len(free), d)
    k = np.zeros((n, d))
    for i in range(d):
        for j in range(d):
            k[structure.block_start(i), j] = alpha[(i, j)][0]
    for row, vals in zip(free, bfree):
        k[row] = vals
    return k


def echelon_ssm(structure, alpha, b, normalization=None) -> ContinuousSSM:
    """Assemble the echelon state space model (A, B, C) without noise.

    ``alpha`` maps (i, j) to the length-``nu_ij`` coefficient vector. Without
    normalization ``b`` is the full N x m input matrix. With
    ``normalization = -I_d`` it holds the (N - d) x d free rows of K = T B
    and the constrained rows are derived from alpha; the resulting transfer
    function satisfies H(0) = -I_d whenever A is invertible (a singular A
    means the parameter point is not normalizable and raises).
    """
    table = _alpha_table(structure, alpha)
    a = _assemble_A(structure, table)
    c = _assemble_C(structure)
    if _check_normalization(normalization, structure.d):
        t = _assemble_T(structure, table)
        k = _assemble_K(structure, table, b)
        bmat = np.linalg.solve(t, k)
        try:
            np.linalg.solve(a, bmat)
        except np.linalg.LinAlgError as exc:
            raise ParameterError(
                "parameter point is not normalizable: A is singular"
            ) from exc
    else:
        bmat = np.asarray(b, dtype=float)
        if bmat.ndim != 2 or bmat.shape[0] != structure.N:
            raise DimensionError(
                f"b must be {structure.N} x m, got {np.shape(b)}"
            )
    return ContinuousSSM(A=a, B=bmat, C=c, sigma_L=None)


@dataclass(frozen=True)
class McarmaPolynomials:
    """AR/MA matrix polynomial pair (P, Q) with explicit AR leading matrix.

    ``ar_coeffs`` holds A_1..A_p (coefficients of z^{p-1}..z^0 after the
    lead), ``ma_coeffs`` holds B_0..B_q (B_0 multiplying z^q). ``ar_lead``
    defaults to the identity (monic AR polynomial).
    """

    ar_coeffs: tuple
    ma_coeffs: tuple
    ar_lead: np.ndarray | None = None

    def __post_init__(self):
        ar = tuple(np.asarray(m, dtype=float) for m in self.ar_coeffs)
        ma = tuple(np.asarray(m, dtype=float) for m in self.ma_coeffs)
        if not ar:
            raise ParameterError("need at least one AR coefficient (p >= 1)")
        d = ar[0].shape[0]
        for m in ar:
            if m.shape != (d, d):
                raise DimensionError("AR coefficients must all be d x d")
        if not ma:
            raise ParameterError("need at least one MA coefficient (B_0)")
        mm = ma[0].shape[1]
        for m in ma:
            if m.shape != (d, mm):
                raise DimensionError("MA coefficients must all be d x m")
        if len(ma) > len(ar):
            raise ParameterError(
                f"moving-average order q = {len(ma) - 1} must be < p = {len(ar)}"
            )
        lead = self.ar_lead
        if lead is not None:
            lead = np.asarray(lead, dtype=float)
            if lead.shape != (d, d):
                raise DimensionError("ar_lead must be d x d")
        object.__setattr__(self, "ar_coeffs", ar)
        object.__setattr__(self, "ma_coeffs", ma)
        object.__setattr__(self, "ar_lead", lead)

    @property
    def p(self) -> int:
        return len(self.ar_coeffs)

    @property
    def q(self) -> int:
        return len(self.ma_coeffs) - 1

    @property
    def d(self) -> int:
        return self.ar_coeffs[0].shape[0]

    @property
    def m(self) -> int:
        return self.ma_coeffs[0].shape[1]

    def lead(self) -> np.ndarray:
        return np.eye(self.d) if self.ar_lead is None else self.ar_lead

    def is_monic(self) -> bool:
        return self.ar_lead is None or np.allclose(self.ar_lead, np.eye(self.d), atol=1e-12)

    def ar_eval(self, z: complex) -> np.ndarray:
        z = complex(z)
        out = self.lead().astype(complex) * z ** self.p
        for l, coeff in enumerate(self.ar_coeffs, start=1):
            out = out + coeff * z ** (self.p - l)
        return out

    def ma_eval(self, z: complex) -> np.ndarray:
        z = complex(z)
        out = np.zeros((self.d, self.m), dtype=complex)
        for j, coeff in enumerate(self.ma_coeffs):
            out = out + coeff * z ** (self.q - j)
        return out

    def transfer(self, z: complex) -> np.ndarray:
        """Left matrix-fraction transfer function P(z)^{-1} Q(z)."""
        pz = self.ar_eval(z)
        try:
            return np.linalg.solve(pz, self.ma_eval(z))
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"P(z) singular at z = {z}") from exc


def echelon_mfd(structure, alpha, b, normalization=None) -> McarmaPolynomials:
    """Matrix-fraction description (P, Q) of the echelon model.

    ``p_ij(z) = delta_ij z^{nu_i} - sum_k alpha_{ij,k} z^{k-1}`` and row i of
    Q collects the rows of K = T B belonging to block i as coefficients of
    ascending powers: ``q_ij(z) = sum_{k=1}^{nu_i} K[start_i + k - 1, j]
    z^{k-1}``. Arguments as in `echelon_ssm`. The AR lead is
    ``diag(nu_i == max nu)`` and the MA order is ``max(nu) - 1``.
    """
    table = _alpha_table(structure, alpha)
    d = structure.d
    p = structure.p
    if _check_normalization(normalization, d):
        k = _assemble_K(structure, table, b)
    else:
        t = _assemble_T(structure, table)
        bmat = np.asarray(b, dtype=float)
        if bmat.ndim != 2 or bmat.shape[0] != structure.N:
            raise DimensionError(f"b must be {structure.N} x m, got {np.shape(b)}")
        k = t @ bmat
    m = k.shape[1]

    # by_degree[deg] = coefficient matrix of z^deg, deg = 0..p
    by_degree = [np.zeros((d, d)) for _ in range(p + 1)]
    for i in range(d):
        by_degree[structure.nu[i]][i, i] += 1.0
        for j in range(d):
            vec = table[(i, j)]
            for kk in range(1, len(vec) + 1):
                by_degree[kk - 1][i, j] -= vec[kk - 1]
    ar_lead = by_degree[p]
    ar_coeffs = tuple(by_degree[p - l] for l in range(1, p + 1))

    q = p - 1
    ma_by_degree = [np.zeros((d, m)) for _ in range(q + 1)]
    for i in range(d):
        start = structure.block_start(i)
        for kk in range(1, structure.nu[i] + 1):
            ma_by_degree[kk - 1][i, :] += k[start + kk - 1, :]
    ma_coeffs = tuple(ma_by_degree[q - j] for j in range(q + 1))

    lead = None if np.allclose(ar_lead, np.eye(d), atol=1e-14) else ar_lead
    return McarmaPolynomials(ar_coeffs=ar_coeffs, ma_coeffs=ma_coeffs, ar_lead=lead)


def mcarma_to_ssm(polys: McarmaPolynomials) -> ContinuousSSM:
    """Companion-form realization of a monic CARMA polynomial pair.

    The state matrix stacks identity shift blocks with bottom block row
    ``(-A_p, ..., -A_1)``; the input matrix stacks ``beta_1..beta_p`` from the
    backward recursion

        beta_{p-j} = -1{j <= q} * ( sum_{i=1}^{p-j-1} A_i beta_{p-j-i} - B_{q-j} )

    and the output matrix picks the first d states. Transfer functions of the
    realization and of the fraction P^{-1} Q agree. Requires a monic AR lead.
    """
    if not polys.is_monic():
        raise ParameterError(
            "companion realization needs a monic AR polynomial "
            "(echelon families with unequal Kronecker indices are not)"
        )
    d, m, p, q = polys.d, polys.m, polys.p, polys.q
    ar = polys.ar_coeffs

    a = np.zeros((p * d, p * d))
    for blk in range(p - 1):
        a[blk * d : (blk + 1) * d, (blk + 1) * d : (blk + 2) * d] = np.eye(d)
    for i in range(1, p + 1):
        a[(p - 1) * d : p * d, (p - i) * d : (p - i + 1) * d] = -ar[i - 1]

    beta = [np.zeros((d, m)) for _ in range(p + 1)]  # beta[1..p]
    for ell in range(1, p + 1):
        j = p - ell
        if j > q:
            continue
        acc = polys.ma_coeffs[q - j].copy()
        for i in range(1, ell):
            acc -= ar[i - 1] @ beta[ell - i]
        beta[ell] = acc
    bmat = np.vstack(beta[1:])

    c = np.zeros((d, p * d))
    c[:, :d] = np.eye(d)
    return ContinuousSSM(A=a, B=bmat, C=c, sigma_L=None)


def vech_indices(d: int) -> list:
    """Lower-triangle (row, col) pairs in column-major vech order."""
    return [(a, b) for b in range(d) for a in range(b, d)]


@dataclass(frozen=True)
class ModelFamily:
    """A parametrized family theta -> continuous model over a box.

    ``slots[k]`` says where coordinate k of theta lands:

    * ``("alpha", i, j, k0)``  — coefficient alpha_{ij, k0+1},
    * ``("kfree", fr, col)``   — free row ``fr`` (ordinal) of K (normalized),
    * ``("b", row, col)``      — entry of the raw input matrix (unnormalized),
    * ``("sigma", a, b)``      — entry (a, b), a >= b, of the driving
      covariance (mirrored into (b, a)).

    Several coordinates may share a slot; their values add. That is never the
    case for the canonical families but deliberately breaks identifiability,
    which the rank diagnostics must detect.
    """

    structure: KroneckerStructure
    slots: tuple
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    normalize: bool = True
    sigma_fixed: np.ndarray | None = None

    def __post_init__(self):
        lower = np.asarray(self.theta_lower, dtype=float).ravel()
        upper = np.asarray(self.theta_upper, dtype=float).ravel()
        slots = tuple(tuple(s) for s in self.slots)
        if lower.shape != upper.shape or len(slots) != lower.size:
            raise DimensionError(
                f"box ({lower.size}, {upper.size}) and slots ({len(slots)}) disagree"
            )
        if np.any(lower >= upper):
            raise ParameterError("theta box must satisfy lower < upper elementwise")
        st = self.structure
        for s in slots:
            kind = s[0]
            if kind == "alpha":
                _, i, j, k0 = s
                if not (0 <= i < st.d and 0 <= j < st.d and 0 <= k0 < st.nu_ij(i, j)):
                    raise ParameterError(f"alpha slot out of range: {s}")
            elif kind == "kfree":
                if not self.normalize:
                    raise ParameterError("kfree slots require a normalized family")
                _, fr, col = s
                if not (0 <= fr < st.N - st.d and 0 <= col < st.d):
                    raise ParameterError(f"kfree slot out of range: {s}")
            elif kind == "b":
                if self.normalize:
                    raise ParameterError("raw b slots require normalize=False")
                _, row, col = s
                if not (0 <= row < st.N and 0 <= col < st.d):
                    raise ParameterError(f"b slot out of range: {s}")
            elif kind == "sigma":
                _, a, b = s
                if self.sigma_fixed is not None:
                    raise ParameterError("sigma slots clash with sigma_fixed")
                if not (0 <= b <= a < st.d):
                    raise ParameterError(f"sigma slot must have d > a >= b >= 0: {s}")
            else:
                raise ParameterError(f"unknown slot kind {kind!r}")
        sig = self.sigma_fixed
        if sig is not None:
            sig = np.asarray(sig, dtype=float)
            if sig.shape != (st.d, st.d):
                raise DimensionError("sigma_fixed must be d x d")
        object.__setattr__(self, "theta_lower", lower)
        object.__setattr__(self, "theta_upper", upper)
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "sigma_fixed", sig)

    @property
    def r(self) -> int:
        return self.theta_lower.size

    @property
    def d(self) -> int:
        return self.structure.d

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float).ravel()
        return (
            theta.size == self.r
            and bool(np.all(np.isfinite(theta)))
            and bool(np.all(theta >= self.theta_lower))
            and bool(np.all(theta <= self.theta_upper))
        )


def echelon_family(
    nu,
    theta_lower,
    theta_upper,
    *,
    normalize: bool = True,
    sigma_fixed=None,
) -> ModelFamily:
    """Canonical echelon family: alpha slots row-major (i, then j, then k),
    then free input entries row-major, then vech of the noise covariance
    (omitted when ``sigma_fixed`` is given)."""
    st = KroneckerStructure(tuple(nu))
    d = st.d
    slots = []
    for i in range(d):
        for j in range(d):
            for k0 in range(st.nu_ij(i, j)):
                slots.append(("alpha", i, j, k0))
    if normalize:
        for fr in range(st.N - d):
            for col in range(d):
                slots.append(("kfree", fr, col))
    else:
        for row in range(st.N):
            for col in range(d):
                slots.append(("b", row, col))
    if sigma_fixed is None:
        for a, b in vech_indices(d):
            slots.append(("sigma", a, b))
    return ModelFamily(
        structure=st,
        slots=tuple(slots),
        theta_lower=theta_lower,
        theta_upper=theta_upper,
        normalize=normalize,
        sigma_fixed=sigma_fixed,
    )


def theta_to_model(family: ModelFamily, theta) -> ContinuousSSM:
    """Decode a parameter vector into a stable continuous model.

    Validates the box, assembles the echelon model, checks that the driving
    covariance is symmetric positive definite and that every eigenvalue of A
    has strictly negative real part. Raises `ParameterError`,
    `NotPositiveDefiniteError` or `StabilityError` accordingly.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != family.r:
        raise DimensionError(f"theta has length {theta.size}, expected {family.r}")
    if not np.all(np.isfinite(theta)):
        raise ParameterError("theta has non-finite entries")
    if np.any(theta < family.theta_lower) or np.any(theta > family.theta_upper):
        raise ParameterError("theta outside the admissible box")

    st = family.structure
    d = st.d
    alpha = {(i, j): np.zeros(st.nu_ij(i, j)) for i in range(d) for j in range(d)}
    if family.normalize:
        binput = np.zeros((st.N - d, d))
    else:
        binput = np.zeros((st.N, d))
    sigma_vech = np.zeros((d, d))

    for val, slot in zip(theta, family.slots):
        kind = slot[0]
        if kind == "alpha":
            _, i, j, k0 = slot
            alpha[(i, j)][k0] += val
        elif kind == "kfree":
            _, fr, col = slot
            binput[fr, col] += val
        elif kind == "b":
            _, row, col = slot
            binput[row, col] += val
        else:
            _, a, b = slot
            sigma_vech[a, b] += val
            if a != b:
                sigma_vech[b, a] += val

    norm = -np.eye(d) if family.normalize else None
    skeleton = echelon_ssm(st, alpha, binput, normalization=norm)

    sigma = family.sigma_fixed if family.sigma_fixed is not None else sigma_vech
    sigma = np.asarray(sigma, dtype=float)
    try:
        np.linalg.cholesky(0.5 * (sigma + sigma.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "driving covariance for this theta is not positive definite"
        ) from exc

    eig = np.linalg.eigvals(skeleton.A)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0.0:
        raise StabilityError(
            f"theta yields an unstable model (eigenvalue {worst})", eigenvalue=worst
        )
    return ContinuousSSM(A=skeleton.A, B=skeleton.B, C=skeleton.C, sigma_L=sigma)
