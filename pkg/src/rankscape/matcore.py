"""Dense matrix kernels shared by the solvers and landscape checks.

Compact SVDs, rank projections and detection, singular value
thresholding (the nuclear-norm prox), nuclear subdifferential
membership, balanced factorizations, and the stationarity residual
split used by the certificates.  Everything operates on plain 2-D
float ndarrays; the SVD backend is LAPACK via numpy and only backward
stability is assumed downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, NumericalError, RankOverflowError

__all__ = [
    "CompactSvd",
    "FactorPair",
    "compact_svd",
    "truncated_rank",
    "exact_rank",
    "project_rank",
    "svt_prox",
    "nuclear_norm",
    "nuclear_subgradient_residual",
    "balanced_factors",
    "s_matrix",
    "complement_svd_split",
]

RANK_FLOOR = 1e-12  # absolute floor for algebraic exact-rank checks
REPORT_THRESHOLD = 1e-4  # normalized threshold used when reporting ranks


def as_matrix(m, name="matrix"):
    """Validate and return a finite 2-D float array."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInputError(f"{name} must be a nonempty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class CompactSvd:
    """Compact SVD ``left @ diag(singulars) @ right.T``.

    ``left`` is m-by-k and ``right`` is n-by-k, both with orthonormal
    columns; ``singulars`` holds the k retained singular values sorted
    nonincreasing and strictly positive.  k = 0 encodes the zero matrix.
    """

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray

    @property
    def rank(self) -> int:
        return self.singulars.size

    def compose(self) -> np.ndarray:
        return (self.left * self.singulars) @ self.right.T


@dataclass(frozen=True)
class FactorPair:
    """Factor pair (a, b) representing the product a @ b.T.

    a is m-by-r and b is n-by-r for a shared rank budget r.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        b = as_matrix(self.b, "b")
        if a.shape[1] != b.shape[1]:
            raise InvalidInputError(
                f"factor column counts differ: {a.shape[1]} vs {b.shape[1]}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def rank_budget(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self):
        return (self.a.shape[0], self.b.shape[0])

    def product(self) -> np.ndarray:
        return self.a @ self.b.T

    def balance_residual(self) -> float:
        """Frobenius norm of a.T a - b.T b (zero for balanced factors)."""
        return float(np.linalg.norm(self.a.T @ self.a - self.b.T @ self.b))


def _svd(m):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK's iteration count is not surfaced by numpy; record shape instead.
        raise NumericalError(f"SVD failed to converge on shape {m.shape}: {exc}") from exc


def compact_svd(m, sv_floor: float = 0.0) -> CompactSvd:
    """Compact SVD keeping singular triplets with sigma > sv_floor."""
    m = as_matrix(m)
    if sv_floor < 0:
        raise InvalidInputError(f"sv_floor must be >= 0, got {sv_floor}")
    u, s, vt = _svd(m)
    k = int(np.sum(s > sv_floor))
    return CompactSvd(left=u[:, :k], singulars=s[:k], right=vt[:k].T)


def truncated_rank(m, threshold: float = REPORT_THRESHOLD) -> int:
    """Count singular values of m / sigma_1(m) strictly above threshold.

    This is the reporting convention for trained weights: normalize by
    the spectral norm, then count.  The zero matrix has rank 0 without
    normalization.
    """
    m = as_matrix(m)
    if threshold <= 0:
        raise InvalidInputError(f"threshold must be > 0, got {threshold}")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s / s[0] > threshold))


def exact_rank(m, floor: float = RANK_FLOOR) -> int:
    """Count singular values above an absolute floor (no normalization).

    Serves algebraic identities (factorization preconditions, spurious
    rank checks), not reporting.
    """
    m = as_matrix(m)
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > floor))


def project_rank(m, k: int) -> np.ndarray:
    """Best rank-<=k Frobenius approximation (truncate the SVD at k).

    Ties between equal singular values follow SVD output order.
    """
    m = as_matrix(m)
    if k < 0:
        raise InvalidInputError(f"k must be >= 0, got {k}")
    if k == 0:
        return np.zeros_like(m)
    if k >= min(m.shape):
        return m.copy()
    u, s, vt = _svd(m)
    return (u[:, :k] * s[:k]) @ vt[:k]


def svt_prox(m, tau: float) -> np.ndarray:
    """Prox of tau * nuclear norm: soft-threshold each singular value.

    Returns argmin_X 0.5 * ||X - m||_F^2 + tau * ||X||_*.
    """
    m = as_matrix(m)
    if tau < 0:
        raise InvalidInputError(f"tau must be >= 0, got {tau}")
    if tau == 0.0:
        return m.copy()
    u, s, vt = _svd(m)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    m = as_matrix(m)
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def nuclear_subgradient_residual(x, g, lam: float) -> float:
    """Residual of membership g in the subdifferential of lam * ||x||_*.

    The subdifferential at x with compact SVD L diag(s) R^T is the set
    {lam * L R^T + W : L^T W = 0, W R = 0, ||W||_2 <= lam}.  The input
    is split as g = lam * L R^T + W + E with W the doubly-orthogonal
    component; the residual ||E||_F + max(0, ||W||_2 - lam) is zero
    exactly on members.
    """
    x = as_matrix(x, "x")
    g = as_matrix(g, "g")
    if x.shape != g.shape:
        raise InvalidInputError(f"shape mismatch: x {x.shape} vs g {g.shape}")
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    cs = compact_svd(x, RANK_FLOOR)
    l, r = cs.left, cs.right
    w = g - l @ (l.T @ g)
    w = w - (w @ r) @ r.T
    e = g - lam * (l @ r.T) - w
    w_spec = np.linalg.svd(w, compute_uv=False)[0] if w.size else 0.0
    return float(np.linalg.norm(e) + max(0.0, w_spec - lam))


def balanced_factors(x, r: int) -> FactorPair:
    """Balanced factor pair with a @ b.T = x and a.T a = b.T b.

    Takes a = L sqrt(S), b = R sqrt(S) from the compact SVD, padded with
    zero columns to width r.  Requires the exact rank of x (absolute
    1e-12 floor) to fit the budget.
    """
    x = as_matrix(x)
    if r < 1:
        raise InvalidInputError(f"rank budget must be >= 1, got {r}")
    cs = compact_svd(x, RANK_FLOOR)
    if cs.rank > r:
        raise RankOverflowError(f"matrix rank {cs.rank} exceeds budget {r}")
    root = np.sqrt(cs.singulars)
    a = np.zeros((x.shape[0], r))
    b = np.zeros((x.shape[1], r))
    a[:, : cs.rank] = cs.left * root
    b[:, : cs.rank] = cs.right * root
    return FactorPair(a=a, b=b)


def s_matrix(x, grad, lam: float):
    """Split the gradient at a stationary point into its off-space part.

    At a first-order stationary point of the factored objective the
    gradient satisfies grad = -lam * L R^T + S with L^T S = 0 and
    S R = 0 (L, R from the compact SVD of x).  Returns
    (s, alignment_residual) with s = grad + lam * L R^T and
    alignment_residual = ||L^T s||_F + ||s R||_F, which vanishes exactly
    when those orthogonality conditions hold.
    """
    x = as_matrix(x, "x")
    grad = as_matrix(grad, "grad")
    if x.shape != grad.shape:
        raise InvalidInputError(f"shape mismatch: x {x.shape} vs grad {grad.shape}")
    cs = compact_svd(x, RANK_FLOOR)
    l, r = cs.left, cs.right
    s = grad + lam * (l @ r.T)
    alignment = float(np.linalg.norm(l.T @ s) + np.linalg.norm(s @ r))
    return s, alignment


def complement_svd_split(x, u, v):
    """Split x = u v^T + utilde diag(s) vtilde^T when x pairs u with v.

    Requires orthonormal u (m-by-r), v (n-by-r) with x @ v = u and
    x.T @ u = v.  The remainder then lives entirely in the orthogonal
    complements and is returned as its own SVD triple
    (utilde, s, vtilde).
    """
    x = as_matrix(x, "x")
    u = as_matrix(u, "u")
    v = as_matrix(v, "v")
    m, n = x.shape
    r = u.shape[1]
    if v.shape[1] != r or u.shape[0] != m or v.shape[0] != n:
        raise InvalidInputError("u, v shapes inconsistent with x")
    # complete u, v to orthonormal bases; the trailing columns span the complements
    qu = np.linalg.qr(u, mode="complete")[0]
    qv = np.linalg.qr(v, mode="complete")[0]
    # qr may flip signs of the leading block; only the complement columns are used
    ut = qu[:, r:] - u @ (u.T @ qu[:, r:])
    vt_ = qv[:, r:] - v @ (v.T @ qv[:, r:])
    core = ut.T @ x @ vt_
    if core.size == 0:
        return ut, np.zeros(0), vt_
    p, s, qt = _svd(core)
    return ut @ p, s, vt_ @ qt.T
