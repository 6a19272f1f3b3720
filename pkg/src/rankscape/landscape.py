"""Second-order stationarity certificates and global-vs-spurious
classification of factored stationary points.

A certificate gathers everything checkable at a candidate point: the
factored gradient norm, the smallest eigenvalue of the factored Hessian
(matrix-free Lanczos), the stationarity split of grad f into its
aligned and off-space parts, factor balance, and the singular values of
the product.  Classification then applies the curvature-ratio regime
test: when twice the restricted convexity constant exceeds the
restricted smoothness constant, certified second-order points are
global; otherwise a non-global point must carry full rank, singular
values above an explicit threshold, and quantitative distance and
magnitude lower bounds, all of which are emitted in the report.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matcore
from .exceptions import InapplicableTheoryError, InvalidInputError
from .matcore import FactorPair
from .objectives import FactorTuple, MatrixTuple, RegularizedObjective

__all__ = [
    "SospCertificate",
    "LayerReport",
    "RegimeReport",
    "check_sosp",
    "spectral_bound_check",
    "classify",
    "classify_approx",
]

VERDICT_GLOBAL = "global"
VERDICT_SPURIOUS = "spurious"
VERDICT_INDETERMINATE = "indeterminate"

DEFAULT_TOL2 = 1e-5
DEFAULT_EIG_ITERS = 200
VALUE_REFINE_RTOL = 1e-6


@dataclass
class SospCertificate:
    """Everything measured at one candidate stationary point.

    Scalar fields summarize the whole tuple; per-layer tuples carry the
    stationarity split (spectral norm of S and alignment residual),
    factor balance residuals, and product singular values.
    """

    grad_norm: float
    min_hess_eig: float
    eig_converged: bool
    s_spectral: tuple
    s_alignment: tuple
    balance_residual: tuple
    singulars: tuple
    is_sosp: bool
    tol1: float
    tol2: float
    point: FactorTuple = None
    x: MatrixTuple = None
    value: float = float("nan")
    f_grad_norm: float = float("nan")
    obj: RegularizedObjective = None

    @property
    def rank_budget(self) -> int:
        return self.point.rank_budget


def _vec(ft: FactorTuple) -> np.ndarray:
    return np.concatenate([np.concatenate([p.a.ravel(), p.b.ravel()]) for p in ft.pairs])


def _unvec(v: np.ndarray, shapes, rank: int) -> FactorTuple:
    pairs = []
    pos = 0
    for m, n in shapes:
        a = v[pos : pos + m * rank].reshape(m, rank)
        pos += m * rank
        b = v[pos : pos + n * rank].reshape(n, rank)
        pos += n * rank
        pairs.append(FactorPair(a=a, b=b))
    return FactorTuple(pairs=tuple(pairs))


def _lanczos_min_eig(apply_h, dim: int, iters: int, seed: int = 0):
    """Smallest eigenvalue of a symmetric operator by Lanczos with full
    reorthogonalization.  Returns (eig, converged); converged is true
    when the Krylov space is exhausted (exact) or the Ritz residual is
    negligible."""
    k = min(iters, dim)
    rng = np.random.default_rng(seed)
    q = rng.normal(size=dim)
    q /= np.linalg.norm(q)
    basis = [q]
    alphas = []
    betas = []
    exhausted = False
    for j in range(k):
        w = apply_h(basis[j])
        a = float(np.dot(w, basis[j]))
        alphas.append(a)
        w = w - a * basis[j]
        if j > 0:
            w = w - betas[-1] * basis[j - 1]
        # full reorthogonalization keeps the basis numerically orthogonal
        for u in basis:
            w = w - np.dot(w, u) * u
        b = float(np.linalg.norm(w))
        if j == k - 1:
            betas.append(b)
            break
        if b <= 1e-12 * max(1.0, abs(a)):
            exhausted = True  # invariant subspace reached: Ritz values exact
            break
        betas.append(b)
        basis.append(w / b)
    t = np.diag(alphas)
    if len(alphas) > 1:
        off = np.array(betas[: len(alphas) - 1])
        t = t + np.diag(off, 1) + np.diag(off, -1)
    evals, evecs = np.linalg.eigh(t)
    theta = float(evals[0])
    if exhausted or len(alphas) == dim:
        return theta, True
    residual = abs(betas[-1] * evecs[-1, 0])
    return theta, bool(residual <= 1e-8 * max(1.0, abs(theta)))


def check_sosp(
    obj: RegularizedObjective,
    point: FactorTuple,
    tol1: float | None = None,
    tol2: float = DEFAULT_TOL2,
    eig_iters: int = DEFAULT_EIG_ITERS,
) -> SospCertificate:
    """Measure first- and second-order stationarity of a factored point.

    tol1 defaults to 1e-6 * (1 + ||grad f(0)||_F); the point is flagged
    a second-order stationary point when the factored gradient norm is
    within tol1 and the smallest factored-Hessian eigenvalue is above
    -tol2.  Non-convergence of the eigenvalue iteration is recorded on
    the certificate, never raised.
    """
    if obj.form != "factored":
        raise InvalidInputError("check_sosp requires a factored-form objective")
    if point.shapes != tuple(obj.shapes):
        raise InvalidInputError(f"point shapes {point.shapes} do not match {obj.shapes}")
    if eig_iters < 1:
        raise InvalidInputError(f"eig_iters must be >= 1, got {eig_iters}")
    if tol1 is None:
        g0 = obj.base.gradient(MatrixTuple.zeros(obj.shapes))
        tol1 = 1e-6 * (1.0 + g0.frob())
    if tol1 <= 0 or tol2 <= 0:
        raise InvalidInputError("tolerances must be > 0")

    x = point.product()
    gf = obj.base.gradient(x)
    grad_norm = obj.factored_gradient(point).frob()

    s_spectral, s_alignment, balance, singulars = [], [], [], []
    for p, xl, gl in zip(point.pairs, x.layers, gf.layers):
        s, align = matcore.s_matrix(xl, gl, obj.lam)
        s_spectral.append(float(np.linalg.svd(s, compute_uv=False)[0]) if s.size else 0.0)
        s_alignment.append(align)
        balance.append(float(np.linalg.norm(p.a.T @ p.a - p.b.T @ p.b)))
        singulars.append(tuple(np.linalg.svd(xl, compute_uv=False)))

    rank = point.rank_budget
    dim = sum((m + n) * rank for m, n in point.shapes)

    def apply_h(v):
        hv = obj.factored_hessian_vector(point, _unvec(v, point.shapes, rank))
        return _vec(hv)

    min_eig, converged = _lanczos_min_eig(apply_h, dim, eig_iters)

    return SospCertificate(
        grad_norm=float(grad_norm),
        min_hess_eig=min_eig,
        eig_converged=converged,
        s_spectral=tuple(s_spectral),
        s_alignment=tuple(s_alignment),
        balance_residual=tuple(balance),
        singulars=tuple(singulars),
        is_sosp=bool(grad_norm <= tol1 and min_eig >= -tol2),
        tol1=float(tol1),
        tol2=float(tol2),
        point=point,
        x=x,
        value=float(obj.value(point)),
        f_grad_norm=float(gf.frob()),
        obj=obj,
    )


def _sigma(singulars_layer, k: int) -> float:
    """k-th singular value (1-indexed), zero beyond the stored spectrum."""
    if k < 1:
        raise InvalidInputError(f"singular value index must be >= 1, got {k}")
    return float(singulars_layer[k - 1]) if k <= len(singulars_layer) else 0.0


def spectral_bound_check(cert: SospCertificate, beta, lam: float):
    """Check ||S||_2 <= lam + beta * sigma_r per layer.

    Returns (passed, margin): margin is the smallest per-layer slack
    lam + beta*sigma_r - ||S||_2; the pass test allows 1e-6 tolerance.
    """
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    n_layers = len(cert.s_spectral)
    betas = np.broadcast_to(np.asarray(beta, dtype=float), (n_layers,))
    if np.any(betas <= 0):
        raise InvalidInputError("beta must be > 0")
    r = cert.rank_budget
    margins = []
    for l in range(n_layers):
        sigma_r = _sigma(cert.singulars[l], r)
        margins.append(lam + betas[l] * sigma_r - cert.s_spectral[l])
    margin = float(min(margins))
    return margin >= -1e-6, margin


@dataclass(frozen=True)
class LayerReport:
    regime: str
    sigma_r: float
    sigma_rstar: float
    threshold: float
    distance_bound: float | None
    magnitude_bound: float | None
    rank: int
    flagged: bool


@dataclass
class RegimeReport:
    """Classification outcome plus everything needed to audit it."""

    regime: tuple
    verdict: str
    per_layer: tuple
    alpha: tuple
    beta: tuple
    source: str
    r: int
    r_star: int
    lam: float
    tolerances: dict
    d: float | None = None
    epsilon: float | None = None
    delta: float | None = None
    flagged_layers: tuple = ()
    value_comparison: dict | None = None
    distance_comparison: dict | None = None
    notes: tuple = ()

    def to_json(self) -> str:
        payload = {
            "regime": list(self.regime),
            "verdict": self.verdict,
            "per_layer": [
                {
                    "sigma_r": lr.sigma_r,
                    "sigma_rstar": lr.sigma_rstar,
                    "threshold": lr.threshold,
                    "distance_bound": lr.distance_bound,
                    "magnitude_bound": lr.magnitude_bound,
                    "rank": lr.rank,
                }
                for lr in self.per_layer
            ],
            "constants": {
                "alpha": list(self.alpha),
                "beta": list(self.beta),
                "source": self.source,
            },
            "tolerances": self.tolerances,
        }
        return json.dumps(payload, indent=2)


def _validated_constants(alpha, beta, n_layers):
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n_layers,))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (n_layers,))
    if np.any(alpha <= 0) or np.any(~np.isfinite(alpha)):
        raise InapplicableTheoryError(
            f"theory requires alpha > 0 per layer, got {alpha.tolist()}"
        )
    if np.any(beta <= 0) or np.any(~np.isfinite(beta)):
        raise InapplicableTheoryError(
            f"theory requires 0 < beta < inf per layer, got {beta.tolist()}"
        )
    return alpha, beta


def _check_classify_inputs(cert, r, r_star, lam):
    if not cert.is_sosp:
        raise InvalidInputError("classification requires a certified second-order point")
    if r_star < 1 or r < r_star:
        raise InvalidInputError(f"need r >= r_star >= 1, got r={r}, r_star={r_star}")
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")


def _tail_energy(sv, start: int) -> float:
    """Sum of squared singular values strictly beyond index `start` (1-based)."""
    return float(sum(s * s for s in sv[start:]))


def _layer_rank(cert, l) -> int:
    return matcore.exact_rank(cert.x.layers[l])


def _finish_verdict(base_verdict, flagged, refined):
    """Combine the threshold-based candidate verdict with optional
    direct-comparison evidence.  Spurious requires a flagged layer; when
    direct evidence contradicts the theory inputs the result is
    indeterminate rather than a guess."""
    if refined is None:
        return base_verdict
    if refined == VERDICT_GLOBAL:
        return VERDICT_GLOBAL
    if refined == VERDICT_SPURIOUS:
        return VERDICT_SPURIOUS if flagged else VERDICT_INDETERMINATE
    return VERDICT_INDETERMINATE


def classify(
    cert: SospCertificate,
    alpha,
    beta,
    r: int,
    r_star: int,
    lam: float,
    x_star: MatrixTuple | None = None,
    d: float | None = None,
    source: str = "user",
) -> RegimeReport:
    """Exact-rank regime test and global/spurious dichotomy.

    Per layer: special regime iff 2*alpha > beta (every certified point
    is global); generic otherwise, where a point is global unless some
    layer has sigma_r strictly above (2*alpha/beta)*sigma_rstar — such
    layers are flagged and carry the distance lower bound
    sqrt(tail / (1 - 2*alpha*sigma_rstar/(beta*sigma_r))) with tail the
    squared singular mass beyond r_star, and (for r > r_star, when the
    reference is known) the magnitude lower bound derived from the same
    denominator.  Providing x_star refines the verdict by direct value
    comparison of the regularized objective.
    """
    _check_classify_inputs(cert, r, r_star, lam)
    n_layers = len(cert.singulars)
    alpha, beta = _validated_constants(alpha, beta, n_layers)

    regimes, layers, flagged = [], [], []
    for l in range(n_layers):
        sv = cert.singulars[l]
        sigma_r = _sigma(sv, r)
        sigma_rstar = _sigma(sv, r_star)
        special = 2.0 * alpha[l] > beta[l]
        regimes.append("special" if special else "generic")
        threshold = (2.0 * alpha[l] / beta[l]) * sigma_rstar
        dist_bound = None
        mag_bound = None
        layer_flagged = (not special) and sigma_r > threshold
        if layer_flagged:
            flagged.append(l)
            denom = 1.0 - 2.0 * alpha[l] * sigma_rstar / (beta[l] * sigma_r)
            dist_bound = float(np.sqrt(_tail_energy(sv, r_star) / denom))
            if r > r_star:
                top = _tail_energy(sv, r_star) - _tail_energy(sv, r)
                base = float(np.sqrt(top / denom))
                if x_star is not None:
                    mag_bound = base - float(np.linalg.norm(x_star.layers[l]))
        layers.append(
            LayerReport(
                regime=regimes[-1],
                sigma_r=sigma_r,
                sigma_rstar=sigma_rstar,
                threshold=float(threshold),
                distance_bound=dist_bound,
                magnitude_bound=mag_bound,
                rank=_layer_rank(cert, l),
                flagged=layer_flagged,
            )
        )

    base_verdict = VERDICT_SPURIOUS if flagged else VERDICT_GLOBAL

    refined = None
    value_cmp = None
    if x_star is not None and cert.obj is not None:
        v_point = cert.obj.full_value(cert.x)
        v_star = cert.obj.full_value(x_star)
        refined = (
            VERDICT_GLOBAL
            if v_point <= v_star + VALUE_REFINE_RTOL * (1.0 + abs(v_star))
            else VERDICT_SPURIOUS
        )
        value_cmp = {"value": v_point, "reference_value": v_star}

    verdict = _finish_verdict(base_verdict, flagged, refined)
    if not cert.eig_converged:
        verdict = VERDICT_INDETERMINATE

    return RegimeReport(
        regime=tuple(regimes),
        verdict=verdict,
        per_layer=tuple(layers),
        alpha=tuple(float(a) for a in alpha),
        beta=tuple(float(b) for b in beta),
        source=source,
        r=r,
        r_star=r_star,
        lam=float(lam),
        tolerances={"tol1": cert.tol1, "tol2": cert.tol2},
        d=d,
        flagged_layers=tuple(flagged),
        value_comparison=value_cmp,
    )


def classify_approx(
    cert: SospCertificate,
    alpha,
    beta,
    r: int,
    r_star: int,
    lam: float,
    epsilon: float,
    delta: float = 0.0,
    x_star_delta: MatrixTuple | None = None,
    d: float | None = None,
    source: str = "user",
) -> RegimeReport:
    """Approximate-reference variant of classify.

    The reference optimum is only known to delta accuracy, so the
    special regime relaxes to 2*alpha >= beta*(1+epsilon) (verdict:
    within epsilon of the optimum), the spurious threshold on sigma_r
    becomes max{2*alpha/(beta*(1+epsilon)) * sigma_rstar,
    alpha*epsilon/(2*beta*sqrt(r))}, and the distance bound subtracts
    the epsilon^3 slack inside and epsilon^2 outside the square root.
    delta must not exceed epsilon^3; values above epsilon^3/10 warn.
    When x_star_delta is given the verdict is refined by measured
    distance with a +/- delta uncertainty band.
    """
    _check_classify_inputs(cert, r, r_star, lam)
    if epsilon <= 0 or not np.isfinite(epsilon):
        raise InvalidInputError(f"epsilon must be finite and > 0, got {epsilon}")
    if delta < 0:
        raise InvalidInputError(f"delta must be >= 0, got {delta}")
    if delta > epsilon**3:
        raise InvalidInputError(
            f"delta={delta} exceeds epsilon^3={epsilon**3}: reference too coarse"
        )
    notes = []
    if delta > epsilon**3 / 10.0:
        warnings.warn(
            f"delta={delta} is within a decade of epsilon^3={epsilon**3}; "
            "approximation guarantees are marginal",
            stacklevel=2,
        )
        notes.append("delta within a decade of epsilon^3")
    n_layers = len(cert.singulars)
    alpha, beta = _validated_constants(alpha, beta, n_layers)

    regimes, layers, flagged = [], [], []
    for l in range(n_layers):
        sv = cert.singulars[l]
        sigma_r = _sigma(sv, r)
        sigma_rstar = _sigma(sv, r_star)
        special = 2.0 * alpha[l] >= beta[l] * (1.0 + epsilon)
        regimes.append("special" if special else "generic")
        threshold = max(
            2.0 * alpha[l] / (beta[l] * (1.0 + epsilon)) * sigma_rstar,
            alpha[l] * epsilon / (2.0 * beta[l] * np.sqrt(r)),
        )
        dist_bound = None
        mag_bound = None
        layer_flagged = (not special) and sigma_r >= threshold and sigma_r > 0
        if layer_flagged:
            flagged.append(l)
            denom = 1.0 - 2.0 * alpha[l] * sigma_rstar / (beta[l] * sigma_r)
            if denom > 0:
                tail = _tail_energy(sv, r_star)
                dist_bound = max(
                    0.0, float(np.sqrt(max(tail - epsilon**3, 0.0) / denom)) - epsilon**2
                )
                if r > r_star:
                    top = tail - _tail_energy(sv, r)
                    base = float(np.sqrt(max(top - epsilon**3, 0.0) / denom)) - epsilon**2
                    if x_star_delta is not None:
                        mag_bound = base - float(np.linalg.norm(x_star_delta.layers[l]))
        layers.append(
            LayerReport(
                regime=regimes[-1],
                sigma_r=sigma_r,
                sigma_rstar=sigma_rstar,
                threshold=float(threshold),
                distance_bound=dist_bound,
                magnitude_bound=mag_bound,
                rank=_layer_rank(cert, l),
                flagged=layer_flagged,
            )
        )

    base_verdict = VERDICT_SPURIOUS if flagged else VERDICT_GLOBAL

    refined = None
    dist_cmp = None
    if x_star_delta is not None:
        measured = (cert.x - x_star_delta).frob()
        # the reference itself is only within delta of the true optimum
        if measured <= epsilon - delta:
            refined = VERDICT_GLOBAL
        elif measured > epsilon + delta:
            refined = VERDICT_SPURIOUS
        else:
            refined = VERDICT_INDETERMINATE
        dist_cmp = {"measured_distance": float(measured), "epsilon": epsilon, "delta": delta}

    verdict = _finish_verdict(base_verdict, flagged, refined)
    if not cert.eig_converged:
        verdict = VERDICT_INDETERMINATE

    return RegimeReport(
        regime=tuple(regimes),
        verdict=verdict,
        per_layer=tuple(layers),
        alpha=tuple(float(a) for a in alpha),
        beta=tuple(float(b) for b in beta),
        source=source,
        r=r,
        r_star=r_star,
        lam=float(lam),
        tolerances={"tol1": cert.tol1, "tol2": cert.tol2, "epsilon": epsilon, "delta": delta},
        d=d,
        epsilon=epsilon,
        delta=delta,
        flagged_layers=tuple(flagged),
        distance_comparison=dist_cmp,
        notes=tuple(notes),
    )
