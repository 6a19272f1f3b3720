"""Monte-Carlo estimation of restricted curvature constants.

About a reference point, the restricted strong-convexity constant alpha
lower-bounds gradient-difference quotients over nearby low-rank points,
and the restricted smoothness constant beta upper-bounds Hessian
quadratic forms over tangent-like directions U X + X V with rank-one
U, V.  Sampling replaces the infima/suprema, so the alpha estimate is
an upper bound on the true constant and the beta estimate a lower
bound; both are reported per layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import matcore
from .exceptions import EstimationError, InvalidInputError
from .objectives import MatrixTuple, Objective

__all__ = [
    "ConstantsEstimate",
    "sample_lowrank_ball",
    "estimate_alpha",
    "estimate_beta",
    "estimate_constants",
    "analytic_constants",
    "export_constants_csv",
]

DEGENERATE_NORM = 1e-12
DEGENERATE_DIRECTION = 1e-10


@dataclass(frozen=True)
class ConstantsEstimate:
    """Per-layer curvature constants with their provenance.

    For source="monte_carlo", alpha is the minimum sampled quotient
    (an upper bound on the true restricted convexity constant) and beta
    the maximum (a lower bound on the true restricted smoothness
    constant); skipped_* count degenerate (sample, layer) pairs that
    were excluded.
    """

    alpha: tuple
    beta: tuple
    ratio: tuple
    samples: int
    r: int
    d: float
    seed: int
    source: str
    skipped_alpha: tuple = ()
    skipped_beta: tuple = ()
    bound_note: str = (
        "alpha = min sampled quotient (upper bound on true constant); "
        "beta = max sampled quotient (lower bound on true constant)"
    )

    @property
    def num_layers(self) -> int:
        return len(self.alpha)


def _ratio(alpha, beta):
    # beta/alpha is meaningless for non-convex directions; mark undefined
    return tuple(float(b / a) if a > 0 else float("nan") for a, b in zip(alpha, beta))


def sample_lowrank_ball(
    x_star: MatrixTuple,
    r: int,
    d: float,
    n: int,
    seed: int,
    restrict_total_rank: bool = True,
):
    """Low-rank perturbations of x_star inside a Frobenius ball.

    Each sample adds a seeded Gaussian product perturbation P Q^T per
    layer, jointly rescaled so the tuple-norm distance to x_star is
    uniform on (0, d].  With restrict_total_rank (default) the
    perturbation rank budget per layer is r minus the exact rank of the
    reference layer, so every sample satisfies rank(X^(l)) <= r; the
    loose mode gives each perturbation rank r regardless.
    """
    if r < 1:
        raise InvalidInputError(f"r must be >= 1, got {r}")
    if d <= 0 or not np.isfinite(d):
        raise InvalidInputError(f"d must be finite and > 0, got {d}")
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    pert_ranks = []
    for i, layer in enumerate(x_star.layers):
        if restrict_total_rank:
            k = r - matcore.exact_rank(layer)
            if k < 1:
                raise InvalidInputError(
                    f"layer {i} of the reference already has rank >= r={r}; "
                    "use restrict_total_rank=False to sample looser perturbations"
                )
        else:
            k = r
        pert_ranks.append(min(k, *layer.shape))
    samples = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        deltas = []
        for (m, nn), k in zip(x_star.shapes, pert_ranks):
            p = rng.normal(size=(m, k))
            q = rng.normal(size=(nn, k))
            deltas.append(p @ q.T)
        delta = MatrixTuple(tuple(deltas))
        dist = d * (1.0 - rng.uniform())  # uniform on (0, d]
        samples.append(x_star + (dist / delta.frob()) * delta)
    return samples


def _alpha_quotients(obj: Objective, x_star: MatrixTuple, samples):
    if not samples:
        raise InvalidInputError("samples must be nonempty")
    g_star = obj.gradient(x_star)
    n_layers = len(x_star)
    mins = [np.inf] * n_layers
    skipped = [0] * n_layers
    for x in samples:
        g = obj.gradient(x)
        for l in range(n_layers):
            diff = x.layers[l] - x_star.layers[l]
            den = float(np.sum(diff * diff))
            if den < DEGENERATE_NORM**2:
                skipped[l] += 1
                continue
            num = float(np.sum((g.layers[l] - g_star.layers[l]) * diff))
            mins[l] = min(mins[l], num / den)
    for l, v in enumerate(mins):
        if not np.isfinite(v):
            raise EstimationError(f"layer {l}: every sample was degenerate")
    return np.array(mins), tuple(skipped)


def estimate_alpha(obj: Objective, x_star: MatrixTuple, samples) -> np.ndarray:
    """Per-layer minimum of gradient-difference quotients over samples.

    quotient_l(X) = <grad_l f(X) - grad_l f(X*), X_l - X*_l> / ||X_l - X*_l||_F^2;
    samples whose layer coincides with the reference are skipped.
    """
    mins, _ = _alpha_quotients(obj, x_star, samples)
    return mins


def _embed(layers_shapes, l, d):
    return MatrixTuple(
        tuple(d if i == l else np.zeros(s) for i, s in enumerate(layers_shapes))
    )


def _direction(x, u1, u2, v1, v2):
    # D = (u1 u2^T) X + X (v1 v2^T)
    return np.outer(u1, x.T @ u2) + np.outer(x @ v1, v2)


def _beta_for_sample(obj, x_tuple, l, inner_trials, ascent_steps, rng):
    """Best quotient <H D, D>/||D||^2 over rank-one-generated directions
    for one sample's layer; None when every direction degenerates."""
    x = x_tuple.layers[l]
    m, n = x.shape
    shapes = x_tuple.shapes

    def unit(v):
        nrm = np.linalg.norm(v)
        return v / nrm if nrm > 0 else v

    def evaluate(d):
        hv = obj.hessian_vector(x_tuple, _embed(shapes, l, d)).layers[l]
        return float(np.sum(hv * d)), hv

    best_q = None
    best_w = None
    for _ in range(inner_trials):
        w = [unit(rng.normal(size=m)), unit(rng.normal(size=m)),
             unit(rng.normal(size=n)), unit(rng.normal(size=n))]
        d = _direction(x, *w)
        dn2 = float(np.sum(d * d))
        if dn2 < DEGENERATE_DIRECTION**2:
            continue
        num, _ = evaluate(d)
        q = num / dn2
        if best_q is None or q > best_q:
            best_q, best_w = q, w
    if best_q is None:
        return None

    # projected ascent on the quotient from the best restart, keeping
    # the best value ever evaluated
    u1, u2, v1, v2 = best_w
    for k in range(ascent_steps):
        d = _direction(x, u1, u2, v1, v2)
        dn2 = float(np.sum(d * d))
        if dn2 < DEGENERATE_DIRECTION**2:
            break
        num, hv = evaluate(d)
        q = num / dn2
        if q > best_q:
            best_q = q
        grad_d = (2.0 / dn2) * (hv - q * d)
        step = 0.5 / (k + 1.0)
        new = []
        for w, g in (
            (u1, grad_d @ (x.T @ u2)),
            (u2, x @ (grad_d.T @ u1)),
            (v1, x.T @ (grad_d @ v2)),
            (v2, grad_d.T @ (x @ v1)),
        ):
            tang = g - np.dot(g, w) * w
            gn = np.linalg.norm(tang)
            new.append(unit(w + step * tang / gn) if gn > 0 else w)
        u1, u2, v1, v2 = new
    d = _direction(x, u1, u2, v1, v2)
    dn2 = float(np.sum(d * d))
    if dn2 >= DEGENERATE_DIRECTION**2:
        num, _ = evaluate(d)
        best_q = max(best_q, num / dn2)
    return best_q


def _beta_quotients(obj, x_star, samples, inner_trials, ascent_steps, seed):
    if not samples:
        raise InvalidInputError("samples must be nonempty")
    if inner_trials < 1:
        raise InvalidInputError(f"inner_trials must be >= 1, got {inner_trials}")
    if ascent_steps < 0:
        raise InvalidInputError(f"ascent_steps must be >= 0, got {ascent_steps}")
    n_layers = len(x_star)
    maxes = [-np.inf] * n_layers
    skipped = [0] * n_layers
    for i, x in enumerate(samples):
        for l in range(n_layers):
            if np.linalg.norm(x.layers[l]) < DEGENERATE_NORM:
                skipped[l] += 1
                continue
            rng = np.random.default_rng((seed, i, l))
            q = _beta_for_sample(obj, x, l, inner_trials, ascent_steps, rng)
            if q is None:
                skipped[l] += 1
                continue
            maxes[l] = max(maxes[l], q)
    for l, v in enumerate(maxes):
        if not np.isfinite(v):
            raise EstimationError(f"layer {l}: every sample was degenerate")
    return np.array(maxes), tuple(skipped)


def estimate_beta(
    obj: Objective,
    x_star: MatrixTuple,
    samples,
    inner_trials: int = 32,
    ascent_steps: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """Per-layer maximum of Hessian quadratic-form quotients over samples.

    For each sample X and directions D = U X + X V with rank-one unit-
    Frobenius U, V, the quotient <Hess f(X)[D], D>/||D||_F^2 is
    maximized by seeded random restarts followed by projected gradient
    ascent on the four generating unit vectors, keeping the best value.
    Degenerate directions (||D|| below 1e-10) are skipped, as are
    samples whose layer is zero.
    """
    maxes, _ = _beta_quotients(obj, x_star, samples, inner_trials, ascent_steps, seed)
    return maxes


def estimate_constants(
    obj: Objective,
    x_star: MatrixTuple,
    r: int,
    d: float = 5.0,
    n: int = 1000,
    seed: int = 0,
    inner_trials: int = 32,
    ascent_steps: int = 50,
    restrict_total_rank: bool = True,
) -> ConstantsEstimate:
    """Sample the low-rank ball about x_star and estimate both constants."""
    samples = sample_lowrank_ball(
        x_star, r, d, n, seed, restrict_total_rank=restrict_total_rank
    )
    alpha, skip_a = _alpha_quotients(obj, x_star, samples)
    beta, skip_b = _beta_quotients(obj, x_star, samples, inner_trials, ascent_steps, seed)
    return ConstantsEstimate(
        alpha=tuple(float(a) for a in alpha),
        beta=tuple(float(b) for b in beta),
        ratio=_ratio(alpha, beta),
        samples=n,
        r=r,
        d=float(d),
        seed=seed,
        source="monte_carlo",
        skipped_alpha=skip_a,
        skipped_beta=skip_b,
    )


def analytic_constants(obj, r: int, d: float = 5.0) -> ConstantsEstimate:
    """Exact per-layer curvature bounds for objectives that expose them.

    Requires a spectrum_bounds() method (the quadratic family); the
    unrestricted spectral bounds are valid restricted constants for
    every (r, d).
    """
    if not hasattr(obj, "spectrum_bounds"):
        raise InvalidInputError("objective does not expose analytic spectrum bounds")
    if r < 1:
        raise InvalidInputError(f"r must be >= 1, got {r}")
    lo, hi = obj.spectrum_bounds()
    return ConstantsEstimate(
        alpha=tuple(float(a) for a in lo),
        beta=tuple(float(b) for b in hi),
        ratio=_ratio(lo, hi),
        samples=0,
        r=r,
        d=float(d),
        seed=0,
        source="analytic",
        bound_note="exact spectral curvature bounds",
    )


def export_constants_csv(est: ConstantsEstimate, path):
    """One CSV row per layer: layer, alpha, beta, ratio, r, D, samples, seed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "alpha", "beta", "ratio", "r", "D", "samples", "seed"])
        for l in range(est.num_layers):
            writer.writerow(
                [l, repr(est.alpha[l]), repr(est.beta[l]), repr(est.ratio[l]),
                 est.r, repr(est.d), est.samples, est.seed]
            )
