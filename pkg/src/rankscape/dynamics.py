"""Approximate low-rank structure of decayed stochastic training runs.

With weight decay lambda and step size mu, each factor update shrinks
history by (1 - mu*lambda) while injecting a gradient term whose rank
is at most the batch size b.  Unrolling n steps, the product X_t is
within a residual factor (1 - 2*mu*lambda)^(2n) * ||X_{t-n}|| of a
matrix of rank at most 2*n*b, so picking the smallest n that drives
that factor below epsilon/2 certifies that the normalized iterate is
epsilon-close to an explicitly-low-rank matrix.  This module measures
the actual singular-value tail of stored snapshots against that bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientHistoryError, InvalidInputError
from .objectives import FactorTuple
from .optim import Trajectory

__all__ = [
    "CheckpointRecord",
    "RankDynamicsReport",
    "required_lookback",
    "statement_rank_bound",
    "rank_dynamics_check",
    "export_dynamics_csv",
]

APPLICABILITY_RATIO = 2.0
TAIL_SLACK = 1e-9


@dataclass(frozen=True)
class CheckpointRecord:
    t: int
    n: int
    epsilon: float
    bound_rank: int
    tail_mass: float
    residual_bound: float
    applicable: bool
    passes: bool


@dataclass(frozen=True)
class RankDynamicsReport:
    convention: str
    b: int
    mu: float
    lam: float
    epsilon: float
    records: tuple

    @property
    def all_pass(self) -> bool:
        return all(r.passes for r in self.records if r.applicable)

    @property
    def applicable_count(self) -> int:
        return sum(1 for r in self.records if r.applicable)


def required_lookback(mu: float, lam: float, epsilon: float) -> int:
    """Smallest n with (1 - 2*mu*lambda)^(2n) < epsilon/2."""
    if mu <= 0 or lam <= 0:
        raise InvalidInputError("mu and lambda must be > 0")
    if epsilon <= 0 or not np.isfinite(epsilon):
        raise InvalidInputError(f"epsilon must be finite and > 0, got {epsilon}")
    shrink = 1.0 - 2.0 * mu * lam
    if abs(shrink) >= 1.0:
        raise InvalidInputError(
            f"1 - 2*mu*lambda = {shrink} must lie in (-1, 1) for history to decay"
        )
    target = epsilon / 2.0
    if target >= 1.0:
        return 1
    q = shrink * shrink
    if q == 0.0:
        return 1  # decay annihilates history in one step
    # q^n < target  <=>  n > log(target)/log(q), both logs negative
    n = int(np.ceil(np.log(target) / np.log(q)))
    n = max(n, 1)
    while q**n >= target:  # guard the boundary against rounding
        n += 1
    return n


def statement_rank_bound(b: int, mu: float, lam: float, epsilon: float) -> float:
    """The looser closed-form rank expression b*log(eps/4)/log(1-mu*lambda);
    evaluated for reporting only (see rank_dynamics_check)."""
    shrink = 1.0 - mu * lam
    if shrink <= 0.0:
        return float(b)  # degenerate: history gone immediately
    if shrink >= 1.0:
        return float("inf")
    return b * np.log(epsilon / 4.0) / np.log(shrink)


def _product_layers(point):
    if isinstance(point, FactorTuple):
        return point.product().layers
    return point.layers


def rank_dynamics_check(
    traj: Trajectory,
    b: int,
    mu: float,
    lam: float,
    epsilon: float,
    convention: str = "proof",
) -> RankDynamicsReport:
    """Verify the approximate-low-rank bound on stored snapshots.

    For every stored checkpoint t with a stored lookback partner t-n
    (n from required_lookback), the normalized singular tail of X_t
    beyond rank 2*n*b must not exceed
    (1-2*mu*lam)^(2n) * ||X_{t-n}||_F / ||X_t||_F (plus 1e-9 slack).
    Checkpoints where ||X_{t-n}||/||X_t|| exceeds 2 are outside the
    near-convergence hypothesis and are marked not applicable rather
    than failed.  Multi-layer trajectories are checked on the stacked
    block-diagonal product.  convention="statement" reports the
    closed-form rank expression instead of 2nb but measures the same
    residual (the proof-form bound is the testable one).
    """
    if convention not in ("proof", "statement"):
        raise InvalidInputError(f"convention must be 'proof' or 'statement', got {convention}")
    if b < 1:
        raise InvalidInputError(f"b must be >= 1, got {b}")
    n = required_lookback(mu, lam, epsilon)
    shrink2n = (1.0 - 2.0 * mu * lam) ** (2 * n)

    stored = dict(zip(traj.steps, traj.points))
    pairs = [(t, t - n) for t in traj.steps if (t - n) in stored and t - n >= 0]
    if not pairs:
        raise InsufficientHistoryError(
            f"no stored snapshot pair (t, t-{n}) exists; store a denser trajectory "
            f"(stride divides {n}) or run longer"
        )

    records = []
    for t, t_prev in pairs:
        layers_now = _product_layers(stored[t])
        layers_prev = _product_layers(stored[t_prev])
        norm_now = float(np.sqrt(sum(np.sum(m * m) for m in layers_now)))
        norm_prev = float(np.sqrt(sum(np.sum(m * m) for m in layers_prev)))
        if norm_now == 0.0:
            records.append(
                CheckpointRecord(t, n, epsilon, 2 * n * b, 0.0, float("inf"), False, True)
            )
            continue
        if convention == "proof":
            bound_rank = 2 * n * b
        else:
            bound_rank = max(1, int(np.ceil(statement_rank_bound(b, mu, lam, epsilon))))
        # singular values of the stacked tuple = union over layers
        svals = np.sort(
            np.concatenate([np.linalg.svd(m, compute_uv=False) for m in layers_now])
        )[::-1]
        tail = float(np.sqrt(np.sum(svals[2 * n * b :] ** 2))) / norm_now
        residual = shrink2n * norm_prev / norm_now
        applicable = norm_prev / norm_now <= APPLICABILITY_RATIO
        records.append(
            CheckpointRecord(
                t=t,
                n=n,
                epsilon=epsilon,
                bound_rank=bound_rank,
                tail_mass=tail,
                residual_bound=residual,
                applicable=applicable,
                passes=bool(tail <= residual + TAIL_SLACK),
            )
        )
    return RankDynamicsReport(
        convention=convention, b=b, mu=mu, lam=lam, epsilon=epsilon, records=tuple(records)
    )


def export_dynamics_csv(report: RankDynamicsReport, path):
    """One row per checkpoint: t, n, epsilon, convention, bound_rank,
    tail_mass, residual_bound, passes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "n", "epsilon", "convention", "bound_rank",
             "tail_mass", "residual_bound", "passes"]
        )
        for r in report.records:
            writer.writerow(
                [r.t, r.n, repr(r.epsilon), report.convention, r.bound_rank,
                 repr(r.tail_mass), repr(r.residual_bound), r.passes]
            )
