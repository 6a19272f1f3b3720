"""Solvers: factored gradient descent with weight decay, and proximal
gradient on the nuclear-norm regularized objective.

Both record thinned trajectories, stop on a gradient (or prox-step)
tolerance, and are bit-reproducible given their seeds.  Mini-batch runs
sample without replacement inside each epoch with a per-epoch derived
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matcore
from .exceptions import InvalidInputError
from .matcore import FactorPair
from .objectives import FactorTuple, MatrixTuple, RegularizedObjective

__all__ = [
    "InitScheme",
    "RunConfig",
    "Trajectory",
    "make_init",
    "factored_gd",
    "prox_gradient",
    "export_trajectory_csv",
]

STATUS_CONVERGED = "converged"
STATUS_MAX_STEPS = "max_steps"
STATUS_DIVERGED = "diverged"


@dataclass(frozen=True)
class InitScheme:
    """Factor initialization: 'zero_b' draws A uniform in [-c, c] with
    B = 0 (so the initial product is exactly zero); 'gaussian' draws both
    factors entrywise normal with per-factor mean and deviation."""

    kind: str
    seed: int = 0
    c: float = 0.1
    mean_a: float = 0.0
    std_a: float = 0.1
    mean_b: float = 0.0
    std_b: float = 0.1

    def __post_init__(self):
        if self.kind not in ("zero_b", "gaussian"):
            raise InvalidInputError(f"unknown init kind {self.kind!r}")
        if self.kind == "zero_b" and self.c < 0:
            raise InvalidInputError(f"c must be >= 0, got {self.c}")
        if self.kind == "gaussian" and (self.std_a < 0 or self.std_b < 0):
            raise InvalidInputError("standard deviations must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    learning_rate: float
    weight_decay: float = 0.0
    batch_size: int | None = None
    max_steps: int = 1000
    grad_tol: float = 1e-8
    schedule: str = "constant"
    seed: int = 0
    snapshot_stride: int = 1
    track_grad_rank: bool = False

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise InvalidInputError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise InvalidInputError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise InvalidInputError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.grad_tol <= 0:
            raise InvalidInputError(f"grad_tol must be > 0, got {self.grad_tol}")
        if self.schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if self.snapshot_stride < 1:
            raise InvalidInputError(f"snapshot_stride must be >= 1, got {self.snapshot_stride}")

    def lr_at(self, t: int) -> float:
        if self.schedule == "cosine":
            return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * t / self.max_steps))
        return self.learning_rate


@dataclass
class Trajectory:
    """Thinned snapshots of a run; the final iterate is always present.

    grad_ranks (when gradient-rank tracking is on) has one entry per
    update step actually taken: the max over layers and factors of the
    exact rank of that step's loss-gradient contribution.
    """

    steps: list = field(default_factory=list)
    points: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    stride: int = 1
    grad_ranks: list | None = None

    def record(self, step, point, loss, grad_norm):
        if self.steps and step <= self.steps[-1]:
            return
        self.steps.append(int(step))
        self.points.append(point)
        self.losses.append(float(loss))
        self.grad_norms.append(float(grad_norm))

    @property
    def final(self):
        return self.points[-1]

    def point_at(self, step: int):
        """Snapshot at an exact step index (KeyError when not stored)."""
        try:
            return self.points[self.steps.index(step)]
        except ValueError:
            raise KeyError(f"no snapshot stored at step {step}") from None


def make_init(scheme: InitScheme, shapes, rank: int) -> FactorTuple:
    """Deterministic factor initialization for the given layer shapes."""
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    rng = np.random.default_rng(scheme.seed)
    pairs = []
    for m, n in shapes:
        if scheme.kind == "zero_b":
            a = rng.uniform(-scheme.c, scheme.c, size=(m, rank))
            b = np.zeros((n, rank))
        else:
            a = rng.normal(scheme.mean_a, scheme.std_a, size=(m, rank))
            b = rng.normal(scheme.mean_b, scheme.std_b, size=(n, rank))
        pairs.append(FactorPair(a=a, b=b))
    return FactorTuple(pairs=tuple(pairs))


class _BatchSampler:
    """Without-replacement minibatch index stream, reshuffled per epoch
    with a seed derived from (seed, epoch)."""

    def __init__(self, n_samples, batch_size, seed):
        self.n = n_samples
        self.b = min(batch_size, n_samples)
        self.seed = seed
        self.epoch = -1
        self.queue = []

    def next_batch(self):
        if not self.queue:
            self.epoch += 1
            perm = np.random.default_rng((self.seed, self.epoch)).permutation(self.n)
            self.queue = [perm[i : i + self.b] for i in range(0, self.n, self.b)]
        return self.queue.pop(0)


def _loss_grad_pairs(base_grad: MatrixTuple, ft: FactorTuple):
    """Per-layer loss-part factor gradients (grad_f @ B, grad_f^T @ A)."""
    return [(g @ p.b, g.T @ p.a) for g, p in zip(base_grad.layers, ft.pairs)]


def factored_gd(obj: RegularizedObjective, init, cfg: RunConfig, rank: int | None = None):
    """Gradient descent with weight decay on the factored objective.

    Update: A <- A - mu*(grad_f(AB^T) B + lam*A), symmetrically for B.
    `init` is an InitScheme (then `rank` is required) or a FactorTuple.
    Stops when the full-gradient norm sum_l(||dA_l|| + ||dB_l||) falls
    below grad_tol.  Returns (final FactorTuple, Trajectory, status).
    """
    if obj.form != "factored":
        raise InvalidInputError("factored_gd requires a factored-form objective")
    if isinstance(init, FactorTuple):
        ft = init
    elif isinstance(init, InitScheme):
        if rank is None:
            raise InvalidInputError("rank is required when init is a scheme")
        ft = make_init(init, obj.shapes, rank)
    else:
        raise InvalidInputError(f"init must be InitScheme or FactorTuple, got {type(init)}")
    if ft.shapes != tuple(obj.shapes):
        raise InvalidInputError(f"init shapes {ft.shapes} do not match objective {obj.shapes}")

    sampler = None
    if cfg.batch_size is not None:
        n = obj.base.num_samples
        if n is None:
            raise InvalidInputError("mini-batch run requires per-sample losses on the objective")
        if cfg.batch_size < n:
            sampler = _BatchSampler(n, cfg.batch_size, cfg.seed)

    lam = obj.lam
    traj = Trajectory(stride=cfg.snapshot_stride,
                      grad_ranks=[] if cfg.track_grad_rank else None)
    a_list = [p.a.copy() for p in ft.pairs]
    b_list = [p.b.copy() for p in ft.pairs]

    def wrap():
        return FactorTuple(pairs=tuple(FactorPair(a=a.copy(), b=b.copy())
                                       for a, b in zip(a_list, b_list)))

    t = 0
    last = None  # most recent representable (point, loss, grad_norm)
    while True:
        if not all(np.all(np.isfinite(m)) for m in a_list + b_list):
            status = STATUS_DIVERGED
            break
        point = wrap()
        with np.errstate(over="ignore", invalid="ignore"):
            x = point.product()
            g_full = obj.base.gradient(x)
            loss = obj.value(point)
            gn = 0.0
            for (ga, gb), a, b in zip(_loss_grad_pairs(g_full, point), a_list, b_list):
                gn += np.linalg.norm(ga + lam * a) + np.linalg.norm(gb + lam * b)
        last = (point, loss, gn)
        if not np.isfinite(loss) or not np.isfinite(gn):
            status = STATUS_DIVERGED
            break
        if gn <= cfg.grad_tol:
            status = STATUS_CONVERGED
            break
        if t >= cfg.max_steps:
            status = STATUS_MAX_STEPS
            break
        if t % cfg.snapshot_stride == 0:
            traj.record(t, point, loss, gn)
        if sampler is None:
            g_step = g_full
        else:
            g_step = obj.base.sample_gradient(x, sampler.next_batch())
        lr = cfg.lr_at(t)
        step_rank = 0
        with np.errstate(over="ignore", invalid="ignore"):
            for i, (ga, gb) in enumerate(_loss_grad_pairs(g_step, point)):
                if cfg.track_grad_rank and np.all(np.isfinite(ga)) and np.all(np.isfinite(gb)):
                    step_rank = max(step_rank, matcore.exact_rank(ga), matcore.exact_rank(gb))
                a_list[i] = a_list[i] - lr * (ga + lam * a_list[i])
                b_list[i] = b_list[i] - lr * (gb + lam * b_list[i])
        if cfg.track_grad_rank:
            traj.grad_ranks.append(step_rank)
        t += 1

    final, loss, gn = last
    traj.record(t, final, loss, gn)
    return final, traj, status


def prox_gradient(obj: RegularizedObjective, init: MatrixTuple, cfg: RunConfig):
    """Proximal gradient on f(X) + lam * ||X||_*.

    Each iteration takes a gradient step on f and applies the per-layer
    singular value thresholding prox with threshold mu * lam.
    Convergence is declared when the prox step moves the iterate by at
    most grad_tol * mu.  The trajectory's grad_norm column holds the
    prox-mapping norm ||X_next - X|| / mu.
    """
    if obj.form != "nuclear":
        raise InvalidInputError("prox_gradient requires a nuclear-form objective")
    if cfg.learning_rate <= 0:
        raise InvalidInputError("prox_gradient requires learning_rate > 0")
    if init.shapes != tuple(obj.shapes):
        raise InvalidInputError(f"init shapes {init.shapes} do not match objective {obj.shapes}")

    x = init
    traj = Trajectory(stride=cfg.snapshot_stride)
    t = 0
    while True:
        loss = obj.value(x)
        if not np.isfinite(loss):
            status = STATUS_DIVERGED
            move_norm = float("nan")
            break
        if t >= cfg.max_steps:
            g = obj.base.gradient(x)
            move_norm = _prox_move_norm(obj, x, g, cfg.lr_at(max(t - 1, 0)))
            status = STATUS_MAX_STEPS
            break
        lr = cfg.lr_at(t)
        g = obj.base.gradient(x)
        x_next = MatrixTuple(
            tuple(
                matcore.svt_prox(xl - lr * gl, lr * obj.lam)
                for xl, gl in zip(x.layers, g.layers)
            )
        )
        move = (x_next - x).frob()
        if t % cfg.snapshot_stride == 0:
            traj.record(t, x, loss, move / lr)
        x = x_next
        t += 1
        if move <= cfg.grad_tol * lr:
            status = STATUS_CONVERGED
            move_norm = move / lr
            break
    traj.record(t, x, obj.value(x), move_norm)
    return x, traj, status


def _prox_move_norm(obj, x, g, lr):
    x_next = MatrixTuple(
        tuple(matcore.svt_prox(xl - lr * gl, lr * obj.lam) for xl, gl in zip(x.layers, g.layers))
    )
    return (x_next - x).frob() / lr


def export_trajectory_csv(traj: Trajectory, path):
    """Write step, loss, grad_norm plus per-layer truncated rank and
    Frobenius norm for each snapshot."""
    if not traj.points:
        raise InvalidInputError("trajectory has no snapshots")
    first = traj.points[0]
    as_tuple = first.product() if isinstance(first, FactorTuple) else first
    n_layers = len(as_tuple)
    header = ["step", "loss", "grad_norm"]
    for i in range(n_layers):
        header += [f"rank_{i}", f"frob_{i}"]
    lines = [",".join(header)]
    for step, point, loss, gn in zip(traj.steps, traj.points, traj.losses, traj.grad_norms):
        x = point.product() if isinstance(point, FactorTuple) else point
        row = [str(step), repr(float(loss)), repr(float(gn))]
        for layer in x.layers:
            rank = matcore.truncated_rank(layer) if layer.any() else 0
            row += [str(rank), repr(float(np.linalg.norm(layer)))]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
