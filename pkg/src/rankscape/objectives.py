"""Differentiable objectives over tuples of dense matrices.

The solvers and landscape checks consume a small contract: value,
gradient, and Hessian-vector products (the scalar quadratic/bilinear
forms derive from the latter).  Three synthetic generators are shipped:
a quadratic family with fully controllable curvature spectrum, a
Gaussian matrix-sensing family, and a two-layer tanh network whose
tuned layer plays the role of the additive low-rank update.  A central
finite-difference checker validates any objective against its own
derivatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import matcore
from .exceptions import InvalidInputError
from .matcore import FactorPair, as_matrix

__all__ = [
    "MatrixTuple",
    "FactorTuple",
    "Objective",
    "RegularizedObjective",
    "quadratic_objective",
    "matrix_sensing_objective",
    "mlp_objective",
    "derivative_check",
    "load_dataset_csv",
    "synthetic_mlp_dataset",
]


@dataclass(frozen=True)
class MatrixTuple:
    """Ordered tuple of dense matrices with fixed per-layer shapes.

    The tuple Frobenius norm is the root-sum-of-squares across layers;
    the tuple nuclear norm is the plain sum across layers.
    """

    layers: tuple

    def __post_init__(self):
        if len(self.layers) == 0:
            raise InvalidInputError("MatrixTuple must hold at least one layer")
        object.__setattr__(
            self, "layers", tuple(as_matrix(m, f"layer {i}") for i, m in enumerate(self.layers))
        )

    @classmethod
    def single(cls, m) -> "MatrixTuple":
        return cls(layers=(m,))

    @classmethod
    def zeros(cls, shapes) -> "MatrixTuple":
        return cls(layers=tuple(np.zeros(s) for s in shapes))

    @property
    def shapes(self):
        return tuple(m.shape for m in self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def frob(self) -> float:
        return float(np.sqrt(sum(np.sum(m * m) for m in self.layers)))

    def nuclear(self) -> float:
        return float(sum(matcore.nuclear_norm(m) for m in self.layers))

    def dot(self, other: "MatrixTuple") -> float:
        return float(sum(np.sum(a * b) for a, b in zip(self.layers, other.layers)))

    def __add__(self, other):
        return MatrixTuple(tuple(a + b for a, b in zip(self.layers, other.layers)))

    def __sub__(self, other):
        return MatrixTuple(tuple(a - b for a, b in zip(self.layers, other.layers)))

    def __rmul__(self, c):
        return MatrixTuple(tuple(float(c) * m for m in self.layers))

    __mul__ = __rmul__


@dataclass(frozen=True)
class FactorTuple:
    """Per-layer factor pairs sharing one rank budget."""

    pairs: tuple

    def __post_init__(self):
        if len(self.pairs) == 0:
            raise InvalidInputError("FactorTuple must hold at least one pair")
        if len({p.rank_budget for p in self.pairs}) != 1:
            raise InvalidInputError("all factor pairs must share the rank budget")

    @classmethod
    def single(cls, a, b) -> "FactorTuple":
        return cls(pairs=(FactorPair(a=a, b=b),))

    @property
    def rank_budget(self) -> int:
        return self.pairs[0].rank_budget

    @property
    def shapes(self):
        return tuple(p.shape for p in self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def product(self) -> MatrixTuple:
        return MatrixTuple(tuple(p.product() for p in self.pairs))

    def frob(self) -> float:
        """Root-sum-of-squares over every factor matrix."""
        return float(
            np.sqrt(sum(np.sum(p.a * p.a) + np.sum(p.b * p.b) for p in self.pairs))
        )

    def sum_frob(self) -> float:
        """Sum of per-factor Frobenius norms (the solver stopping metric)."""
        return float(sum(np.linalg.norm(p.a) + np.linalg.norm(p.b) for p in self.pairs))

    def squared_frob(self) -> float:
        return float(sum(np.sum(p.a * p.a) + np.sum(p.b * p.b) for p in self.pairs))


class Objective:
    """Twice-differentiable scalar function of a MatrixTuple.

    Subclasses set `shapes` and optionally `minimizer` (a known global
    minimizer of the unregularized objective) and `num_samples` (when
    the objective is an empirical mean exposing per-sample gradients).
    """

    shapes = ()
    minimizer = None
    num_samples = None

    def value(self, x: MatrixTuple) -> float:
        raise NotImplementedError

    def gradient(self, x: MatrixTuple) -> MatrixTuple:
        raise NotImplementedError

    def hessian_vector(self, x: MatrixTuple, d: MatrixTuple) -> MatrixTuple:
        raise NotImplementedError

    def hessian_quadratic(self, x: MatrixTuple, d: MatrixTuple) -> float:
        return self.hessian_vector(x, d).dot(d)

    def hessian_cross(self, x: MatrixTuple, d1: MatrixTuple, d2: MatrixTuple) -> float:
        return self.hessian_vector(x, d1).dot(d2)

    def sample_gradient(self, x: MatrixTuple, indices) -> MatrixTuple:
        raise InvalidInputError("objective does not expose per-sample gradients")

    def check_point(self, x: MatrixTuple, name="point"):
        if x.shapes != tuple(self.shapes):
            raise InvalidInputError(f"{name} shapes {x.shapes} do not match {self.shapes}")


def _vec(layers):
    return np.concatenate([m.ravel() for m in layers])


class QuadraticObjective(Objective):
    """f(X) = 0.5 <vec(X - target), H vec(X - target)>.

    H is block-diagonal across layers; layer l gets its contiguous slice
    of the requested spectrum, conjugated by a seeded orthogonal mixer
    (or left diagonal when mix=False).  Curvature bounds are therefore
    analytic: every restricted strong-convexity quotient lies in
    [min(slice), max(slice)] per layer.
    """

    def __init__(self, h_spectrum, target: MatrixTuple, seed: int, mix: bool = True):
        spectrum = np.asarray(h_spectrum, dtype=float).ravel()
        sizes = [m.size for m in target.layers]
        if spectrum.size != sum(sizes):
            raise InvalidInputError(
                f"spectrum length {spectrum.size} != total entry count {sum(sizes)}"
            )
        if np.any(spectrum <= 0) or not np.all(np.isfinite(spectrum)):
            raise InvalidInputError("spectrum entries must be positive and finite")
        self.shapes = target.shapes
        self.minimizer = target
        self.target = target
        rng = np.random.default_rng(seed)
        self._blocks = []
        self._slices = []
        start = 0
        for size in sizes:
            sl = spectrum[start : start + size]
            self._slices.append(sl.copy())
            if mix:
                q, r = np.linalg.qr(rng.normal(size=(size, size)))
                q *= np.sign(np.diag(r))
                self._blocks.append((q * sl) @ q.T)
            else:
                self._blocks.append(np.diag(sl))
            start += size

    @classmethod
    def with_mixers(cls, h_spectrum, target: MatrixTuple, mixers):
        """Same family with caller-chosen orthogonal mixers per layer.

        mixers[l] is a (size_l, size_l) orthogonal matrix whose columns
        become the Hessian eigenvectors of layer l, paired in order with
        that layer's spectrum slice.  spectrum_bounds() stays exact.
        """
        obj = cls(h_spectrum, target, seed=0, mix=False)
        if len(mixers) != len(obj._slices):
            raise InvalidInputError(f"expected {len(obj._slices)} mixers, got {len(mixers)}")
        for i, sl in enumerate(obj._slices):
            q = np.asarray(mixers[i], dtype=float)
            if q.shape != (sl.size, sl.size):
                raise InvalidInputError(
                    f"mixer {i} has shape {q.shape}, expected {(sl.size, sl.size)}"
                )
            if not np.allclose(q.T @ q, np.eye(sl.size), atol=1e-9):
                raise InvalidInputError(f"mixer {i} is not orthogonal")
            obj._blocks[i] = (q * sl) @ q.T
        return obj

    def spectrum_bounds(self):
        """Analytic per-layer (alpha, beta) = (min, max) of the spectrum slice."""
        lo = np.array([sl.min() for sl in self._slices])
        hi = np.array([sl.max() for sl in self._slices])
        return lo, hi

    def _apply_h(self, d: MatrixTuple) -> MatrixTuple:
        out = []
        for h, dm in zip(self._blocks, d.layers):
            out.append((h @ dm.ravel()).reshape(dm.shape))
        return MatrixTuple(tuple(out))

    def value(self, x: MatrixTuple) -> float:
        self.check_point(x)
        delta = x - self.target
        return 0.5 * self._apply_h(delta).dot(delta)

    def gradient(self, x: MatrixTuple) -> MatrixTuple:
        self.check_point(x)
        return self._apply_h(x - self.target)

    def hessian_vector(self, x: MatrixTuple, d: MatrixTuple) -> MatrixTuple:
        return self._apply_h(d)


def quadratic_objective(h_spectrum, target: MatrixTuple, seed: int, mix: bool = True):
    """Quadratic objective with known minimizer and curvature spectrum."""
    return QuadraticObjective(h_spectrum, target, seed, mix=mix)


class MatrixSensingObjective(Objective):
    """f(X) = (1/2N) sum_i <G_i, X - M>^2 for seeded Gaussian probes G_i."""

    def __init__(self, num_measurements: int, shape, planted_rank: int, seed: int):
        m, n = shape
        if planted_rank < 1 or planted_rank > min(m, n):
            raise InvalidInputError(f"planted_rank {planted_rank} out of range for {shape}")
        if num_measurements < 1:
            raise InvalidInputError("num_measurements must be >= 1")
        rng = np.random.default_rng(seed)
        self.probes = rng.normal(size=(num_measurements, m, n))
        planted = rng.normal(size=(m, planted_rank)) @ rng.normal(size=(planted_rank, n))
        self.planted = planted
        self.shapes = ((m, n),)
        self.minimizer = MatrixTuple.single(planted)
        self.num_samples = num_measurements

    def _residuals(self, x, indices=None):
        g = self.probes if indices is None else self.probes[indices]
        return g, np.tensordot(g, x.layers[0] - self.planted, axes=2)

    def value(self, x: MatrixTuple) -> float:
        self.check_point(x)
        _, z = self._residuals(x)
        return 0.5 * float(np.mean(z**2))

    def gradient(self, x: MatrixTuple) -> MatrixTuple:
        self.check_point(x)
        g, z = self._residuals(x)
        return MatrixTuple.single(np.tensordot(z, g, axes=1) / z.size)

    def sample_gradient(self, x: MatrixTuple, indices) -> MatrixTuple:
        self.check_point(x)
        g, z = self._residuals(x, np.asarray(indices))
        return MatrixTuple.single(np.tensordot(z, g, axes=1) / z.size)

    def hessian_vector(self, x: MatrixTuple, d: MatrixTuple) -> MatrixTuple:
        z = np.tensordot(self.probes, d.layers[0], axes=2)
        return MatrixTuple.single(np.tensordot(z, self.probes, axes=1) / z.size)


def matrix_sensing_objective(num_measurements: int, shape, planted_rank: int, seed: int):
    """Gaussian sensing objective; small num_measurements gives ill-conditioned
    restricted curvature."""
    return MatrixSensingObjective(num_measurements, shape, planted_rank, seed)


class MlpObjective(Objective):
    """Squared-loss empirical risk of a two-layer tanh network.

    The argument X is an additive update to the tuned layer; the other
    layer stays frozen at its seeded value.  Per-sample gradients with
    respect to the tuned layer are outer products (rank one), which the
    trajectory rank analysis relies on.  Derivatives are analytic
    (forward-over-reverse for the Hessian products).
    """

    def __init__(self, widths, dataset, tuned_layer: int, seed: int = 0):
        d_in, d_hidden, d_out = widths
        xs, ys = dataset
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        if xs.shape[0] == 0:
            raise InvalidInputError("dataset must be nonempty")
        if xs.shape[1] != d_in or ys.shape[1] != d_out or xs.shape[0] != ys.shape[0]:
            raise InvalidInputError(
                f"dataset shapes {xs.shape}, {ys.shape} inconsistent with widths {widths}"
            )
        if tuned_layer not in (0, 1):
            raise InvalidInputError(f"tuned_layer must be 0 or 1, got {tuned_layer}")
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(size=(d_hidden, d_in)) / np.sqrt(d_in)
        self.w2 = rng.normal(size=(d_out, d_hidden)) / np.sqrt(d_hidden)
        self.xs, self.ys = xs, ys
        self.tuned_layer = tuned_layer
        self.widths = (d_in, d_hidden, d_out)
        self.shapes = ((d_hidden, d_in),) if tuned_layer == 0 else ((d_out, d_hidden),)
        self.num_samples = xs.shape[0]

    def _forward(self, x, rows):
        xs = self.xs[rows] if rows is not None else self.xs
        ys = self.ys[rows] if rows is not None else self.ys
        w1 = self.w1 + x.layers[0] if self.tuned_layer == 0 else self.w1
        w2 = self.w2 + x.layers[0] if self.tuned_layer == 1 else self.w2
        z = xs @ w1.T
        t = np.tanh(z)
        resid = t @ w2.T - ys
        return xs, t, resid, w2

    def value(self, x: MatrixTuple) -> float:
        self.check_point(x)
        _, _, resid, _ = self._forward(x, None)
        return 0.5 * float(np.sum(resid**2)) / self.num_samples

    def _gradient(self, x, rows):
        xs, t, resid, w2 = self._forward(x, rows)
        n = xs.shape[0]
        if self.tuned_layer == 1:
            return MatrixTuple.single(resid.T @ t / n)
        delta = (resid @ w2) * (1.0 - t * t)
        return MatrixTuple.single(delta.T @ xs / n)

    def gradient(self, x: MatrixTuple) -> MatrixTuple:
        self.check_point(x)
        return self._gradient(x, None)

    def sample_gradient(self, x: MatrixTuple, indices) -> MatrixTuple:
        self.check_point(x)
        return self._gradient(x, np.asarray(indices))

    def hessian_vector(self, x: MatrixTuple, d: MatrixTuple) -> MatrixTuple:
        xs, t, resid, w2 = self._forward(x, None)
        n = xs.shape[0]
        dm = d.layers[0]
        if self.tuned_layer == 1:
            return MatrixTuple.single((t @ dm.T).T @ t / n)
        dt1 = 1.0 - t * t  # tanh'
        dz = xs @ dm.T
        dp = (dt1 * dz) @ w2.T
        # tanh'' = -2 tanh * tanh'
        ddelta = (dp @ w2) * dt1 + (resid @ w2) * (-2.0 * t * dt1) * dz
        return MatrixTuple.single(ddelta.T @ xs / n)


def mlp_objective(widths, dataset, tuned_layer: int, seed: int = 0):
    """Two-layer tanh network risk as a function of one layer's update."""
    return MlpObjective(widths, dataset, tuned_layer, seed=seed)


def load_dataset_csv(path):
    """Read an (inputs, targets) dataset from CSV.

    Expects a header row naming columns x_0..x_{din-1}, y_0..y_{dout-1}
    (order in the file is irrelevant).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    x_cols = sorted(
        (i for i, name in enumerate(header) if name.strip().startswith("x_")),
        key=lambda i: int(header[i].strip().split("_", 1)[1]),
    )
    y_cols = sorted(
        (i for i, name in enumerate(header) if name.strip().startswith("y_")),
        key=lambda i: int(header[i].strip().split("_", 1)[1]),
    )
    if not x_cols or not y_cols:
        raise InvalidInputError(f"{path}: header must contain x_* and y_* columns")
    data = np.asarray(rows, dtype=float)
    return data[:, x_cols], data[:, y_cols]


def synthetic_mlp_dataset(d_in: int, d_out: int, n: int, seed: int):
    """Gaussian inputs with targets from an independent seeded teacher net."""
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(n, d_in))
    w = rng.normal(size=(d_in, d_out)) / np.sqrt(d_in)
    ys = np.tanh(xs @ w) + 0.1 * rng.normal(size=(n, d_out))
    return xs, ys


class RegularizedObjective:
    """Smooth objective plus nuclear-norm or factor-decay regularization.

    form="nuclear": F(X) = f(X) + lam * sum_l ||X_l||_*, over MatrixTuple.
    form="factored": g(A, B) = f(AB^T) + (lam/2) * sum_l (||A_l||_F^2 +
    ||B_l||_F^2), over FactorTuple.  Balanced factor pairs make the two
    penalties agree, which is what ties the two problems together.
    """

    def __init__(self, base: Objective, lam: float, form: str):
        if lam < 0 or not np.isfinite(lam):
            raise InvalidInputError(f"lambda must be finite and >= 0, got {lam}")
        if form not in ("nuclear", "factored"):
            raise InvalidInputError(f"form must be 'nuclear' or 'factored', got {form}")
        self.base = base
        self.lam = float(lam)
        self.form = form

    @property
    def shapes(self):
        return self.base.shapes

    def full_value(self, x: MatrixTuple) -> float:
        """f(X) + lam * ||X||_* regardless of form (the common yardstick)."""
        return self.base.value(x) + self.lam * x.nuclear()

    def value(self, point) -> float:
        if self.form == "nuclear":
            return self.full_value(point)
        return self.base.value(point.product()) + 0.5 * self.lam * point.squared_frob()

    def factored_gradient(self, ft: FactorTuple, indices=None) -> FactorTuple:
        """Gradient of g at (A, B); minibatch gradient when indices given."""
        x = ft.product()
        if indices is None:
            gf = self.base.gradient(x)
        else:
            gf = self.base.sample_gradient(x, indices)
        pairs = []
        for p, g in zip(ft.pairs, gf.layers):
            pairs.append(FactorPair(a=g @ p.b + self.lam * p.a, b=g.T @ p.a + self.lam * p.b))
        return FactorTuple(pairs=tuple(pairs))

    def factored_hessian_vector(self, ft: FactorTuple, direction: FactorTuple) -> FactorTuple:
        """Hessian-vector product of g at (A, B) applied to (U, V).

        Expands to first-order cross terms through grad f, the base
        Hessian evaluated on the assembled tuple direction
        (A V^T + U B^T per layer), and the decay term.
        """
        x = ft.product()
        gf = self.base.gradient(x)
        assembled = MatrixTuple(
            tuple(p.a @ q.b.T + q.a @ p.b.T for p, q in zip(ft.pairs, direction.pairs))
        )
        hv = self.base.hessian_vector(x, assembled)
        pairs = []
        for p, q, g, h in zip(ft.pairs, direction.pairs, gf.layers, hv.layers):
            ua = g @ q.b + h @ p.b + self.lam * q.a
            vb = g.T @ q.a + h.T @ p.a + self.lam * q.b
            pairs.append(FactorPair(a=ua, b=vb))
        return FactorTuple(pairs=tuple(pairs))

    def factored_hessian_quadratic(self, ft: FactorTuple, direction: FactorTuple) -> float:
        hv = self.factored_hessian_vector(ft, direction)
        return float(
            sum(
                np.sum(h.a * q.a) + np.sum(h.b * q.b)
                for h, q in zip(hv.pairs, direction.pairs)
            )
        )


def derivative_check(obj: Objective, point: MatrixTuple, step: float, probes: int, seed: int):
    """Compare analytic derivatives against central finite differences.

    Returns (grad_err, hess_err): the max over seeded unit probe
    directions of the normalized gradient and Hessian-quadratic
    mismatches.
    """
    if step <= 0:
        raise InvalidInputError(f"step must be > 0, got {step}")
    rng = np.random.default_rng(seed)
    g = obj.gradient(point)
    f0 = obj.value(point)
    grad_err = 0.0
    hess_err = 0.0
    for _ in range(probes):
        d = MatrixTuple(tuple(rng.normal(size=s) for s in point.shapes))
        d = (1.0 / d.frob()) * d
        fp = obj.value(point + step * d)
        fm = obj.value(point - step * d)
        lin = g.dot(d)
        fd_lin = (fp - fm) / (2.0 * step)
        grad_err = max(grad_err, abs(lin - fd_lin) / (1.0 + abs(lin)))
        quad = obj.hessian_quadratic(point, d)
        fd_quad = (fp - 2.0 * f0 + fm) / step**2
        hess_err = max(hess_err, abs(quad - fd_quad) / (1.0 + abs(quad)))
    return grad_err, hess_err
