"""Seeded experiment protocols shared by the CLI and the test suite.

Objective generators turn declarative parameter tables into objectives.
The planted generic-regime instance couples an ill-conditioned quadratic
(curvature ratio 100) with an analytically known rank-one global
minimizer and a constructed adversarial initialization whose stalled
endpoint is certified spurious; zero-B runs on the same instance reach
the global minimizer.  One run_* function per experiment kind executes
the protocol, writes its CSV artifacts under the given directory, and
returns a JSON-ready report dict.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import matcore
from .constants import estimate_constants, export_constants_csv
from .dynamics import export_dynamics_csv, rank_dynamics_check
from .exceptions import ConfigError
from .landscape import check_sosp, classify, classify_approx
from .objectives import (
    FactorTuple,
    MatrixTuple,
    QuadraticObjective,
    RegularizedObjective,
    matrix_sensing_objective,
    mlp_objective,
    quadratic_objective,
    synthetic_mlp_dataset,
)
from .optim import (
    STATUS_CONVERGED,
    STATUS_MAX_STEPS,
    InitScheme,
    RunConfig,
    export_trajectory_csv,
    factored_gd,
    prox_gradient,
)

EXPERIMENT_KINDS = (
    "solve_full",
    "solve_lora",
    "estimate_constants",
    "classify",
    "sweep_lambda",
    "sweep_init",
    "rank_dynamics",
)

GENERATOR_KINDS = ("quadratic", "planted_generic", "matrix_sensing", "mlp")


# ---------------------------------------------------------------------------
# Planted generic-regime instance.
#
# One 8x6 layer.  Two orthonormal frames (u1,v1), (u2,v2) are planted so
# that vec(u1 v1^T) and vec(u2 v2^T) are exact Hessian eigenvectors with
# curvatures 2.0 and 0.04, while the remaining 46 eigenvalues fill
# geomspace(0.1, 4.0): per-layer curvature bounds alpha = 0.04 and
# beta = 4.0, ratio 100.  The target weights the strong direction 1.9
# and the weak one 3.75, so at decay level lam = 0.5 the weak
# direction's gradient pull 0.04 * 3.75 = 0.15 stays strictly below lam
# and the regularized problem decouples along the planted frames: the
# global minimizer is exactly (1.9 - lam/2.0) u1 v1^T, rank one, with
# value 0.5*(lam^2/2.0 + 0.04*3.75^2) + lam*(1.9 - lam/2.0).
#
# A factored run started balanced on both planted frames keeps its
# second singular direction locked to (u2, v2), where the only shrinking
# force is the decay margin lam - 0.15 = 0.35; stopped on a fixed small
# budget it sits at an approximate second-order point with a second
# singular value far above the generic-regime threshold, which the
# approximate classifier certifies spurious.  Zero-B and random restarts
# never lock onto the weak frame and descend to the global minimizer.
# ---------------------------------------------------------------------------

_PL_SHAPE = (8, 6)
_PL_SEED = 7
_PL_STRONG_CURV = 2.0
_PL_WEAK_CURV = 0.04
_PL_BULK = (0.1, 4.0)
_PL_STRONG_WEIGHT = 1.9
_PL_WEAK_WEIGHT = 3.75
_PL_LAM = 0.5
_PL_ADV_MASS = (2.6, 2.5)  # initial squared singular masses on the two frames
_PL_LR = 6e-3
_PL_EPSILON = 0.8
_PL_ADV_STEPS = 100  # budget at which the adversarial run is frozen and audited
PLANTED_CERT_TOL = 5e-5  # gradient gate for endpoints of converged planted runs


@dataclasses.dataclass(frozen=True)
class PlantedInstance:
    """Ill-conditioned quadratic with a known rank-one regularized minimizer."""

    base: QuadraticObjective
    lam: float
    rank: int
    opt_rank: int
    x_star: MatrixTuple
    v_star: float
    alpha: float
    beta: float
    epsilon: float
    adversarial: FactorTuple
    learning_rate: float
    adversarial_steps: int

    def factored(self) -> RegularizedObjective:
        return RegularizedObjective(self.base, self.lam, form="factored")

    def nuclear(self) -> RegularizedObjective:
        return RegularizedObjective(self.base, self.lam, form="nuclear")


@lru_cache(maxsize=1)
def planted_instance() -> PlantedInstance:
    """Build (once) the pinned generic-regime showcase instance."""
    m, n = _PL_SHAPE
    size = m * n
    rng = np.random.default_rng(_PL_SEED)
    u, _ = np.linalg.qr(rng.normal(size=(m, 2)))
    v, _ = np.linalg.qr(rng.normal(size=(n, 2)))
    u1, u2 = u[:, 0], u[:, 1]
    v1, v2 = v[:, 0], v[:, 1]
    q1 = np.outer(u1, v1).ravel()
    q2 = np.outer(u2, v2).ravel()
    # orthonormal completion of the two planted eigenvectors
    proj = np.eye(size) - np.outer(q1, q1) - np.outer(q2, q2)
    bulk_basis, _ = np.linalg.qr(proj @ rng.normal(size=(size, size - 2)))
    mixer = np.column_stack([q1, q2, bulk_basis])
    spectrum = np.concatenate(
        ([_PL_STRONG_CURV, _PL_WEAK_CURV], np.geomspace(_PL_BULK[0], _PL_BULK[1], size - 2))
    )
    target = _PL_STRONG_WEIGHT * np.outer(u1, v1) + _PL_WEAK_WEIGHT * np.outer(u2, v2)
    base = QuadraticObjective.with_mixers(spectrum, MatrixTuple.single(target), [mixer])

    gap = _PL_STRONG_WEIGHT - _PL_LAM / _PL_STRONG_CURV
    x_star = MatrixTuple.single(gap * np.outer(u1, v1))
    v_star = (
        0.5 * (_PL_LAM**2 / _PL_STRONG_CURV + _PL_WEAK_CURV * _PL_WEAK_WEIGHT**2)
        + _PL_LAM * gap
    )
    c1, c2 = _PL_ADV_MASS
    adversarial = FactorTuple.single(
        np.column_stack([np.sqrt(c1) * u1, np.sqrt(c2) * u2]),
        np.column_stack([np.sqrt(c1) * v1, np.sqrt(c2) * v2]),
    )
    return PlantedInstance(
        base=base,
        lam=_PL_LAM,
        rank=2,
        opt_rank=1,
        x_star=x_star,
        v_star=float(v_star),
        alpha=_PL_WEAK_CURV,
        beta=_PL_BULK[1],
        epsilon=_PL_EPSILON,
        adversarial=adversarial,
        learning_rate=_PL_LR,
        adversarial_steps=_PL_ADV_STEPS,
    )


def planted_sweep_config(census_seeds=(), curves: bool = True) -> dict:
    """Canonical zero-vs-adversarial init sweep on the planted instance.

    census_seeds adds large gaussian restarts (the multi-start census of
    the dichotomy experiment); curves=False keeps only endpoint
    snapshots so big censuses stay fast.
    """
    inits = [
        {
            "kind": "zero_b",
            "seed": 1,
            "c": 0.1,
            "label": "zero",
            "grad_tol": 1e-7,
            "max_steps": 60000,
        },
        {"kind": "constructed", "label": "adversarial"},
    ]
    for s in census_seeds:
        inits.append(
            {
                "kind": "gaussian",
                "seed": int(s),
                "std_a": 0.8,
                "std_b": 0.8,
                "label": f"restart-{int(s):03d}",
            }
        )
    return {
        "experiment": "sweep_init",
        "objective": {"generator": "planted_generic"},
        "solver": {
            "learning_rate": _PL_LR,
            "grad_tol": 2e-5,
            "max_steps": 12000,
            "snapshot_stride": 100 if curves else 10**9,
        },
        "inits": inits,
        "epsilon": _PL_EPSILON,
        "delta": 1e-9,
        "certificate": {"tol1": PLANTED_CERT_TOL},
    }


# ---------------------------------------------------------------------------
# Objective generators
# ---------------------------------------------------------------------------


def seeded_lowrank_target(shape, rank: int, seed: int, scale: float = 1.0, singulars=None):
    """Rank-`rank` matrix with seeded orthonormal frames.

    Singular values default to scale * (rank, rank-1, ..., 1) so the
    spectrum is known exactly; pass `singulars` to pin them explicitly.
    """
    m, n = shape
    if rank < 1 or rank > min(m, n):
        raise ConfigError(f"target rank {rank} out of range for shape {shape}")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.normal(size=(m, rank)))
    v, _ = np.linalg.qr(rng.normal(size=(n, rank)))
    if singulars is None:
        s = scale * np.arange(rank, 0, -1, dtype=float)
    else:
        s = np.asarray(singulars, dtype=float)
        if s.size != rank:
            raise ConfigError(f"expected {rank} singular values, got {s.size}")
    return (u * s) @ v.T


def build_objective(spec: dict):
    """Instantiate the objective described by a config [objective] table.

    Returns (objective, info); info carries whatever the generator knows
    analytically — reference minimizer, pinned decay level and ranks,
    curvature constants with their provenance — so downstream
    experiments never have to guess.
    """
    kind = spec.get("generator")
    if kind == "planted_generic":
        inst = planted_instance()
        return inst.base, {
            "instance": inst,
            "x_star": inst.x_star,
            "v_star": inst.v_star,
            "lam": inst.lam,
            "rank": inst.rank,
            "opt_rank": inst.opt_rank,
            "alpha": inst.alpha,
            "beta": inst.beta,
            "source": "analytic",
            "epsilon": inst.epsilon,
        }
    if kind == "quadratic":
        shape = tuple(int(s) for s in spec["shape"])
        seed = int(spec["seed"])
        size = shape[0] * shape[1]
        lo = float(spec.get("spectrum_lo", 1.0))
        hi = float(spec.get("spectrum_hi", lo))
        if lo <= 0 or hi < lo:
            raise ConfigError(f"need 0 < spectrum_lo <= spectrum_hi, got ({lo}, {hi})")
        spectrum = np.full(size, lo) if hi == lo else np.geomspace(lo, hi, size)
        target = seeded_lowrank_target(
            shape,
            int(spec.get("target_rank", min(shape))),
            seed=seed,
            scale=float(spec.get("target_scale", 1.0)),
            singulars=spec.get("target_singulars"),
        )
        base = quadratic_objective(
            spectrum, MatrixTuple.single(target), seed=seed, mix=bool(spec.get("mix", True))
        )
        return base, {"alpha": lo, "beta": hi, "source": "analytic"}
    if kind == "matrix_sensing":
        base = matrix_sensing_objective(
            num_measurements=int(spec["num_measurements"]),
            shape=tuple(int(s) for s in spec["shape"]),
            planted_rank=int(spec["planted_rank"]),
            seed=int(spec["seed"]),
        )
        return base, {"source": "monte_carlo"}
    if kind == "mlp":
        widths = tuple(int(w) for w in spec["widths"])
        seed = int(spec["seed"])
        dataset = synthetic_mlp_dataset(widths[0], widths[2], int(spec["n_samples"]), seed)
        base = mlp_objective(widths, dataset, int(spec.get("tuned_layer", 1)), seed=seed)
        return base, {"source": "monte_carlo"}
    raise ConfigError(f"unknown generator {kind!r}; expected one of {GENERATOR_KINDS}")


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def jsonable(obj):
    """Recursively convert report payloads to JSON-safe plain types.

    Numpy scalars/arrays become Python numbers/lists; non-finite floats
    become None (JSON has no NaN/inf)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


_RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _run_config(solver: dict) -> RunConfig:
    unknown = set(solver) - _RUN_FIELDS
    if unknown:
        raise ConfigError(f"unknown solver fields {sorted(unknown)}")
    if "learning_rate" not in solver:
        raise ConfigError("solver.learning_rate is required")
    return RunConfig(**solver)


_SCHEME_FIELDS = ("seed", "c", "mean_a", "std_a", "mean_b", "std_b")


def _init_scheme(entry: dict) -> InitScheme:
    kind = entry.get("kind")
    if kind not in ("zero_b", "gaussian"):
        raise ConfigError(f"init kind must be 'zero_b' or 'gaussian', got {kind!r}")
    kwargs = {k: entry[k] for k in _SCHEME_FIELDS if k in entry}
    return InitScheme(kind=kind, **kwargs)


def _resolve_lam(cfg: dict, info: dict) -> float:
    lam = cfg.get("lam", info.get("lam"))
    if lam is None:
        raise ConfigError("lam is required (the generator does not pin one)")
    return float(lam)


def _resolve_rank(cfg: dict, info: dict) -> int:
    rank = cfg.get("rank", info.get("rank"))
    if rank is None:
        raise ConfigError("rank is required (the generator does not pin one)")
    return int(rank)


def _layer_summary(x: MatrixTuple):
    rows = []
    for layer in x.layers:
        sv = np.linalg.svd(layer, compute_uv=False)
        rows.append(
            {
                "truncated_rank": matcore.truncated_rank(layer),
                "exact_rank": matcore.exact_rank(layer),
                "frob": float(np.linalg.norm(layer)),
                "top_singulars": [float(s) for s in sv[: min(6, sv.size)]],
            }
        )
    return rows


def _cert_summary(cert):
    return {
        "is_sosp": bool(cert.is_sosp),
        "grad_norm": float(cert.grad_norm),
        "min_hess_eig": float(cert.min_hess_eig),
        "eig_converged": bool(cert.eig_converged),
        "tol1": float(cert.tol1),
        "tol2": float(cert.tol2),
        "s_spectral": [float(s) for s in cert.s_spectral],
        "balance_residual": [float(b) for b in cert.balance_residual],
    }


def _regime_dict(rep):
    return {
        "regime": list(rep.regime),
        "verdict": rep.verdict,
        "per_layer": [
            {
                "regime": lr.regime,
                "sigma_r": lr.sigma_r,
                "sigma_rstar": lr.sigma_rstar,
                "threshold": lr.threshold,
                "distance_bound": lr.distance_bound,
                "magnitude_bound": lr.magnitude_bound,
                "rank": lr.rank,
                "flagged": lr.flagged,
            }
            for lr in rep.per_layer
        ],
        "constants": {"alpha": list(rep.alpha), "beta": list(rep.beta), "source": rep.source},
        "r": rep.r,
        "r_star": rep.r_star,
        "lam": rep.lam,
        "tolerances": rep.tolerances,
        "d": rep.d,
        "epsilon": rep.epsilon,
        "delta": rep.delta,
        "flagged_layers": list(rep.flagged_layers),
        "value_comparison": rep.value_comparison,
        "distance_comparison": rep.distance_comparison,
        "notes": list(rep.notes),
    }


def _resolve_constants(cfg, info, base, x_star, r, d):
    """Per-layer (alpha, beta, source): explicit config table, analytic
    generator bounds, or a Monte-Carlo estimate around x_star."""
    table = cfg.get("constants")
    if table is not None:
        return table["alpha"], table["beta"], str(table.get("source", "config"))
    if info.get("alpha") is not None:
        return info["alpha"], info["beta"], info.get("source", "analytic")
    if x_star is None:
        raise ConfigError(
            "no analytic constants and no reference point to estimate around; "
            "provide a [constants] table"
        )
    est_cfg = cfg.get("estimation", {})
    est = estimate_constants(
        base,
        x_star,
        r=r,
        d=float(est_cfg.get("d", d if d is not None else 5.0)),
        n=int(est_cfg.get("n", 1000)),
        seed=int(est_cfg.get("seed", 0)),
        inner_trials=int(est_cfg.get("inner_trials", 32)),
        ascent_steps=int(est_cfg.get("ascent_steps", 50)),
    )
    return est.alpha, est.beta, "monte_carlo"


def _reference_point(cfg, info, base, lam, solver):
    """Reference minimizer: generator-provided, attribute on the base
    objective, or a budgeted full-space proximal solve from zero."""
    if info.get("x_star") is not None:
        return info["x_star"]
    ref = getattr(base, "minimizer", None)
    if ref is not None and lam == 0.0:
        return ref
    robj = RegularizedObjective(base, lam, form="nuclear")
    rc = _run_config(solver)
    x, _, status = prox_gradient(robj, MatrixTuple.zeros(base.shapes), rc)
    if status != STATUS_CONVERGED:
        # estimation only needs a sensible anchor; fall back to the
        # generator minimizer even when lam > 0
        if ref is not None:
            return ref
    return x


def _map_points(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
        return list(pool.map(fn, items))


def _merge_point_csvs(labeled_paths, out_path):
    """Concatenate per-point trajectory CSVs into one file with a
    leading run column identifying the sweep point."""
    lines_out = []
    for label, path in labeled_paths:
        lines = Path(path).read_text().splitlines()
        if not lines_out:
            lines_out.append("run," + lines[0])
        lines_out.extend(f"{label},{ln}" for ln in lines[1:])
    Path(out_path).write_text("\n".join(lines_out) + "\n")


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def run_solve_full(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Proximal-gradient solve of f(X) + lam * ||X||_* from zero."""
    base, info = build_objective(cfg["objective"])
    lam = _resolve_lam(cfg, info)
    robj = RegularizedObjective(base, lam, form="nuclear")
    rc = _run_config(cfg["solver"])
    x, traj, status = prox_gradient(robj, MatrixTuple.zeros(base.shapes), rc)
    export_trajectory_csv(traj, Path(outdir) / "trajectory.csv")
    report = {
        "status": status,
        "steps": int(traj.steps[-1]),
        "lam": lam,
        "final_value": float(robj.value(x)),
        "per_layer": _layer_summary(x),
    }
    if info.get("v_star") is not None:
        v_star = float(info["v_star"])
        report["reference_value"] = v_star
        report["value_gap_rel"] = abs(report["final_value"] - v_star) / max(1.0, abs(v_star))
    return report


def run_solve_lora(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Factored descent with weight decay from a configured init."""
    base, info = build_objective(cfg["objective"])
    lam = _resolve_lam(cfg, info)
    rank = _resolve_rank(cfg, info)
    robj = RegularizedObjective(base, lam, form="factored")
    rc = _run_config(cfg["solver"])
    scheme = _init_scheme(cfg.get("init", {"kind": "zero_b"}))
    ft, traj, status = factored_gd(robj, scheme, rc, rank=rank)
    export_trajectory_csv(traj, Path(outdir) / "trajectory.csv")
    x = ft.product()
    return {
        "status": status,
        "steps": int(traj.steps[-1]),
        "lam": lam,
        "rank_budget": rank,
        "final_loss": float(robj.value(ft)),
        "full_value": float(robj.full_value(x)),
        "final_grad_norm": float(traj.grad_norms[-1]),
        "per_layer": _layer_summary(x),
    }


def run_estimate_constants(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Monte-Carlo curvature constants around the reference minimizer."""
    base, info = build_objective(cfg["objective"])
    rank = _resolve_rank(cfg, info)
    lam = float(cfg.get("lam", info.get("lam") or 0.0))
    x_star = _reference_point(cfg, info, base, lam, cfg.get("solver", _DEFAULT_REF_SOLVER))
    est_cfg = cfg.get("estimation", {})
    est = estimate_constants(
        base,
        x_star,
        r=rank,
        d=float(est_cfg.get("d", cfg.get("d", 5.0))),
        n=int(est_cfg.get("n", 1000)),
        seed=int(est_cfg.get("seed", 0)),
        inner_trials=int(est_cfg.get("inner_trials", 32)),
        ascent_steps=int(est_cfg.get("ascent_steps", 50)),
        restrict_total_rank=bool(est_cfg.get("restrict_total_rank", True)),
    )
    export_constants_csv(est, Path(outdir) / "constants.csv")
    report = {
        "alpha": list(est.alpha),
        "beta": list(est.beta),
        "ratio": list(est.ratio),
        "source": est.source,
        "samples": est.samples,
        "r": est.r,
        "d": est.d,
        "seed": est.seed,
        "skipped_alpha": list(est.skipped_alpha),
        "skipped_beta": list(est.skipped_beta),
    }
    if info.get("alpha") is not None:
        report["analytic"] = {"alpha": info["alpha"], "beta": info["beta"]}
    return report


_DEFAULT_REF_SOLVER = {"learning_rate": 0.05, "max_steps": 5000, "grad_tol": 1e-9}


def run_classify(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """One factored run then certificate + regime classification."""
    base, info = build_objective(cfg["objective"])
    lam = _resolve_lam(cfg, info)
    rank = _resolve_rank(cfg, info)
    robj = RegularizedObjective(base, lam, form="factored")
    rc = _run_config(cfg["solver"])
    scheme = _init_scheme(cfg.get("init", {"kind": "zero_b"}))
    ft, traj, status = factored_gd(robj, scheme, rc, rank=rank)
    export_trajectory_csv(traj, Path(outdir) / "trajectory.csv")
    record = _classified_record(cfg, info, base, robj, ft, status, lam, rank)
    record["steps"] = int(traj.steps[-1])
    return record


def _classified_record(cfg, info, base, robj, ft, status, lam, rank):
    """Shared endpoint record: summary, certificate, regime verdict.

    Converged endpoints face the exact classifier behind a strict
    gradient gate; endpoints that ran out of budget are audited as
    approximate second-order points at scale epsilon when one is
    configured.  Anything else stays unclassified."""
    x = ft.product()
    r_star = cfg.get("opt_rank", info.get("opt_rank"))
    x_star = info.get("x_star")
    d = cfg.get("d")
    with np.errstate(over="ignore", invalid="ignore"):  # diverged endpoints overflow
        record = {
            "status": status,
            "lam": lam,
            "rank_budget": rank,
            "final_loss": float(robj.value(ft)),
            "full_value": float(robj.full_value(x)),
            "per_layer": _layer_summary(x),
            "verdict": "unclassified",
            "certificate": None,
            "classification": None,
        }
    if info.get("v_star") is not None:
        v_star = float(info["v_star"])
        record["value_gap_rel"] = abs(record["full_value"] - v_star) / max(1.0, abs(v_star))
    if r_star is None:
        return record

    gate = cfg.get("certificate", {})
    epsilon = cfg.get("epsilon", info.get("epsilon"))
    alpha, beta, source = _resolve_constants(cfg, info, base, x_star, rank, d)
    cert = None
    rep = None
    if status == STATUS_CONVERGED:
        kwargs = {k: gate[k] for k in ("tol1", "tol2", "eig_iters") if k in gate}
        cert = check_sosp(robj, ft, **kwargs)
        if cert.is_sosp:
            rep = classify(
                cert, alpha, beta, rank, int(r_star), lam, x_star=x_star, d=d, source=source
            )
    elif status == STATUS_MAX_STEPS and epsilon is not None:
        eps = float(epsilon)
        beta_max = float(np.max(np.asarray(beta, dtype=float)))
        cert = check_sosp(robj, ft, tol1=eps, tol2=float(np.sqrt(beta_max * eps)))
        if cert.is_sosp:
            rep = classify_approx(
                cert,
                alpha,
                beta,
                rank,
                int(r_star),
                lam,
                epsilon=eps,
                delta=float(cfg.get("delta", 0.0)),
                x_star_delta=x_star,
                d=d,
                source=source,
            )
    if cert is not None:
        record["certificate"] = _cert_summary(cert)
    if rep is not None:
        record["classification"] = _regime_dict(rep)
        record["verdict"] = rep.verdict
        if x_star is not None:
            record["distance_to_reference"] = float((x - x_star).frob())
    return record


def run_sweep_lambda(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Proximal solve per grid lambda; tabulates minimizer ranks."""
    base, info = build_objective(cfg["objective"])
    grid = [float(v) for v in cfg.get("lambda_grid", [])]
    if not grid:
        raise ConfigError("sweep_lambda requires a nonempty lambda_grid")
    rc = _run_config(cfg["solver"])
    outdir = Path(outdir)

    def one(item):
        i, lam = item
        label = f"{i:02d}-lam{lam:g}"
        robj = RegularizedObjective(base, lam, form="nuclear")
        x, traj, status = prox_gradient(robj, MatrixTuple.zeros(base.shapes), rc)
        pdir = outdir / "points" / label
        pdir.mkdir(parents=True, exist_ok=True)
        export_trajectory_csv(traj, pdir / "trajectory.csv")
        return label, {
            "label": label,
            "lam": lam,
            "status": status,
            "steps": int(traj.steps[-1]),
            "value": float(robj.value(x)),
            "per_layer": _layer_summary(x),
        }

    results = _map_points(one, list(enumerate(grid)), jobs)
    _merge_point_csvs(
        [(label, outdir / "points" / label / "trajectory.csv") for label, _ in results],
        outdir / "trajectory.csv",
    )
    rows = [rec for _, rec in results]
    return {
        "grid": grid,
        "runs": rows,
        "ranks": [[layer["truncated_rank"] for layer in rec["per_layer"]] for rec in rows],
    }


def run_sweep_init(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Factored run per configured init, each endpoint classified."""
    base, info = build_objective(cfg["objective"])
    lam = _resolve_lam(cfg, info)
    rank = _resolve_rank(cfg, info)
    entries = cfg.get("inits", [])
    if not entries:
        raise ConfigError("sweep_init requires a nonempty inits list")
    robj = RegularizedObjective(base, lam, form="factored")
    base_rc = _run_config(cfg["solver"])
    outdir = Path(outdir)

    def one(item):
        i, entry = item
        kind = entry.get("kind")
        label = entry.get("label", f"{i:02d}-{kind}")
        overrides = {k: entry[k] for k in ("max_steps", "grad_tol", "snapshot_stride") if k in entry}
        if kind == "constructed":
            inst = info.get("instance")
            if inst is None:
                raise ConfigError("init kind 'constructed' needs the planted_generic generator")
            overrides.setdefault("max_steps", inst.adversarial_steps)
            init = inst.adversarial
        else:
            init = _init_scheme(entry)
        rc = dataclasses.replace(base_rc, **overrides) if overrides else base_rc
        ft, traj, status = factored_gd(robj, init, rc, rank=rank)
        pdir = outdir / "points" / label
        pdir.mkdir(parents=True, exist_ok=True)
        export_trajectory_csv(traj, pdir / "trajectory.csv")
        record = _classified_record(cfg, info, base, robj, ft, status, lam, rank)
        record["label"] = label
        record["init"] = {k: v for k, v in entry.items()}
        record["steps"] = int(traj.steps[-1])
        return label, record

    results = _map_points(one, list(enumerate(entries)), jobs)
    _merge_point_csvs(
        [(label, outdir / "points" / label / "trajectory.csv") for label, _ in results],
        outdir / "trajectory.csv",
    )
    rows = [rec for _, rec in results]
    verdicts = {}
    for rec in rows:
        verdicts.setdefault(rec["verdict"], []).append(rec["label"])
    return {"runs": rows, "verdicts": verdicts}


def run_rank_dynamics(cfg: dict, outdir: Path, jobs: int = 1) -> dict:
    """Minibatch factored run, then the trajectory-rank audit.

    The decay level is the factored objective's lam; the per-step
    gradient rank premise (<= batch size) is measured on every step."""
    base, info = build_objective(cfg["objective"])
    lam = _resolve_lam(cfg, info)
    rank = _resolve_rank(cfg, info)
    dyn = cfg.get("dynamics", {})
    robj = RegularizedObjective(base, lam, form="factored")
    rc = _run_config(cfg["solver"])
    if rc.batch_size is None:
        raise ConfigError("rank_dynamics requires solver.batch_size (the gradient rank b)")
    if rc.schedule != "constant":
        raise ConfigError("rank_dynamics requires a constant learning-rate schedule")
    rc = dataclasses.replace(rc, track_grad_rank=True)
    scheme = _init_scheme(cfg.get("init", {"kind": "gaussian", "std_a": 0.3, "std_b": 0.3}))
    ft, traj, status = factored_gd(robj, scheme, rc, rank=rank)
    export_trajectory_csv(traj, Path(outdir) / "trajectory.csv")
    report = rank_dynamics_check(
        traj,
        b=int(dyn.get("b", rc.batch_size)),
        mu=rc.learning_rate,
        lam=lam,
        epsilon=float(dyn["epsilon"]),
        convention=str(dyn.get("convention", "proof")),
    )
    export_dynamics_csv(report, Path(outdir) / "dynamics.csv")
    max_grad_rank = max(traj.grad_ranks) if traj.grad_ranks else 0
    return {
        "status": status,
        "steps": int(traj.steps[-1]),
        "convention": report.convention,
        "b": report.b,
        "mu": report.mu,
        "lam": report.lam,
        "epsilon": report.epsilon,
        "max_step_grad_rank": int(max_grad_rank),
        "grad_rank_premise": bool(max_grad_rank <= report.b),
        "checkpoints": [
            {
                "t": r.t,
                "n": r.n,
                "bound_rank": r.bound_rank,
                "tail_mass": r.tail_mass,
                "residual_bound": r.residual_bound,
                "applicable": r.applicable,
                "passes": r.passes,
            }
            for r in report.records
        ],
        "all_applicable_pass": all(r.passes for r in report.records if r.applicable),
    }


_RUNNERS = {
    "solve_full": run_solve_full,
    "solve_lora": run_solve_lora,
    "estimate_constants": run_estimate_constants,
    "classify": run_classify,
    "sweep_lambda": run_sweep_lambda,
    "sweep_init": run_sweep_init,
    "rank_dynamics": run_rank_dynamics,
}


def run_experiment(cfg: dict, outdir, jobs: int = 1) -> dict:
    """Dispatch one experiment config; returns the JSON-ready results."""
    kind = cfg.get("experiment")
    if kind not in _RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; expected one of {EXPERIMENT_KINDS}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return jsonable(_RUNNERS[kind](cfg, outdir, jobs=jobs))
