import csv

import numpy as np
import pytest

from rankscape import matcore
from rankscape.exceptions import InvalidInputError
from rankscape.objectives import (
    FactorTuple,
    MatrixTuple,
    RegularizedObjective,
    matrix_sensing_objective,
    mlp_objective,
    quadratic_objective,
    synthetic_mlp_dataset,
)
from rankscape.optim import (
    InitScheme,
    RunConfig,
    _BatchSampler,
    export_trajectory_csv,
    factored_gd,
    make_init,
    prox_gradient,
)


def rank2_target(seed=0, shape=(5, 4), svals=(3.0, 1.5)):
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.normal(size=(shape[0], len(svals))))
    v, _ = np.linalg.qr(rng.normal(size=(shape[1], len(svals))))
    return u @ np.diag(svals) @ v.T


def isotropic(m):
    return quadratic_objective(np.ones(m.size), MatrixTuple.single(m), seed=0)


# -------------------------------------------------------------------- config


def test_run_config_validation():
    with pytest.raises(InvalidInputError):
        RunConfig(learning_rate=-0.1)
    with pytest.raises(InvalidInputError):
        RunConfig(learning_rate=0.1, weight_decay=-1.0)
    with pytest.raises(InvalidInputError):
        RunConfig(learning_rate=0.1, batch_size=0)
    with pytest.raises(InvalidInputError):
        RunConfig(learning_rate=0.1, grad_tol=0.0)
    with pytest.raises(InvalidInputError):
        RunConfig(learning_rate=0.1, schedule="linear")


def test_cosine_schedule_endpoints():
    cfg = RunConfig(learning_rate=0.4, schedule="cosine", max_steps=100)
    assert cfg.lr_at(0) == 0.4
    assert abs(cfg.lr_at(50) - 0.2) <= 1e-15
    assert abs(cfg.lr_at(100)) <= 1e-16
    const = RunConfig(learning_rate=0.4, max_steps=100)
    assert const.lr_at(77) == 0.4


# ---------------------------------------------------------------------- init


def test_make_init_zero_b():
    scheme = InitScheme(kind="zero_b", seed=5, c=0.2)
    ft = make_init(scheme, ((4, 3), (6, 2)), rank=2)
    assert ft.product().frob() == 0.0
    for p in ft.pairs:
        assert np.all(np.abs(p.a) <= 0.2)
        assert np.all(p.b == 0.0)
    again = make_init(scheme, ((4, 3), (6, 2)), rank=2)
    for p, q in zip(ft.pairs, again.pairs):
        np.testing.assert_array_equal(p.a, q.a)


def test_make_init_gaussian_degenerate_std():
    scheme = InitScheme(kind="gaussian", seed=1, mean_a=1.0, std_a=0.0, mean_b=-2.0, std_b=0.0)
    ft = make_init(scheme, ((3, 2),), rank=2)
    np.testing.assert_array_equal(ft.pairs[0].a, np.ones((3, 2)))
    np.testing.assert_array_equal(ft.pairs[0].b, -2.0 * np.ones((2, 2)))


def test_init_scheme_validation():
    with pytest.raises(InvalidInputError):
        InitScheme(kind="xavier")
    with pytest.raises(InvalidInputError):
        InitScheme(kind="zero_b", c=-0.1)
    with pytest.raises(InvalidInputError):
        make_init(InitScheme(kind="zero_b"), ((2, 2),), rank=0)


# --------------------------------------------------------------- factored_gd


def test_factored_gd_recovers_target_without_decay():
    m = rank2_target()
    reg = RegularizedObjective(isotropic(m), 0.0, "factored")
    cfg = RunConfig(learning_rate=0.1, max_steps=30000, grad_tol=1e-7)
    final, traj, status = factored_gd(reg, InitScheme(kind="zero_b", seed=3), cfg, rank=2)
    assert status == "converged"
    assert np.linalg.norm(final.product().layers[0] - m) <= 1e-4


def test_factored_gd_with_decay_matches_singular_value_shrinkage():
    # closed-form oracle: argmin 0.5||X-M||^2 + lam||X||_* is the
    # singular-value-thresholding prox of M
    m = rank2_target()
    lam = 0.3
    expect = matcore.svt_prox(m, lam)
    reg = RegularizedObjective(isotropic(m), lam, "factored")
    cfg = RunConfig(learning_rate=0.15, weight_decay=lam, max_steps=50000, grad_tol=1e-9)
    final, traj, status = factored_gd(reg, InitScheme(kind="zero_b", seed=7), cfg, rank=3)
    assert status == "converged"
    x = final.product().layers[0]
    assert np.linalg.norm(x - expect) <= 1e-3
    # factors balance at stationarity under decay
    p = final.pairs[0]
    assert np.linalg.norm(p.a.T @ p.a - p.b.T @ p.b) <= 1e-6 * (np.sum(p.a**2) + 1)


def test_factored_and_prox_agree_on_convex_instance():
    m = rank2_target(seed=4)
    lam = 0.25
    base = isotropic(m)
    cfg_f = RunConfig(learning_rate=0.15, max_steps=50000, grad_tol=1e-9)
    final_f, _, st_f = factored_gd(
        RegularizedObjective(base, lam, "factored"), InitScheme(kind="zero_b", seed=9), cfg_f, rank=3
    )
    cfg_p = RunConfig(learning_rate=0.5, max_steps=5000, grad_tol=1e-10)
    final_p, _, st_p = prox_gradient(
        RegularizedObjective(base, lam, "nuclear"), MatrixTuple.zeros(base.shapes), cfg_p
    )
    assert st_f == "converged" and st_p == "converged"
    assert np.linalg.norm(final_f.product().layers[0] - final_p.layers[0]) <= 1e-3


def test_factored_gd_zero_learning_rate_is_identity():
    m = rank2_target()
    reg = RegularizedObjective(isotropic(m), 0.1, "factored")
    ft = make_init(InitScheme(kind="gaussian", seed=2), reg.shapes, 2)
    cfg = RunConfig(learning_rate=0.0, max_steps=5, grad_tol=1e-12)
    final, traj, status = factored_gd(reg, ft, cfg)
    assert status == "max_steps"
    np.testing.assert_array_equal(final.pairs[0].a, ft.pairs[0].a)
    np.testing.assert_array_equal(final.pairs[0].b, ft.pairs[0].b)
    assert traj.steps[-1] == 5


def test_factored_gd_monotone_descent_full_batch():
    xs, ys = synthetic_mlp_dataset(4, 3, 20, seed=6)
    base = mlp_objective((4, 6, 3), (xs, ys), 0, seed=7)
    reg = RegularizedObjective(base, 0.05, "factored")
    cfg = RunConfig(learning_rate=0.05, max_steps=300, grad_tol=1e-12, snapshot_stride=1)
    _, traj, _ = factored_gd(reg, InitScheme(kind="gaussian", seed=8), cfg, rank=3)
    diffs = np.diff(traj.losses)
    assert np.all(diffs <= 1e-12)


def test_factored_gd_multi_layer():
    rng = np.random.default_rng(11)
    target = MatrixTuple((rank2_target(1, (4, 3)), rank2_target(2, (3, 5))))
    base = quadratic_objective(np.ones(27), target, seed=3)
    reg = RegularizedObjective(base, 0.0, "factored")
    cfg = RunConfig(learning_rate=0.1, max_steps=30000, grad_tol=1e-7)
    final, _, status = factored_gd(reg, InitScheme(kind="zero_b", seed=12), cfg, rank=2)
    assert status == "converged"
    for got, want in zip(final.product().layers, target.layers):
        assert np.linalg.norm(got - want) <= 1e-4


def test_factored_gd_divergence_is_reported_not_raised():
    m = rank2_target()
    reg = RegularizedObjective(isotropic(m), 0.0, "factored")
    cfg = RunConfig(learning_rate=50.0, max_steps=2000, grad_tol=1e-9)
    final, traj, status = factored_gd(reg, InitScheme(kind="gaussian", seed=1), cfg, rank=2)
    assert status == "diverged"
    # the reported final point is the last representable iterate
    assert all(np.all(np.isfinite(p.a)) and np.all(np.isfinite(p.b)) for p in final.pairs)


def test_factored_gd_determinism_minibatch():
    base = matrix_sensing_objective(16, (4, 4), 2, seed=13)
    reg = RegularizedObjective(base, 0.02, "factored")
    cfg = RunConfig(
        learning_rate=0.05,
        batch_size=4,
        max_steps=400,
        grad_tol=1e-12,
        seed=21,
        snapshot_stride=50,
        track_grad_rank=True,
    )
    runs = [factored_gd(reg, InitScheme(kind="gaussian", seed=5), cfg, rank=2) for _ in range(2)]
    (f1, t1, s1), (f2, t2, s2) = runs
    assert s1 == s2
    np.testing.assert_array_equal(f1.pairs[0].a, f2.pairs[0].a)
    np.testing.assert_array_equal(f1.pairs[0].b, f2.pairs[0].b)
    assert t1.losses == t2.losses
    assert t1.grad_ranks == t2.grad_ranks
    assert len(t1.grad_ranks) > 0


def test_minibatch_gradient_ranks_bounded_by_batch_size():
    # per-sample mlp gradients are rank one, so a batch of k has rank <= k
    xs, ys = synthetic_mlp_dataset(5, 4, 12, seed=14)
    base = mlp_objective((5, 8, 4), (xs, ys), 0, seed=15)
    reg = RegularizedObjective(base, 0.01, "factored")
    cfg = RunConfig(
        learning_rate=0.1, batch_size=2, max_steps=60, grad_tol=1e-14, track_grad_rank=True
    )
    _, traj, _ = factored_gd(reg, InitScheme(kind="gaussian", seed=16), cfg, rank=4)
    assert traj.grad_ranks and max(traj.grad_ranks) <= 2


def test_factored_gd_validation():
    m = rank2_target()
    nuclear = RegularizedObjective(isotropic(m), 0.1, "nuclear")
    factored = RegularizedObjective(isotropic(m), 0.1, "factored")
    cfg = RunConfig(learning_rate=0.1, max_steps=5)
    with pytest.raises(InvalidInputError):
        factored_gd(nuclear, InitScheme(kind="zero_b"), cfg, rank=2)
    with pytest.raises(InvalidInputError):
        factored_gd(factored, InitScheme(kind="zero_b"), cfg)  # rank missing
    with pytest.raises(InvalidInputError):
        factored_gd(factored, FactorTuple.single(np.zeros((3, 2)), np.zeros((4, 2))), cfg)
    with pytest.raises(InvalidInputError):
        # quadratic objective has no per-sample structure
        cfg_b = RunConfig(learning_rate=0.1, batch_size=2, max_steps=5)
        factored_gd(factored, InitScheme(kind="zero_b"), cfg_b, rank=2)


# -------------------------------------------------------------- prox_gradient


def test_prox_gradient_one_step_exact():
    # unit-curvature quadratic with unit step: first update lands exactly
    # on the thresholded target and the second confirms the fixed point
    m = rank2_target()
    lam = 0.4
    reg = RegularizedObjective(isotropic(m), lam, "nuclear")
    cfg = RunConfig(learning_rate=1.0, max_steps=100, grad_tol=1e-12)
    final, traj, status = prox_gradient(reg, MatrixTuple.zeros(reg.shapes), cfg)
    assert status == "converged"
    assert traj.steps[-1] == 2
    np.testing.assert_allclose(final.layers[0], matcore.svt_prox(m, lam), atol=1e-12)


def test_prox_gradient_plain_gd_when_lambda_zero():
    m = rank2_target(seed=3)
    reg = RegularizedObjective(isotropic(m), 0.0, "nuclear")
    cfg = RunConfig(learning_rate=0.5, max_steps=200, grad_tol=1e-10)
    final, _, status = prox_gradient(reg, MatrixTuple.zeros(reg.shapes), cfg)
    assert status == "converged"
    assert np.linalg.norm(final.layers[0] - m) <= 1e-8


def test_prox_gradient_large_lambda_collapses_to_zero():
    m = rank2_target()  # top singular value 3
    reg = RegularizedObjective(isotropic(m), 5.0, "nuclear")
    cfg = RunConfig(learning_rate=0.5, max_steps=500, grad_tol=1e-12)
    final, _, status = prox_gradient(reg, MatrixTuple.single(m), cfg)
    assert status == "converged"
    assert np.linalg.norm(final.layers[0]) <= 1e-10


def test_prox_fixed_point_satisfies_stationarity():
    rng = np.random.default_rng(17)
    target = MatrixTuple.single(rank2_target(seed=5))
    base = quadratic_objective(np.linspace(0.5, 2.0, 20), target, seed=6)
    lam = 0.2
    reg = RegularizedObjective(base, lam, "nuclear")
    cfg = RunConfig(learning_rate=0.4, max_steps=20000, grad_tol=1e-10)
    final, _, status = prox_gradient(reg, MatrixTuple.zeros(reg.shapes), cfg)
    assert status == "converged"
    g = base.gradient(final).layers[0]
    # -grad f must lie in lam * (subdifferential of the nuclear norm)
    assert matcore.nuclear_subgradient_residual(final.layers[0], -g, lam) <= 1e-6
    assert matcore.exact_rank(final.layers[0], 1e-10) > 0  # non-degenerate instance


def test_prox_gradient_validation():
    m = rank2_target()
    factored = RegularizedObjective(isotropic(m), 0.1, "factored")
    nuclear = RegularizedObjective(isotropic(m), 0.1, "nuclear")
    with pytest.raises(InvalidInputError):
        prox_gradient(factored, MatrixTuple.zeros(((5, 4),)), RunConfig(learning_rate=0.1))
    with pytest.raises(InvalidInputError):
        prox_gradient(nuclear, MatrixTuple.zeros(((5, 4),)), RunConfig(learning_rate=0.0))
    with pytest.raises(InvalidInputError):
        prox_gradient(nuclear, MatrixTuple.zeros(((4, 4),)), RunConfig(learning_rate=0.1))


# ---------------------------------------------------------------- trajectory


def test_trajectory_stride_and_point_at():
    m = rank2_target()
    reg = RegularizedObjective(isotropic(m), 0.0, "factored")
    cfg = RunConfig(learning_rate=0.05, max_steps=95, grad_tol=1e-14, snapshot_stride=10)
    _, traj, status = factored_gd(reg, InitScheme(kind="zero_b", seed=1), cfg, rank=2)
    assert status == "max_steps"
    assert traj.steps == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]
    assert traj.point_at(40) is traj.points[4]
    with pytest.raises(KeyError):
        traj.point_at(41)
    assert traj.final is traj.points[-1]


def test_export_trajectory_csv(tmp_path):
    m = rank2_target()
    reg = RegularizedObjective(isotropic(m), 0.1, "factored")
    cfg = RunConfig(learning_rate=0.1, max_steps=40, grad_tol=1e-14, snapshot_stride=5)
    _, traj, _ = factored_gd(reg, InitScheme(kind="zero_b", seed=4), cfg, rank=2)
    path = tmp_path / "traj.csv"
    export_trajectory_csv(traj, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss", "grad_norm", "rank_0", "frob_0"]
    assert len(rows) - 1 == len(traj.steps)
    steps = [int(r[0]) for r in rows[1:]]
    assert steps == traj.steps
    # zero_b start: zero product has rank 0 and norm 0
    assert rows[1][3] == "0" and float(rows[1][4]) == 0.0
    for r in rows[1:]:
        float(r[1]), float(r[2])  # parse
        assert 0 <= int(r[3]) <= 2
    # exporting again is byte-identical
    path2 = tmp_path / "traj2.csv"
    export_trajectory_csv(traj, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_export_requires_snapshots(tmp_path):
    from rankscape.optim import Trajectory

    with pytest.raises(InvalidInputError):
        export_trajectory_csv(Trajectory(), tmp_path / "x.csv")


# ------------------------------------------------------------------- sampler


def test_batch_sampler_epoch_coverage():
    s = _BatchSampler(10, 3, seed=0)
    first_epoch = [s.next_batch() for _ in range(4)]
    assert [len(b) for b in first_epoch] == [3, 3, 3, 1]
    assert sorted(np.concatenate(first_epoch).tolist()) == list(range(10))
    second_epoch = [s.next_batch() for _ in range(4)]
    assert sorted(np.concatenate(second_epoch).tolist()) == list(range(10))
    assert not np.array_equal(np.concatenate(first_epoch), np.concatenate(second_epoch))


def test_batch_sampler_batch_larger_than_n():
    s = _BatchSampler(3, 8, seed=1)
    assert len(s.next_batch()) == 3
