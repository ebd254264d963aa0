"""Alternating training loop: schedule, determinism, diagnostics, failure paths.

The loop itself is pinned by a manual re-implementation of one and two
iterations built from the public per-vector primitives; the trained matrices
must match it bit for bit, which fixes the update order (users against the
frozen item matrix, then items against the fresh user matrix) and the
halved-step schedule.
"""

import numpy as np
import pytest

from poisfact import (
    ConfigError,
    DataError,
    DegenerateModelError,
    FactorModel,
    NumericFailureError,
    RegressionView,
    SolverChoice,
    SparseInteractions,
    TrainConfig,
    full_objective,
    init_factors,
    prox_grad_update,
    train,
    training_objective,
)


def random_data(rng, m=12, n=9, density=0.3):
    X = (rng.random((m, n)) < density) * rng.integers(1, 7, size=(m, n))
    users, items = np.nonzero(X)
    if len(users) == 0:
        X[0, 0] = 1
        users, items = np.nonzero(X)
    return SparseInteractions.from_entries(users, items, X[users, items].astype(float), m, n)


def manual_proxgrad(data, config):
    """Reference loop: same primitives, plain Python, sequential rows."""
    model = init_factors(data.m, data.n, config.k, config.seed)
    A, B = model.A, model.B
    reg = config.regularization
    tau = config.solver.tau
    alpha = config.alpha
    for _ in range(config.iters):
        s_b = B.sum(axis=0)
        for u in range(data.m):
            items, counts = data.row(u)
            view = RegressionView(x=A[u], rows=B[items], counts=counts, s=s_b)
            A[u] = prox_grad_update(A[u], view, alpha, reg, tau)
        s_a = A.sum(axis=0)
        for i in range(data.n):
            users, counts = data.col(i)
            view = RegressionView(x=B[i], rows=A[users], counts=counts, s=s_a)
            B[i] = prox_grad_update(B[i], view, alpha, reg, tau)
        alpha *= 0.5
    return A, B


# ---------------------------------------------------------------- initialization


def test_init_factors_positive_and_deterministic():
    a = init_factors(5, 4, 3, seed=7)
    b = init_factors(5, 4, 3, seed=7)
    c = init_factors(5, 4, 3, seed=8)
    assert a.A.shape == (5, 3) and a.B.shape == (4, 3) and a.k == 3
    assert a.A.min() > 0 and a.B.min() > 0
    assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B)
    assert not np.array_equal(a.A, c.A)


def test_init_factors_unit_mean():
    # standard-exponential entries: one million draws average to 1 +- 0.01
    model = init_factors(1000, 1000, 500, seed=11)
    mean = float(np.concatenate([model.A.ravel(), model.B.ravel()]).mean())
    assert 0.99 <= mean <= 1.01


def test_init_factors_validates_dimensions():
    with pytest.raises(ConfigError):
        init_factors(0, 3, 2, seed=0)


def test_factor_model_validates_shapes():
    with pytest.raises(ValueError, match="k columns"):
        FactorModel(np.ones((3, 2)), np.ones((4, 3)), 2)
    with pytest.raises(ValueError, match="two-dimensional"):
        FactorModel(np.ones(3), np.ones((4, 2)), 2)


# ---------------------------------------------------------------- schedule


def test_train_matches_manual_loop_one_iteration():
    rng = np.random.default_rng(51)
    data = random_data(rng)
    config = TrainConfig(k=3, alpha=1e-2, lam=5.0, iters=1, seed=3)
    model, _ = train(data, config)
    A_ref, B_ref = manual_proxgrad(data, config)
    assert np.array_equal(model.A, A_ref)
    assert np.array_equal(model.B, B_ref)


def test_train_matches_manual_loop_two_iterations_halved_step():
    rng = np.random.default_rng(52)
    data = random_data(rng, m=10, n=14)
    config = TrainConfig(
        k=2, alpha=2e-2, lam=1.0, iters=2, seed=9, solver=SolverChoice(tau=3)
    )
    model, _ = train(data, config)
    A_ref, B_ref = manual_proxgrad(data, config)
    assert np.array_equal(model.A, A_ref)
    assert np.array_equal(model.B, B_ref)


def test_train_matches_manual_loop_l1():
    rng = np.random.default_rng(53)
    data = random_data(rng)
    config = TrainConfig(k=3, alpha=1e-2, lam=0.5, iters=2, reg="l1", seed=4)
    model, _ = train(data, config)
    A_ref, B_ref = manual_proxgrad(data, config)
    assert np.array_equal(model.A, A_ref)
    assert np.array_equal(model.B, B_ref)


def test_train_cold_rows_take_the_shrink_path():
    # rows 6.. and columns 5.. hold no entries; they must decay sharply and
    # stay out of the zero-row diagnostics
    rng = np.random.default_rng(54)
    dense = random_data(rng, m=6, n=5, density=0.8)
    users, items, counts = dense.entries()
    data = SparseInteractions.from_entries(users, items, counts, 10, 9)
    config = TrainConfig(k=3, alpha=1e-2, lam=100.0, iters=10, seed=5)
    model, report = train(data, config)
    init = init_factors(data.m, data.n, config.k, config.seed)
    # each iteration divides cold rows by (1 + 2*lam*alpha_t) before the
    # linear pull; the halved-step schedule caps the total decay factor
    shrink = np.prod([1.0 + 2.0 * config.lam * config.alpha / 2**t for t in range(10)])
    assert np.all(model.A[6:] <= init.A[6:] / shrink + 1e-15)
    assert np.all(model.B[5:] <= init.B[5:] / shrink + 1e-15)
    assert report.zero_rows_a == 0 and report.zero_rows_b == 0
    # manual loop covers cold rows too: the shrink path is the same operator
    A_ref, B_ref = manual_proxgrad(data, config)
    assert np.array_equal(model.A, A_ref)
    assert np.array_equal(model.B, B_ref)


# ---------------------------------------------------------------- determinism


def test_train_bit_identical_across_threads_and_runs():
    rng = np.random.default_rng(55)
    data = random_data(rng, m=40, n=30, density=0.2)
    config = TrainConfig(k=4, alpha=1e-2, lam=2.0, iters=3, seed=1)
    base_model, base_report = train(data, config)
    for threads in (4, 8, 1):
        model, report = train(data, TrainConfig(**{**config.__dict__, "threads": threads}))
        assert np.array_equal(model.A, base_model.A)
        assert np.array_equal(model.B, base_model.B)
        assert report.objective_trace == base_report.objective_trace


def test_train_cg_bit_identical_across_threads():
    rng = np.random.default_rng(56)
    data = random_data(rng, m=25, n=20, density=0.25)
    config = TrainConfig(
        k=3, lam=0.0, iters=2, seed=2, solver=SolverChoice(method="cg", max_updates=4)
    )
    base, _ = train(data, config)
    redo, _ = train(data, TrainConfig(**{**config.__dict__, "threads": 8}))
    assert np.array_equal(base.A, redo.A)
    assert np.array_equal(base.B, redo.B)


# ---------------------------------------------------------------- behavior


def test_train_cg_fits_single_cell_exactly():
    data = SparseInteractions.from_entries([0], [0], [1.0], 1, 1)
    config = TrainConfig(
        k=1, lam=0.0, iters=4, seed=6, solver=SolverChoice(method="cg", max_updates=30)
    )
    model, report = train(data, config)
    assert float(model.A[0] @ model.B[0]) == pytest.approx(1.0, rel=1e-6)
    # once the prediction matches the count the loop is stationary
    assert report.objective_trace[-1] == pytest.approx(report.objective_trace[1], abs=1e-9)


def test_train_cg_objective_never_increases():
    rng = np.random.default_rng(57)
    data = random_data(rng, m=15, n=12)
    config = TrainConfig(k=3, lam=0.0, iters=5, seed=3, solver=SolverChoice(method="cg"))
    _, report = train(data, config)
    trace = report.objective_trace
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_training_objective_matches_full_objective():
    rng = np.random.default_rng(58)
    data = random_data(rng)
    config = TrainConfig(k=3, alpha=1e-2, lam=1.5, iters=2, seed=8)
    model, report = train(data, config)
    direct = full_objective(data, model.A, model.B, config.regularization)
    assert training_objective(data, model, config.regularization) == direct
    assert report.final_objective == pytest.approx(direct, rel=1e-12)


def test_train_progress_hook_sees_every_iteration():
    rng = np.random.default_rng(59)
    data = random_data(rng)
    seen = []
    config = TrainConfig(k=2, alpha=1e-2, lam=1.0, iters=4, seed=1)
    _, report = train(data, config, progress=lambda t, obj, sec: seen.append((t, obj, sec)))
    assert [t for t, _, _ in seen] == [0, 1, 2, 3]
    assert [obj for _, obj, _ in seen] == report.objective_trace
    assert all(sec >= 0 for _, _, sec in seen)
    assert len(report.iteration_seconds) == 4
    assert report.iterations == 4


# ---------------------------------------------------------------- failure paths


def test_train_empty_data_rejected():
    empty = SparseInteractions.from_entries([], [], [], 3, 3)
    with pytest.raises(DataError, match="no entries"):
        train(empty, TrainConfig(k=2, iters=1))


def test_train_numeric_failure_names_iteration():
    # a single astronomically large count overflows the first gradient step
    data = SparseInteractions.from_entries([0], [0], [1e308], 1, 1)
    config = TrainConfig(k=1, alpha=1e3, lam=0.0, iters=3, seed=0)
    with np.errstate(all="ignore"), pytest.raises(
        NumericFailureError, match=r"iteration 0"
    ) as err:
        train(data, config)
    assert "alpha" in str(err.value)


def test_train_degenerate_model_rejected():
    # an l1 penalty far above every count zeroes both matrices immediately
    rng = np.random.default_rng(60)
    data = random_data(rng, m=6, n=5, density=0.5)
    config = TrainConfig(k=2, alpha=1.0, lam=1e6, iters=1, reg="l1", seed=2)
    with pytest.raises(DegenerateModelError, match="all-zero"):
        train(data, config)


def test_train_config_validation():
    for kwargs in (
        {"k": 0},
        {"alpha": 0.0},
        {"alpha": -1e-3},
        {"lam": -1.0},
        {"iters": 0},
        {"threads": 0},
        {"reg": "ridge"},
        {"seed": -5},
    ):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)
