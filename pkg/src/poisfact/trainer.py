"""Alternating per-row training of the two factor matrices.

Each outer iteration freezes the item matrix, refreshes its column-sum vector,
updates every user row from that user's nonzero entries alone, then does the
mirror-image pass over item rows. The zero entries of the count matrix enter
only through the sum vectors, which keeps one iteration at
O(nnz*k*tau + (m+n)*k) regardless of how large m*n grows.

Row updates within a half-iteration are independent: each reads the frozen
other matrix, the shared sum vector, and its own row, and writes only its own
row. They are dispatched in fixed blocks of consecutive rows, so the result
is bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, DegenerateModelError, NumericFailureError
from .poisson_core import (
    ClampStats,
    RegularizationSpec,
    RegressionView,
    full_objective,
    prox_operator,
)
from .sparse_data import SparseInteractions
from .vector_solvers import PROXGRAD, SolverChoice, apply_solver

_log = logging.getLogger(__name__)

# Rows are dispatched to workers in fixed blocks of this many consecutive
# rows; the partition depends only on the data, never on the worker count.
BLOCK_ROWS = 64

ProgressHook = Callable[[int, float, float], None]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Defaults suit the proximal-gradient solver on large sparse data: heavy l2
    regularization with a tiny initial step that halves every iteration. The
    conjugate-gradient solver ignores ``alpha`` (it line-searches) and is
    typically run with little or no regularization and more iterations.
    """

    k: int = 40
    alpha: float = 1e-7
    lam: float = 1e9
    iters: int = 10
    solver: SolverChoice = field(default_factory=SolverChoice)
    reg: str = "l2"
    seed: int = 42
    threads: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not 0 <= self.seed < 2**63:
            raise ConfigError(f"seed must be a nonnegative 63-bit integer, got {self.seed}")
        RegularizationSpec(self.reg, self.lam)  # validates kind and strength

    @property
    def regularization(self) -> RegularizationSpec:
        return RegularizationSpec(self.reg, self.lam)


@dataclass
class FactorModel:
    """Nonnegative factor matrices: users A (m x k) and items B (n x k)."""

    A: np.ndarray
    B: np.ndarray
    k: int

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("factor matrices must be two-dimensional")
        if self.A.shape[1] != self.k or self.B.shape[1] != self.k:
            raise ValueError("factor matrices must have k columns")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[0]


@dataclass
class IterationWorkspace:
    """Scratch state carried across the half-iterations of one run.

    The sum vectors are recomputed from scratch at the head of each
    half-iteration, so they always equal the true column sums when row
    updates begin.
    """

    s_a: np.ndarray | None = None
    s_b: np.ndarray | None = None
    clamp_events: int = 0
    objective_trace: list[float] = field(default_factory=list)
    iteration_seconds: list[float] = field(default_factory=list)


@dataclass
class TrainReport:
    """Outcome diagnostics of a completed training run."""

    iterations: int
    final_objective: float
    objective_trace: list[float]
    clamp_events: int
    zero_rows_a: int
    zero_rows_b: int
    iteration_seconds: list[float]


def init_factors(m: int, n: int, k: int, seed: int) -> FactorModel:
    """Draw both factor matrices entrywise from Gamma(1, 1).

    Gamma with shape 1 and rate 1 is the standard exponential distribution,
    so every entry is strictly positive. A is drawn first, then B, from one
    seeded generator; the same seed always reproduces the same matrices.
    """
    if min(m, n, k) < 1:
        raise ConfigError(f"dimensions must be >= 1, got m={m} n={n} k={k}")
    rng = np.random.default_rng(seed)
    A = rng.standard_exponential((m, k))
    B = rng.standard_exponential((n, k))
    return FactorModel(A=A, B=B, k=k)


def training_objective(
    data: SparseInteractions, model: FactorModel, reg: RegularizationSpec
) -> float:
    """Full training objective of a model; see poisson_core.full_objective."""
    return full_objective(data, model.A, model.B, reg)


def _blocks(rows: np.ndarray) -> list[np.ndarray]:
    return [rows[lo : lo + BLOCK_ROWS] for lo in range(0, len(rows), BLOCK_ROWS)]


def _update_rows(
    target: np.ndarray,
    csx,
    fixed: np.ndarray,
    s: np.ndarray,
    blocks: list[np.ndarray],
    alpha: float,
    reg: RegularizationSpec,
    choice: SolverChoice,
    pool: ThreadPoolExecutor | None,
) -> int:
    """Update the listed rows of ``target`` in place; returns clamp events.

    Every row update reads only frozen state (the fixed matrix, the sum
    vector, its own current row) and writes its own row, so blocks may run
    concurrently. Clamp counts and raised errors are collected in block
    order, keeping totals and failure reports independent of scheduling.
    """
    indptr, indices, values = csx.indptr, csx.indices, csx.data

    def run_block(rows: np.ndarray) -> int:
        stats = ClampStats()
        for u in rows:
            lo, hi = indptr[u], indptr[u + 1]
            view = RegressionView(
                x=target[u], rows=fixed[indices[lo:hi]], counts=values[lo:hi], s=s
            )
            target[u] = apply_solver(
                target[u], view, choice, alpha, reg, index=int(u), stats=stats
            )
        return stats.clamped

    if pool is None:
        return sum(run_block(block) for block in blocks)
    futures = [pool.submit(run_block, block) for block in blocks]
    return sum(f.result() for f in futures)


def _shrink_empty_rows(
    target: np.ndarray,
    empty: np.ndarray,
    alpha: float,
    s: np.ndarray,
    reg: RegularizationSpec,
    tau: int,
) -> None:
    # Rows with no entries see a zero gradient, so their update is the bare
    # prox shrink; one vectorized application per inner step is bit-identical
    # to the per-row operation and keeps cold rows off the Python loop.
    if len(empty) == 0:
        return
    block = target[empty]
    for _ in range(tau):
        block = prox_operator(block, alpha, s, reg)
    target[empty] = block


def _check_finite(matrix: np.ndarray, side: str) -> None:
    if not np.isfinite(matrix).all():
        raise NumericFailureError(f"non-finite factors after the {side} half-iteration")


def train(
    data: SparseInteractions,
    config: TrainConfig,
    progress: ProgressHook | None = None,
) -> tuple[FactorModel, TrainReport]:
    """Run the alternating per-row optimization for config.iters iterations.

    Each iteration recomputes the item-matrix column sums, updates all user
    rows with the configured per-vector solver, recomputes the user-matrix
    column sums, updates all item rows, and (for the proximal-gradient
    solver) halves the step size. The training objective is recorded after
    every iteration; ``progress`` is then invoked with (iteration, objective,
    seconds).

    Raises
    ------
    NumericFailureError
        When non-finite factors appear; the message names the iteration. No
        partially trained model is returned.
    DegenerateModelError
        When training ends with an entirely zero factor matrix.
    """
    if data.nnz == 0:
        raise DataError("cannot train on a dataset with no entries")
    model = init_factors(data.m, data.n, config.k, config.seed)
    reg = config.regularization
    choice = config.solver
    ws = IterationWorkspace()
    alpha = config.alpha

    proxgrad = choice.method == PROXGRAD
    if proxgrad:
        # Only rows with entries need the per-row solver; empty rows take the
        # vectorized shrink path.
        user_rows = np.flatnonzero(data.row_degrees > 0)
        user_empty = np.flatnonzero(data.row_degrees == 0)
        item_rows = np.flatnonzero(data.col_degrees > 0)
        item_empty = np.flatnonzero(data.col_degrees == 0)
    else:
        user_rows = np.arange(data.m)
        user_empty = np.empty(0, dtype=np.int64)
        item_rows = np.arange(data.n)
        item_empty = np.empty(0, dtype=np.int64)
    user_blocks = _blocks(user_rows)
    item_blocks = _blocks(item_rows)

    _log.info(
        "training %d x %d (nnz=%d) with k=%d solver=%s for %d iterations",
        data.m, data.n, data.nnz, config.k, choice.method, config.iters,
    )

    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for t in range(config.iters):
            started = time.perf_counter()
            try:
                ws.s_b = model.B.sum(axis=0)
                ws.clamp_events += _update_rows(
                    model.A, data.csr, model.B, ws.s_b, user_blocks, alpha, reg, choice, pool
                )
                if proxgrad:
                    _shrink_empty_rows(model.A, user_empty, alpha, ws.s_b, reg, choice.tau)
                _check_finite(model.A, "user")

                ws.s_a = model.A.sum(axis=0)
                ws.clamp_events += _update_rows(
                    model.B, data.csc, model.A, ws.s_a, item_blocks, alpha, reg, choice, pool
                )
                if proxgrad:
                    _shrink_empty_rows(model.B, item_empty, alpha, ws.s_a, reg, choice.tau)
                _check_finite(model.B, "item")
            except NumericFailureError as exc:
                raise NumericFailureError(
                    f"training failed at iteration {t}: {exc}; "
                    "try a smaller step size (alpha) or stronger regularization (lambda)"
                ) from exc

            if proxgrad:
                alpha *= 0.5

            stats = ClampStats()
            objective = full_objective(data, model.A, model.B, reg, stats=stats)
            ws.clamp_events += stats.clamped
            elapsed = time.perf_counter() - started
            ws.objective_trace.append(objective)
            ws.iteration_seconds.append(elapsed)
            _log.debug("iteration %d objective %.6e (%.2fs)", t, objective, elapsed)
            if progress is not None:
                progress(t, objective, elapsed)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if (model.A == 0).all() or (model.B == 0).all():
        raise DegenerateModelError(
            "training collapsed to an all-zero factor matrix; "
            "weaken the regularization (lambda) or enlarge the step size (alpha)"
        )

    # Zero rows among rows that do have training entries signal a failed fit;
    # cold rows are expected to decay and are not counted.
    zero_a = int(((model.A == 0).all(axis=1) & (data.row_degrees > 0)).sum())
    zero_b = int(((model.B == 0).all(axis=1) & (data.col_degrees > 0)).sum())
    report = TrainReport(
        iterations=config.iters,
        final_objective=ws.objective_trace[-1],
        objective_trace=list(ws.objective_trace),
        clamp_events=ws.clamp_events,
        zero_rows_a=zero_a,
        zero_rows_b=zero_b,
        iteration_seconds=list(ws.iteration_seconds),
    )
    return model, report
