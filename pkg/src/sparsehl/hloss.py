"""Sparse hierarchical loss and the baseline objectives.

The loss for bottom-level forecasts ``Yhat`` (n_b_cs x n_b_te) is

    L = sum( 0.5 * (S_cs (Yhat - Y) S_te^T)**2 / (d_cs d_te^T) )

and its gradient is ``A @ R @ B`` where ``R`` is the aggregated residual,
``A = S_cs^T`` with column j divided by ``d_cs[j]`` and ``B = S_te`` with row
i divided by ``d_te[i]``. Both scaled matrices and the (constant) second
derivative are computed once per context.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hierarchy import Hierarchy, sample_random_hierarchy
from .sparse import SparseMatrix, row_sums, scale_cols, scale_rows, spmm_dense, to_dense, transpose

__all__ = [
    "GradHess",
    "ObjectiveContext",
    "make_context",
    "hloss_value",
    "hloss_gradient",
    "hloss_objective",
    "hloss_metric",
    "squared_error_objective",
    "tweedie_objective",
    "dense_reference",
    "SquaredError",
    "Tweedie",
    "HierarchicalLoss",
    "RandomHierarchyLoss",
    "RMSE",
    "TweedieDeviance",
    "HierarchicalMetric",
    "make_objective",
    "make_metric",
]


class GradHess(NamedTuple):
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True, eq=False)
class ObjectiveContext:
    h_cs: Hierarchy
    h_te: Hierarchy
    A: SparseMatrix  # n_b_cs x n_cs
    B: SparseMatrix  # n_te x n_b_te
    Bt: SparseMatrix
    hess: np.ndarray  # n_b_cs x n_b_te
    rows: np.ndarray  # sample -> series row
    cols: np.ndarray  # sample -> timestep column

    @property
    def shape(self) -> tuple[int, int]:
        return (self.h_cs.n_b, self.h_te.n_b)

    @property
    def n_samples(self) -> int:
        return int(self.rows.size)


def make_context(h_cs: Hierarchy, h_te: Hierarchy, index_map=None) -> ObjectiveContext:
    """Precompute the scaled summing matrices and the second derivative.

    ``index_map`` is a pair ``(rows, cols)`` mapping each training sample to
    its cell of the bottom grid; ``None`` means the full grid in row-major
    order.
    """
    n_r, n_c = h_cs.n_b, h_te.n_b
    if index_map is None:
        rows, cols = np.divmod(np.arange(n_r * n_c, dtype=np.int64), n_c)
    else:
        rows, cols = (np.asarray(a, dtype=np.int64).ravel() for a in index_map)
        if rows.size != cols.size:
            raise ValueError("index_map rows and cols differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_r or cols.min() < 0 or cols.max() >= n_c):
            raise IndexError(f"index_map points outside the {n_r}x{n_c} bottom grid")
        flat = rows * n_c + cols
        if np.unique(flat).size != flat.size:
            _, first = np.unique(flat, return_index=True)
            k = int(np.setdiff1d(np.arange(flat.size), first)[0])
            raise ValueError(f"duplicate (series, timestep) cell ({rows[k]}, {cols[k]}) in index_map")
    A = scale_cols(transpose(h_cs.S), 1.0 / h_cs.d)
    B = scale_rows(h_te.S, 1.0 / h_te.d)
    # S_cs^T (1 / d_cs d_te^T) S_te is rank one: outer product of the two marginals
    hess = np.outer(row_sums(A), row_sums(transpose(B)))
    return ObjectiveContext(h_cs, h_te, A, B, transpose(B), hess, rows, cols)


def _check_grid(ctx, *mats):
    for m in mats:
        if m.shape != ctx.shape:
            raise ValueError(f"expected a {ctx.shape} matrix, got {m.shape}")


def _aggregate_residual(ctx: ObjectiveContext, E: np.ndarray) -> np.ndarray:
    """``S_cs E S_te^T`` (n_cs x n_te)."""
    R = spmm_dense(ctx.h_cs.S, E)
    return spmm_dense(ctx.h_te.S, R.T).T


def hloss_value(ctx: ObjectiveContext, Y_hat_b, Y_b) -> float:
    Y_hat_b = np.asarray(Y_hat_b, dtype=np.float64)
    Y_b = np.asarray(Y_b, dtype=np.float64)
    _check_grid(ctx, Y_hat_b, Y_b)
    R = _aggregate_residual(ctx, Y_hat_b - Y_b)
    w = np.outer(1.0 / ctx.h_cs.d, 1.0 / ctx.h_te.d)
    return float(np.sum(0.5 * R * R * w))


def _gradient_from_error(ctx, E):
    R = _aggregate_residual(ctx, E)
    RB = spmm_dense(ctx.Bt, R.T).T
    return spmm_dense(ctx.A, RB)


def hloss_gradient(ctx: ObjectiveContext, Y_hat_b, Y_b) -> np.ndarray:
    Y_hat_b = np.asarray(Y_hat_b, dtype=np.float64)
    Y_b = np.asarray(Y_b, dtype=np.float64)
    _check_grid(ctx, Y_hat_b, Y_b)
    return _gradient_from_error(ctx, Y_hat_b - Y_b)


def _scatter_error(ctx, predictions, targets):
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.size != ctx.n_samples or targets.size != ctx.n_samples:
        raise ValueError(
            f"got {predictions.size} predictions and {targets.size} targets for {ctx.n_samples} samples"
        )
    # absent cells are zero in both forecast and truth, so zero error
    E = np.zeros(ctx.shape)
    E[ctx.rows, ctx.cols] = predictions - targets
    return E


def hloss_objective(ctx: ObjectiveContext, predictions, targets) -> GradHess:
    E = _scatter_error(ctx, predictions, targets)
    G = _gradient_from_error(ctx, E)
    return GradHess(G[ctx.rows, ctx.cols], ctx.hess[ctx.rows, ctx.cols])


def hloss_metric(ctx: ObjectiveContext, predictions, targets) -> float:
    E = _scatter_error(ctx, predictions, targets)
    R = _aggregate_residual(ctx, E)
    w = np.outer(1.0 / ctx.h_cs.d, 1.0 / ctx.h_te.d)
    return float(np.sum(0.5 * R * R * w))


def squared_error_objective(predictions, targets) -> GradHess:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets differ in shape")
    return GradHess(predictions - targets, np.ones_like(predictions))


def _check_rho(rho):
    if not 1.0 < rho < 2.0:
        raise ValueError(f"Tweedie power must lie in (1, 2), got {rho}")


def tweedie_objective(predictions, targets, rho: float = 1.5) -> GradHess:
    """Tweedie deviance with log link; ``predictions`` are raw scores."""
    _check_rho(rho)
    f = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("Tweedie targets must be non-negative")
    a = np.exp((1.0 - rho) * f)
    b = np.exp((2.0 - rho) * f)
    grad = -y * a + b
    hess = -(1.0 - rho) * y * a + (2.0 - rho) * b
    return GradHess(grad, hess)


def dense_reference(S_cs, S_te, d_cs, d_te, Y_hat_b, Y_b):
    """Loss, gradient and second derivative with explicit dense matrices.

    Kept independent of the sparse path so the two can be checked against
    each other.
    """
    S_cs = np.asarray(to_dense(S_cs) if isinstance(S_cs, SparseMatrix) else S_cs, dtype=np.float64)
    S_te = np.asarray(to_dense(S_te) if isinstance(S_te, SparseMatrix) else S_te, dtype=np.float64)
    D = np.outer(np.asarray(d_cs, dtype=np.float64), np.asarray(d_te, dtype=np.float64))
    Y_tilde = S_cs @ Y_hat_b @ S_te.T
    Y = S_cs @ Y_b @ S_te.T
    loss = np.sum(0.5 * (Y - Y_tilde) * (Y - Y_tilde) / D)
    dL = (Y_tilde - Y) / D
    grad = S_cs.T @ dL @ S_te
    hess = S_cs.T @ (1.0 / D) @ S_te
    return float(loss), grad, hess


# -- booster-facing objectives and metrics ---------------------------------


class SquaredError:
    name = "sl"
    link = "identity"

    def __call__(self, predictions, targets) -> GradHess:
        return squared_error_objective(predictions, targets)

    def base_score(self, targets) -> float:
        return float(np.mean(targets))

    def value(self, predictions, targets) -> float:
        e = np.asarray(predictions) - np.asarray(targets)
        return float(0.5 * np.sum(e * e))


class Tweedie:
    name = "tl"
    link = "log"

    def __init__(self, rho: float = 1.5):
        _check_rho(rho)
        self.rho = rho

    def __call__(self, predictions, targets) -> GradHess:
        return tweedie_objective(predictions, targets, self.rho)

    def base_score(self, targets) -> float:
        return float(np.log(max(np.mean(targets), 1e-9)))

    def value(self, predictions, targets) -> float:
        rho = self.rho
        f = np.asarray(predictions, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        return float(np.sum(-y * np.exp((1 - rho) * f) / (1 - rho) + np.exp((2 - rho) * f) / (2 - rho)))


class HierarchicalLoss:
    """The hierarchical loss over a fixed training panel."""

    name = "hl"
    link = "identity"

    def __init__(self, ctx: ObjectiveContext):
        self.ctx = ctx

    def __call__(self, predictions, targets) -> GradHess:
        return hloss_objective(self.ctx, predictions, targets)

    def base_score(self, targets) -> float:
        return float(np.mean(targets))

    def value(self, predictions, targets) -> float:
        return hloss_metric(self.ctx, predictions, targets)


class RandomHierarchyLoss(HierarchicalLoss):
    """Hierarchical loss whose cross-sectional matrix is randomly drawn.

    A new matrix is sampled every ``hier_freq`` calls; ``hier_freq=None``
    samples once up front.
    """

    def __init__(self, h_te: Hierarchy, n_b: int, index_map, seed=None,
                 max_levels: int = 10, max_categories: int = 100, hier_freq: int | None = None):
        self._rng = np.random.default_rng(seed)
        self._args = (n_b, max_levels, max_categories)
        self._h_te = h_te
        self._index_map = index_map
        self.hier_freq = hier_freq
        self._calls = 0
        super().__init__(self._draw())

    def _draw(self):
        n_b, ml, mc = self._args
        h = sample_random_hierarchy(n_b, ml, mc, rng_seed=self._rng)
        return make_context(h, self._h_te, self._index_map)

    def __call__(self, predictions, targets) -> GradHess:
        if self.hier_freq and self._calls and self._calls % self.hier_freq == 0:
            self.ctx = self._draw()
        self._calls += 1
        return super().__call__(predictions, targets)


class RMSE:
    name = "sl"

    def __call__(self, predictions, targets) -> float:
        e = np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
        return float(np.sqrt(np.mean(e * e)))


class TweedieDeviance:
    name = "tl"

    def __init__(self, rho: float = 1.5):
        _check_rho(rho)
        self.rho = rho

    def __call__(self, predictions, targets) -> float:
        rho = self.rho
        mu = np.maximum(np.asarray(predictions, dtype=np.float64), 1e-9)
        y = np.asarray(targets, dtype=np.float64)
        dev = 2 * (
            np.power(y, 2 - rho) / ((1 - rho) * (2 - rho))
            - y * np.power(mu, 1 - rho) / (1 - rho)
            + np.power(mu, 2 - rho) / (2 - rho)
        )
        return float(np.mean(dev))


class HierarchicalMetric:
    name = "hl"

    def __init__(self, ctx: ObjectiveContext):
        self.ctx = ctx

    def __call__(self, predictions, targets) -> float:
        return hloss_metric(self.ctx, predictions, targets)


def make_objective(name: str, ctx: ObjectiveContext | None = None, rho: float = 1.5):
    if name == "sl":
        return SquaredError()
    if name == "tl":
        return Tweedie(rho)
    if name == "hl":
        if ctx is None:
            raise ValueError("the hl objective needs an ObjectiveContext")
        return HierarchicalLoss(ctx)
    raise ValueError(f"unknown objective {name!r}; expected 'sl', 'tl' or 'hl'")


def make_metric(name: str, ctx: ObjectiveContext | None = None, rho: float = 1.5):
    if name == "sl":
        return RMSE()
    if name == "tl":
        return TweedieDeviance(rho)
    if name == "hl":
        if ctx is None:
            raise ValueError("the hl metric needs an ObjectiveContext")
        return HierarchicalMetric(ctx)
    raise ValueError(f"unknown metric {name!r}; expected 'sl', 'tl' or 'hl'")
