"""Post-hoc reconciliation: ``y_tilde = S G y_hat``.

Projection methods use the trace-minimisation closed form
``G = J - J W U (U^T W U)^{-1} U^T`` with different choices of ``W``; the
``n_a x n_a`` system is solved by Cholesky, never by explicit inversion.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .hierarchy import Hierarchy, partition
from .sparse import SparseMatrix, from_triplets, row_sums, spmm_dense, to_dense

__all__ = [
    "METHODS",
    "NumericalError",
    "Reconciler",
    "fit_reconciler",
    "fit_mint",
    "fit_erm",
    "reconcile",
    "bottom_up",
    "shrunk_covariance",
]

METHODS = ("base", "bottom_up", "ols", "wls_struct", "wls_var", "mint_shrink", "erm")
PROJECTIONS = ("ols", "wls_struct", "wls_var", "mint_shrink")

VAR_FLOOR = 1e-12


class NumericalError(RuntimeError):
    """A linear system could not be solved."""


@dataclass(frozen=True, eq=False)
class Reconciler:
    method: str
    h: Hierarchy
    G: np.ndarray | SparseMatrix | None
    shrinkage: float | None = None
    info: dict = field(default_factory=dict)

    def dense_G(self) -> np.ndarray:
        if self.G is None:
            raise ValueError("the base method has no reconciliation matrix")
        return to_dense(self.G) if isinstance(self.G, SparseMatrix) else self.G

    def __call__(self, base_forecasts):
        return reconcile(self, base_forecasts)

    def to_json(self) -> str:
        S = self.h.S
        payload = {
            "method": self.method,
            "shrinkage": self.shrinkage,
            "info": self.info,
            "n_a": self.h.n_a,
            "n_b": self.h.n_b,
            "S": {"rows": S.row_indices().tolist(), "cols": S.col_indices.tolist()},
            "levels": [list(x) for x in self.h.levels],
            "labels": [[str(a), str(b)] for a, b in self.h.labels],
            "G": None if self.G is None else self.dense_G().tolist(),
        }
        return json.dumps(payload)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Reconciler":
        from .hierarchy import _assemble

        p = json.loads(text)
        n_a, n_b = p["n_a"], p["n_b"]
        rows = np.asarray(p["S"]["rows"], dtype=np.int64)
        cols = np.asarray(p["S"]["cols"], dtype=np.int64)
        labels = [tuple(x) for x in p["labels"]]
        levels = []
        for name, start, stop in p["levels"][:-1]:
            sel = (rows >= start) & (rows < stop)
            codes = np.empty(n_b, dtype=np.int64)
            codes[cols[sel]] = rows[sel] - start
            levels.append((name, [labels[i][1] for i in range(start, stop)], codes))
        h = _assemble(levels, [lab[1] for lab in labels[n_a:]])
        G = None if p["G"] is None else np.asarray(p["G"], dtype=np.float64)
        if p["method"] == "bottom_up" and G is not None:
            G = from_triplets(*np.nonzero(G), G[np.nonzero(G)], G.shape)
        return cls(p["method"], h, G, p["shrinkage"], p.get("info", {}))

    @classmethod
    def load(cls, path) -> "Reconciler":
        return cls.from_json(Path(path).read_text())


def _residual_moments(residuals):
    R = np.asarray(residuals, dtype=np.float64)
    if R.ndim != 2:
        raise ValueError("residuals must be an (n, T) matrix")
    n, T = R.shape
    if T < 2:
        raise ValueError("need at least two residual columns")
    X = (R - R.mean(axis=1, keepdims=True)).T  # T x n
    var = np.maximum(np.sum(X * X, axis=0) / (T - 1), VAR_FLOOR)
    return X, var


def shrunk_covariance(residuals) -> tuple[np.ndarray, float]:
    """Shrink the residual covariance toward its diagonal.

    The intensity is the ratio of the summed estimated variances of the
    off-diagonal sample correlations to their summed squares, clamped to
    ``[0, 1]``. Returns ``(W, intensity)``.
    """
    X, var = _residual_moments(residuals)
    T = X.shape[0]
    cov = X.T @ X / (T - 1)
    np.fill_diagonal(cov, var)
    Xs = X / np.sqrt(var)
    w_mean = Xs.T @ Xs / T
    corr = w_mean * (T / (T - 1))
    Xs2 = Xs * Xs
    var_corr = (Xs2.T @ Xs2 - T * w_mean * w_mean) * (T / (T - 1) ** 3)
    np.fill_diagonal(var_corr, 0.0)
    np.fill_diagonal(corr, 0.0)
    num = float(np.sum(np.maximum(var_corr, 0.0)))
    den = float(np.sum(corr * corr))
    lam = 1.0 if den == 0.0 else min(max(num / den, 0.0), 1.0)
    W = (1.0 - lam) * cov
    np.fill_diagonal(W, var)
    return W, lam


def _cho_solve_with_jitter(M, rhs):
    try:
        return linalg.cho_solve(linalg.cho_factor(M, lower=True, check_finite=False), rhs)
    except linalg.LinAlgError:
        pass
    k = M.shape[0]
    jitter = 1e-10 * np.trace(M) / k
    try:
        return linalg.cho_solve(linalg.cho_factor(M + jitter * np.eye(k), lower=True), rhs)
    except linalg.LinAlgError:
        raise NumericalError(
            "U^T W U is singular even after jitter; use mint_shrink or a WLS variant"
        ) from None


def fit_mint(h: Hierarchy, W) -> np.ndarray:
    """Closed-form ``G`` for a given error covariance ``W``.

    ``W`` may be a full (n, n) matrix or a length-n vector holding a diagonal.
    """
    n_a, n_b = h.n_a, h.n_b
    _, U, J = partition(h)
    Jd = to_dense(J)
    if n_a == 0:
        return Jd
    Ud = to_dense(U)
    W = np.asarray(W, dtype=np.float64)
    WU = W[:, None] * Ud if W.ndim == 1 else W @ Ud
    M = Ud.T @ WU
    X = _cho_solve_with_jitter(M, Ud.T)  # n_a x n
    return Jd - WU[n_a:] @ X


def fit_reconciler(method: str, h: Hierarchy, residuals=None) -> Reconciler:
    """Fit one of :data:`METHODS` (ERM goes through :func:`fit_erm`)."""
    if method == "base":
        return Reconciler("base", h, None)
    if method == "bottom_up":
        _, _, J = partition(h)
        return Reconciler("bottom_up", h, J)
    if method == "ols":
        return Reconciler("ols", h, fit_mint(h, np.ones(h.n)))
    if method == "wls_struct":
        return Reconciler("wls_struct", h, fit_mint(h, row_sums(h.S)))
    if method in ("wls_var", "mint_shrink"):
        if residuals is None:
            raise ValueError(f"{method} needs in-sample residuals")
        residuals = np.asarray(residuals, dtype=np.float64)
        if residuals.shape[0] != h.n:
            raise ValueError(f"residuals have {residuals.shape[0]} rows, hierarchy has {h.n}")
        if method == "wls_var":
            _, var = _residual_moments(residuals)
            return Reconciler("wls_var", h, fit_mint(h, var))
        W, lam = shrunk_covariance(residuals)
        return Reconciler("mint_shrink", h, fit_mint(h, W), shrinkage=lam)
    if method == "erm":
        raise ValueError("use fit_erm for the erm method")
    raise ValueError(f"unknown reconciliation method {method!r}; choose from {METHODS}")


def fit_erm(h: Hierarchy, Y_train, Yhat_train) -> Reconciler:
    """Unregularised empirical-risk reconciliation.

    Finds the minimum-norm ``P`` minimising ``||Y - S P Yhat||_F`` by two
    least-squares solves (complete orthogonal factorisation).
    """
    Y = np.asarray(Y_train, dtype=np.float64)
    Yhat = np.asarray(Yhat_train, dtype=np.float64)
    if Y.shape != Yhat.shape or Y.shape[0] != h.n:
        raise ValueError(f"expected two ({h.n}, T) matrices, got {Y.shape} and {Yhat.shape}")
    T = Y.shape[1]
    if T < h.n:
        warnings.warn(f"ERM with T={T} < n={h.n}: the solution is not unique", stacklevel=2)
    S = to_dense(h.S)
    Z, *_ = linalg.lstsq(S, Y, lapack_driver="gelsy")
    Pt, _, rank, _ = linalg.lstsq(Yhat.T, Z.T, lapack_driver="gelsy")
    info = {"rank": int(rank), "rank_deficient": bool(rank < h.n)}
    return Reconciler("erm", h, Pt.T, info=info)


def reconcile(r: Reconciler, base_forecasts):
    """Apply ``S G`` to a length-n vector or an (n, k) matrix."""
    y = np.asarray(base_forecasts, dtype=np.float64)
    if y.shape[0] != r.h.n:
        raise ValueError(f"expected {r.h.n} base forecasts, got {y.shape[0]}")
    if r.method == "base":
        return y.copy()
    G = r.G
    b = spmm_dense(G, y) if isinstance(G, SparseMatrix) else G @ y
    return spmm_dense(r.h.S, b)


def bottom_up(h: Hierarchy, bottom_forecasts):
    b = np.asarray(bottom_forecasts, dtype=np.float64)
    if b.shape[0] != h.n_b:
        raise ValueError(f"expected {h.n_b} bottom forecasts, got {b.shape[0]}")
    return spmm_dense(h.S, b)
