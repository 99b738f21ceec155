"""Finite-sum objectives F(x) = (1/n) sum_i f_i(x) with analytic derivatives.

Three problem kinds are supported:

* ``logistic_nc``  -- logistic loss with the separable nonconvex regularizer
  ``R(w; a) = sum_j a w_j^2 / (1 + a w_j^2)``.
* ``nls_nc``       -- nonlinear least squares ``0.5 (t_i - sigmoid(w.x_i))^2``
  with targets ``t_i = (y_i + 1)/2`` and the same regularizer.
* ``synthetic_quad`` -- ``f_i(x) = 0.5 (x - a_i)' diag(q) (x - a_i)``; used for
  exactly solvable tests (default ``q = 1`` gives the identity Hessian).

Every component includes the full regularizer term, so batch averages over
any index multiset carry ``reg_lambda * R`` once.  All batch operations
update the caller-owned :class:`OracleCounters` by exactly the multiset size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset

# sup |sigma''| and sup |sigma'''| over the real line (sigma = logistic).
_SIG_D2_MAX = 1.0 / (6.0 * math.sqrt(3.0))
_SIG_D3_MAX = 0.125
# sup_u |u (1 - u^2)| / (1 + u^2)^4 is ~0.19453; rounded up to stay an
# upper bound for the regularizer's third derivative 24 a^1.5 * phi(u).
_REG_D3_SHAPE = 0.2

_L_FLOOR = 1e-6

KINDS = ("logistic_nc", "nls_nc", "synthetic_quad")


@dataclass
class OracleCounters:
    """Counts of single-component oracle queries (gradient / Hessian / value)."""

    sfo: int = 0
    sso: int = 0
    fval: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.sfo, self.sso, self.fval)


@dataclass(frozen=True)
class LipschitzBounds:
    """Upper bounds on gradient (L1) and Hessian (L2) Lipschitz constants."""

    L1: float
    L2: float
    provenance: str = "user"

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0):
            raise ValueError("L1 and L2 must be positive")
        if self.provenance not in ("analytic", "sampled", "user"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z: np.ndarray) -> np.ndarray:
    """log(1 + e^z), overflow-safe."""
    out = np.empty_like(z)
    pos = z > 0
    out[pos] = z[pos] + np.log1p(np.exp(-z[pos]))
    out[~pos] = np.log1p(np.exp(z[~pos]))
    return out


def regularizer_derivatives(w: np.ndarray, alpha: float):
    """Value, gradient and Hessian diagonal of R(w; alpha).

    The sum is separable, so the Hessian is diagonal with entries
    ``2 a (1 - 3 a w_j^2) / (1 + a w_j^2)^3``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite input")
    aw2 = alpha * w * w
    denom = 1.0 + aw2
    value = float(np.sum(aw2 / denom))
    grad = 2.0 * alpha * w / denom**2
    hess_diag = 2.0 * alpha * (1.0 - 3.0 * aw2) / denom**3
    return value, grad, hess_diag


class FiniteSumProblem:
    """Component-wise value/gradient/Hessian oracle over n components."""

    def __init__(
        self,
        kind: str,
        X: np.ndarray | None = None,
        y: np.ndarray | None = None,
        reg_lambda: float = 0.0,
        reg_alpha: float = 10.0,
        anchors: np.ndarray | None = None,
        quad_scales: np.ndarray | None = None,
        dataset: Dataset | None = None,
    ):
        if kind not in KINDS:
            raise ValueError(f"unknown problem kind {kind!r}")
        if reg_lambda < 0 or reg_alpha <= 0:
            raise ValueError("reg_lambda must be >= 0 and reg_alpha > 0")
        self.kind = kind
        self.reg_lambda = float(reg_lambda)
        self.reg_alpha = float(reg_alpha)
        self.dataset = dataset
        if kind == "synthetic_quad":
            assert anchors is not None
            self.anchors = np.asarray(anchors, dtype=float)
            self.n, self.d = self.anchors.shape
            q = np.ones(self.d) if quad_scales is None else np.asarray(quad_scales, float)
            if q.shape != (self.d,):
                raise ValueError("quad_scales must have length d")
            self.quad_scales = q
            self.X = None
            self.y = None
        else:
            assert X is not None and y is not None
            self.X = np.asarray(X, dtype=float)
            self.y = np.asarray(y, dtype=float)
            self.n, self.d = self.X.shape
            self.targets = (self.y + 1.0) / 2.0  # nls targets in {0, 1}
            self.anchors = None
            self.quad_scales = None
        if self.n < 1 or self.d < 1:
            raise ValueError("need n >= 1 and d >= 1")

    # -- component kernels (no counter updates, vectorized over idx) --------

    def _margins(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        Xs = self.X[idx]
        if self.kind == "logistic_nc":
            return self.y[idx] * (Xs @ x)
        return Xs @ x

    def _data_values(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.kind == "synthetic_quad":
            diff = x[None, :] - self.anchors[idx]
            return 0.5 * np.sum(self.quad_scales[None, :] * diff * diff, axis=1)
        z = self._margins(x, idx)
        if self.kind == "logistic_nc":
            return _log1pexp(-z)
        e = _sigmoid(z) - self.targets[idx]
        return 0.5 * e * e

    def _data_grad_avg(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.kind == "synthetic_quad":
            return self.quad_scales * (x - self.anchors[idx].mean(axis=0))
        Xs = self.X[idx]
        z = self._margins(x, idx)
        if self.kind == "logistic_nc":
            coef = (_sigmoid(z) - 1.0) * self.y[idx]
        else:
            p = _sigmoid(z)
            coef = (p - self.targets[idx]) * p * (1.0 - p)
        return Xs.T @ coef / len(idx)

    def _hess_weights(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        z = self._margins(x, idx)
        p = _sigmoid(z)
        sp = p * (1.0 - p)
        if self.kind == "logistic_nc":
            return sp
        e = p - self.targets[idx]
        return sp * sp + e * sp * (1.0 - 2.0 * p)

    def _data_hess_avg(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.kind == "synthetic_quad":
            return np.diag(self.quad_scales)
        Xs = self.X[idx]
        w = self._hess_weights(x, idx)
        return (Xs * w[:, None]).T @ Xs / len(idx)

    def _data_hvp_avg(self, x: np.ndarray, idx: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kind == "synthetic_quad":
            return self.quad_scales * v
        Xs = self.X[idx]
        w = self._hess_weights(x, idx)
        return Xs.T @ (w * (Xs @ v)) / len(idx)

    def _reg_terms(self, x: np.ndarray):
        if self.reg_lambda == 0.0:
            return 0.0, 0.0, 0.0
        val, grad, diag = regularizer_derivatives(x, self.reg_alpha)
        lam = self.reg_lambda
        return lam * val, lam * grad, lam * diag


def _check_point(problem: FiniteSumProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise ValueError(f"x must have shape ({problem.d},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point")
    return x


def _check_idx(problem: FiniteSumProblem, idx) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
    if idx.size == 0:
        raise IndexError("empty index multiset")
    if idx.min() < 0 or idx.max() >= problem.n:
        raise IndexError(f"component index out of range [0, {problem.n})")
    return idx


def batch_gradient(problem, x, idx, counters: OracleCounters) -> np.ndarray:
    """Average gradient over the index multiset (duplicates count twice)."""
    x = _check_point(problem, x)
    idx = _check_idx(problem, idx)
    g = problem._data_grad_avg(x, idx)
    _, rg, _ = problem._reg_terms(x)
    counters.sfo += len(idx)
    return g + rg


def batch_hessian(problem, x, idx, counters: OracleCounters) -> np.ndarray:
    """Average Hessian over the multiset, symmetrized as (A + A')/2."""
    x = _check_point(problem, x)
    idx = _check_idx(problem, idx)
    H = problem._data_hess_avg(x, idx)
    _, _, rd = problem._reg_terms(x)
    if problem.reg_lambda != 0.0:
        H = H + np.diag(rd)
    counters.sso += len(idx)
    return (H + H.T) / 2.0


def batch_hvp(problem, x, idx, v, counters: OracleCounters) -> np.ndarray:
    """Average Hessian-vector product without forming the matrix."""
    x = _check_point(problem, x)
    idx = _check_idx(problem, idx)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite direction")
    out = problem._data_hvp_avg(x, idx, v)
    _, _, rd = problem._reg_terms(x)
    if problem.reg_lambda != 0.0:
        out = out + rd * v
    counters.sso += len(idx)
    return out


def full_value(problem, x, counters: OracleCounters) -> float:
    x = _check_point(problem, x)
    idx = np.arange(problem.n)
    rv, _, _ = problem._reg_terms(x)
    counters.fval += problem.n
    return float(problem._data_values(x, idx).mean() + rv)


def full_gradient(problem, x, counters: OracleCounters) -> np.ndarray:
    return batch_gradient(problem, x, np.arange(problem.n), counters)


def full_hessian(problem, x, counters: OracleCounters) -> np.ndarray:
    return batch_hessian(problem, x, np.arange(problem.n), counters)


# -- constructors ------------------------------------------------------------


def from_dataset(
    dataset: Dataset,
    kind: str,
    reg_lambda: float = 1e-3,
    reg_alpha: float = 10.0,
    normalize_rows: bool = False,
) -> FiniteSumProblem:
    if kind not in ("logistic_nc", "nls_nc"):
        raise ValueError(f"kind {kind!r} does not take a dataset")
    X = dataset.to_dense()
    if normalize_rows:
        norms = np.linalg.norm(X, axis=1)
        norms[norms == 0.0] = 1.0
        X = X / norms[:, None]
    return FiniteSumProblem(
        kind, X=X, y=dataset.label_array(), reg_lambda=reg_lambda,
        reg_alpha=reg_alpha, dataset=dataset,
    )


def quadratic_problem(
    n: int,
    d: int,
    seed: int = 0,
    anchors: np.ndarray | None = None,
    quad_scales: np.ndarray | None = None,
) -> FiniteSumProblem:
    """Quadratic finite sum around random (or given) anchors."""
    if anchors is None:
        rng = np.random.default_rng(seed)
        anchors = rng.standard_normal((n, d))
    return FiniteSumProblem("synthetic_quad", anchors=anchors, quad_scales=quad_scales)


# -- Lipschitz bound estimation ----------------------------------------------


def _row_norm_powers(problem) -> tuple[float, float]:
    norms = np.linalg.norm(problem.X, axis=1)
    m = float(norms.max()) if len(norms) else 0.0
    return m * m, m * m * m


def lipschitz_bounds(problem, mode: str = "analytic", seed: int = 0) -> LipschitzBounds:
    """Bounds on the component gradient/Hessian Lipschitz constants.

    ``analytic`` uses closed-form worst cases of the data term plus the
    regularizer; ``sampled`` takes the max difference quotient over random
    point pairs and components, doubled as a safety factor.  Oracle queries
    made in sampled mode are not billed to any counter.
    """
    if mode == "analytic":
        lam, alpha = problem.reg_lambda, problem.reg_alpha
        reg_l1 = 2.0 * lam * alpha
        reg_l2 = 24.0 * _REG_D3_SHAPE * lam * alpha**1.5
        if problem.kind == "synthetic_quad":
            L1 = float(np.max(np.abs(problem.quad_scales)))
            L2 = _L_FLOOR
        elif problem.kind == "logistic_nc":
            m2, m3 = _row_norm_powers(problem)
            L1 = 0.25 * m2 + reg_l1
            L2 = _SIG_D2_MAX * m3 + reg_l2
        elif problem.kind == "nls_nc":
            m2, m3 = _row_norm_powers(problem)
            L1 = (0.0625 + _SIG_D2_MAX) * m2 + reg_l1
            L2 = (0.75 * _SIG_D2_MAX + _SIG_D3_MAX) * m3 + reg_l2
        else:
            raise ValueError(f"no analytic bounds for kind {problem.kind!r}")
        return LipschitzBounds(
            max(L1, _L_FLOOR), max(L2, _L_FLOOR), provenance="analytic"
        )
    if mode == "sampled":
        if problem.n < 2:
            raise ValueError("sampled mode needs n >= 2")
        rng = np.random.default_rng(seed)
        scratch = OracleCounters()
        l1 = l2 = 0.0
        for _ in range(32):
            i = int(rng.integers(problem.n))
            x = 0.5 * rng.standard_normal(problem.d)
            y = 0.5 * rng.standard_normal(problem.d)
            dist = float(np.linalg.norm(x - y))
            if dist < 1e-12:
                continue
            gi = batch_gradient(problem, x, [i], scratch)
            gj = batch_gradient(problem, y, [i], scratch)
            l1 = max(l1, float(np.linalg.norm(gi - gj)) / dist)
            Hi = batch_hessian(problem, x, [i], scratch)
            Hj = batch_hessian(problem, y, [i], scratch)
            l2 = max(l2, float(np.linalg.norm(Hi - Hj, 2)) / dist)
        l1, l2 = 2.0 * l1, 2.0 * l2
        try:
            # the closed-form sup is a certified ceiling for the doubled probe
            analytic = lipschitz_bounds(problem, mode="analytic")
            l1, l2 = min(l1, analytic.L1), min(l2, analytic.L2)
        except ValueError:
            pass
        return LipschitzBounds(max(l1, _L_FLOOR), max(l2, _L_FLOOR), provenance="sampled")
    raise ValueError(f"unknown mode {mode!r}")
