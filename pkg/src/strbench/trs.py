"""Trust-region subproblem solvers.

Solves ``min_{||h|| <= r} <g, h> + 0.5 <H h, h>`` two ways:

* :func:`solve_trs_exact` -- dense eigendecomposition plus a safeguarded
  Newton iteration on the reciprocal secular equation ``1/||h(mu)|| - 1/r``
  (More-Sorensen style), with explicit hard-case handling.
* :func:`solve_trs_lanczos` -- matrix-free Krylov method with full
  reorthogonalization; the reduced problem is solved exactly and expanded
  until the lifted stationarity residual meets tolerance.

A global minimizer is characterized by a multiplier ``mu >= 0`` with
``(H + mu I) h = -g``, ``H + mu I`` positive semidefinite, and
``mu (||h|| - r) = 0``.  The rescaled dual ``lambda_alg = 2 mu / L2`` is what
the outer driver thresholds against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Projection of g onto the bottom eigenspace below this fraction of ||g||
# is treated as zero (numeric orthogonality proxy for the hard case).
_HARD_CASE_RTOL = 1e-11
# Secular iteration targets near machine precision; `tol` is only the
# acceptance threshold below which a solve counts as converged.
_SECULAR_RTOL = 1e-13
_MAX_SECULAR_ITERS = 200


@dataclass(frozen=True)
class KktResidual:
    """Stationarity norm, lambda_min(H + mu I), and |mu (||h|| - r)|."""

    stationarity: float
    min_eig_shifted: float
    complementarity: float


@dataclass
class TrsSolution:
    h: np.ndarray
    mu: float
    lambda_alg: float
    on_boundary: bool
    kkt: KktResidual
    model_decrease: float
    converged: bool = True
    krylov_dim: int | None = None


class TrsNumericError(RuntimeError):
    """Numeric failure; ``best`` carries the best iterate found, if any."""

    def __init__(self, message: str, best: TrsSolution | None = None):
        super().__init__(message)
        self.best = best


def sym_eig(A: np.ndarray, sym_tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Rejects inputs whose asymmetry exceeds ``sym_tol`` relative to the
    largest entry; wraps LAPACK non-convergence in :class:`TrsNumericError`.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite matrix")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if float(np.max(np.abs(A - A.T), initial=0.0)) > sym_tol * (1.0 + scale):
        raise ValueError("matrix is not symmetric within tolerance")
    try:
        w, V = np.linalg.eigh((A + A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise TrsNumericError(f"eigendecomposition failed: {exc}") from exc
    return w, V


def model_value(g: np.ndarray, H: np.ndarray, h: np.ndarray) -> float:
    return float(g @ h + 0.5 * h @ (H @ h))


def kkt_residual(g, H, r, sol: TrsSolution) -> KktResidual:
    """Recompute the three optimality residuals from scratch."""
    g = np.asarray(g, float)
    H = np.asarray(H, float)
    h, mu = sol.h, sol.mu
    stationarity = float(np.linalg.norm(H @ h + mu * h + g))
    min_eig = float(np.linalg.eigvalsh((H + H.T) / 2.0)[0]) + mu
    comp = abs(mu * (float(np.linalg.norm(h)) - r))
    return KktResidual(stationarity, min_eig, comp)


def _package(g, H_mul, h, mu, r, L2, min_eig_shifted, converged=True, krylov_dim=None):
    hnorm = float(np.linalg.norm(h))
    Hh = H_mul(h)
    stationarity = float(np.linalg.norm(Hh + mu * h + g))
    comp = abs(mu * (hnorm - r))
    decrease = float(g @ h + 0.5 * h @ Hh)
    return TrsSolution(
        h=h,
        mu=mu,
        lambda_alg=2.0 * mu / L2,
        on_boundary=hnorm >= r * (1.0 - 1e-8),
        kkt=KktResidual(stationarity, min_eig_shifted, comp),
        model_decrease=decrease,
        converged=converged,
        krylov_dim=krylov_dim,
    )


def _weighted_power_sum(c, w, mu, power):
    """sum of c_i / (w_i + mu)^power, with exact zeros in c short-circuited."""
    denom = (w + mu) ** power
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = c / denom
    return float(np.sum(np.where(c == 0.0, 0.0, terms)))


def _secular_root(e, c, r, delta_hi, singular_at_lo):
    """Find delta > 0 with ||h(delta)|| = r where h_i = -gt_i / (e_i + delta).

    ``e = w + mu_lo >= 0`` are the shifted eigenvalues and ``c = gt^2`` the
    squared eigencoordinates of g.  Solving in the offset delta (instead of
    mu itself) keeps full float resolution next to the pole, where the root
    of a nearly hard case can sit within 1e-12 of mu_lo.  Newton on the
    reciprocal secular function ``1/||h|| - 1/r`` with a bisection bracket.
    """

    def norm_at(delta):
        return math.sqrt(_weighted_power_sum(c, e, delta, 2))

    lo, hi = 0.0, delta_hi
    # phi(lo) must be negative; at a singular lower end step just inside.
    if singular_at_lo:
        step = max(1e-18 * delta_hi, 5e-324)
        for _ in range(400):
            if norm_at(step) > r:
                lo = step
                break
            hi = step
            step *= 1e-2
        else:
            lo = step
    for _ in range(200):
        if norm_at(hi) <= r or not math.isfinite(hi):
            break
        hi = 2.0 * hi + 1.0
    delta = 0.5 * (lo + hi)
    best_delta, best_gap = delta, float("inf")
    for _ in range(_MAX_SECULAR_ITERS):
        n = norm_at(delta)
        gap = abs(n - r)
        if gap < best_gap:
            best_delta, best_gap = delta, gap
        if gap <= _SECULAR_RTOL * r:
            return delta, True
        phi = 1.0 / n - 1.0 / r if n > 0 else 1.0 / r
        if phi < 0.0:
            lo = delta
        else:
            hi = delta
        dphi = _weighted_power_sum(c, e, delta, 3) / n**3 if n > 0 else 0.0
        delta_new = delta - phi / dphi if dphi > 0 else 0.5 * (lo + hi)
        if not (lo < delta_new < hi):
            delta_new = 0.5 * (lo + hi)
        if delta_new == delta:
            break
        delta = delta_new
    # resolved well enough, or stalled at float resolution near the pole
    return best_delta, best_gap <= 1e-9 * r


def solve_trs_exact(g, H, r: float, L2: float, tol: float = 1e-8) -> TrsSolution:
    """Global minimizer of the quadratic model over the ball of radius r.

    Interior Newton step when the Hessian is definite and the step fits;
    otherwise the boundary multiplier is found on the secular equation, and
    (near-)hard cases are resolved by padding along a bottom eigenvector.
    Raises :class:`TrsNumericError` with the best iterate attached if the
    final stationarity residual misses ``tol (||g|| + 1)``.
    """
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    if r <= 0:
        raise ValueError("radius must be positive")
    if L2 <= 0:
        raise ValueError("L2 must be positive")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise ValueError("non-finite inputs")
    w, V = sym_eig(H)
    gt = V.T @ g
    c = gt * gt
    gnorm = float(np.linalg.norm(g))
    lam1 = float(w[0])
    mu_lo = max(0.0, -lam1)

    def H_mul(v):
        return V @ (w * (V.T @ v))

    def gated(sol: TrsSolution) -> TrsSolution:
        if sol.kkt.stationarity > max(tol, 1e-8) * (gnorm + 1.0):
            raise TrsNumericError(
                f"stationarity residual {sol.kkt.stationarity:.3e} above tolerance",
                best=sol,
            )
        return sol

    shifted = w + mu_lo  # exact zero on the bottom eigenvalue when lam1 <= 0

    def boundary_without_bottom(delta, bottom):
        """Step at mu_lo + delta, bottom eigenspace zeroed, padded to the boundary."""
        denom = np.where(bottom, 1.0, shifted + delta)
        ht = np.where(bottom, 0.0, -gt / denom)
        n0 = float(np.linalg.norm(ht))
        if n0 > r:
            ht *= r / n0
        else:
            ht[int(np.argmax(bottom))] += math.sqrt(max(r * r - n0 * n0, 0.0))
        return ht

    # Bottom eigenspace: eigenvalues tied with lam1 up to rounding.
    gap_tol = 1e-12 * (1.0 + float(np.max(np.abs(w))))
    bottom = (w - lam1) <= gap_tol
    p_bottom = math.sqrt(float(np.sum(c[bottom])))

    if lam1 > 0:
        ht = -gt / w
        if float(np.linalg.norm(ht)) <= r:
            return gated(_package(g, H_mul, V @ ht, 0.0, r, L2, lam1))
        delta, _ = _secular_root(shifted, c, r, gnorm / r, singular_at_lo=False)
        ht = -gt / (shifted + delta)
        return gated(_package(g, H_mul, V @ ht, delta, r, L2, lam1 + delta))

    if p_bottom <= _HARD_CASE_RTOL * max(gnorm, 1e-300) or gnorm == 0.0:
        # g is (numerically) orthogonal to the bottom eigenspace.
        ct = np.where(bottom, 0.0, c)
        ht = np.where(bottom, 0.0, -gt / np.where(bottom, 1.0, shifted))
        n0 = float(np.linalg.norm(ht))
        if n0 <= r:
            if mu_lo == 0.0:
                # positive semidefinite with a fitting pseudo-Newton step
                return gated(_package(g, H_mul, V @ ht, 0.0, r, L2, lam1))
            # hard case: pad with a bottom eigenvector up to the boundary
            ht[int(np.argmax(bottom))] += math.sqrt(max(r * r - n0 * n0, 0.0))
            return gated(_package(g, H_mul, V @ ht, mu_lo, r, L2, 0.0))
        delta, _ = _secular_root(shifted, ct, r, gnorm / r, singular_at_lo=False)
        ht = boundary_without_bottom(delta, bottom)
        return gated(_package(g, H_mul, V @ ht, mu_lo + delta, r, L2, lam1 + mu_lo + delta))

    delta, resolved = _secular_root(shifted, c, r, gnorm / r, singular_at_lo=True)
    if not resolved:
        # root pinned against the pole at float resolution: treat the bottom
        # eigenspace as in the hard case and pad to the boundary
        ht = boundary_without_bottom(delta, bottom)
    else:
        ht = -gt / (shifted + delta)
    return gated(_package(g, H_mul, V @ ht, mu_lo + delta, r, L2, lam1 + mu_lo + delta))


def _fresh_direction(rng, Q, m, d):
    """Random direction orthogonalized (twice) against the current basis."""
    for _ in range(50):
        v = rng.standard_normal(d)
        v -= Q[:, :m] @ (Q[:, :m].T @ v)
        v -= Q[:, :m] @ (Q[:, :m].T @ v)
        nv = float(np.linalg.norm(v))
        if nv > 1e-8:
            return v / nv
    raise TrsNumericError("could not extend the Krylov basis")


def solve_trs_lanczos(
    g,
    hvp,
    d: int,
    r: float,
    L2: float,
    m_max: int | None = None,
    tol: float = 1e-8,
    rng: np.random.Generator | None = None,
) -> TrsSolution:
    """Approximate TRS solve in a Hessian-generated Krylov subspace.

    Two chains grow an orthonormal basis with full reorthogonalization: the
    main chain seeded by g, and an auxiliary chain seeded by a random vector
    whose job is to pin down the bottom eigenpair.  At each size m the
    reduced problem on Q'HQ is solved exactly (equal to the Lanczos
    tridiagonal solve up to rounding) and accepted once

    * the lifted stationarity residual is <= tol (||g|| + 1), and
    * the bottom Ritz pair (theta, y) is converged and certifies approximate
      dual feasibility, mu >= -theta - ||Hy - theta y|| - tol.

    The Ritz safeguard is what makes hard cases (g orthogonal to the bottom
    eigenspace) land on the global solution instead of a subspace-stationary
    point with an equally small residual; a residual test alone cannot tell
    the two apart.  Chain breakdown inserts a fresh random direction.  If
    ``m_max`` is exhausted the best iterate is returned with
    ``converged=False``.
    """
    g = np.asarray(g, dtype=float)
    if m_max is None:
        m_max = d
    if not 1 <= m_max <= d:
        raise ValueError("need 1 <= m_max <= d")
    if rng is None:
        rng = np.random.default_rng(0)
    gnorm = float(np.linalg.norm(g))

    Q = np.zeros((d, m_max))
    W = np.zeros((d, m_max))  # W[:, j] = H @ Q[:, j]
    B = np.zeros((m_max, m_max))

    if gnorm == 0.0:
        q1 = rng.standard_normal(d)
        q1 /= np.linalg.norm(q1)
    else:
        q1 = g / gnorm
    Q[:, 0] = q1
    tails = {"main": 0, "probe": None}  # column index of each chain's tip
    pending: dict[str, np.ndarray | None] = {"main": None, "probe": None}

    best: TrsSolution | None = None
    sol = None
    probes = 0
    theta_hist: list[float] = []
    for m in range(1, m_max + 1):
        j = m - 1
        wv = np.asarray(hvp(Q[:, j]), dtype=float)
        W[:, j] = wv
        B[:m, j] = Q[:, :m].T @ wv
        B[j, :m] = B[:m, j]
        # store the unreduced continuation of whichever chain q_j tips
        chain = "main" if tails["main"] == j else "probe"
        w_perp = wv - Q[:, :m] @ (Q[:, :m].T @ wv)
        w_perp -= Q[:, :m] @ (Q[:, :m].T @ w_perp)
        pending[chain] = w_perp

        gt = np.zeros(m)
        gt[0] = gnorm
        Bm = (B[:m, :m] + B[:m, :m].T) / 2.0
        red = solve_trs_exact(gt, Bm, r, L2, tol=tol)
        h = Q[:, :m] @ red.h
        Hh = W[:, :m] @ red.h
        resid = float(np.linalg.norm(Hh + red.mu * h + g))
        resid_ok = resid <= tol * (gnorm + 1.0)
        # Acceptance below full dimension needs the bottom eigenpair pinned
        # down, or a small residual alone can certify a subspace-stationary
        # point that is not the global solution (the hard case).
        theta, U = np.linalg.eigh(Bm)
        theta_hist.append(float(theta[0]))
        scale = 1.0 + abs(theta[0])
        ritz_res = float(np.linalg.norm(W[:, :m] @ U[:, 0] - theta[0] * (Q[:, :m] @ U[:, 0])))
        ritz_ok = ritz_res <= tol * scale
        dual_ok = red.mu + theta[0] >= -(ritz_res + tol * scale)
        theta_stable = (
            len(theta_hist) >= 3 and abs(theta_hist[-1] - theta_hist[-3]) <= tol * scale
        )
        certified = probes >= 2 and ritz_ok and dual_ok and theta_stable
        sol = TrsSolution(
            h=h,
            mu=red.mu,
            lambda_alg=2.0 * red.mu / L2,
            on_boundary=float(np.linalg.norm(h)) >= r * (1.0 - 1e-8),
            kkt=KktResidual(resid, red.kkt.min_eig_shifted, red.kkt.complementarity),
            model_decrease=float(g @ h + 0.5 * red.h @ (Bm @ red.h)),
            converged=resid_ok and (m == d or certified),
            krylov_dim=m,
        )
        if best is None or sol.kkt.stationarity < best.kkt.stationarity:
            best = sol
        if sol.converged:
            return sol
        if m == m_max:
            break
        # grow: odd steps extend the probe chain, even steps the main chain
        grow = "probe" if m % 2 == 1 else "main"
        cand = pending[grow]
        if cand is not None:
            # pending continuations can predate later columns; re-orthogonalize
            cand = cand - Q[:, :m] @ (Q[:, :m].T @ cand)
            cand -= Q[:, :m] @ (Q[:, :m].T @ cand)
            beta = float(np.linalg.norm(cand))
        else:
            beta = 0.0
        if cand is None or beta <= 1e-10 * (1.0 + float(np.linalg.norm(wv))):
            Q[:, m] = _fresh_direction(rng, Q, m, d)  # seed or breakdown restart
        else:
            Q[:, m] = cand / beta
        pending[grow] = None
        tails[grow] = m
        if grow == "probe":
            probes += 1

    assert sol is not None
    if not sol.converged and best is not None and best is not sol:
        best.converged = False
        return best
    return sol
