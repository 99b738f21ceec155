"""Inexact trust-region driver with dual-threshold and expectation stopping.

The main loop solves the subproblem on estimated differentials
``(g_k, H_k)`` with a fixed radius ``r = sqrt(eps/L2)``, steps
``x_{k+1} = x_k + h_k``, and stops the first time the rescaled dual variable
satisfies ``lambda_alg <= 2 sqrt(eps/L2)``.  The no-dual variant instead
stops on the first interior step and otherwise returns a uniformly random
iterate.  Four variants are wired: exact differentials, the two
variance-reduced combinations (``str1``, ``str2``), and a plain subsampled
baseline with fresh batches each iteration.

Per-iteration trace diagnostics (objective value, true gradient norm) are
computed with a scratch counter and never billed to the run's oracle budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .problems import (
    FiniteSumProblem,
    LipschitzBounds,
    OracleCounters,
    batch_gradient,
    batch_hessian,
    full_gradient,
    full_hessian,
    full_value,
    lipschitz_bounds,
)
from .trs import TrsNumericError, solve_trs_exact, solve_trs_lanczos, sym_eig

VARIANTS = ("exact_tr", "str1", "str2", "subsampled")


@dataclass
class RunConfig:
    """Knobs for one optimization run.

    ``lipschitz=None`` resolves to analytic bounds of the problem.  The
    radius defaults to ``sqrt(epsilon/L2)`` and the iteration cap to
    ``ceil(6 sqrt(L2) delta_hat / epsilon^1.5)`` with ``delta_hat`` an upper
    estimate of the initial optimality gap (defaults to F(x0), valid for the
    nonnegative losses shipped here).  ``kappa_grad``/``kappa_hess`` override
    ``kappa`` per schedule; explicit schedule objects override everything.
    """

    variant: str = "exact_tr"
    epsilon: float = 1e-3
    delta: float = 0.1
    lipschitz: LipschitzBounds | None = None
    r_override: float | None = None
    K_override: int | None = None
    delta_hat: float | None = None
    solver: str = "exact"  # "exact" | "lanczos"
    solver_tol: float = 1e-8
    m_max: int | None = None
    mode: str = "theory"
    kappa: float = 1.0
    kappa_grad: float | None = None
    kappa_hess: float | None = None
    hess_option: str | None = None
    grad_schedule: est.GradSchedule | None = None
    hess_schedule: est.HessSchedule | None = None
    sub_s1: int | None = None  # subsampled baseline batch sizes
    sub_s2: int | None = None
    seed: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.solver not in ("exact", "lanczos"):
            raise ValueError("solver must be 'exact' or 'lanczos'")


@dataclass
class IterateRecord:
    k: int
    fval: float
    grad_norm: float
    lambda_alg: float
    step_norm: float
    sfo: int
    sso: int
    wall_ms: float
    solver_converged: bool = True


@dataclass
class SosReport:
    """Second-order stationarity certificate at thresholds 3 eps and
    -(10/3) sqrt(L2 eps), checked with exact differentials."""

    grad_norm: float
    min_eig: float
    grad_ok: bool
    eig_ok: bool
    certified: bool


@dataclass
class RunResult:
    x_final: np.ndarray
    trace: list[IterateRecord]
    stop_reason: str  # dual_threshold | interior_step | random_iterate | iteration_cap
    report: SosReport
    counters: OracleCounters
    seed: int
    iterates: list[np.ndarray] = field(default_factory=list)


class RunAborted(RuntimeError):
    """Numeric failure mid-run; carries the partial trace."""

    def __init__(self, message: str, trace: list[IterateRecord], iterates: list[np.ndarray]):
        super().__init__(message)
        self.trace = trace
        self.iterates = iterates


@dataclass(frozen=True)
class _Resolved:
    lip: LipschitzBounds
    r: float
    K: int
    threshold: float
    x0: np.ndarray


def resolve_config(problem: FiniteSumProblem, config: RunConfig) -> _Resolved:
    lip = config.lipschitz or lipschitz_bounds(problem, mode="analytic")
    eps = config.epsilon
    r = config.r_override if config.r_override is not None else math.sqrt(eps / lip.L2)
    x0 = (
        np.zeros(problem.d)
        if config.x0 is None
        else np.array(config.x0, dtype=float, copy=True)
    )
    if x0.shape != (problem.d,):
        raise ValueError(f"x0 must have shape ({problem.d},)")
    if config.K_override is not None:
        K = int(config.K_override)
    else:
        gap = config.delta_hat
        if gap is None:
            gap = full_value(problem, x0, OracleCounters())
        K = max(1, math.ceil(6.0 * math.sqrt(lip.L2) * gap / eps**1.5))
    threshold = 2.0 * math.sqrt(eps / lip.L2)
    return _Resolved(lip=lip, r=r, K=K, threshold=threshold, x0=x0)


def verify_sosp(problem: FiniteSumProblem, x, epsilon: float, L2: float) -> SosReport:
    """Certify approximate second-order stationarity with exact differentials."""
    scratch = OracleCounters()
    g = full_gradient(problem, x, scratch)
    H = full_hessian(problem, x, scratch)
    w, _ = sym_eig(H)
    grad_norm = float(np.linalg.norm(g))
    min_eig = float(w[0])
    grad_ok = grad_norm <= 3.0 * epsilon
    eig_ok = min_eig >= -(10.0 / 3.0) * math.sqrt(L2 * epsilon)
    return SosReport(grad_norm, min_eig, grad_ok, eig_ok, grad_ok and eig_ok)


def _solve_step(g, H, r, lip, config, solver_rng):
    if config.solver == "exact":
        return solve_trs_exact(g, H, r, lip.L2, tol=config.solver_tol)
    d = len(g)
    return solve_trs_lanczos(
        g,
        lambda v: H @ v,
        d,
        r,
        lip.L2,
        m_max=config.m_max if config.m_max is not None else d,
        tol=config.solver_tol,
        rng=solver_rng,
    )


def _run_loop(problem, config, grad_estimator, hess_estimator, counters, use_dual_stop):
    res = resolve_config(problem, config)
    solver_rng = np.random.default_rng([config.seed, 2])
    x = res.x0.copy()
    trace: list[IterateRecord] = []
    iterates: list[np.ndarray] = []
    scratch = OracleCounters()
    stop_reason = "iteration_cap"
    t_start = time.perf_counter()
    for k in range(res.K):
        fval = full_value(problem, x, scratch)
        if not math.isfinite(fval):
            raise RunAborted(f"non-finite objective at iteration {k}", trace, iterates)
        gnorm_true = float(np.linalg.norm(full_gradient(problem, x, scratch)))
        g = grad_estimator(x, counters)
        H = hess_estimator(x, counters)
        try:
            sol = _solve_step(g, H, res.r, res.lip, config, solver_rng)
        except TrsNumericError as exc:
            raise RunAborted(f"subproblem solve failed at iteration {k}: {exc}",
                             trace, iterates) from exc
        x = x + sol.h
        iterates.append(x.copy())
        trace.append(
            IterateRecord(
                k=k,
                fval=fval,
                grad_norm=gnorm_true,
                lambda_alg=sol.lambda_alg,
                step_norm=float(np.linalg.norm(sol.h)),
                sfo=counters.sfo,
                sso=counters.sso,
                wall_ms=(time.perf_counter() - t_start) * 1e3,
                solver_converged=sol.converged,
            )
        )
        if use_dual_stop:
            if sol.lambda_alg <= res.threshold:
                stop_reason = "dual_threshold"
                break
        else:
            if float(np.linalg.norm(sol.h)) < res.r * (1.0 - 1e-10):
                stop_reason = "interior_step"
                break
    if not use_dual_stop and stop_reason == "iteration_cap" and iterates:
        pick_rng = np.random.default_rng([config.seed, 1])
        kbar = int(pick_rng.integers(0, len(iterates)))
        x = iterates[kbar]
        stop_reason = "random_iterate"
    report = verify_sosp(problem, x, config.epsilon, res.lip.L2)
    return RunResult(
        x_final=x,
        trace=trace,
        stop_reason=stop_reason,
        report=report,
        counters=counters,
        seed=config.seed,
        iterates=iterates,
    )


def run_inexact_tr(problem, config, grad_estimator, hess_estimator,
                   counters: OracleCounters | None = None) -> RunResult:
    """Dual-threshold trust-region loop.

    Estimator callables have signature ``f(x, counters) -> ndarray`` and own
    any internal state.  Stops the first time
    ``lambda_alg <= 2 sqrt(eps/L2)`` and returns the post-step iterate.
    """
    counters = counters if counters is not None else OracleCounters()
    return _run_loop(problem, config, grad_estimator, hess_estimator, counters, True)


def run_inexact_tr_expectation(problem, config, grad_estimator, hess_estimator,
                               counters: OracleCounters | None = None) -> RunResult:
    """No-dual variant: stop on the first strictly interior step, otherwise
    return a seeded uniformly random iterate after K steps."""
    counters = counters if counters is not None else OracleCounters()
    return _run_loop(problem, config, grad_estimator, hess_estimator, counters, False)


def make_estimators(variant, problem, config, rng):
    """Estimator callables for a variant, sharing one sampling stream.

    The gradient estimator draws before the Hessian estimator inside each
    iteration, so runs are reproducible from (config, seed).
    """
    res = resolve_config(problem, config)
    n = problem.n
    if variant == "exact_tr":
        return (
            lambda x, counters: full_gradient(problem, x, counters),
            lambda x, counters: full_hessian(problem, x, counters),
        )
    if variant == "subsampled":
        s1 = config.sub_s1 if config.sub_s1 is not None else n
        s2 = config.sub_s2 if config.sub_s2 is not None else n

        def sub_grad(x, counters):
            return batch_gradient(problem, x, rng.integers(0, n, size=s1), counters)

        def sub_hess(x, counters):
            return batch_hessian(problem, x, rng.integers(0, n, size=s2), counters)

        return sub_grad, sub_hess
    if variant not in ("str1", "str2"):
        raise ValueError(f"unknown variant {variant!r}")

    K0 = 2 * res.K
    kg = config.kappa_grad if config.kappa_grad is not None else config.kappa
    kh = config.kappa_hess if config.kappa_hess is not None else config.kappa
    hsched = config.hess_schedule or est.hessian_schedule(
        n, problem.d, config.epsilon, res.lip.L1, res.lip.L2, config.delta, K0,
        mode=config.mode, kappa=kh, force_option=config.hess_option,
    )
    if variant == "str1":
        gsched = config.grad_schedule or est.gradient_schedule_case1(
            n, config.epsilon, res.lip.L1, res.lip.L2, config.delta, K0,
            mode=config.mode, kappa=kg,
        )
        gstate = est.GradEstimatorState(schedule=gsched)
        grad_fn = lambda x, counters: est.spider_step(gstate, problem, x, counters, rng)
    else:
        gsched = config.grad_schedule or est.gradient_schedule_case2(
            n, config.delta, K0, mode=config.mode, kappa=kg,
        )
        gstate = est.GradEstimatorState(schedule=gsched)
        grad_fn = lambda x, counters: est.corrected_step(gstate, problem, x, counters, rng)
    hstate = est.HessEstimatorState(schedule=hsched)
    hess_fn = lambda x, counters: est.hessian_estimate_step(hstate, problem, x, counters, rng)
    return grad_fn, hess_fn


def run(variant: str, problem: FiniteSumProblem, config: RunConfig) -> RunResult:
    """Wire estimators for ``variant`` and execute the dual-threshold loop."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if config.variant != variant:
        config = replace(config, variant=variant)
    rng = np.random.default_rng(config.seed)
    grad_fn, hess_fn = make_estimators(variant, problem, config, rng)
    return run_inexact_tr(problem, config, grad_fn, hess_fn)
