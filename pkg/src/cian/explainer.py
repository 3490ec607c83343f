"""Sparse feature-mask explanations of a transaction-branch attention block.

Given the block's value projection ``v = W t + b`` and its realised output
``o = a * v``, find a unit-norm mask ``m`` with a bounded L1 norm such that
``W (t * m) + b`` reproduces ``o``.  The L1 bound is handled through a penalty
weight found by bisection; each penalised problem is solved with ADMM.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from cian import kernels
from cian.errors import DegenerateInputError, DimensionError, ParameterError
from cian.model import ModelConfig, value_map

log = logging.getLogger(__name__)


@dataclass
class ExplainProblem:
    W_v: np.ndarray
    b_v: np.ndarray
    t: np.ndarray
    target: np.ndarray
    budget: float = 10.0
    top_k: int = 10

    def __post_init__(self):
        self.W_v = np.asarray(self.W_v, dtype=np.float64)
        self.b_v = np.asarray(self.b_v, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        m, n = self.W_v.shape
        if self.b_v.shape != (m,) or self.target.shape != (m,) or self.t.shape != (n,):
            raise DimensionError(
                f"explain problem shapes do not conform: W_v {self.W_v.shape}, b_v {self.b_v.shape}, "
                f"t {self.t.shape}, target {self.target.shape}"
            )
        if self.budget < 1:
            raise ParameterError(f"L1 budget must be >= 1 (unit-L2 vectors have L1 >= 1), got {self.budget}")

    @property
    def A(self) -> np.ndarray:
        return self.W_v * self.t[None, :]

    @property
    def r(self) -> np.ndarray:
        return self.target - self.b_v

    def residual(self, mask) -> float:
        e = self.A @ np.asarray(mask) - self.r
        return float(e @ e)


@dataclass
class ADMMResult:
    mask: np.ndarray
    residual: float
    objective: float
    iterations: int
    converged: bool


def sphere_lstsq(A, r) -> np.ndarray:
    """Global minimiser of ``||A x - r||^2`` subject to ``||x||_2 = 1``.

    This is a trust-region subproblem with an equality constraint: the
    solution is ``(A^T A - mu I)^{-1} A^T r`` for the unique
    ``mu <= lambda_min(A^T A)`` that gives unit norm, found by bisection on the
    eigen-expansion.  The degenerate ("hard") case adds the bottom eigenvector.
    """
    H = A.T @ A
    g = A.T @ r
    evals, Q = np.linalg.eigh(H)
    c = Q.T @ g
    lmin = evals[0]
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return Q[:, 0].copy()
    on_bottom = np.abs(evals - lmin) <= 1e-12 * max(1.0, abs(lmin))
    if np.all(np.abs(c[on_bottom]) <= 1e-14 * gnorm):
        # hard case candidate: mu = lmin, fill the remaining norm along the bottom eigenvector
        coef = np.where(on_bottom, 0.0, c / np.where(on_bottom, 1.0, evals - lmin))
        rest = 1.0 - float(coef @ coef)
        if rest >= 0.0:
            coef[np.flatnonzero(on_bottom)[0]] = math.sqrt(rest)
            return Q @ coef
    lo, hi = lmin - gnorm, lmin
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if np.linalg.norm(c / (evals - mid)) > 1.0:
            hi = mid
        else:
            lo = mid
    x = Q @ (c / (evals - lo))
    return x / np.linalg.norm(x)


def admm_solve(
    prob: ExplainProblem, lam: float, rho: float = 1.0, tol: float = 1e-8, max_iter: int = 5000, init: str = "lsq"
) -> ADMMResult:
    """ADMM for ``min ||A m - r||^2 + lam ||m||_1`` over the unit sphere.

    The split ``m = z`` alternates a ridge-regularised least-squares step
    (renormalised onto the sphere), soft-thresholding at ``lam / rho`` and a
    scaled dual update.  The returned mask is the best iterate seen (the split
    variable projected onto the sphere), never worse than the start point.

    ``init="lsq"`` starts from the exact ``lam = 0`` solution
    (:func:`sphere_lstsq`); ``init="t"`` starts from ``t / ||t||``.
    """
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    if rho <= 0 or tol <= 0:
        raise ParameterError("rho and tol must be positive")
    norm_t = np.linalg.norm(prob.t)
    if norm_t == 0.0:
        raise DegenerateInputError("transaction vector is all zeros; every mask explains equally")
    A, r = prob.A, prob.r
    n = A.shape[1]
    if init == "lsq":
        x0 = sphere_lstsq(A, r)
    elif init == "t":
        x0 = prob.t / norm_t
    else:
        raise ParameterError(f"unknown init {init!r}")
    M = np.linalg.inv(A.T @ A + (rho / 2.0) * np.eye(n))
    mask, obj, iters, converged = kernels.admm_run(M, A.T @ r, A, r, x0, lam, rho, tol, max_iter)
    if not converged:
        log.debug("ADMM hit max_iter=%d at lambda=%g without converging", max_iter, lam)
    return ADMMResult(np.asarray(mask), prob.residual(mask), float(obj), int(iters), bool(converged))


@dataclass
class BisectionTrace:
    lambdas: list = field(default_factory=list)
    l1: list = field(default_factory=list)


class _CandidatePool:
    """Every mask produced so far; each lambda picks the pool's best."""

    def __init__(self, prob):
        self.prob = prob
        self.masks, self.fit, self.l1, self.runs = [], [], [], []
        n = prob.t.size
        for j in range(n):
            for sign in (1.0, -1.0):
                e = np.zeros(n)
                e[j] = sign
                self.add(ADMMResult(e, prob.residual(e), 0.0, 0, True))

    def add(self, res: ADMMResult):
        self.masks.append(res.mask)
        self.fit.append(self.prob.residual(res.mask))
        self.l1.append(float(np.abs(res.mask).sum()))
        self.runs.append(res)

    def select(self, lam) -> int:
        obj = np.asarray(self.fit) + lam * np.asarray(self.l1)
        best = obj.min()
        tied = np.flatnonzero(obj == best)
        return int(tied[np.argmin(np.asarray(self.l1)[tied])])

    def result(self, i, lam) -> ADMMResult:
        run = self.runs[i]
        return ADMMResult(self.masks[i], self.fit[i], self.fit[i] + lam * self.l1[i], run.iterations, run.converged)


def bisect_lambda(prob: ExplainProblem, rho=1.0, tol=1e-8, max_iter=5000, band=0.05, lam_tol=1e-6, trace=None, init="lsq"):
    """Smallest penalty whose solution meets the L1 budget.

    Returns ``(lam, ADMMResult)``.  Every ADMM output joins a shared
    candidate pool (seeded with the signed basis vectors) and the mask for a
    given lambda is the pool member minimising the penalised objective, so
    the L1 norm is nonincreasing in lambda across the trace.  ``trace`` (a
    :class:`BisectionTrace`) receives the evaluated lambdas and L1 norms,
    re-scored against the final pool.
    """
    B = prob.budget
    pool = _CandidatePool(prob)
    evaluated = []

    def run(lam):
        pool.add(admm_solve(prob, lam, rho, tol, max_iter, init))
        evaluated.append(lam)
        return pool.l1[pool.select(lam)]

    if run(0.0) > B:
        hi = max(1e-3, float(np.max(np.abs(2.0 * prob.A.T @ prob.r))))
        doublings = 0
        while run(hi) > B:
            doublings += 1
            if doublings > 200:
                raise ParameterError(f"could not meet L1 budget {B} even at lambda={hi:g}")
            hi *= 2.0
        lo = 0.0
        while hi - lo > lam_tol:
            mid = 0.5 * (lo + hi)
            l1 = run(mid)
            if l1 <= B:
                hi = mid
                if l1 >= B - band:
                    break
            else:
                lo = mid

    # re-score with the final pool; feasibility is then monotone in lambda.  Late
    # candidates can make the largest lambda infeasible again, so keep doubling
    # against the fixed pool (the basis vectors guarantee an end).
    lam = max(evaluated)
    while pool.l1[pool.select(lam)] > B:
        lam = max(2.0 * lam, 1e-3)
        evaluated.append(lam)
    chosen = [pool.select(lam) for lam in evaluated]
    if trace is not None:
        trace.lambdas.extend(evaluated)
        trace.l1.extend(pool.l1[i] for i in chosen)
    feasible = [(lam, i) for lam, i in zip(evaluated, chosen) if pool.l1[i] <= B]
    lam, i = min(feasible, key=lambda p: p[0])
    return lam, pool.result(i, lam)


@dataclass
class Explanation:
    merchant_id: str
    mask: np.ndarray
    selected: list[int]
    residual: float
    iterations: int
    lam: float
    converged: bool = True
    category: int | None = None

    def to_json(self) -> dict:
        return {
            "merchant_id": self.merchant_id,
            "lambda": self.lam,
            "residual": self.residual,
            "mask": [float(x) for x in self.mask],
            "top_features": [{"index": int(i), "value": float(self.mask[i])} for i in self.selected],
        }


def top_features(mask, k) -> list[int]:
    mask = np.asarray(mask)
    order = np.lexsort((np.arange(mask.size), -np.abs(mask)))
    return [int(i) for i in order[: min(k, mask.size)]]


def explain_problem(prob: ExplainProblem, merchant_id="", rho=1.0, tol=1e-8, max_iter=5000, init="lsq", category=None):
    lam, res = bisect_lambda(prob, rho, tol, max_iter, init=init)
    return Explanation(
        merchant_id, res.mask, top_features(res.mask, prob.top_k), res.residual, res.iterations, lam, res.converged, category
    )


def build_problem(params, config: ModelConfig, t, d, block="cross", budget=10.0, top_k=10) -> ExplainProblem:
    W, b, a, v = value_map(params, config, t, d, block)
    return ExplainProblem(W, b, t, a * v, budget, top_k)


def explain_merchant(params, config, record, block="cross", budget=10.0, top_k=10, partner_d=None, **solver) -> Explanation:
    """Explain one merchant's selected transaction-branch block.

    The cross block's query comes from ``partner_d`` (default: the merchant's
    own description).
    """
    d = record.d if partner_d is None else partner_d
    prob = build_problem(params, config, record.t, d, block, budget, top_k)
    return explain_problem(prob, record.id, category=record.category, **solver)


def aggregate_category_attention(explanations, features, categories=None):
    """Mean mask value per category over the chosen feature columns.

    Returns ``(row_categories, matrix)``.  Categories listed in
    ``categories`` that have no explanation are dropped with a warning.
    """
    features = list(features)
    if not features:
        raise ParameterError("feature subset must be non-empty")
    groups: dict[int, list[np.ndarray]] = {}
    for e in explanations:
        if e.category is None:
            raise ParameterError(f"explanation for {e.merchant_id!r} carries no category")
        groups.setdefault(int(e.category), []).append(np.asarray(e.mask)[features])
    wanted = sorted(groups) if categories is None else list(categories)
    rows, out = [], []
    for c in wanted:
        if c not in groups:
            log.warning("category %s has no explanations; row omitted", c)
            continue
        rows.append(c)
        out.append(np.mean(groups[c], axis=0))
    return rows, np.array(out).reshape(len(rows), len(features))


def l1_budget_is_slack(budget, n_features) -> bool:
    """True when every unit-L2 vector already satisfies the L1 budget."""
    return budget >= math.sqrt(n_features)
