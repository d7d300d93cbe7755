"""Optimization over the semidefinite box ``0 <= omega_k <= inv(sigma_k)``.

Gains are handled in whitened form ``B_k = sigma_k^{1/2} omega_k sigma_k^{1/2}``
so the box becomes ``0 <= B_k <= I`` and projection is an eigenvalue clip.
In these coordinates

    I(Y_k; U_k | X) = -alpha ln det(I - B_k)
    h(X | U_A)      = gamma - alpha ln det(inv(sigma_x) + sum_{k in A} G_k^T B_k G_k)

with ``G_k = sigma_k^{-1/2} H_k``. Both are convex in ``B``.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .model import CeoModel, TestChannelGains, _sym, members, require_valid
from .region import (
    RegionPoint,
    SubsetBoundTable,
    is_feasible_for_gains,
    subset_bounds,
    subset_sums,
)

log = logging.getLogger(__name__)

BOX_CEILING = 1.0 - 1e-9
MEMBERSHIP_TOL = 1e-6
STAGE_TOL = 1e-3


@dataclass(frozen=True)
class OptimizerOptions:
    starts: int = 8
    seed: int = 0
    max_iters: int = 5000
    t_min: float = 10.0
    t_max: float = 1e3
    n_temps: int = 5
    tol: float = 1e-5
    polish: bool = True
    workers: int = 1
    ceiling: float = BOX_CEILING


@dataclass(frozen=True)
class BoxParam:
    bs: tuple[np.ndarray, ...]

    def gains(self, m: CeoModel) -> TestChannelGains:
        return TestChannelGains.from_whitened(m, self.bs)


@dataclass(frozen=True)
class TracePoint:
    r_sum: float
    distortion: float
    gains: TestChannelGains
    rates: tuple[float, ...]
    converged: bool
    iterations: int


def ceiling_for(n: int, ceiling: float = BOX_CEILING) -> float:
    """Upper eigenvalue clip keeping ``det(I - B)`` above the rate-term floor."""
    return 1.0 - max(1.0 - ceiling, 10.0 ** (-13.0 / n))


def project_box(b: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(b))
    return _sym((v * np.clip(w, lo, hi)) @ v.T)


def project_simplex(x: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{r >= 0, sum r = total}``."""
    if total <= 0:
        return np.zeros_like(x)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, len(x) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


class WhitenedProblem:
    """Rate and entropy terms of a model as functions of the whitened gains."""

    def __init__(self, m: CeoModel):
        self.m = m
        self.K = m.K
        self.full = m.full_mask
        self.alpha = m.convention.alpha
        self.gamma = m.convention.gamma(m.n_x)
        self.sx_inv = m.sigma_x_inv()
        self.G = [m.whitened_channel(k) for k in range(m.K)]
        self.dims = [a.n for a in m.agents]
        # S -> S^c lookup and membership matrix [mask, k]
        masks = np.arange(1 << m.K)
        self.member = np.array([[(s >> k) & 1 for k in range(m.K)] for s in masks], dtype=bool)

    def precision(self, bs, cond_mask: int) -> np.ndarray:
        J = self.sx_inv.copy()
        for k in members(cond_mask, self.K):
            J += self.G[k].T @ bs[k] @ self.G[k]
        return J

    def rates(self, bs) -> tuple[np.ndarray, list[np.ndarray]]:
        """Rate terms and their gradients ``alpha (I - B_k)^{-1}``."""
        vals = np.empty(self.K)
        grads = []
        for k, b in enumerate(bs):
            c = np.eye(self.dims[k]) - b
            sign, ld = np.linalg.slogdet(c)
            if sign <= 0:
                vals[k] = math.inf
                grads.append(np.full_like(b, math.inf))
                continue
            vals[k] = -self.alpha * ld
            grads.append(self.alpha * _sym(np.linalg.inv(c)))
        return vals, grads

    def entropies(self, bs, want_grad: bool = True):
        """``h(X | U_A)`` for every conditioning mask ``A``, and inverse precisions."""
        n = 1 << self.K
        h = np.empty(n)
        jinv = [None] * n
        for a in range(n):
            J = self.precision(bs, a)
            L = np.linalg.cholesky(J)
            h[a] = self.gamma - 2 * self.alpha * np.sum(np.log(np.diag(L)))
            if want_grad:
                Li = np.linalg.inv(L)
                jinv[a] = Li.T @ Li
        return h, jinv

    def entropy_grad(self, jinv_a: np.ndarray, k: int) -> np.ndarray:
        """Gradient of ``h(X | U_A)`` w.r.t. ``B_k`` for ``k`` in ``A``."""
        return -self.alpha * _sym(self.G[k] @ jinv_a @ self.G[k].T)

    def bound_terms(self, bs, want_grad: bool = True):
        """``f(S)`` for every ``S`` and per-subset gradient pieces."""
        r, rg = self.rates(bs)
        h, jinv = self.entropies(bs, want_grad)
        comp = self.full ^ np.arange(1 << self.K)
        f = subset_sums(r, self.K) + h[comp]
        return f, r, rg, h, jinv, comp


# ---------------------------------------------------------------------------
# gradients exposed for verification


def _whitened_list(m: CeoModel, bs) -> list[np.ndarray]:
    return [_sym(np.asarray(b, dtype=float)) for b in bs]


def rate_term_grad(m: CeoModel, bs, k: int) -> np.ndarray:
    """d I(Y_k; U_k | X) / d B_k."""
    p = WhitenedProblem(m)
    _, g = p.rates(_whitened_list(m, bs))
    return g[k]


def cond_entropy_grad(m: CeoModel, bs, subset) -> list[np.ndarray]:
    """d h(X | U_A) / d B_k for every agent (zero outside ``A``)."""
    from .model import as_mask

    p = WhitenedProblem(m)
    bs = _whitened_list(m, bs)
    a = as_mask(subset)
    J = p.precision(bs, a)
    jinv = np.linalg.inv(J)
    return [
        p.entropy_grad(jinv, k) if a >> k & 1 else np.zeros_like(bs[k])
        for k in range(m.K)
    ]


def whitened_rate_term(m: CeoModel, bs, k: int) -> float:
    return float(WhitenedProblem(m).rates(_whitened_list(m, bs))[0][k])


def whitened_cond_entropy(m: CeoModel, bs, subset) -> float:
    from .model import as_mask

    p = WhitenedProblem(m)
    J = p.precision(_whitened_list(m, bs), as_mask(subset))
    return p.gamma - p.alpha * np.linalg.slogdet(J)[1]


def _sym_directions(n: int):
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0
            yield e


def finite_difference_check(m: CeoModel, bs, step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    For each rate term and each conditional entropy (every mask), the
    directional derivatives along all symmetric coordinate directions of
    every ``B_k`` form a vector; the error is ``|analytic - fd| / |analytic|``.
    """
    bs = _whitened_list(m, bs)

    def fd(fn, k, e):
        plus, minus = list(bs), list(bs)
        plus[k] = bs[k] + step * e
        minus[k] = bs[k] - step * e
        return (fn(plus) - fn(minus)) / (2 * step)

    def rel(a, b):
        a, b = np.asarray(a), np.asarray(b)
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))

    worst = 0.0
    for k in range(m.K):
        g = rate_term_grad(m, bs, k)
        dirs = list(_sym_directions(bs[k].shape[0]))
        an = [float(np.sum(g * e)) for e in dirs]
        num = [fd(lambda x: whitened_rate_term(m, x, k), k, e) for e in dirs]
        worst = max(worst, rel(an, num))
    for a in range(1, 1 << m.K):
        grads = cond_entropy_grad(m, bs, a)
        an, num = [], []
        for k in members(a, m.K):
            for e in _sym_directions(bs[k].shape[0]):
                an.append(float(np.sum(grads[k] * e)))
                num.append(fd(lambda x: whitened_cond_entropy(m, x, a), k, e))
        worst = max(worst, rel(an, num))
    return worst


# ---------------------------------------------------------------------------
# inner rate allocation


def inner_allocation(m: CeoModel, g: TestChannelGains, r_sum: float,
                     table: SubsetBoundTable | None = None) -> tuple[tuple[float, ...], float]:
    """Split a sum-rate budget to minimize distortion for fixed gains.

    Solves ``min D`` s.t. ``D + R(S) >= f(S)`` for all ``S``,
    ``sum R <= r_sum``, ``R >= 0`` as a linear program, then recomputes ``D``
    exactly for the returned rates.
    """
    if r_sum < 0:
        raise ValueError("sum-rate budget must be nonnegative")
    table = table if table is not None else subset_bounds(m, g)
    K = m.K
    f = table.f
    if not np.all(np.isfinite(f)):
        return tuple([r_sum / K] * K), math.inf
    if r_sum == 0:
        return tuple([0.0] * K), float(f.max())
    return _solve_allocation(f, K, r_sum)


def _membership_matrix(K: int) -> np.ndarray:
    return np.array([[(s >> k) & 1 for k in range(K)] for s in range(1 << K)], dtype=float)


def _solve_allocation(f: np.ndarray, K: int, r_sum: float) -> tuple[tuple[float, ...], float]:
    M = _membership_matrix(K)
    n = 1 << K
    # variables (R_1..R_K, D); -R(S) - D <= -f(S)
    A_ub = np.vstack([np.hstack([-M, -np.ones((n, 1))]), np.r_[np.ones(K), 0.0]])
    b_ub = np.r_[-f, r_sum]
    c = np.r_[np.zeros(K), 1.0]
    bounds = [(0, None)] * K + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"rate allocation LP failed: {res.message}")
    rates = np.clip(res.x[:K], 0.0, None)
    tot = rates.sum()
    if tot > r_sum:
        rates *= r_sum / tot
    d = float(np.max(f - M @ rates))
    return tuple(float(r) for r in rates), d


# ---------------------------------------------------------------------------
# smoothed projected gradient


def _lse(a: np.ndarray, T: float) -> tuple[float, np.ndarray]:
    top = a.max()
    e = np.exp(T * (a - top))
    s = e.sum()
    return top + math.log(s) / T, e / s


class _Objective:
    """Smoothed ``max_S [f(S) - R(S) - D]`` over whitened gains (and rates)."""

    def __init__(self, prob: WhitenedProblem, r_sum: float | None = None,
                 point: RegionPoint | None = None):
        self.p = prob
        self.r_sum = r_sum
        K = prob.K
        self.M = prob.member.astype(float)
        if point is not None:
            self.fixed_offset = subset_sums(point.rates, K) + point.distortion
        else:
            self.fixed_offset = None

    def raw(self, bs, rates):
        f, r, rg, h, jinv, comp = self.p.bound_terms(bs)
        if self.fixed_offset is not None:
            a = f - self.fixed_offset
        else:
            a = f - self.M @ rates
        return a, rg, jinv, comp

    def value_grad(self, bs, rates, T):
        a, rg, jinv, comp = self.raw(bs, rates)
        if not np.all(np.isfinite(a)):
            return math.inf, None, None
        val, w = _lse(a, T)
        gb = []
        for k in range(self.p.K):
            in_s = self.M[:, k] > 0
            gk = w[in_s].sum() * rg[k]
            for s in np.nonzero(~in_s)[0]:
                gk = gk + w[s] * self.p.entropy_grad(jinv[comp[s]], k)
            gb.append(gk)
        gr = -(self.M.T @ w) if self.fixed_offset is None else None
        return val, gb, gr

    def value(self, bs, rates, T):
        f, *_ = self.p.bound_terms(bs, want_grad=False)
        a = f - (self.fixed_offset if self.fixed_offset is not None else self.M @ rates)
        if not np.all(np.isfinite(a)):
            return math.inf
        return _lse(a, T)[0]

    def exact(self, bs, rates) -> float:
        f, *_ = self.p.bound_terms(bs, want_grad=False)
        a = f - (self.fixed_offset if self.fixed_offset is not None else self.M @ rates)
        return float(a.max())


@dataclass
class _RunResult:
    bs: list
    rates: np.ndarray
    converged: bool
    iterations: int


def _pgd(obj: _Objective, bs, rates, opts: OptimizerOptions) -> _RunResult:
    """Accelerated projected gradient over a geometric temperature schedule.

    Each stage runs FISTA with backtracking from the previous stage's point;
    momentum restarts whenever the objective goes up.
    """
    temps = np.geomspace(opts.t_min, opts.t_max, opts.n_temps)
    per_stage = max(1, opts.max_iters // len(temps))
    free_rates = obj.fixed_offset is None
    his = [ceiling_for(n, opts.ceiling) for n in obj.p.dims]

    def prox(yb, yr, gb, gr, step):
        nb = [project_box(b - step * g, 0.0, hi) for b, g, hi in zip(yb, gb, his)]
        nr = project_simplex(yr - step * gr, obj.r_sum) if free_rates else yr
        return nb, nr

    def sqdist(ab, ar, bb, br):
        d = sum(float(np.sum((x - y) ** 2)) for x, y in zip(ab, bb))
        return d + (float(np.sum((ar - br) ** 2)) if free_rates else 0.0)

    def inner(gb, gr, ab, ar, bb, br):
        v = sum(float(np.sum(g * (x - y))) for g, x, y in zip(gb, ab, bb))
        return v + (float(gr @ (ar - br)) if free_rates else 0.0)

    total = 0
    converged = False
    for stage, T in enumerate(temps):
        # early stages only have to land in the right basin
        tol = opts.tol if stage == len(temps) - 1 else max(opts.tol, STAGE_TOL)
        step = 1.0
        xb, xr = bs, rates
        fx = obj.value(xb, xr, T)
        yb, yr, t = xb, xr, 1.0
        converged = False
        for _ in range(per_stage):
            total += 1
            fy, gb, gr = obj.value_grad(yb, yr, T)
            while True:
                nb, nr = prox(yb, yr, gb, gr, step)
                fn = obj.value(nb, nr, T)
                d2 = sqdist(nb, nr, yb, yr)
                if fn <= fy + inner(gb, gr, nb, nr, yb, yr) + d2 / (2 * step) + 1e-15 or step < 1e-14:
                    break
                step *= 0.5
            moved = math.sqrt(sqdist(nb, nr, xb, xr))
            mapping = math.sqrt(d2) / step
            if fn > fx:
                # restart momentum from the last iterate
                yb, yr, t = xb, xr, 1.0
                if mapping < tol:
                    converged = True
                    break
                continue
            t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            beta = (t - 1) / t_next
            yb = [x1 + beta * (x1 - x0) for x1, x0 in zip(nb, xb)]
            yr = nr + beta * (nr - xr) if free_rates else nr
            # keep the extrapolated point feasible
            yb = [project_box(b, 0.0, hi) for b, hi in zip(yb, his)]
            if free_rates:
                yr = project_simplex(yr, obj.r_sum)
            improvement = fx - fn
            xb, xr, fx, t = nb, nr, fn, t_next
            step = min(step * 1.5, 1e3)
            if mapping < tol or (moved < 1e-12 and improvement <= 1e-15 * max(1.0, abs(fn))):
                converged = True
                break
        bs, rates = xb, xr
    return _RunResult(bs, rates, converged, total)


def _start_points(prob: WhitenedProblem, opts: OptimizerOptions) -> list[list[np.ndarray]]:
    dims = prob.dims
    fixed = [
        [np.zeros((n, n)) for n in dims],
        [0.5 * np.eye(n) for n in dims],
        [(1 - 1e-3) * np.eye(n) for n in dims],
    ]
    out = fixed[: opts.starts]
    for i in range(max(0, opts.starts - len(fixed))):
        rng = np.random.default_rng(np.random.SeedSequence(opts.seed, spawn_key=(i,)))
        bs = []
        for n in dims:
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            bs.append(_sym((q * rng.uniform(0.0, 1.0, n)) @ q.T))
        out.append(bs)
    return out


def _run_starts(obj: _Objective, starts, rates0, opts: OptimizerOptions) -> list[_RunResult]:
    def one(bs):
        bs = [project_box(b, 0.0, ceiling_for(b.shape[0], opts.ceiling)) for b in bs]
        return _pgd(obj, bs, rates0.copy(), opts)

    if opts.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as ex:
            return list(ex.map(one, starts))
    return [one(s) for s in starts]


# ---------------------------------------------------------------------------
# conic refinement


_TIGHT_CLARABEL = dict(tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, tol_ktratio=1e-10)


def _conic_refine(prob: WhitenedProblem, ceiling: float, r_sum: float | None = None,
                  point: RegionPoint | None = None):
    """Solve the exact epigraph problem with a conic solver.

    Returns the whitened gains (and rates in trace mode) or ``None`` when the
    solver does not report an optimal status.
    """
    import cvxpy as cp

    K = prob.K
    a = prob.alpha
    B = [cp.Variable((n, n), symmetric=True) for n in prob.dims]
    rho = cp.Variable(K)
    ell = cp.Variable(1 << K)
    cons = []
    for k, n in enumerate(prob.dims):
        cons += [B[k] >> 0, ceiling_for(n, ceiling) * np.eye(n) - B[k] >> 0]
        cons.append(rho[k] + a * cp.log_det(np.eye(n) - B[k]) >= 0)
    for A in range(1 << K):
        J = prob.sx_inv
        for k in members(A, K):
            J = J + prob.G[k].T @ B[k] @ prob.G[k]
        if A == 0:
            cons.append(ell[A] == np.linalg.slogdet(prob.sx_inv)[1])
        else:
            cons.append(ell[A] <= cp.log_det(J))
    M = prob.member.astype(float)
    comp = prob.full ^ np.arange(1 << K)
    # f(S) = gamma + sum_{k in S} rho_k - alpha ell_{S^c}
    f = prob.gamma + M @ rho - a * ell[comp]
    if point is None:
        R = cp.Variable(K)
        t = cp.Variable()
        cons += [R >= 0, cp.sum(R) <= r_sum, t >= f - M @ R]
        problem = cp.Problem(cp.Minimize(t), cons)
    else:
        R = None
        mu = cp.Variable()
        off = subset_sums(point.rates, K) + point.distortion
        cons.append(mu <= off - f)
        problem = cp.Problem(cp.Maximize(mu), cons)
    for settings in (_TIGHT_CLARABEL, {}):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=cp.CLARABEL, **settings)
        except (cp.error.SolverError, ValueError) as exc:  # pragma: no cover - solver dependent
            log.debug("conic refinement failed: %s", exc)
            continue
        if problem.status == cp.OPTIMAL:
            break
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    if problem.status != cp.OPTIMAL:
        log.debug("conic refinement returned %s", problem.status)
    bs = [project_box(b.value, 0.0, ceiling_for(b.shape[0], ceiling)) for b in B]
    rates = None if R is None else project_simplex(np.asarray(R.value), r_sum) if r_sum > 0 else np.zeros(K)
    return bs, rates, problem.status == cp.OPTIMAL


# ---------------------------------------------------------------------------
# public entry points


def _setup_gradient_check(prob: WhitenedProblem, seed: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    bs = []
    for n in prob.dims:
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        bs.append(_sym((q * rng.uniform(0.1, 0.9, n)) @ q.T))
    err = finite_difference_check(prob.m, bs)
    if not err < 1e-5:
        raise RuntimeError(f"analytic gradients disagree with finite differences (rel err {err:.3g})")


def minimize_distortion(m: CeoModel, r_sum: float, opts: OptimizerOptions = OptimizerOptions(),
                        prob: WhitenedProblem | None = None) -> TracePoint:
    """Smallest distortion reachable with total rate ``r_sum``."""
    prob = prob or WhitenedProblem(m)
    K = m.K
    if r_sum == 0:
        g0 = TestChannelGains.zeros(m)
        return TracePoint(0.0, m.prior_entropy(), g0, tuple([0.0] * K), True, 0)
    obj = _Objective(prob, r_sum=r_sum)
    rates0 = np.full(K, r_sum / K)
    runs = _run_starts(obj, _start_points(prob, opts), rates0, opts)

    best = None
    for i, run in enumerate(runs):
        g = BoxParam(tuple(run.bs)).gains(m)
        rates, d = inner_allocation(m, g, r_sum)
        if best is None or d < best[0]:
            best = (d, g, rates, run.converged, run.iterations)
    iters = sum(r.iterations for r in runs)
    converged = best[3]
    if opts.polish:
        ref = _conic_refine(prob, opts.ceiling, r_sum=r_sum)
        if ref is not None:
            bs, _, ok = ref
            g = BoxParam(tuple(bs)).gains(m)
            rates, d = inner_allocation(m, g, r_sum)
            converged = converged or ok
            if d < best[0]:
                best = (d, g, rates, converged, iters)
    d, g, rates, _, _ = best
    return TracePoint(float(r_sum), d, g, rates, converged, iters)


def trace_boundary(m: CeoModel, r_grid: Sequence[float],
                   opts: OptimizerOptions = OptimizerOptions()) -> list[TracePoint]:
    """Minimal distortion for each sum-rate budget in ``r_grid``."""
    require_valid(m)
    grid = np.asarray(r_grid, dtype=float)
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("r_grid must be nonnegative and nondecreasing")
    prob = WhitenedProblem(m)
    _setup_gradient_check(prob, opts.seed)
    return [minimize_distortion(m, float(r), opts, prob) for r in grid]


@dataclass(frozen=True)
class MembershipVerdict:
    achievable: bool
    margin: float
    gains: TestChannelGains

    @property
    def label(self) -> str:
        return "achievable" if self.achievable else "unknown"


def membership(m: CeoModel, p: RegionPoint,
               opts: OptimizerOptions = OptimizerOptions()) -> MembershipVerdict:
    """One-sided membership test for the full region.

    Searches for gains maximizing the worst subset margin of ``p``. Reports
    achievable with those gains as a certificate when the margin clears
    ``-1e-6``; otherwise reports the best margin found, without claiming the
    point lies outside the region.
    """
    require_valid(m)
    if len(p.rates) != m.K:
        raise ValueError(f"point has {len(p.rates)} rates, model has {m.K} agents")
    if min(p.rates) < 0:
        return MembershipVerdict(False, min(p.rates), TestChannelGains.zeros(m))
    prob = WhitenedProblem(m)
    obj = _Objective(prob, point=p)
    runs = _run_starts(obj, _start_points(prob, opts), np.zeros(m.K), opts)
    cands = [r.bs for r in runs]
    if opts.polish:
        ref = _conic_refine(prob, opts.ceiling, point=p)
        if ref is not None:
            cands.append(ref[0])
    best = None
    for bs in cands:
        g = BoxParam(tuple(bs)).gains(m)
        _, margin = is_feasible_for_gains(m, g, p)
        if best is None or margin > best[0]:
            best = (margin, g)
    margin, g = best
    return MembershipVerdict(margin >= -MEMBERSHIP_TOL, float(margin), g)
