"""Quadratic CEO problem under a determinant constraint on the error matrix.

A bound ``|D_err| <= d_q`` on the determinant of the average MMSE matrix maps
to the log-loss level ``gamma(n_x) + alpha ln d_q``; the determinant region is
the log-loss region read through that map.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import CeoModel, TestChannelGains, logdet, members, posterior_precision
from .optimizer import OptimizerOptions, trace_boundary
from .region import TIGHT_TOL


def logloss_from_det(m: CeoModel, d_q: float) -> float:
    if not d_q > 0:
        raise ValueError(f"determinant level must be positive, got {d_q}")
    conv = m.convention
    return conv.gamma(m.n_x) + conv.alpha * math.log(d_q)


def det_from_logloss(m: CeoModel, d_log: float) -> float:
    conv = m.convention
    return math.exp((d_log - conv.gamma(m.n_x)) / conv.alpha)


def det_margins(m: CeoModel, g: TestChannelGains, rates: Sequence[float], d_q: float) -> np.ndarray:
    """Per-subset slack of the determinant-region inequalities.

    For subset ``S`` the inequality reads
    ``-alpha ln d_q <= R(S) + alpha sum_{k in S} ln det(I - omega_k sigma_k)
    + alpha ln det(inv(sigma_x) + sum_{k not in S} H_k^T omega_k H_k)``;
    the returned slack is right side minus left side, in nats.
    """
    if not d_q > 0:
        raise ValueError(f"determinant level must be positive, got {d_q}")
    if len(rates) != m.K:
        raise ValueError(f"expected {m.K} rates, got {len(rates)}")
    a = m.convention.alpha
    ld_rate = []
    for k, ag in enumerate(m.agents):
        d = np.linalg.det(np.eye(ag.n) - g.omegas[k] @ ag.sigma)
        ld_rate.append(math.log(d) if d > 1e-14 else -math.inf)
    full = m.full_mask
    out = np.empty(1 << m.K)
    for s in range(1 << m.K):
        rs = sum(rates[k] for k in members(s, m.K))
        rate_part = sum(ld_rate[k] for k in members(s, m.K))
        ld_j = logdet(posterior_precision(m, g, full ^ s))
        out[s] = rs + a * rate_part + a * ld_j + a * math.log(d_q)
    return out


def det_region_check(m: CeoModel, g: TestChannelGains, rates: Sequence[float], d_q: float,
                     tol: float = TIGHT_TOL) -> tuple[bool, float]:
    """Whether ``(rates, d_q)`` satisfies every determinant-region inequality."""
    worst = float(det_margins(m, g, rates, d_q).min())
    return worst >= -tol and min(rates) >= 0, worst


def det_trace(m: CeoModel, r_grid: Sequence[float],
              opts: OptimizerOptions = OptimizerOptions()) -> list[tuple[float, float]]:
    """Smallest achievable error determinant for each sum-rate budget."""
    return [(p.r_sum, det_from_logloss(m, p.distortion)) for p in trace_boundary(m, r_grid, opts)]
