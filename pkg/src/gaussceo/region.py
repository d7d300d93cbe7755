"""The log-loss rate-distortion region for a fixed choice of test channels.

For gains ``omega`` the region is the set of nonnegative ``(R_1..R_K, D)``
with ``D + sum_{k in S} R_k >= f(S)`` for every subset ``S``, where

    f(S) = sum_{k in S} I(Y_k; U_k | X) + h(X | U_{S^c}).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    CeoModel,
    TestChannelGains,
    cond_entropy_given,
    members,
    rate_term,
)

MAX_ENUM_K = 20
TIGHT_TOL = 1e-9


@dataclass(frozen=True)
class RegionPoint:
    rates: tuple[float, ...]
    distortion: float

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "distortion", float(self.distortion))

    def as_tuple(self) -> tuple[float, ...]:
        return (*self.rates, self.distortion)


@dataclass(frozen=True)
class SubsetBoundTable:
    """``f(S)`` for every subset, indexed by bitmask in ascending order."""

    K: int
    rate_sum: np.ndarray  # sum_{k in S} I(Y_k; U_k | X)
    cond_entropy: np.ndarray  # h(X | U_{S^c})

    @property
    def f(self) -> np.ndarray:
        # inf + finite stays inf; entropies are always finite
        return self.rate_sum + self.cond_entropy

    def __getitem__(self, mask: int) -> float:
        return float(self.f[mask])

    def __len__(self) -> int:
        return 1 << self.K


def subset_sums(values: Sequence[float], K: int) -> np.ndarray:
    """``sum_{k in S} values[k]`` for every mask ``S``."""
    out = np.zeros(1 << K)
    for mask in range(1, 1 << K):
        low = mask & -mask
        k = low.bit_length() - 1
        out[mask] = out[mask ^ low] + values[k]
    return out


def subset_bounds(m: CeoModel, g: TestChannelGains) -> SubsetBoundTable:
    K = m.K
    if K > MAX_ENUM_K:
        raise ValueError(f"subset enumeration limited to K <= {MAX_ENUM_K}, got K = {K}")
    rates = [rate_term(m, g, k) for k in range(K)]
    full = (1 << K) - 1
    # cond entropy given S^c depends only on S^c; compute once per mask
    h = np.array([cond_entropy_given(m, g, full ^ mask) for mask in range(1 << K)])
    return SubsetBoundTable(K, subset_sums(rates, K), h)


def margins(table: SubsetBoundTable, p: RegionPoint) -> np.ndarray:
    """``D + R(S) - f(S)`` for every mask."""
    rs = subset_sums(p.rates, table.K)
    with np.errstate(invalid="ignore"):
        out = p.distortion + rs - table.f
    # inf - inf only arises for infinite budgets against infinite bounds
    return np.where(np.isnan(out), -math.inf, out)


def is_feasible_for_gains(m: CeoModel, g: TestChannelGains, p: RegionPoint,
                          tol: float = TIGHT_TOL) -> tuple[bool, float]:
    """Membership of ``p`` in the polytope for these gains, and the worst margin."""
    if len(p.rates) != m.K:
        raise ValueError(f"point has {len(p.rates)} rates, model has {m.K} agents")
    worst = float(np.min(margins(subset_bounds(m, g), p)))
    ok = worst >= -tol and min(p.rates, default=0.0) >= 0
    return ok, worst


def min_distortion_for_rates(table: SubsetBoundTable, rates: Sequence[float]) -> float:
    """Smallest ``D`` with ``(rates, D)`` inside the polytope."""
    rs = subset_sums(rates, table.K)
    return float(np.max(table.f - rs))


def achievable_point(m: CeoModel, g: TestChannelGains, rate_split: Sequence[float],
                     r_sum: float) -> RegionPoint:
    """Point on the polytope boundary for a fixed split of a sum-rate budget.

    The returned distortion is ``+inf`` when some bound is infinite.
    """
    w = np.asarray(rate_split, dtype=float)
    if w.shape != (m.K,):
        raise ValueError(f"expected {m.K} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("rate split weights must be nonnegative")
    if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"rate split weights must sum to 1, got {w.sum()}")
    rates = w * float(r_sum)
    d = min_distortion_for_rates(subset_bounds(m, g), rates)
    return RegionPoint(tuple(rates), d)


def information_from_distortion(m: CeoModel, distortion: float) -> float:
    """Preserved information ``h(X) - D`` of the rate-information region."""
    return m.prior_entropy() - distortion


def distortion_from_information(m: CeoModel, delta: float) -> float:
    return m.prior_entropy() - delta


def describe_subset(mask: int, K: int) -> str:
    return "{" + ",".join(str(k + 1) for k in members(mask, K)) + "}"
