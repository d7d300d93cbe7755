"""Berger-Tung corner points evaluated with Gaussian test channels."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    CeoModel,
    TestChannelGains,
    as_mask,
    cond_entropy_given,
    logdet,
    members,
    posterior_precision,
    rate_term,
)
from .region import RegionPoint

DOMINATION_TOL = 1e-9


class UnboundedRateError(ValueError):
    """A corner needs infinite rate because some gain sits on the box boundary."""


def _logdet_J(m: CeoModel, g: TestChannelGains, mask: int) -> float:
    return logdet(posterior_precision(m, g, mask))


def mutual_info_group(m: CeoModel, g: TestChannelGains, subset) -> float:
    """I(Y_S; U_S | U_{S^c}).

    Splits as ``sum_{k in S} I(Y_k; U_k | X) + I(X; U_S | U_{S^c})``, the
    second term being a difference of posterior log-det precisions.
    """
    mask = as_mask(subset)
    if mask == 0:
        return 0.0
    full = m.full_mask
    rates = sum(rate_term(m, g, k) for k in members(mask, m.K))
    if math.isinf(rates):
        return math.inf
    a = m.convention.alpha
    return rates + a * (_logdet_J(m, g, full) - _logdet_J(m, g, full ^ mask))


def conditional_rate(m: CeoModel, g: TestChannelGains, k: int, given) -> float:
    """I(Y_k; U_k | U_given) by the precision path."""
    given = as_mask(given) & ~(1 << k)
    r = rate_term(m, g, k)
    if math.isinf(r):
        return math.inf
    a = m.convention.alpha
    return r + a * (_logdet_J(m, g, given | 1 << k) - _logdet_J(m, g, given))


@dataclass(frozen=True)
class CornerSpec:
    perm: tuple[int, ...]
    gains: TestChannelGains

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a permutation of 0..{len(perm) - 1}: {perm}")
        object.__setattr__(self, "perm", perm)


def corner_point(m: CeoModel, spec: CornerSpec) -> RegionPoint:
    """Successive-decoding corner for the order ``spec.perm``.

    Agent ``perm[i]`` is charged ``I(Y; U | U_{perm[:i]})``, so the rates sum
    to the group information of all agents and the distortion is
    ``h(X | U_1..U_K)``.
    """
    if len(spec.perm) != m.K:
        raise ValueError(f"permutation has length {len(spec.perm)}, model has {m.K} agents")
    g = spec.gains
    rates = [0.0] * m.K
    seen = 0
    for k in spec.perm:
        r = conditional_rate(m, g, k, seen)
        if math.isinf(r):
            raise UnboundedRateError(
                f"agent {k + 1} has an infinite rate term (gain on the box boundary)"
            )
        rates[k] = r
        seen |= 1 << k
    return RegionPoint(tuple(rates), cond_entropy_given(m, g, m.full_mask))


def all_corner_points(m: CeoModel, g: TestChannelGains) -> dict[tuple[int, ...], RegionPoint]:
    return {
        perm: corner_point(m, CornerSpec(perm, g))
        for perm in itertools.permutations(range(m.K))
    }


def _require_k2(m: CeoModel) -> None:
    if m.K != 2:
        raise ValueError(f"the five-point list is only defined for K = 2, got K = {m.K}")


def extreme_points_k2(m: CeoModel, g: TestChannelGains) -> list[RegionPoint]:
    """Vertices P1..P5 of the two-agent polytope, from closed-form measures."""
    _require_k2(m)
    r1, r2 = rate_term(m, g, 0), rate_term(m, g, 1)
    hx = m.prior_entropy()
    h1 = cond_entropy_given(m, g, 0b01)
    h2 = cond_entropy_given(m, g, 0b10)
    h12 = cond_entropy_given(m, g, 0b11)
    i1 = r1 + hx - h1  # I(Y1;U1) = I(Y1;U1|X) + I(X;U1)
    i2 = r2 + hx - h2
    i2_1 = r2 + h1 - h12  # I(Y2;U2|U1)
    i1_2 = r1 + h2 - h12
    return [
        RegionPoint((0.0, 0.0), r1 + r2 + hx),
        RegionPoint((i1, 0.0), r2 + h1),
        RegionPoint((0.0, i2), r1 + h2),
        RegionPoint((i1, i2_1), h12),
        RegionPoint((i1_2, i2), h12),
    ]


@dataclass(frozen=True)
class DominationEntry:
    name: str
    point: RegionPoint
    dominator: RegionPoint
    slacks: tuple[float, ...]  # per coordinate, point - dominator

    @property
    def slack(self) -> float:
        return min(self.slacks)

    @property
    def ok(self) -> bool:
        return self.slack >= -DOMINATION_TOL


def check_domination_k2(m: CeoModel, g: TestChannelGains) -> list[DominationEntry]:
    """Pair each vertex P1..P5 with a Berger-Tung point that dominates it.

    The dominating points are Gaussian corners in which the silent agents'
    descriptions are constants (zero gain), computed through
    :func:`corner_point` independently of the closed forms above.
    """
    _require_k2(m)
    pts = extreme_points_k2(m, g)
    zero = [np.zeros_like(o) for o in g.omegas]
    only1 = TestChannelGains((g.omegas[0], zero[1]))
    only2 = TestChannelGains((zero[0], g.omegas[1]))
    none = TestChannelGains(tuple(zero))
    dominators = [
        corner_point(m, CornerSpec((0, 1), none)),
        corner_point(m, CornerSpec((0, 1), only1)),
        corner_point(m, CornerSpec((1, 0), only2)),
        corner_point(m, CornerSpec((0, 1), g)),
        corner_point(m, CornerSpec((1, 0), g)),
    ]
    out = []
    for j, (p, d) in enumerate(zip(pts, dominators)):
        slacks = tuple(a - b for a, b in zip(p.as_tuple(), d.as_tuple()))
        out.append(DominationEntry(f"P{j + 1}", p, d, slacks))
    return out


def time_share(points: Sequence[RegionPoint], weights: Sequence[float]) -> RegionPoint:
    """Convex combination of operating points."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("time-sharing weights must be a probability vector")
    arr = np.array([p.as_tuple() for p in points])
    mix = w @ arr
    return RegionPoint(tuple(mix[:-1]), mix[-1])
