"""Problem instance and closed-form Gaussian information measures.

The observation model is ``Y_k = H_k X + N_k`` with ``X ~ N(0, sigma_x)`` and
independent noises ``N_k ~ N(0, sigma_k)``. Agent ``k`` describes ``Y_k``
through a Gaussian test channel ``U_k = Y_k + W_k`` whose added noise has
covariance ``inv(omega_k) - sigma_k``. Everything is measured in nats.

Agents are indexed from 0 in the library. Subsets of agents are either
iterables of indices or integer bitmasks (bit ``k`` set means agent ``k``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PD_RTOL = 1e-12
BOX_SLACK = 1e-10
# det(I - omega sigma) at or below this is treated as the box boundary
RATE_DET_FLOOR = 1e-14


class ModelError(ValueError):
    """Raised when a model or a set of gains violates an invariant."""


class Mode(enum.Enum):
    REAL = "real"
    COMPLEX = "complex"


@dataclass(frozen=True)
class EntropyConvention:
    """Constants turning ``ln det`` into a Gaussian differential entropy.

    ``h(N(0, S)) = gamma(dim) + alpha * ln det S``.
    """

    mode: Mode

    @property
    def alpha(self) -> float:
        return 1.0 if self.mode is Mode.COMPLEX else 0.5

    def gamma(self, d: int) -> float:
        if self.mode is Mode.COMPLEX:
            return d * math.log(math.pi * math.e)
        return 0.5 * d * math.log(2 * math.pi * math.e)

    def entropy(self, cov: np.ndarray) -> float:
        cov = np.atleast_2d(cov)
        return self.gamma(cov.shape[0]) + self.alpha * logdet(cov)


def _sym(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == a.shape[1]:
        a = 0.5 * (a + a.T)
    return a


def logdet(a: np.ndarray) -> float:
    """ln det of a symmetric positive definite matrix (``-inf`` if singular)."""
    sign, val = np.linalg.slogdet(a)
    if sign <= 0:
        return -math.inf
    return float(val)


def sqrtm_psd(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    s = 1.0 / np.sqrt(w) if inverse else np.sqrt(w)
    return (v * s) @ v.T


def is_pd(a: np.ndarray, rtol: float = PD_RTOL) -> bool:
    w = np.linalg.eigvalsh(a)
    return bool(w[0] > rtol * max(abs(w[-1]), 0.0) and w[0] > 0)


@dataclass(frozen=True)
class Agent:
    H: np.ndarray
    sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class CeoModel:
    """A vector Gaussian CEO instance.

    Noises are stored per agent only, so they are independent across agents
    and of the source by construction.
    """

    sigma_x: np.ndarray
    agents: tuple[Agent, ...]
    mode: Mode = Mode.REAL

    def __post_init__(self):
        object.__setattr__(self, "sigma_x", _sym(self.sigma_x))
        agents = tuple(
            a if isinstance(a, Agent) else Agent(*a) for a in self.agents
        )
        agents = tuple(
            Agent(np.atleast_2d(np.asarray(a.H, dtype=float)), _sym(a.sigma))
            for a in agents
        )
        object.__setattr__(self, "agents", agents)
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode))

    @classmethod
    def from_arrays(cls, sigma_x, Hs, sigmas, mode=Mode.REAL) -> "CeoModel":
        return cls(sigma_x, tuple(Agent(h, s) for h, s in zip(Hs, sigmas)), mode)

    @property
    def n_x(self) -> int:
        return self.sigma_x.shape[0]

    @property
    def K(self) -> int:
        return len(self.agents)

    @property
    def convention(self) -> EntropyConvention:
        return EntropyConvention(self.mode)

    @property
    def full_mask(self) -> int:
        return (1 << self.K) - 1

    def prior_entropy(self) -> float:
        """h(X)."""
        return self.convention.entropy(self.sigma_x)

    def sigma_x_inv(self) -> np.ndarray:
        return _sym(np.linalg.inv(self.sigma_x))

    def whitened_channel(self, k: int) -> np.ndarray:
        """``sigma_k^{-1/2} H_k``; maps whitened gains into source precision."""
        a = self.agents[k]
        return sqrtm_psd(a.sigma, inverse=True) @ a.H


@dataclass(frozen=True)
class TestChannelGains:
    """The matrices ``omega_k`` with ``0 <= omega_k <= inv(sigma_k)``."""

    __test__ = False  # not a pytest class

    omegas: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(_sym(o) for o in self.omegas))

    @classmethod
    def zeros(cls, m: CeoModel) -> "TestChannelGains":
        return cls(tuple(np.zeros((a.n, a.n)) for a in m.agents))

    @classmethod
    def full(cls, m: CeoModel, shrink: float = 1.0) -> "TestChannelGains":
        """``shrink * inv(sigma_k)`` for every agent."""
        return cls(tuple(shrink * np.linalg.inv(a.sigma) for a in m.agents))

    @classmethod
    def from_whitened(cls, m: CeoModel, bs: Sequence[np.ndarray]) -> "TestChannelGains":
        """Build gains from ``B_k = sigma_k^{1/2} omega_k sigma_k^{1/2}``."""
        out = []
        for a, b in zip(m.agents, bs):
            r = sqrtm_psd(a.sigma, inverse=True)
            out.append(r @ _sym(b) @ r)
        return cls(tuple(out))

    def whitened(self, m: CeoModel) -> list[np.ndarray]:
        out = []
        for a, o in zip(m.agents, self.omegas):
            r = sqrtm_psd(a.sigma)
            out.append(_sym(r @ o @ r))
        return out

    def with_agent(self, k: int, omega) -> "TestChannelGains":
        om = list(self.omegas)
        om[k] = _sym(omega)
        return TestChannelGains(tuple(om))


def as_mask(subset) -> int:
    if isinstance(subset, (int, np.integer)):
        return int(subset)
    mask = 0
    for k in subset:
        mask |= 1 << int(k)
    return mask


def members(mask: int, K: int) -> list[int]:
    return [k for k in range(K) if mask >> k & 1]


def validate_model(m: CeoModel) -> list[str]:
    """Every violated invariant of ``m``; empty when the model is usable."""
    problems = []
    sx = m.sigma_x
    if sx.ndim != 2 or sx.shape[0] != sx.shape[1] or sx.shape[0] < 1:
        return [f"sigma_x must be a non-empty square matrix, got shape {sx.shape}"]
    if not np.all(np.isfinite(sx)):
        problems.append("sigma_x has non-finite entries")
    else:
        w = np.linalg.eigvalsh(sx)
        if not (w[0] > PD_RTOL * abs(w[-1]) and w[0] > 0):
            problems.append(
                f"sigma_x is not positive definite (smallest eigenvalue {w[0]:.6g})"
            )
    if m.K < 1:
        problems.append("at least one agent is required")
    for k, a in enumerate(m.agents):
        if a.H.ndim != 2 or a.H.shape[1] != m.n_x or a.H.shape[0] < 1:
            problems.append(
                f"agent {k}: H has shape {a.H.shape}, expected (n_k, {m.n_x}) with n_k >= 1"
            )
            continue
        s = a.sigma
        if s.shape != (a.n, a.n):
            problems.append(
                f"agent {k}: sigma has shape {s.shape}, expected ({a.n}, {a.n})"
            )
            continue
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a.H))):
            problems.append(f"agent {k}: non-finite entries")
            continue
        w = np.linalg.eigvalsh(s)
        if not (w[0] > PD_RTOL * abs(w[-1]) and w[0] > 0):
            problems.append(
                f"agent {k}: sigma is not positive definite (smallest eigenvalue {w[0]:.6g})"
            )
    return problems


def validate_gains(m: CeoModel, g: TestChannelGains, slack: float = BOX_SLACK) -> list[str]:
    problems = []
    if len(g.omegas) != m.K:
        return [f"expected {m.K} gain matrices, got {len(g.omegas)}"]
    for k, (a, o) in enumerate(zip(m.agents, g.omegas)):
        if o.shape != (a.n, a.n):
            problems.append(f"agent {k}: omega has shape {o.shape}, expected ({a.n}, {a.n})")
            continue
        if not np.all(np.isfinite(o)):
            problems.append(f"agent {k}: omega has non-finite entries")
            continue
        r = sqrtm_psd(a.sigma)
        w = np.linalg.eigvalsh(r @ o @ r)
        if w[0] < -slack or w[-1] > 1 + slack:
            problems.append(
                f"agent {k}: whitened gain eigenvalues [{w[0]:.6g}, {w[-1]:.6g}] outside [0, 1]"
            )
    return problems


def require_valid(m: CeoModel, g: TestChannelGains | None = None) -> None:
    problems = validate_model(m)
    if not problems and g is not None:
        problems = validate_gains(m, g)
    if problems:
        raise ModelError("; ".join(problems))


def posterior_precision(m: CeoModel, g: TestChannelGains, subset) -> np.ndarray:
    """``inv(sigma_x) + sum_{k in A} H_k^T omega_k H_k``.

    This is the Fisher information of ``X`` given ``U_A``, which for
    Gaussian test channels is also the inverse of ``mmse(X | U_A)``.
    """
    mask = as_mask(subset)
    J = m.sigma_x_inv()
    for k in members(mask, m.K):
        H = m.agents[k].H
        J = J + H.T @ g.omegas[k] @ H
    return _sym(J)


def cond_entropy_given(m: CeoModel, g: TestChannelGains, subset) -> float:
    """h(X | U_A) in nats."""
    conv = m.convention
    return conv.gamma(m.n_x) - conv.alpha * logdet(posterior_precision(m, g, subset))


def rate_term(m: CeoModel, g: TestChannelGains, k: int) -> float:
    """I(Y_k; U_k | X) = -alpha ln det(I - omega_k sigma_k); ``inf`` on the box boundary."""
    a = m.agents[k]
    r = sqrtm_psd(a.sigma)
    b = _sym(r @ g.omegas[k] @ r)
    d = np.linalg.det(np.eye(a.n) - b)
    if d <= RATE_DET_FLOOR:
        return math.inf
    return -m.convention.alpha * math.log(d)


def added_noise_cov(m: CeoModel, g: TestChannelGains, k: int) -> np.ndarray:
    """Covariance ``inv(omega_k) - sigma_k`` of the noise agent ``k`` adds."""
    o = g.omegas[k]
    if not is_pd(o):
        raise ModelError(
            f"agent {k}: omega is singular, so the test channel noise is unbounded; "
            "use the precision-path operations (posterior_precision, cond_entropy_given) instead"
        )
    return _sym(np.linalg.inv(o) - m.agents[k].sigma)


def full_covariance(m: CeoModel, g: TestChannelGains) -> tuple[np.ndarray, dict[str, list[slice]]]:
    """Covariance of the stacked vector ``(X, Y_1..Y_K, U_1..U_K)``.

    Returns the matrix and a dict of slices ``{"x": [..], "y": [..], "u": [..]}``.
    """
    nx = m.n_x
    ns = [a.n for a in m.agents]
    offs = np.cumsum([0, nx] + ns + ns)
    sl_x = [slice(0, nx)]
    sl_y = [slice(offs[1 + k], offs[2 + k]) for k in range(m.K)]
    sl_u = [slice(offs[1 + m.K + k], offs[2 + m.K + k]) for k in range(m.K)]
    C = np.zeros((offs[-1], offs[-1]))
    sx = m.sigma_x
    C[sl_x[0], sl_x[0]] = sx
    Q = [added_noise_cov(m, g, k) for k in range(m.K)]
    for k, ak in enumerate(m.agents):
        cxy = sx @ ak.H.T
        for sl in (sl_y[k], sl_u[k]):
            C[sl_x[0], sl] = cxy
            C[sl, sl_x[0]] = cxy.T
        for j, aj in enumerate(m.agents):
            cyy = ak.H @ sx @ aj.H.T
            if j == k:
                cyy = cyy + ak.sigma
            C[sl_y[k], sl_y[j]] = cyy
            C[sl_y[k], sl_u[j]] = cyy
            C[sl_u[k], sl_y[j]] = cyy
            C[sl_u[k], sl_u[j]] = cyy + Q[k] if j == k else cyy
    return _sym(C), {"x": sl_x, "y": sl_y, "u": sl_u}


def joint_covariance(m: CeoModel, g: TestChannelGains) -> np.ndarray:
    """Covariance of ``(X, U_1..U_K)``. Requires every ``omega_k`` nonsingular."""
    C, sl = full_covariance(m, g)
    idx = np.r_[tuple(np.arange(C.shape[0])[s] for s in sl["x"] + sl["u"])]
    return C[np.ix_(idx, idx)]


def schur_conditional(C: np.ndarray, keep: np.ndarray, given: np.ndarray) -> np.ndarray:
    """Conditional covariance of ``C[keep]`` given ``C[given]`` (Schur complement)."""
    A = C[np.ix_(keep, keep)]
    if len(given) == 0:
        return A
    Bm = C[np.ix_(keep, given)]
    G = C[np.ix_(given, given)]
    return _sym(A - Bm @ np.linalg.solve(G, Bm.T))


def block_indices(slices: Iterable[slice], total: int) -> np.ndarray:
    idx = [np.arange(total)[s] for s in slices]
    return np.concatenate(idx) if idx else np.zeros(0, dtype=int)
