"""Sampling-based and dual-path checks of the Gaussian identities.

Samples are drawn in chunks; chunk ``c`` uses its own generator seeded by
``SeedSequence(seed, spawn_key=(c,))`` so results do not depend on how many
threads draw them. Moments are reduced chunk by chunk in index order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    CeoModel,
    ModelError,
    Mode,
    TestChannelGains,
    as_mask,
    block_indices,
    cond_entropy_given,
    full_covariance,
    logdet,
    members,
    posterior_precision,
    require_valid,
    schur_conditional,
    sqrtm_psd,
)

MIN_REPORT_SAMPLES = 1000
INTERIOR_EPS = 1e-9
ILL_CONDITIONED = 1e12


@dataclass(frozen=True)
class McConfig:
    samples: int = 200_000
    seed: int = 0
    chunk: int = 50_000
    workers: int = 1

    def __post_init__(self):
        if self.samples < 1 or self.chunk < 1:
            raise ValueError("samples and chunk must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class McReport:
    name: str
    empirical: float | np.ndarray
    analytic: float | np.ndarray
    rel_error: float
    samples: int = 0  # 0 for exact algebraic checks
    seed: int | None = None
    tolerance: float = math.nan
    flagged: bool = False
    std_error: float = math.nan

    @property
    def passed(self) -> bool:
        return not self.flagged and self.rel_error < self.tolerance


@dataclass
class SampleBatch:
    x: np.ndarray
    y: list[np.ndarray]
    u: list[np.ndarray]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def stacked(self) -> np.ndarray:
        """Columns ordered as ``(X, Y_1..Y_K, U_1..U_K)``."""
        return np.hstack([self.x, *self.y, *self.u])


def _require_sampling(m: CeoModel, g: TestChannelGains) -> None:
    require_valid(m, g)
    if m.mode is not Mode.REAL:
        raise ModelError("Monte Carlo sampling supports real-valued models only")
    for k, b in enumerate(g.whitened(m)):
        w = np.linalg.eigvalsh(b)
        if w[0] < INTERIOR_EPS or w[-1] > 1 - INTERIOR_EPS:
            raise ModelError(
                f"agent {k + 1}: gains must be strictly inside the box for sampling "
                f"(whitened eigenvalues [{w[0]:.3g}, {w[-1]:.3g}])"
            )


def _channel_factors(m: CeoModel, g: TestChannelGains):
    lx = np.linalg.cholesky(m.sigma_x)
    ln = [np.linalg.cholesky(a.sigma) for a in m.agents]
    lq = []
    for a, b in zip(m.agents, g.whitened(m)):
        # inv(omega) - sigma = sigma^{1/2} (inv(B) - I) sigma^{1/2}
        w, v = np.linalg.eigh(b)
        lq.append(sqrtm_psd(a.sigma) @ (v * np.sqrt(1.0 / w - 1.0)))
    return lx, ln, lq


def _draw_chunk(m, factors, seed, index, n):
    lx, ln, lq = factors
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    x = rng.standard_normal((n, m.n_x)) @ lx.T
    ys, us = [], []
    for a, l_n, l_q in zip(m.agents, ln, lq):
        y = x @ a.H.T + rng.standard_normal((n, a.n)) @ l_n.T
        u = y + rng.standard_normal((n, l_q.shape[1])) @ l_q.T
        ys.append(y)
        us.append(u)
    return x, ys, us


def _chunk_sizes(cfg: McConfig) -> list[int]:
    full, rest = divmod(cfg.samples, cfg.chunk)
    return [cfg.chunk] * full + ([rest] if rest else [])


def _map_chunks(fn, sizes, workers):
    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda j: fn(*j), jobs))
    return [fn(*j) for j in jobs]


def sample_batch(m: CeoModel, g: TestChannelGains, cfg: McConfig) -> SampleBatch:
    """I.i.d. draws of ``(X, Y_1..Y_K, U_1..U_K)`` under Gaussian test channels."""
    _require_sampling(m, g)
    factors = _channel_factors(m, g)
    parts = _map_chunks(lambda i, n: _draw_chunk(m, factors, cfg.seed, i, n),
                        _chunk_sizes(cfg), cfg.workers)
    x = np.vstack([p[0] for p in parts])
    y = [np.vstack([p[1][k] for p in parts]) for k in range(m.K)]
    u = [np.vstack([p[2][k] for p in parts]) for k in range(m.K)]
    return SampleBatch(x, y, u)


def sample_moments(m: CeoModel, g: TestChannelGains, cfg: McConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of the stacked vector.

    Chunks are drawn and reduced independently; their sums are added in chunk
    order, so the result is bit-identical for any worker count.
    """
    _require_sampling(m, g)
    factors = _channel_factors(m, g)

    def chunk_sums(i, n):
        x, ys, us = _draw_chunk(m, factors, cfg.seed, i, n)
        z = np.hstack([x, *ys, *us])
        # einsum keeps the reduction order fixed (no threaded BLAS)
        return z.sum(axis=0), np.einsum("ni,nj->ij", z, z)

    parts = _map_chunks(chunk_sums, _chunk_sizes(cfg), cfg.workers)
    s1 = np.zeros_like(parts[0][0])
    s2 = np.zeros_like(parts[0][1])
    for a, b in parts:
        s1 = s1 + a
        s2 = s2 + b
    n = cfg.samples
    mean = s1 / n
    cov = (s2 - n * np.outer(mean, mean)) / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def _rel_fro(emp, ana) -> float:
    emp = np.atleast_2d(emp)
    ana = np.atleast_2d(ana)
    return float(np.linalg.norm(emp - ana) / np.linalg.norm(ana))


def verify_sample_covariance(m: CeoModel, g: TestChannelGains, cfg: McConfig,
                             tolerance: float | None = None) -> list[McReport]:
    """Sample covariances of ``X`` and each ``U_k`` against their closed forms."""
    tol = 3.0 / math.sqrt(cfg.samples) if tolerance is None else tolerance
    _, cov = sample_moments(m, g, cfg)
    C, sl = full_covariance(m, g)
    out = []
    blocks = [("cov_x", sl["x"][0])] + [(f"cov_u{k + 1}", s) for k, s in enumerate(sl["u"])]
    for name, s in blocks:
        emp, ana = cov[s, s], C[s, s]
        out.append(McReport(name, emp, ana, _rel_fro(emp, ana), cfg.samples, cfg.seed, tol))
    return out


def verify_mmse_identity(m: CeoModel, g: TestChannelGains, cfg: McConfig,
                         tolerance: float = 2e-2) -> list[McReport]:
    """``mmse(Y_k | X, U_k)`` estimated from samples vs ``sigma_k - sigma_k omega_k sigma_k``.

    The empirical side is a Schur complement of the sample covariance; it does
    not use the regression coefficients implied by the model.
    """
    _, cov = sample_moments(m, g, cfg)
    _, sl = full_covariance(m, g)
    dim = cov.shape[0]
    out = []
    for k, a in enumerate(m.agents):
        keep = block_indices([sl["y"][k]], dim)
        given = block_indices([sl["x"][0], sl["u"][k]], dim)
        flagged = bool(np.linalg.cond(cov[np.ix_(given, given)]) > ILL_CONDITIONED)
        emp = schur_conditional(cov, keep, given)
        ana = a.sigma - a.sigma @ g.omegas[k] @ a.sigma
        out.append(McReport(f"mmse_y{k + 1}", emp, ana, _rel_fro(emp, ana),
                            cfg.samples, cfg.seed, tolerance, flagged))
    return out


def _conditioning_indices(m, sl, dim, mask):
    return block_indices([sl["u"][k] for k in members(mask, m.K)], dim)


def verify_fisher_equality(m: CeoModel, g: TestChannelGains, subset,
                           tolerance: float = 1e-9) -> McReport:
    """Posterior precision of ``X`` given ``U_{S^c}`` along two algebraic paths.

    ``subset`` is ``S``; the conditioning set is its complement. Path one
    inverts the Schur complement of the joint covariance, path two
    accumulates ``H_k^T omega_k H_k``.
    """
    require_valid(m, g)
    s = as_mask(subset)
    given_mask = m.full_mask ^ s
    C, sl = full_covariance(m, g)
    dim = C.shape[0]
    keep = block_indices(sl["x"], dim)
    cond = schur_conditional(C, keep, _conditioning_indices(m, sl, dim, given_mask))
    emp = np.linalg.inv(cond)
    ana = posterior_precision(m, g, given_mask)
    return McReport(f"fisher_S{s}", emp, ana, _rel_fro(emp, ana), 0, None, tolerance)


def verify_sandwich_tightness(m: CeoModel, g: TestChannelGains, subset,
                            tolerance: float = 1e-9) -> McReport:
    """Fisher lower bound, entropy and MMSE upper bound for ``h(X | U_A)``.

    For Gaussians all three coincide. The entropy is taken as
    ``h(X, U_A) - h(U_A)`` from the joint covariance; the MMSE matrix is a
    Schur complement; the Fisher information is the accumulated precision.
    Reports ``(lower, entropy, upper)`` and the largest pairwise gap.
    """
    require_valid(m, g)
    a = as_mask(subset)
    conv = m.convention
    C, sl = full_covariance(m, g)
    dim = C.shape[0]
    xi = block_indices(sl["x"], dim)
    ui = _conditioning_indices(m, sl, dim, a)
    lower = conv.gamma(m.n_x) - conv.alpha * logdet(posterior_precision(m, g, a))
    mmse = schur_conditional(C, xi, ui)
    upper = conv.gamma(m.n_x) + conv.alpha * logdet(mmse)
    joint = np.concatenate([xi, ui])
    h = conv.entropy(C[np.ix_(joint, joint)])
    if len(ui):
        h -= conv.entropy(C[np.ix_(ui, ui)])
    vals = np.array([lower, h, upper])
    gap = float(vals.max() - vals.min())
    return McReport(f"sandwich_A{a}", vals, np.full(3, h), gap, 0, None, tolerance)


def verify_logloss_achievability(m: CeoModel, g: TestChannelGains, cfg: McConfig,
                                 tolerance: float = 1e-2) -> McReport:
    """Mean log-loss of the Gaussian posterior decoder vs ``h(X | U_1..U_K)``.

    The decoder reports the density ``N(mu(u), inv(J))`` with
    ``mu(u) = inv(J) sum_k H_k^T omega_k u_k``; the loss of a sample is minus
    the log of that density at the true source value.
    """
    _require_sampling(m, g)
    factors = _channel_factors(m, g)
    J = posterior_precision(m, g, m.full_mask)
    Jinv = np.linalg.inv(J)
    taps = [Jinv @ a.H.T @ o for a, o in zip(m.agents, g.omegas)]
    const = 0.5 * m.n_x * math.log(2 * math.pi) - 0.5 * logdet(J)

    def chunk_losses(i, n):
        x, _, us = _draw_chunk(m, factors, cfg.seed, i, n)
        mu = sum(u @ t.T for u, t in zip(us, taps))
        e = x - mu
        loss = const + 0.5 * np.einsum("ni,ij,nj->n", e, J, e)
        return loss.sum(), np.einsum("n,n->", loss, loss)

    parts = _map_chunks(chunk_losses, _chunk_sizes(cfg), cfg.workers)
    s1 = s2 = 0.0
    for a, b in parts:
        s1 += a
        s2 += b
    n = cfg.samples
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    ana = cond_entropy_given(m, g, m.full_mask)
    return McReport("logloss", mean, ana, abs(mean - ana) / abs(ana), n, cfg.seed,
                    tolerance, std_error=math.sqrt(var / n))


def verify_det_entropy_equality(m: CeoModel, g: TestChannelGains,
                                tolerance: float = 1e-9) -> McReport:
    """``gamma + alpha ln det mmse(X | U_1..U_K)`` against ``h(X | U_1..U_K)``.

    The MMSE matrix comes from the joint covariance when every gain is
    nonsingular, otherwise from inverting the posterior precision.
    """
    require_valid(m, g)
    conv = m.convention
    try:
        C, sl = full_covariance(m, g)
    except ModelError:
        mmse = np.linalg.inv(posterior_precision(m, g, m.full_mask))
    else:
        dim = C.shape[0]
        mmse = schur_conditional(C, block_indices(sl["x"], dim), block_indices(sl["u"], dim))
    lhs = conv.gamma(m.n_x) + conv.alpha * logdet(mmse)
    rhs = cond_entropy_given(m, g, m.full_mask)
    return McReport("det_entropy", lhs, rhs, abs(lhs - rhs), 0, None, tolerance)


def run_all(m: CeoModel, g: TestChannelGains, cfg: McConfig,
            sampling_tol: float = 2e-2, exact_tol: float = 1e-9) -> list[McReport]:
    """Every check, in a fixed order."""
    if cfg.samples < MIN_REPORT_SAMPLES:
        raise ValueError(f"at least {MIN_REPORT_SAMPLES} samples are required, got {cfg.samples}")
    _require_sampling(m, g)
    out = verify_sample_covariance(m, g, cfg, sampling_tol)
    out += verify_mmse_identity(m, g, cfg, sampling_tol)
    out.append(verify_logloss_achievability(m, g, cfg, sampling_tol))
    for s in range(1 << m.K):
        out.append(verify_fisher_equality(m, g, s, exact_tol))
    for a in range(1 << m.K):
        out.append(verify_sandwich_tightness(m, g, a, exact_tol))
    out.append(verify_det_entropy_equality(m, g, exact_tol))
    return out
