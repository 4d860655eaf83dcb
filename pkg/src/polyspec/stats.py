"""Acceptance-length analytics: truncated geometric moments, trace estimators,
Monte Carlo corroboration and renewal (block accumulation) calculations.

``TruncGeomParams(p, n)`` is the law of ``min(G, n)`` with ``G`` geometric on
{1, 2, ...} with success probability ``p``. Under the engine's verification an
emitted block of a bottom cycle with per-token acceptance ``a`` and draft length
``K`` follows ``TruncGeomParams(1 - a, K + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import make_rng

STATS_COLUMNS = ("p", "n", "E_closed", "E_oracle", "Var_oracle", "Var_paper", "MC_mean", "MC_var", "trials", "seed")


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class TruncGeomParams:
    p: float
    n: int

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise StatsError(f"p must lie in (0, 1], got {self.p}")
        if int(self.n) != self.n or self.n < 1:
            raise StatsError(f"n must be an integer >= 1, got {self.n}")

    @property
    def alpha(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True)
class AcceptanceStats:
    mean: float
    variance: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise StatsError("stats need at least one observation")
        if self.variance < 0:
            raise StatsError("variance must be non-negative")


def trunc_geom_pmf(params: TruncGeomParams, k: int) -> float:
    if not 1 <= k <= params.n:
        raise StatsError(f"k must lie in [1, {params.n}], got {k}")
    q = 1.0 - params.p
    if k < params.n:
        return params.p * q ** (k - 1)
    return q ** (params.n - 1)


def trunc_geom_pmf_vector(params: TruncGeomParams) -> np.ndarray:
    """pmf at k = 1..n as an array indexed from 0."""
    return np.array([trunc_geom_pmf(params, k) for k in range(1, params.n + 1)])


def expected_acceptance(params: TruncGeomParams) -> float:
    return (1.0 - (1.0 - params.p) ** params.n) / params.p


def _moments(params: TruncGeomParams) -> tuple[float, float, float]:
    """Mean, variance and fourth central moment."""
    pmf = trunc_geom_pmf_vector(params)
    k = np.arange(1, params.n + 1, dtype=np.float64)
    m1 = float(np.sum(k * pmf))
    central = k - m1
    return m1, float(np.sum(central**2 * pmf)), float(np.sum(central**4 * pmf))


def variance_acceptance_oracle(params: TruncGeomParams) -> float:
    """Exact variance by pmf summation, ``E[N^2] - E[N]^2``."""
    pmf = trunc_geom_pmf_vector(params)
    k = np.arange(1, params.n + 1, dtype=np.float64)
    mean = float(np.sum(k * pmf))
    return max(0.0, float(np.sum(k * k * pmf)) - mean * mean)


def variance_paper_formula(alpha: float, n: int) -> float:
    """Literal value of a reference closed form for the variance.

    ``[alpha (1 - (n^2 - 1) alpha^n) - (n^2 - 1) alpha^(n+1)] / (1 - alpha)^2``.
    Kept for side-by-side reporting; it does not match the exact variance
    (n = 1 gives alpha / (1 - alpha)^2 instead of 0).
    """
    if not 0.0 <= alpha < 1.0:
        raise StatsError(f"alpha must lie in [0, 1), got {alpha}")
    if n < 1:
        raise StatsError("n must be >= 1")
    c = n * n - 1
    return (alpha * (1.0 - c * alpha**n) - c * alpha ** (n + 1)) / (1.0 - alpha) ** 2


def summarize(values: Sequence[float]) -> AcceptanceStats:
    """Sample mean and unbiased variance (0 for a single observation)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise StatsError("no observations")
    var = float(arr.var(ddof=1)) if arr.size > 1 else 0.0
    return AcceptanceStats(float(arr.mean()), var, int(arr.size))


def pool(parts: Sequence[AcceptanceStats]) -> AcceptanceStats:
    """Combine per-run stats as if all observations were one sample."""
    parts = [s for s in parts if s is not None]
    if not parts:
        raise StatsError("nothing to pool")
    count = sum(s.count for s in parts)
    mean = sum(s.mean * s.count for s in parts) / count
    if count == 1:
        return AcceptanceStats(mean, 0.0, 1)
    ss = sum((s.count - 1) * s.variance + s.count * (s.mean - mean) ** 2 for s in parts)
    return AcceptanceStats(mean, max(0.0, ss / (count - 1)), count)


def empirical_acceptance_stats(trace, adjacency: int | str = 0) -> AcceptanceStats:
    """Block-length stats at one adjacency, by index (0 = top) or ``"i->j"`` label."""
    if isinstance(adjacency, str):
        try:
            adjacency = trace.adjacencies.index(adjacency)
        except ValueError:
            raise StatsError(f"trace has no adjacency {adjacency!r}") from None
    if not 0 <= adjacency < len(trace.block_lengths) or not trace.block_lengths[adjacency]:
        raise StatsError(f"trace has no verification events at adjacency {adjacency}")
    return summarize(trace.block_lengths[adjacency])


def monte_carlo_acceptance(params: TruncGeomParams, trials: int, seed: int) -> AcceptanceStats:
    if trials < 1:
        raise StatsError("trials must be >= 1")
    rng = make_rng(seed)
    draws = np.minimum(rng.geometric(params.p, size=trials), params.n)
    return summarize(draws)


def mc_standard_errors(params: TruncGeomParams, trials: int) -> tuple[float, float]:
    """Standard errors of the sample mean and the unbiased sample variance."""
    _, var, mu4 = _moments(params)
    se_mean = math.sqrt(var / trials)
    if trials < 2:
        return se_mean, math.inf
    # exact finite-sample variance of s^2; stays positive for two-point laws
    var_s2 = mu4 / trials - var * var * (trials - 3) / (trials * (trials - 1))
    se_var = math.sqrt(max(0.0, var_s2))
    return se_mean, se_var


def comparison_row(p: float, n: int, trials: int, seed: int) -> dict:
    params = TruncGeomParams(p, n)
    pmf = trunc_geom_pmf_vector(params)
    mc = monte_carlo_acceptance(params, trials, seed)
    return {
        "p": p,
        "n": n,
        "E_closed": expected_acceptance(params),
        "E_oracle": float(np.sum(np.arange(1, n + 1) * pmf)),
        "Var_oracle": variance_acceptance_oracle(params),
        "Var_paper": variance_paper_formula(params.alpha, n),
        "MC_mean": mc.mean,
        "MC_var": mc.variance,
        "trials": trials,
        "seed": seed,
    }


# renewal calculations for order-0 chains --------------------------------------


def overlap(p: np.ndarray, q: np.ndarray) -> float:
    """Per-token acceptance probability of speculative sampling, ``sum min(p, q)``."""
    return float(np.minimum(p, q).sum())


def emitted_length_pmf(accept: float, m: int, bonus: bool = True) -> np.ndarray:
    """pmf (indexed by length) of tokens emitted when a block of ``m`` is verified
    with i.i.d. per-token acceptance probability ``accept``."""
    size = m + 2
    pmf = np.zeros(size)
    for j in range(m):
        pmf[j + 1] += accept**j * (1.0 - accept)
    pmf[m + 1 if bonus else m] += accept**m
    return pmf


def accumulated_block_pmf(cycle_pmf: np.ndarray, mu: int) -> np.ndarray:
    """pmf of the first partial sum of i.i.d. cycle outputs reaching ``mu``."""
    if cycle_pmf[0] > 0:
        raise StatsError("cycle outputs must be >= 1 token")
    kmax = len(cycle_pmf) - 1
    under = np.zeros(mu)
    under[0] = 1.0
    block = np.zeros(mu + kmax)
    for s in range(mu):
        if under[s] == 0.0:
            continue
        for k in range(1, kmax + 1):
            w = under[s] * cycle_pmf[k]
            if s + k < mu:
                under[s + k] += w
            else:
                block[s + k] += w
    return block


@dataclass(frozen=True)
class ChainRenewal:
    """Per-verifier expectations for an order-0 chain, top verifier first."""

    acceptance_lengths: tuple[float, ...]
    mean_blocks: tuple[float, ...]
    passes_per_token: tuple[float, ...]

    def time_per_token(self, costs: Sequence[float]) -> float:
        return float(sum(f * t for f, t in zip(self.passes_per_token, costs)))


def chain_renewal(accept: Sequence[float], K: int, mu: Sequence[int] = (), bonus: bool = True) -> ChainRenewal:
    """Expected block lengths and passes per emitted token, ignoring end-of-run truncation.

    ``accept[i]`` is the per-token acceptance of verifier i on proposals from
    model i+1. Events of a lower stage per upper event follow Wald's identity.
    """
    n = len(accept) + 1
    if n < 2 or len(mu) != n - 2:
        raise StatsError("need n-1 acceptance probabilities and n-2 thresholds")
    out_pmfs: list[np.ndarray] = [None] * (n - 1)
    blocks: list[float] = [0.0] * (n - 1)
    for level in range(n - 2, -1, -1):
        if level == n - 2:
            block = np.zeros(K + 1)
            block[K] = 1.0
        else:
            block = accumulated_block_pmf(out_pmfs[level + 1], mu[level])
        out = np.zeros(len(block) + 1)
        for m, w in enumerate(block):
            if w:
                out[: m + 2] += w * emitted_length_pmf(accept[level], m, bonus)
        blocks[level] = float(np.dot(np.arange(len(block)), block))
        out_pmfs[level] = out
    L = [float(np.dot(np.arange(len(o)), o)) for o in out_pmfs]
    passes = [1.0 / L[0]]
    for level in range(1, n - 1):
        passes.append(passes[-1] * blocks[level - 1] / L[level])
    passes.append(passes[-1] * K)
    return ChainRenewal(tuple(L), tuple(blocks), tuple(passes))
