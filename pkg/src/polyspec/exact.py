"""Exact output law of speculative chains over order-0 models, by enumeration.

Every draft, accept, reject and resample branch is expanded with its exact
probability; no sampling is involved. This is an oracle for losslessness and
deliberately shares no code with the engine.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from functools import lru_cache
from typing import Sequence

import numpy as np

Law = dict[tuple[int, ...], float]


def _verify_law(block_law: Law, p: np.ndarray, q: np.ndarray, bonus: bool) -> Law:
    """Law of the tokens emitted when ``p`` verifies blocks proposed under ``q``."""
    resid = np.maximum(p - q, 0.0)
    rmass = resid.sum()
    out: Law = defaultdict(float)
    for block, w in block_law.items():
        reach = w
        for j, tok in enumerate(block):
            a = min(1.0, p[tok] / q[tok])
            reject = reach * (1.0 - a)
            if reject > 0.0 and rmass > 0.0:
                for c in np.flatnonzero(resid):
                    out[block[:j] + (int(c),)] += reject * resid[c] / rmass
            reach *= a
            if reach == 0.0:
                break
        if reach > 0.0:
            if bonus:
                for b in np.flatnonzero(p):
                    out[block + (int(b),)] += reach * p[b]
            else:
                out[block] += reach
    return dict(out)


class ChainEnumerator:
    """``dists[0]`` is the target; ``mu`` has one threshold per non-bottom verifier."""

    def __init__(self, dists: Sequence[Sequence[float]], K: int, mu: Sequence[int] = (), bonus: bool = True):
        self.p = [np.asarray(d, dtype=np.float64) / np.sum(d) for d in dists]
        self.n = len(self.p)
        if self.n < 2 or len(mu) != self.n - 2:
            raise ValueError("need >= 2 distributions and n-2 thresholds")
        self.K = K
        self.mu = tuple(mu)
        self.bonus = bonus
        self.V = len(self.p[0])

    def _draft_law(self) -> Law:
        q = self.p[-1]
        law: Law = {}
        for seq in itertools.product(range(self.V), repeat=self.K):
            w = float(np.prod([q[t] for t in seq]))
            if w > 0.0:
                law[seq] = w
        return law

    @lru_cache(maxsize=None)
    def event_law(self, level: int, budget: int) -> Law:
        """Output law of one verification event of ``level`` when ``budget`` tokens remain."""
        if level == self.n - 2:
            block_law = self._draft_law()
        else:
            limit = min(self.mu[level], budget)
            done: Law = defaultdict(float)
            frontier: Law = {(): 1.0}
            while frontier:
                nxt: Law = defaultdict(float)
                for prefix, w in frontier.items():
                    for seq, v in self.event_law(level + 1, budget - len(prefix)).items():
                        full = prefix + seq
                        (done if len(full) >= limit else nxt)[full] += w * v
                frontier = nxt
            block_law = dict(done)
        return _verify_law(block_law, self.p[level], self.p[level + 1], self.bonus)

    def output_law(self, N: int) -> Law:
        """Exact law of the first ``N`` emitted tokens of a run."""
        return self._run_law(N)

    @lru_cache(maxsize=None)
    def _run_law(self, remaining: int) -> Law:
        out: Law = defaultdict(float)
        for seq, w in self.event_law(0, remaining).items():
            if len(seq) >= remaining:
                out[seq[:remaining]] += w
            else:
                for rest, v in self._run_law(remaining - len(seq)).items():
                    out[seq + rest] += w * v
        return dict(out)


def product_law(p: Sequence[float], N: int) -> Law:
    p = np.asarray(p, dtype=np.float64)
    return {
        seq: float(np.prod([p[t] for t in seq]))
        for seq in itertools.product(range(len(p)), repeat=N)
    }


def total_variation(a: Law | np.ndarray, b: Law | np.ndarray) -> float:
    if isinstance(a, dict):
        keys = set(a) | set(b)
        return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def marginals(law: Law, N: int, V: int) -> np.ndarray:
    """Per-position marginals of a law over length-N sequences, shape (N, V)."""
    out = np.zeros((N, V))
    for seq, w in law.items():
        for j, t in enumerate(seq):
            out[j, t] += w
    return out
