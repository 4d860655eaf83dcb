"""Autoregressive, dualistic and n-model polybasic decoding with full traces.

Forward-pass accounting: every drafted token costs its drafter one pass, and a
verification event costs the verifier one pass regardless of block size (the
block and the bonus position are scored in parallel).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Model, make_rng, sample
from .planner import CostProfile
from .verify import Fallback, VerifyRule, verify_sequence

TRACE_SCHEMA_VERSION = 1


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class RunParams:
    prompt: tuple[int, ...]
    N: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if self.N < 1:
            raise EngineError(f"N must be >= 1, got {self.N}")


@dataclass(frozen=True)
class ChainConfig:
    """Ordered chain ``models[0]`` (target) .. ``models[-1]`` (lightest drafter).

    ``mu[i]`` is the accumulation threshold of verifier ``i`` for every verifier
    above the bottom adjacency, so ``len(mu) == n - 2``.
    """

    models: tuple[Model, ...]
    K: int = 4
    mu: tuple[int, ...] = ()
    rule: VerifyRule = VerifyRule.SPECULATIVE
    bonus_enabled: bool = True
    fallback: Fallback = Fallback.RESIDUAL
    names: tuple[str, ...] = ()

    def __post_init__(self):
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "mu", tuple(int(m) for m in self.mu))
        object.__setattr__(self, "rule", VerifyRule.parse(self.rule))
        object.__setattr__(self, "fallback", Fallback(self.fallback))
        n = len(models)
        if n < 1:
            raise EngineError("chain needs at least one model")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"M{i + 1}" for i in range(n)))
        elif len(self.names) != n or len(set(self.names)) != n:
            raise EngineError("chain names must be unique, one per model")
        if self.K < 1:
            raise EngineError(f"K must be >= 1, got {self.K}")
        if len(self.mu) != max(n - 2, 0):
            raise EngineError(f"expected {max(n - 2, 0)} mu thresholds for {n} models, got {len(self.mu)}")
        if any(m < 1 for m in self.mu):
            raise EngineError("every mu threshold must be >= 1")
        if len({m.vocab_size for m in models}) != 1:
            raise EngineError("all chain models must share one vocabulary")

    @property
    def n(self) -> int:
        return len(self.models)

    @property
    def adjacencies(self) -> list[str]:
        return [f"{a}->{b}" for a, b in zip(self.names, self.names[1:])]


@dataclass
class DecodeTrace:
    model_names: list[str]
    F: list[int]
    block_lengths: list[list[int]]
    emitted: list[int]
    N: int
    seed: int
    sim_time: float | None = None
    speedup: float | None = None

    @property
    def adjacencies(self) -> list[str]:
        return [f"{a}->{b}" for a, b in zip(self.model_names, self.model_names[1:])]

    def attach_costs(self, costs: CostProfile) -> "DecodeTrace":
        self.sim_time, self.speedup = simulate_time(self, costs)
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "models": list(self.model_names),
            "N": self.N,
            "seed": self.seed,
            "F": {name: f for name, f in zip(self.model_names, self.F)},
            "block_lengths": {adj: list(b) for adj, b in zip(self.adjacencies, self.block_lengths)},
            "emitted": list(self.emitted),
            "sim_time": self.sim_time,
            "speedup": self.speedup,
        }


def _tail(buf: list[int], end: int, order: int) -> list[int]:
    return buf[max(0, end - order):end] if order else []


def decode_autoregressive(model: Model, params: RunParams, name: str = "M1") -> tuple[list[int], DecodeTrace]:
    rng = make_rng(params.seed)
    buf = list(params.prompt)
    for _ in range(params.N):
        buf.append(sample(model.next_distribution(_tail(buf, len(buf), model.order)), rng))
    out = buf[len(params.prompt):]
    trace = DecodeTrace([name], [params.N], [], out, params.N, params.seed)
    return out, trace


def decode_dualistic(
    target: Model,
    draft: Model,
    K: int,
    rule: VerifyRule | str,
    params: RunParams,
    bonus_enabled: bool = True,
    fallback: Fallback | str = Fallback.RESIDUAL,
    names: Sequence[str] = ("M1", "M2"),
) -> tuple[list[int], DecodeTrace]:
    """Draft ``K`` tokens, verify them with one target pass, repeat until N tokens."""
    ChainConfig((target, draft), K=K, rule=rule, names=tuple(names))  # validation only
    rng = make_rng(params.seed)
    buf = list(params.prompt)
    start = len(buf)
    F = [0, 0]
    blocks: list[int] = []
    while len(buf) - start < params.N:
        base = len(buf)
        drafts, qdists = [], []
        for _ in range(K):
            q = draft.next_distribution(_tail(buf, len(buf), draft.order))
            tok = sample(q, rng)
            qdists.append(q)
            drafts.append(tok)
            buf.append(tok)
        F[1] += K
        pdists = [target.next_distribution(_tail(buf, base + j, target.order)) for j in range(K)]
        bonus = target.next_distribution(_tail(buf, base + K, target.order)) if bonus_enabled else None
        F[0] += 1
        outcome = verify_sequence(rule, pdists, qdists, drafts, rng, bonus_dist=bonus, fallback=fallback)
        emitted = outcome.emitted(drafts)
        blocks.append(len(emitted))
        del buf[base:]
        buf.extend(emitted)
    out = buf[start:start + params.N]
    return out, DecodeTrace(list(names), F, [blocks], out, params.N, params.seed)


class _PolybasicRun:
    def __init__(self, chain: ChainConfig, params: RunParams):
        self.chain = chain
        self.rng = make_rng(params.seed)
        self.buf = list(params.prompt)
        self.F = [0] * chain.n
        self.blocks: list[list[int]] = [[] for _ in range(chain.n - 1)]

    def draft(self) -> list[np.ndarray]:
        model = self.chain.models[-1]
        qdists = []
        for _ in range(self.chain.K):
            q = model.next_distribution(_tail(self.buf, len(self.buf), model.order))
            self.buf.append(sample(q, self.rng))
            qdists.append(q)
        self.F[-1] += self.chain.K
        return qdists

    def stage(self, level: int, budget: int) -> list[np.ndarray]:
        """Run one verification event of ``models[level]``.

        On entry ``buf`` holds the committed prefix. On exit ``buf`` holds the
        prefix extended by this event's output; returns the verifier's
        distribution at each output position.
        """
        chain, buf = self.chain, self.buf
        base = len(buf)
        if level == chain.n - 2:
            qdists = self.draft()
        else:
            # flush early when the run needs fewer tokens than the threshold
            limit = min(chain.mu[level], budget)
            qdists = []
            while len(buf) - base < limit:
                qdists.extend(self.stage(level + 1, budget - (len(buf) - base)))
        block = buf[base:]
        m = len(block)
        model = chain.models[level]
        pdists = [model.next_distribution(_tail(buf, base + j, model.order)) for j in range(m)]
        bonus = model.next_distribution(_tail(buf, base + m, model.order)) if chain.bonus_enabled else None
        self.F[level] += 1
        outcome = verify_sequence(chain.rule, pdists, qdists, block, self.rng, bonus_dist=bonus, fallback=chain.fallback)
        out = outcome.emitted(block)
        out_dists = pdists[: outcome.accepted_count]
        if outcome.correction is not None:
            out_dists.append(pdists[outcome.accepted_count])
        elif outcome.bonus is not None:
            out_dists.append(bonus)
        self.blocks[level].append(len(out))
        # rollback: everything drafted past the accepted prefix is discarded
        del buf[base:]
        buf.extend(out)
        return out_dists


def decode_polybasic(chain: ChainConfig, params: RunParams) -> tuple[list[int], DecodeTrace]:
    """Staged draft-verify decoding over an n-model chain (n >= 2).

    The bottom pair runs dualistic cycles; every higher verifier accumulates the
    output of the stage below until its threshold is reached, then verifies
    the block against the recorded distributions of the model one step down.
    """
    if chain.n < 2:
        raise EngineError("polybasic decoding needs at least two models")
    run = _PolybasicRun(chain, params)
    start = len(params.prompt)
    while len(run.buf) - start < params.N:
        run.stage(0, params.N - (len(run.buf) - start))
    out = run.buf[start:start + params.N]
    trace = DecodeTrace(list(chain.names), run.F, run.blocks, out, params.N, params.seed)
    return out, trace


def decode(chain: ChainConfig, params: RunParams) -> tuple[list[int], DecodeTrace]:
    if chain.n == 1:
        return decode_autoregressive(chain.models[0], params, name=chain.names[0])
    return decode_polybasic(chain, params)


def simulate_time(trace: DecodeTrace, costs: CostProfile) -> tuple[float, float]:
    """Total ``sum(F_i * T_i)`` and the speedup over ``N`` target-only passes."""
    missing = [name for name in trace.model_names if name not in costs.T]
    if missing:
        raise EngineError(f"no cost entry for model(s): {', '.join(missing)}")
    total = sum(f * costs.T[name] for name, f in zip(trace.model_names, trace.F))
    baseline = trace.N * costs.T[trace.model_names[0]]
    return total, baseline / total
