"""Analytical chain-time model, insertion criterion, beta estimation and chain search."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

PLAN_SCHEMA_VERSION = 1


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class CostProfile:
    """Per-model forward-pass times plus the drafting factor beta.

    ``beta`` is either one global value or a mapping keyed by the name of the
    bottom drafter of a chain; ``None`` means "use the chain's draft length K".
    """

    T: Mapping[str, float]
    beta: float | Mapping[str, float] | None = None

    def __post_init__(self):
        for name, t in self.T.items():
            if not t > 0:
                raise PlanError(f"cost of {name!r} must be positive, got {t}")
        betas = self.beta.values() if isinstance(self.beta, Mapping) else [self.beta]
        for b in betas:
            if b is not None and not b > 0:
                raise PlanError(f"beta must be positive, got {b}")

    def beta_for(self, bottom: str, default: float | None = None) -> float:
        if isinstance(self.beta, Mapping):
            beta = self.beta.get(bottom, default)
        else:
            beta = self.beta if self.beta is not None else default
        if beta is None:
            raise PlanError(f"no beta configured for bottom drafter {bottom!r}")
        return float(beta)

    def cost(self, name: str) -> float:
        try:
            return float(self.T[name])
        except KeyError:
            raise PlanError(f"no cost entry for model {name!r}") from None


@dataclass(frozen=True)
class AcceptanceProfile:
    """``L[(i, j)]``: mean tokens emitted when model i verifies proposals from j."""

    L: Mapping[tuple[str, str], float]

    def __post_init__(self):
        for (i, j), v in self.L.items():
            if not v >= 1:
                raise PlanError(f"acceptance length {i}->{j} must be >= 1, got {v}")

    def get(self, verifier: str, proposer: str) -> float:
        try:
            return float(self.L[(verifier, proposer)])
        except KeyError:
            raise PlanError(f"acceptance profile has no entry {verifier}->{proposer}") from None

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.L


def load_profiles(doc: Mapping) -> tuple[CostProfile, AcceptanceProfile]:
    """Parse ``{"costs_ms": {...}, "beta": x, "acceptance": {"i->j": L}}``."""
    for key in ("costs_ms", "acceptance"):
        if key not in doc:
            raise PlanError(f"profile is missing field {key!r}")
    try:
        T = {str(k): float(v) for k, v in doc["costs_ms"].items()}
        beta = doc.get("beta")
        if isinstance(beta, Mapping):
            beta = {str(k): float(v) for k, v in beta.items()}
        elif beta is not None:
            beta = float(beta)
        L = {}
        for key, v in doc["acceptance"].items():
            i, sep, j = str(key).partition("->")
            if not sep or not i or not j:
                raise PlanError(f"acceptance key {key!r} is not of the form 'i->j'")
            L[(i.strip(), j.strip())] = float(v)
    except (AttributeError, TypeError, ValueError) as exc:
        if isinstance(exc, PlanError):
            raise
        raise PlanError(f"malformed profile: {exc}") from None
    return CostProfile(T, beta), AcceptanceProfile(L)


def predicted_time(
    costs: CostProfile,
    acceptance: AcceptanceProfile,
    N: float,
    chain: Sequence[str],
    beta: float | None = None,
) -> float:
    """Time decomposition for an n-model chain (n >= 2).

    Each verifier i runs N / L_i passes with L_i = L[chain[i]][chain[i+1]]; the
    bottom drafter runs beta passes per bottom verification event.
    """
    if len(chain) < 2:
        raise PlanError("predicted_time needs a chain of at least two models")
    if beta is None:
        beta = costs.beta_for(chain[-1])
    total = 0.0
    for upper, lower in zip(chain, chain[1:]):
        total += N / acceptance.get(upper, lower) * costs.cost(upper)
    total += beta * N / acceptance.get(chain[-2], chain[-1]) * costs.cost(chain[-1])
    return total


@dataclass(frozen=True)
class InsertionQuery:
    T_i: float
    T_new: float
    T_next: float
    L_i: float
    L_i_new: float
    L_new: float
    beta: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise PlanError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class PlanReport:
    decision: str
    condition_1: float
    threshold_1: float
    condition_2: float
    threshold_2: float
    # the sufficiency argument assumes L_i_new >= L_i and L_new >= L_i
    premises_hold: bool
    predicted_T: float | None = None
    predicted_speedup: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def margin_1(self) -> float:
        return self.condition_1 - self.threshold_1

    @property
    def margin_2(self) -> float:
        return self.condition_2 - self.threshold_2

    @property
    def insert(self) -> bool:
        return self.decision == "insert"

    def to_dict(self) -> dict:
        doc = {
            "schema_version": PLAN_SCHEMA_VERSION,
            "decision": self.decision,
            "condition_1": {"value": self.condition_1, "threshold": self.threshold_1, "margin": self.margin_1},
            "condition_2": {"value": self.condition_2, "threshold": self.threshold_2, "margin": self.margin_2},
            "premises_hold": self.premises_hold,
            "predicted_T": self.predicted_T,
            "predicted_speedup": self.predicted_speedup,
        }
        doc.update(self.extra)
        return doc


def insertion_gain(q: InsertionQuery) -> PlanReport:
    """Check both sufficient conditions for inserting a model between M_i and M_next.

    Condition 1 compares T_new / T_i with L_new * (1/L_i - 1/L_i_new); condition 2
    compares T_new / T_next with beta * (L_new / L_i - 1). Either holding
    strictly means insert.
    """
    c1 = q.T_new / q.T_i
    t1 = q.L_new * (1.0 / q.L_i - 1.0 / q.L_i_new)
    c2 = q.T_new / q.T_next
    t2 = q.beta * (q.L_new / q.L_i - 1.0)
    decision = "insert" if (c1 < t1 or c2 < t2) else "reject"
    return PlanReport(
        decision=decision,
        condition_1=c1,
        threshold_1=t1,
        condition_2=c2,
        threshold_2=t2,
        premises_hold=q.L_i_new >= q.L_i and q.L_new >= q.L_i,
    )


def insertion_query(
    costs: CostProfile,
    acceptance: AcceptanceProfile,
    target: str,
    new: str,
    drafter: str,
    beta: float | None = None,
) -> InsertionQuery:
    return InsertionQuery(
        T_i=costs.cost(target),
        T_new=costs.cost(new),
        T_next=costs.cost(drafter),
        L_i=acceptance.get(target, drafter),
        L_i_new=acceptance.get(target, new),
        L_new=acceptance.get(new, drafter),
        beta=beta if beta is not None else costs.beta_for(drafter),
    )


def estimate_beta(trace) -> float:
    """Bottom-drafter passes per bottom verification event, scaled to N.

    Returns ``F_n * mean_bottom_block / N``: the beta that makes the last term
    of the time decomposition exact for this trace.
    """
    if len(trace.F) < 2 or not trace.block_lengths or not trace.block_lengths[-1]:
        raise PlanError("estimate_beta needs a trace with at least one drafter verification event")
    if trace.F[-1] == 0:
        raise PlanError("trace has no drafter forward passes")
    bottom = trace.block_lengths[-1]
    mean_block = sum(bottom) / len(bottom)
    return trace.F[-1] * mean_block / trace.N


@dataclass(frozen=True)
class ChainPlan:
    chain: tuple[str, ...]
    predicted_T: float
    predicted_speedup: float
    scores: dict[str, float]
    skipped: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "chain": list(self.chain),
            "predicted_T": self.predicted_T,
            "predicted_speedup": self.predicted_speedup,
            "scores": dict(self.scores),
            "skipped": list(self.skipped),
        }


def optimize_chain(
    candidates: Iterable[str],
    costs: CostProfile,
    acceptance: AcceptanceProfile,
    N: float,
    target: str,
    default_beta: float | None = None,
    max_candidates: int = 8,
) -> ChainPlan:
    """Exhaustive search over ordered drafter sub-chains below a fixed target.

    Orderings that need an inter-drafter acceptance entry the profile lacks
    are skipped and listed; a missing target->drafter entry is an error.
    Ties prefer fewer models.
    """
    cands = sorted(set(candidates))
    if target not in cands:
        raise PlanError(f"target {target!r} is not among the candidates")
    if len(cands) > max_candidates:
        raise PlanError(f"at most {max_candidates} candidates supported, got {len(cands)}")
    drafters = [c for c in cands if c != target]
    for d in drafters:
        acceptance.get(target, d)
    T1 = costs.cost(target)
    scores = {target: N * T1}
    skipped = []
    best = ((N * T1, 1), (target,))
    for k in range(1, len(drafters) + 1):
        for perm in itertools.permutations(drafters, k):
            chain = (target,) + perm
            label = "->".join(chain)
            if any((a, b) not in acceptance for a, b in zip(chain, chain[1:])):
                skipped.append(label)
                continue
            t = predicted_time(costs, acceptance, N, chain, beta=costs.beta_for(chain[-1], default_beta))
            scores[label] = t
            if (t, len(chain)) < best[0]:
                best = ((t, len(chain)), chain)
    (best_t, _), chain = best
    return ChainPlan(chain, best_t, N * T1 / best_t, scores, tuple(skipped))


def plan_document(doc: Mapping) -> dict:
    """Full plan report for a profile with an ``insertion`` triple.

    ``insertion`` names ``target``, ``new`` and ``drafter``; ``N`` defaults to 1
    so predicted times are per token.
    """
    costs, acceptance = load_profiles(doc)
    ins = doc.get("insertion")
    if not isinstance(ins, Mapping):
        raise PlanError("profile is missing field 'insertion'")
    try:
        target, new, drafter = (str(ins[k]) for k in ("target", "new", "drafter"))
    except KeyError as exc:
        raise PlanError(f"profile is missing field 'insertion.{exc.args[0]}'") from None
    N = float(doc.get("N", 1))
    if not N > 0:
        raise PlanError("N must be positive")
    q = insertion_query(costs, acceptance, target, new, drafter, beta=costs.beta_for(drafter, doc.get("K")))
    report = insertion_gain(q)
    two = predicted_time(costs, acceptance, N, (target, drafter), beta=q.beta)
    three = predicted_time(costs, acceptance, N, (target, new, drafter), beta=q.beta)
    best = optimize_chain(costs.T.keys(), costs, acceptance, N, target, default_beta=q.beta)
    base = N * costs.cost(target)
    chosen = three if report.insert else two
    out = PlanReport(
        decision=report.decision,
        condition_1=report.condition_1,
        threshold_1=report.threshold_1,
        condition_2=report.condition_2,
        threshold_2=report.threshold_2,
        premises_hold=report.premises_hold,
        predicted_T=chosen,
        predicted_speedup=base / chosen,
        extra={
            "N": N,
            "beta": q.beta,
            "chain_2": {"chain": [target, drafter], "predicted_T": two, "predicted_speedup": base / two},
            "chain_3": {"chain": [target, new, drafter], "predicted_T": three, "predicted_speedup": base / three},
            "optimal_chain": best.to_dict(),
        },
    )
    return out.to_dict()


def dumps(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
