"""Token-level verification: lossless speculative sampling and greedy matching."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import sample


class VerifyError(ValueError):
    pass


class VerifyRule(str, enum.Enum):
    SPECULATIVE = "speculative"
    GREEDY = "greedy"
    # all-or-nothing block check with a one-token fallback; not lossless
    ALL_OR_NOTHING = "all_or_nothing"

    @classmethod
    def parse(cls, value: "str | VerifyRule") -> "VerifyRule":
        try:
            return cls(value)
        except ValueError:
            raise VerifyError(
                f"unknown verification rule {value!r}; expected one of {[r.value for r in cls]}"
            ) from None


class Fallback(str, enum.Enum):
    """Token emitted by the all-or-nothing rule when a block is rejected."""

    RESIDUAL = "residual"
    GREEDY = "greedy"


@dataclass(frozen=True)
class VerifyOutcome:
    accepted_count: int
    correction: int | None = None
    bonus: int | None = None

    def __post_init__(self):
        if self.correction is not None and self.bonus is not None:
            raise VerifyError("an outcome cannot carry both a correction and a bonus token")

    def emitted(self, tokens: Sequence[int]) -> list[int]:
        out = list(tokens[: self.accepted_count])
        if self.correction is not None:
            out.append(self.correction)
        elif self.bonus is not None:
            out.append(self.bonus)
        return out


def spec_accept_prob(p_target: np.ndarray, p_draft: np.ndarray, token: int) -> float:
    q = p_draft[token]
    if q <= 0.0:
        raise VerifyError(f"draft probability of token {token} is zero")
    p = p_target[token]
    return 1.0 if p >= q else float(p / q)


def residual_distribution(p_target: np.ndarray, p_draft: np.ndarray) -> np.ndarray:
    """Normalized positive part of ``p_target - p_draft``."""
    resid = np.maximum(0.0, np.asarray(p_target) - np.asarray(p_draft))
    mass = resid.sum()
    if mass <= 0.0:
        raise VerifyError("residual distribution is undefined: target equals draft")
    resid /= mass
    return resid


def _correction_dist(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # the residual can round to zero mass (e.g. q carries a 1e-200 entry)
    try:
        return residual_distribution(p, q)
    except VerifyError:
        return p


def greedy_token(dist: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest token id on ties
    return int(np.argmax(dist))


def verify_sequence(
    rule: VerifyRule | str,
    verifier_dists: Sequence[np.ndarray],
    proposal_dists: Sequence[np.ndarray],
    tokens: Sequence[int],
    rng: np.random.Generator,
    bonus_dist: np.ndarray | None = None,
    fallback: Fallback | str = Fallback.RESIDUAL,
) -> VerifyOutcome:
    """Verify ``tokens`` left to right against the verifier.

    ``verifier_dists[j]`` conditions on the prefix extended by ``tokens[:j]``.
    A bonus token is drawn from ``bonus_dist`` when every proposal is accepted
    and ``bonus_dist`` is given.

    The speculative rule draws one uniform per examined position, plus one for
    the correction or bonus token.
    """
    rule = VerifyRule.parse(rule)
    m = len(tokens)
    if m < 1 or len(verifier_dists) != m or len(proposal_dists) != m:
        raise VerifyError(
            f"length mismatch: {len(verifier_dists)} verifier, {len(proposal_dists)} proposal, {m} tokens"
        )

    if rule is VerifyRule.GREEDY:
        for j, tok in enumerate(tokens):
            best = greedy_token(verifier_dists[j])
            if tok != best:
                return VerifyOutcome(j, correction=best)
        bonus = greedy_token(bonus_dist) if bonus_dist is not None else None
        return VerifyOutcome(m, bonus=bonus)

    if rule is VerifyRule.SPECULATIVE:
        for j, tok in enumerate(tokens):
            p, q = verifier_dists[j], proposal_dists[j]
            if rng.random() >= spec_accept_prob(p, q, tok):
                return VerifyOutcome(j, correction=sample(_correction_dist(p, q), rng))
        bonus = sample(bonus_dist, rng) if bonus_dist is not None else None
        return VerifyOutcome(m, bonus=bonus)

    # all-or-nothing: every position runs the speculative test, any rejection
    # collapses the block to one fallback token at the first position
    rejected = False
    for j, tok in enumerate(tokens):
        if rng.random() >= spec_accept_prob(verifier_dists[j], proposal_dists[j], tok):
            rejected = True
    if not rejected:
        bonus = sample(bonus_dist, rng) if bonus_dist is not None else None
        return VerifyOutcome(m, bonus=bonus)
    p, q = verifier_dists[0], proposal_dists[0]
    if Fallback(fallback) is Fallback.GREEDY:
        return VerifyOutcome(0, correction=greedy_token(p))
    return VerifyOutcome(0, correction=sample(_correction_dist(p, q), rng))
