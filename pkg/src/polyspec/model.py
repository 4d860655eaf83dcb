"""Next-token distribution interface and deterministic desk-scale models.

A distribution is a read-only float64 numpy vector over the vocabulary. Models
are immutable once built and may be shared between concurrent decode jobs.
"""

from __future__ import annotations

import abc
from collections import Counter, defaultdict
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SMOOTHING = 0.1
DEFAULT_TEMPERATURE = 1.0
NORM_ATOL = 1e-12


class ModelError(ValueError):
    """Bad model construction or query input."""


def make_distribution(probs: Iterable[float]) -> np.ndarray:
    """Validate, renormalize and freeze a probability vector."""
    arr = np.array(list(probs) if not isinstance(probs, np.ndarray) else probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ModelError("distribution must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ModelError("distribution entries must be finite and non-negative")
    total = arr.sum()
    if total <= 0:
        raise ModelError("distribution has zero total mass")
    arr = arr / total
    arr.flags.writeable = False
    return arr


def is_distribution(probs: np.ndarray, atol: float = NORM_ATOL) -> bool:
    probs = np.asarray(probs)
    return (
        probs.ndim == 1
        and probs.size > 0
        and bool(np.all(probs >= 0))
        and abs(float(probs.sum()) - 1.0) <= atol
    )


def uniform(vocab_size: int) -> np.ndarray:
    return make_distribution(np.ones(vocab_size))


class Model(abc.ABC):
    """Pure next-token predictor over ``range(vocab_size)``.

    Contexts shorter than ``order`` are left-padded with ``bos``, a reserved id
    equal to ``vocab_size`` that never appears in generated output.
    """

    vocab_size: int
    order: int

    @property
    def bos(self) -> int:
        return self.vocab_size

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        return self._distribution(self._key(context))

    def _key(self, context: Sequence[int]) -> tuple[int, ...]:
        for tok in context:
            if not 0 <= tok < self.vocab_size:
                raise ModelError(f"token id {tok} outside vocabulary of size {self.vocab_size}")
        if self.order == 0:
            return ()
        tail = tuple(context[-self.order:])
        if len(tail) < self.order:
            tail = (self.bos,) * (self.order - len(tail)) + tail
        return tail

    @abc.abstractmethod
    def _distribution(self, key: tuple[int, ...]) -> np.ndarray:
        """Distribution for an already padded length-``order`` context key."""


class TableModel(Model):
    def __init__(
        self,
        vocab_size: int,
        order: int,
        table: Mapping[tuple[int, ...], Iterable[float]],
        default: Iterable[float] | None = None,
    ):
        if vocab_size < 1:
            raise ModelError("empty vocabulary")
        if order < 0:
            raise ModelError("order must be >= 0")
        self.vocab_size = vocab_size
        self.order = order
        self._table: dict[tuple[int, ...], np.ndarray] = {}
        for key, probs in table.items():
            key = tuple(key)
            if len(key) != order:
                raise ModelError(f"table key {key} does not have length {order}")
            if any(not 0 <= t <= vocab_size for t in key):
                raise ModelError(f"table key {key} has out-of-range token")
            self._table[key] = self._check(probs)
        self._default = self._check(default) if default is not None else uniform(vocab_size)

    def _check(self, probs: Iterable[float]) -> np.ndarray:
        dist = make_distribution(probs)
        if dist.size != self.vocab_size:
            raise ModelError(f"distribution length {dist.size} != vocabulary size {self.vocab_size}")
        return dist

    def _distribution(self, key):
        return self._table.get(key, self._default)

    def __repr__(self) -> str:
        return f"TableModel(vocab_size={self.vocab_size}, order={self.order}, entries={len(self._table)})"


def point_mass(vocab_size: int, token: int) -> TableModel:
    probs = np.zeros(vocab_size)
    probs[token] = 1.0
    return TableModel(vocab_size, 0, {(): probs})


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Normalized ``probs ** (1 / temperature)``."""
    if temperature <= 0:
        raise ModelError("temperature must be positive")
    if temperature == 1.0:
        return make_distribution(probs)
    # log-space keeps large temperatures from underflowing small entries
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(probs, dtype=np.float64)) / temperature
    logp -= logp.max()
    return make_distribution(np.exp(logp))


class NGramModel(Model):
    """Add-lambda smoothed count model with temperature.

    Unseen contexts with ``smoothing == 0`` fall back to the uniform distribution.
    """

    def __init__(
        self,
        vocab_size: int,
        order: int,
        counts: Mapping[tuple[int, ...], Counter],
        smoothing: float = DEFAULT_SMOOTHING,
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        self.vocab_size = vocab_size
        self.order = order
        self.smoothing = smoothing
        self.temperature = temperature
        self._counts = {k: dict(v) for k, v in counts.items()}
        self._cache: dict[tuple[int, ...], np.ndarray] = {}
        self._fallback = apply_temperature(self._smoothed(()), temperature) if order == 0 else None

    def _smoothed(self, key) -> np.ndarray:
        row = np.full(self.vocab_size, float(self.smoothing))
        for tok, c in self._counts.get(key, {}).items():
            row[tok] += c
        if row.sum() == 0:
            row[:] = 1.0
        return row

    def _distribution(self, key):
        if self._fallback is not None:
            return self._fallback
        dist = self._cache.get(key)
        if dist is None:
            dist = apply_temperature(make_distribution(self._smoothed(key)), self.temperature)
            self._cache[key] = dist
        return dist

    def __repr__(self) -> str:
        return (
            f"NGramModel(vocab_size={self.vocab_size}, order={self.order}, "
            f"smoothing={self.smoothing}, temperature={self.temperature})"
        )


def build_ngram(
    corpus: Sequence[int],
    vocab_size: int,
    order: int,
    smoothing: float = DEFAULT_SMOOTHING,
    temperature: float = DEFAULT_TEMPERATURE,
) -> NGramModel:
    """Count ``order``-token contexts over ``corpus`` (BOS-padded at the start)."""
    if vocab_size < 1:
        raise ModelError("empty vocabulary")
    if order < 0:
        raise ModelError("order must be >= 0")
    if smoothing < 0:
        raise ModelError("smoothing must be >= 0")
    if temperature <= 0:
        raise ModelError("temperature must be positive")
    bos = vocab_size
    for tok in corpus:
        if not 0 <= tok < vocab_size:
            raise ModelError(f"corpus token {tok} outside vocabulary of size {vocab_size}")
    padded = [bos] * order + list(corpus)
    counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
    for i in range(order, len(padded)):
        counts[tuple(padded[i - order:i])][padded[i]] += 1
    return NGramModel(vocab_size, order, counts, smoothing, temperature)


class DegradedModel(Model):
    """``(1 - epsilon) * base + epsilon * uniform`` for every context."""

    def __init__(self, base: Model, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise ModelError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.base = base
        self.epsilon = float(epsilon)
        self.vocab_size = base.vocab_size
        self.order = base.order
        self._uniform = uniform(base.vocab_size)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _distribution(self, key):
        base = self.base._distribution(key)
        if self.epsilon == 0.0:
            return base
        dist = self._cache.get(key)
        if dist is None:
            dist = make_distribution((1.0 - self.epsilon) * base + self.epsilon * self._uniform)
            self._cache[key] = dist
        return dist

    def __repr__(self) -> str:
        return f"DegradedModel({self.base!r}, epsilon={self.epsilon})"


def degrade(base: Model, epsilon: float) -> DegradedModel:
    return DegradedModel(base, epsilon)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) stream; one per decode run."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from ``dist``; consumes exactly one uniform."""
    cdf = np.cumsum(dist)
    if not abs(cdf[-1] - 1.0) <= 1e-9 or dist.min() < 0.0:
        raise RuntimeError("sample() called with an invalid distribution")
    idx = int(cdf.searchsorted(rng.random(), side="right"))
    if idx >= dist.size or dist[idx] == 0.0:
        # u landed past cdf[-1] through rounding
        idx = int(np.flatnonzero(dist)[-1])
    return idx
