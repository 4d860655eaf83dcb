"""Experiment configuration: JSON documents describing models, chain and runs.

See README.md for the schema. Every problem is reported as a ``ConfigError``
naming the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .engine import ChainConfig, EngineError, RunParams
from .model import (
    DEFAULT_SMOOTHING,
    DEFAULT_TEMPERATURE,
    Model,
    ModelError,
    TableModel,
    build_ngram,
    degrade,
    make_rng,
)
from .planner import CostProfile, PlanError
from .verify import Fallback, VerifyError, VerifyRule

BOS_KEY = "<s>"


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Vocabulary:
    size: int
    chars: str | None = None

    def encode(self, text: str, field: str) -> list[int]:
        if self.chars is None:
            raise ConfigError(field, "character input needs a character vocabulary ('vocab' as a string)")
        index = {c: i for i, c in enumerate(self.chars)}
        out = []
        for c in text:
            if c.isspace():
                continue
            if c not in index:
                raise ConfigError(field, f"character {c!r} is not in the vocabulary")
            out.append(index[c])
        return out

    def decode(self, tokens) -> str | None:
        if self.chars is None:
            return None
        return "".join(self.chars[t] for t in tokens)


@dataclass(frozen=True)
class ExperimentConfig:
    vocab: Vocabulary
    models: Mapping[str, Model]
    chain: ChainConfig
    costs: CostProfile | None
    N: int
    prompt: tuple[int, ...] | None
    prompt_corpus: tuple[int, ...] | None
    prompt_length: int
    seeds: tuple[int, ...]

    def run_params(self, seed: int, N: int | None = None) -> RunParams:
        return RunParams(self.prompt_for(seed), N if N is not None else self.N, seed)

    def prompt_for(self, seed: int) -> tuple[int, ...]:
        """Inline prompt, or a seed-selected window of the prompt corpus."""
        if self.prompt_corpus is None:
            return self.prompt or ()
        corpus = self.prompt_corpus
        length = min(self.prompt_length, len(corpus))
        start = int(make_rng(seed ^ 0x5EED).integers(0, len(corpus) - length + 1))
        return tuple(corpus[start:start + length])

    def with_rule(self, rule: str | VerifyRule) -> "ExperimentConfig":
        c = self.chain
        chain = ChainConfig(c.models, c.K, c.mu, rule, c.bonus_enabled, c.fallback, c.names)
        return ExperimentConfig(
            self.vocab, self.models, chain, self.costs, self.N, self.prompt,
            self.prompt_corpus, self.prompt_length, self.seeds,
        )


def _req(doc: Mapping, key: str, field: str) -> Any:
    if not isinstance(doc, Mapping):
        raise ConfigError(field, "expected a JSON object")
    if key not in doc:
        raise ConfigError(f"{field}.{key}" if field else key, "missing required field")
    return doc[key]


def _int(value: Any, field: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value}")
    return value


def _num(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    return float(value)


def _tokens(value: Any, vocab: Vocabulary, field: str) -> list[int]:
    if isinstance(value, str):
        return vocab.encode(value, field)
    if not isinstance(value, list):
        raise ConfigError(field, "expected a token list or a string")
    toks = [_int(t, f"{field}[{i}]", 0) for i, t in enumerate(value)]
    for i, t in enumerate(toks):
        if t >= vocab.size:
            raise ConfigError(f"{field}[{i}]", f"token {t} outside vocabulary of size {vocab.size}")
    return toks


def _read_corpus(path_value: Any, base: Path, vocab: Vocabulary, field: str) -> list[int]:
    if not isinstance(path_value, str):
        raise ConfigError(field, "expected a file path")
    path = (base / path_value) if not Path(path_value).is_absolute() else Path(path_value)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(field, f"cannot read {path}: {exc.strerror}") from None
    return vocab.encode(text, field)


def _table_key(key: str, order: int, vocab: Vocabulary, field: str) -> tuple[int, ...]:
    if key == "":
        parts: list[str] = []
    else:
        parts = [p.strip() for p in key.split(",")]
    out = []
    for part in parts:
        if part == BOS_KEY:
            out.append(vocab.size)
        elif part.lstrip("-").isdigit():
            out.append(int(part))
        elif vocab.chars is not None and len(part) == 1 and part in vocab.chars:
            out.append(vocab.chars.index(part))
        else:
            raise ConfigError(field, f"cannot parse context token {part!r}")
    if len(out) != order:
        raise ConfigError(field, f"context {key!r} has {len(out)} tokens, order is {order}")
    return tuple(out)


def build_model(name: str, spec: Mapping, built: dict[str, Model], specs: Mapping, vocab: Vocabulary, base: Path, stack=()) -> Model:
    field = f"models.{name}"
    if name in built:
        return built[name]
    if name in stack:
        raise ConfigError(field, "circular 'base' reference")
    kind = _req(spec, "type", field)
    try:
        if kind == "table":
            order = _int(spec.get("order", 0), f"{field}.order", 0)
            table_doc = _req(spec, "table", field)
            if not isinstance(table_doc, Mapping):
                raise ConfigError(f"{field}.table", "expected an object mapping contexts to distributions")
            table = {
                _table_key(k, order, vocab, f"{field}.table.{k}"): v for k, v in table_doc.items()
            }
            model = TableModel(vocab.size, order, table, spec.get("default"))
        elif kind == "ngram":
            order = _int(spec.get("order", 1), f"{field}.order", 0)
            smoothing = _num(spec.get("smoothing", DEFAULT_SMOOTHING), f"{field}.smoothing")
            temperature = _num(spec.get("temperature", DEFAULT_TEMPERATURE), f"{field}.temperature")
            if "corpus_file" in spec:
                corpus = _read_corpus(spec["corpus_file"], base, vocab, f"{field}.corpus_file")
            else:
                corpus = _tokens(spec.get("corpus", []), vocab, f"{field}.corpus")
            model = build_ngram(corpus, vocab.size, order, smoothing, temperature)
        elif kind == "degraded":
            parent = _req(spec, "base", field)
            if parent not in specs:
                raise ConfigError(f"{field}.base", f"unknown model {parent!r}")
            base_model = build_model(parent, specs[parent], built, specs, vocab, base, stack + (name,))
            model = degrade(base_model, _num(_req(spec, "epsilon", field), f"{field}.epsilon"))
        else:
            raise ConfigError(f"{field}.type", f"unknown model type {kind!r}")
    except ModelError as exc:
        raise ConfigError(field, str(exc)) from None
    built[name] = model
    return model


def parse_config(doc: Mapping, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("<root>", "expected a JSON object")
    vocab_doc = _req(doc, "vocab", "")
    if isinstance(vocab_doc, str):
        if not vocab_doc or len(set(vocab_doc)) != len(vocab_doc):
            raise ConfigError("vocab", "character vocabulary must be non-empty with unique characters")
        vocab = Vocabulary(len(vocab_doc), vocab_doc)
    else:
        vocab = Vocabulary(_int(vocab_doc, "vocab", 1))

    specs = _req(doc, "models", "")
    if not isinstance(specs, Mapping) or not specs:
        raise ConfigError("models", "expected a non-empty object")
    built: dict[str, Model] = {}
    for name, spec in specs.items():
        build_model(name, spec, built, specs, vocab, base)

    chain_doc = _req(doc, "chain", "")
    names = _req(chain_doc, "models", "chain")
    if not isinstance(names, list) or not names:
        raise ConfigError("chain.models", "expected a non-empty list of model names")
    for i, nm in enumerate(names):
        if nm not in built:
            raise ConfigError(f"chain.models[{i}]", f"unknown model {nm!r}")
    K = _int(chain_doc.get("K", 4), "chain.K", 1)
    mu = chain_doc.get("mu", [])
    if isinstance(mu, int) and not isinstance(mu, bool):
        mu = [mu] * max(len(names) - 2, 0)
    if not isinstance(mu, list):
        raise ConfigError("chain.mu", "expected an integer or a list of integers")
    mu = [_int(m, f"chain.mu[{i}]", 1) for i, m in enumerate(mu)]
    if len(mu) != max(len(names) - 2, 0):
        raise ConfigError("chain.mu", f"expected {max(len(names) - 2, 0)} thresholds for {len(names)} models")
    bonus = chain_doc.get("bonus", True)
    if not isinstance(bonus, bool):
        raise ConfigError("chain.bonus", "expected true or false")
    try:
        rule = VerifyRule.parse(chain_doc.get("rule", "speculative"))
    except VerifyError as exc:
        raise ConfigError("chain.rule", str(exc)) from None
    try:
        fallback = Fallback(chain_doc.get("fallback", "residual"))
    except ValueError:
        raise ConfigError("chain.fallback", "expected 'residual' or 'greedy'") from None
    try:
        chain = ChainConfig(tuple(built[n] for n in names), K, tuple(mu), rule, bonus, fallback, tuple(names))
    except EngineError as exc:
        raise ConfigError("chain", str(exc)) from None

    costs = None
    if "costs_ms" in doc:
        costs_doc = doc["costs_ms"]
        if not isinstance(costs_doc, Mapping):
            raise ConfigError("costs_ms", "expected an object mapping model names to milliseconds")
        T = {str(k): _num(v, f"costs_ms.{k}") for k, v in costs_doc.items()}
        for nm in names:
            if nm not in T:
                raise ConfigError(f"costs_ms.{nm}", "missing cost for chain model")
        beta = doc.get("beta")
        if isinstance(beta, Mapping):
            beta = {str(k): _num(v, f"beta.{k}") for k, v in beta.items()}
        elif beta is not None:
            beta = _num(beta, "beta")
        try:
            costs = CostProfile(T, beta)
        except PlanError as exc:
            raise ConfigError("costs_ms", str(exc)) from None

    run = doc.get("run", {})
    if not isinstance(run, Mapping):
        raise ConfigError("run", "expected an object")
    N = _int(run.get("N", 100), "run.N", 1)
    prompt = None
    prompt_corpus = None
    if "prompt_file" in run:
        prompt_corpus = tuple(_read_corpus(run["prompt_file"], base, vocab, "run.prompt_file"))
        if not prompt_corpus:
            raise ConfigError("run.prompt_file", "prompt corpus is empty")
    elif "prompt" in run:
        prompt = tuple(_tokens(run["prompt"], vocab, "run.prompt"))
    prompt_length = _int(run.get("prompt_length", 8), "run.prompt_length", 0)
    seeds_doc = run.get("seeds", [0])
    if not isinstance(seeds_doc, list) or not seeds_doc:
        raise ConfigError("run.seeds", "expected a non-empty list of integers")
    seeds = tuple(_int(s, f"run.seeds[{i}]", 0) for i, s in enumerate(seeds_doc))
    return ExperimentConfig(vocab, built, chain, costs, N, prompt, prompt_corpus, prompt_length, seeds)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
    return parse_config(doc, path.parent)
