"""``polyspec`` command-line harness.

Exit codes: 0 success, 1 validation-suite failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .engine import EngineError, decode
from .harness import dumps, fmt, run_bench, run_validation, variance_comparison
from .planner import PlanError, plan_document
from .stats import STATS_COLUMNS, StatsError, comparison_row
from .verify import VerifyError, VerifyRule

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write(path: str | Path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def parse_seeds(text: str) -> list[int]:
    """``"1..50"``, ``"1,2,7"`` or a mix such as ``"1..3,9"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                if hi < lo:
                    raise UsageError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"cannot parse seed list {text!r}") from None
    if not seeds:
        raise UsageError("at least one seed is required")
    if any(s < 0 for s in seeds):
        raise UsageError("seeds must be non-negative")
    return seeds


def cmd_decode(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    params = config.run_params(seed, args.n)
    tokens, trace = decode(config.chain, params)
    if config.costs is not None:
        trace.attach_costs(config.costs)
    doc = trace.to_dict()
    doc["prompt"] = list(params.prompt)
    text = config.vocab.decode(tokens)
    if text is not None:
        doc["text"] = text
    if args.out:
        _write(args.out, dumps(doc))
    print(text if text is not None else " ".join(map(str, tokens)))
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_config(args.config)
    seeds = parse_seeds(args.seeds) if args.seeds else list(config.seeds)
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    if not rules:
        raise UsageError("at least one rule is required")
    for r in rules:
        VerifyRule.parse(r)
    if len(set(rules)) != len(rules):
        raise UsageError("duplicate rule in --rules")
    report = run_bench(config, seeds, rules)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "bench.csv", report.to_csv())
    doc = report.to_dict()
    doc["seeds"] = seeds
    doc["rules"] = rules
    doc["variance_comparison"] = variance_comparison(report, config.chain)
    _write(out / "bench.json", dumps(doc))
    top = config.chain.adjacencies[0] if config.chain.n > 1 else None
    for rule in rules:
        agg = report.aggregates[rule]
        line = f"{rule:>14}: speedup {fmt(agg['speedup_mean'])}"
        if top:
            acc = agg[f"acc_{top}"]
            line += f"  {top} mean {fmt(acc['pooled_mean'])} var {fmt(acc['pooled_variance'])}"
        print(line)
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        doc = json.loads(Path(args.profile).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {args.profile}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {args.profile}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("profile must be a JSON object")
    report = plan_document(doc)
    if args.out:
        _write(args.out, dumps(report))
    c1 = report["condition_1"]
    c2 = report["condition_2"]
    print(f"decision: {report['decision']}")
    print(f"condition 1: {c1['value']:.3f} vs {c1['threshold']:.3f}")
    print(f"condition 2: {c2['value']:.3f} vs {c2['threshold']:.3f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    row = comparison_row(args.p, args.n, args.trials, args.seed)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STATS_COLUMNS)
    writer.writerow([fmt(row[c]) for c in STATS_COLUMNS])
    if args.out:
        _write(args.out, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_validate(args) -> int:
    ok, doc, items = run_validation()
    if args.out:
        _write(args.out, dumps(doc))
    for item in items:
        print(f"[{'PASS' if item.passed else 'FAIL'}] {item.name} ({item.seconds:.1f}s)")
    print("all items passed" if ok else "validation FAILED")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="run one decode and write its trace")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, default=None, help="tokens to emit (default: run.N)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="paired runs over seeds and verification rules")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", help="e.g. 1..50 or 1,2,3 (default: run.seeds)")
    p.add_argument("--rules", default="speculative,greedy")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plan", help="evaluate the model-insertion criterion")
    p.add_argument("--profile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("stats", help="acceptance-length moment comparison row")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", help="run the bundled reproduction suite")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n", None) is not None and args.n < 1:
        parser.error("--n must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, UsageError, PlanError, StatsError, EngineError, VerifyError) as exc:
        print(f"polyspec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"polyspec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
