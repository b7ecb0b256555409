"""Command-line harness: ``stochsewing run|list|describe``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .averaging import NumericalAbort
from .experiments import REGISTRY, Context, Experiment, Outcome
from .sewing import json_safe
from .young import BlowUp

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "STOCHSEWING_WORKERS"
TOP_KEYS = {"experiment", "seed", "n_paths", "output_dir", "m_orders", "params", "thresholds"}


class ConfigError(ValueError):
    pass


def _coerce(default, value, key):
    if isinstance(default, bool) or default is None:
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return value


def _merge(defaults: dict, given: dict, section: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    for k, v in given.items():
        out[k] = _coerce(defaults[k], v, f"{section}.{k}")
    return out


def parse_config(text: str, seed_override: int | None = None) -> tuple[Experiment, Context, str]:
    """Validate a TOML config; returns (experiment, context, output_dir)."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    name = raw.get("experiment")
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; see `stochsewing list`")
    exp = REGISTRY[name]
    seed = raw.get("seed") if seed_override is None else seed_override
    if seed is None:
        raise ConfigError("seed is required")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    n_paths = raw.get("n_paths", exp.n_paths)
    if not isinstance(n_paths, int) or n_paths < 1:
        raise ConfigError("n_paths must be a positive integer")
    m_orders = raw.get("m_orders", [2])
    if not isinstance(m_orders, list) or any(not isinstance(m, (int, float)) or m < 2
                                             for m in m_orders):
        raise ConfigError("m_orders must be a list of numbers >= 2")
    for sec in ("params", "thresholds"):
        if not isinstance(raw.get(sec, {}), dict):
            raise ConfigError(f"[{sec}] must be a table")
    params = _merge(exp.params, raw.get("params", {}), "params")
    thresholds = _merge(exp.thresholds, raw.get("thresholds", {}), "thresholds")
    workers = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = max(1, int(workers))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
    ctx = Context(int(seed), n_paths, [float(m) for m in m_orders], params, thresholds, workers)
    return exp, ctx, str(raw.get("output_dir", "results"))


def summary_json(exp: Experiment, ctx: Context, outcome: Outcome) -> str:
    body = {
        "experiment": exp.name,
        "claim": exp.claim,
        "seed": ctx.seed,
        "n_paths": ctx.n_paths,
        "params": ctx.params,
        "thresholds": ctx.thresholds,
        "metrics": outcome.metrics,
        "checks": outcome.checks,
        "passed": outcome.passed,
    }
    return json.dumps(json_safe(body), indent=2, sort_keys=True) + "\n"


def _run_dir(base: Path, name: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    root = base / name
    path, k = root / stamp, 1
    while path.exists():
        path = root / f"{stamp}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def write_outputs(out_dir: Path, exp: Experiment, ctx: Context, outcome: Outcome,
                  config_text: str) -> None:
    files = {"summary.json": summary_json(exp, ctx, outcome),
             "config.echo.toml": config_text}
    for name, body in outcome.tables.items():
        files[f"{name}.csv"] = body
    lines = [f"experiment: {exp.name}", f"claim: {exp.claim}", f"seed: {ctx.seed}",
             f"result: {'PASS' if outcome.passed else 'FAIL'}"]
    for k, c in outcome.checks.items():
        lines.append(f"check {k}: {'pass' if c['passed'] else 'FAIL'}")
    lines.append("files: " + ", ".join(sorted(files)))
    files["manifest.txt"] = "\n".join(lines) + "\n"
    for name, body in files.items():
        (out_dir / name).write_text(body)


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        exp, ctx, out = parse_config(text, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output_dir:
        out = args.output_dir
    try:
        outcome = exp.run(ctx)
    except (NumericalAbort, BlowUp, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    run_dir = _run_dir(Path(out), exp.name)
    write_outputs(run_dir, exp, ctx, outcome, text)
    for k, c in outcome.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {exp.name}.{k} value={c['value']!r} "
              f"threshold={c['threshold']!r}")
    print(f"results written to {run_dir}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def cmd_list(args) -> int:
    width = max(len(n) for n in REGISTRY)
    for name, exp in REGISTRY.items():
        print(f"{name:<{width}}  {exp.description}")
    return EXIT_OK


def cmd_describe(args) -> int:
    exp = REGISTRY.get(args.name)
    if exp is None:
        print(f"unknown experiment {args.name!r}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{exp.name}: {exp.description}")
    print(f"claim: {exp.claim}")
    print("example config:")
    print(f'experiment = "{exp.name}"\nseed = 0\nn_paths = {exp.n_paths}')
    for sec, vals in (("params", exp.params), ("thresholds", exp.thresholds)):
        if vals:
            print(f"[{sec}]")
            for k, v in vals.items():
                print(f"{k} = {json.dumps(v)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochsewing",
                                 description="Stochastic sewing experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=cmd_run)
    sub.add_parser("list", help="list experiments").set_defaults(func=cmd_list)
    d = sub.add_parser("describe", help="show an experiment's claim and defaults")
    d.add_argument("name")
    d.set_defaults(func=cmd_describe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
