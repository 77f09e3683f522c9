"""Command line entry point: ``frechet-quotient <command> [options]``.

A run is described by one JSON document (``--config``). Flags override its
fields: ``--seed``, ``--samples`` and ``--workers`` map to ``seed``,
``n_samples`` and ``workers``; ``--set a.b=value`` overrides any field by
path, with the value parsed as JSON when possible.

Exit codes: 0 on success, 1 on I/O failure, 2 on configuration errors and
3 when a numeric invariant is violated.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import harness
from .estimators import NumericInvariantError
from .harness import ConfigError

COMMANDS = ("bias-sweep", "nu-table", "rotation-compare", "gradient-audit", "analytic")


def _global_options() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's copy of a flag from resetting a value
    # given before the subcommand name.
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS, allow_abbrev=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="JSON experiment description")
    g.add_argument("--seed", type=int, metavar="U64")
    g.add_argument("--samples", type=int, metavar="INT", help="Monte Carlo sample count (n_samples)")
    g.add_argument("--workers", type=int, metavar="INT")
    g.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    g.add_argument("--format", choices=("csv", "json"))
    g.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="override a config field, e.g. --set noise.kind=ball")
    return p


def _float_csv(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _int_csv(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="frechet-quotient", parents=[common], allow_abbrev=False,
                                     description="Consistency bias experiments for Frechet means in quotient spaces.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bias-sweep", parents=[common], allow_abbrev=False, help="measured bias and bounds over a noise sweep")
    sub.add_parser("nu-table", parents=[common], allow_abbrev=False, help="nu for named templates under torus translations")
    rc = sub.add_parser("rotation-compare", parents=[common], allow_abbrev=False, help="large-noise bias under rotations")
    rc.add_argument("--dims", type=_int_csv, help="comma separated dimensions")
    rc.add_argument("--scales", type=_float_csv, help="comma separated noise scales")
    sub.add_parser("gradient-audit", parents=[common], allow_abbrev=False, help="gradient of the variance at the template")
    an = sub.add_parser("analytic", parents=[common], allow_abbrev=False, help="tabulate rho_tilde and the rotation limit")
    an.add_argument("--distances", type=_float_csv, help="comma separated distances to the fixed line")
    an.add_argument("--scales", type=_float_csv, help="comma separated noise scales")
    an.add_argument("--dims", type=_int_csv, help="comma separated rotation dimensions")
    return parser


def _set_path(doc: dict, path: str, value):
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            node[k] = nxt
        node = nxt
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def assemble_config(args, command: str) -> dict:
    raw: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<config>", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "the configuration must be a JSON object")
    # Start from the command defaults so that --set can reach into nested defaults.
    merged = json.loads(json.dumps(harness.DEFAULTS.get(command, {})))
    merged.update(raw)
    for item in getattr(args, "set", []) or []:
        path, sep, value = item.partition("=")
        if not sep or not path:
            raise ConfigError("--set", f"expected PATH=VALUE, got {item!r}")
        _set_path(merged, path, _parse_value(value))
    if args.seed is not None:
        merged["seed"] = args.seed
    if args.samples is not None:
        merged["n_samples"] = args.samples
    if args.workers is not None:
        merged["workers"] = args.workers
    return merged


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def table_to_csv(table: harness.Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(row.get(c)) for c in table.columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def table_to_json(table: harness.Table, command: str, config: dict) -> str:
    doc = {"command": command, "config": config, "rows": table.records}
    if command == "nu-table":
        doc["label"] = "methodological reproduction"
    return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"


def run_command(command: str, cfg: harness.ExperimentConfig, args) -> harness.Table:
    if command == "bias-sweep":
        return harness.run_bias_sweep(cfg)
    if command == "nu-table":
        return harness.run_nu_table(cfg)
    if command == "rotation-compare":
        return harness.run_rotation_comparison(cfg, dims=args.dims, scales=args.scales)
    if command == "gradient-audit":
        return harness.run_gradient_audit(cfg)
    if command == "analytic":
        return harness.run_analytic(cfg, d_values=args.distances, s_values=args.scales, dims=args.dims)
    raise ConfigError("command", f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "samples", "workers", "out", "dims", "scales", "distances"):
        if not hasattr(args, name):
            setattr(args, name, None)
    fmt = getattr(args, "format", "csv")
    try:
        raw = assemble_config(args, args.command)
        cfg = harness.load_config(raw, args.command)
        table = run_command(args.command, cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericInvariantError as exc:
        print(f"numeric invariant violated: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if args.config and getattr(exc, "filename", None) == args.config else 1
    except ValueError as exc:
        # domain errors raised by the library on values that passed parsing
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    text = table_to_csv(table) if fmt == "csv" else table_to_json(table, args.command, raw)
    if args.out:
        try:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
