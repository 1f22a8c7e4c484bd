"""Command-line entry point: ``pumpgrad <command> [options]``.

Every run writes ``<out>.manifest.json`` next to its primary output. Failures
print a JSON error object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .breakeven import (
    backtest_buy_and_hold,
    breakeven_curve,
    breakeven_probability,
    expected_return,
    write_backtest_csv,
    write_breakeven_csv,
)
from .dump import DumpConfig, dump_summary, scan_dataset, write_episodes_csv
from .estimate import (
    Condition,
    EstimationError,
    Grid,
    GraduationCurveEstimate,
    Window,
    estimate_curve,
    identify_top_creators,
    identify_top_traders,
    tokens_in_window,
)
from .ingest import (
    EventParseError,
    build_trajectories,
    parse_events,
    validate_trajectory,
    write_events,
)
from .synth import SynthConfig, generate_market, market_metadata

DATA_DIR_ENV = "PUMPGRAD_DATA_DIR"
NULL = "null"
FORTNIGHT = 14 * 86400.0

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CAUSALITY = 4
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return NULL
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_input(name: str) -> Path:
    p = Path(name)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_DIR_ENV):
        alt = Path(os.environ[DATA_DIR_ENV]) / p
        if alt.exists():
            return alt
    if not p.exists():
        raise CliError("input", f"input not found: {name}", EXIT_INPUT)
    return p


def _format_of(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "jsonl"


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.parameters = {k: v for k, v in sorted(vars(args).items())
                           if k not in ("func", "command") and v is not None}
        self.inputs: list[dict] = []
        self.outputs: list[Path] = []
        self.seed = getattr(args, "seed", None)
        self.extra: dict = {}

    def add_input(self, path: Path) -> Path:
        self.inputs.append({"path": str(path), "sha256": _sha256(path)})
        return path

    def add_output(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def finish(self, primary: Path) -> Path:
        manifest = _sidecar(primary, ".manifest.json")
        _write_json(manifest, _jsonable({
            "tool": "pumpgrad",
            "version": __version__,
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in self.outputs],
            **self.extra,
        }))
        return manifest


def _open_out(path: Path):
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


# -- configuration ----------------------------------------------------------

def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_section(path: Optional[str], section: str, cls):
    """Build ``cls`` from the ``[section]`` of an INI-style key-value file."""
    if path is None:
        return {}
    p = _resolve_input(path)
    parser = configparser.ConfigParser()
    parser.read(p, encoding="utf-8")
    if not parser.has_section(section):
        return {}
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in defaults:
            raise CliError("config", f"unknown key {key!r} in [{section}]")
        try:
            out[key] = _coerce(raw, defaults[key])
        except ValueError as exc:
            raise CliError("config", f"[{section}] {key}: {exc}")
    return out


# -- condition grammar ------------------------------------------------------

def _parse_kv(spec: str) -> tuple[str, str, dict]:
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    if not parts:
        raise CliError("condition", "empty condition spec")
    head, _, value = parts[0].partition("=")
    opts = {}
    for p in parts[1:]:
        k, sep, v = p.partition("=")
        if not sep:
            raise CliError("condition", f"malformed option {p!r}")
        opts[k.strip()] = v.strip()
    return head.strip(), value.strip(), opts


def _two_week_windows(events, eval_window: Optional[Window]) -> tuple[Window, Window]:
    if eval_window is not None:
        return Window(eval_window.start - FORTNIGHT, eval_window.start), eval_window
    day0 = math.floor(min(e.timestamp for e in events) / 86400.0) * 86400.0
    return Window(day0, day0 + FORTNIGHT), Window(day0 + FORTNIGHT, day0 + 2 * FORTNIGHT)


def build_condition(spec: str, events, trajs, eval_window: Optional[Window]):
    """Turn a condition spec into a :class:`Condition`.

    Returns ``(condition, eval_window, details)``; predictive conditions may
    fix the evaluation window through the two-week preset.
    """
    head, value, opts = _parse_kv(spec)
    try:
        if head == "none" and not value and not opts:
            return Condition.none(), eval_window, {}
        if head == "mintime" and not opts:
            return Condition.min_time(float(value)), eval_window, {}
        if head == "nonbot" and not opts:
            return Condition.nonbot_share(float(value)), eval_window, {}
        if head == "maxtrades" and set(opts) <= {"min"}:
            n_max = None if value in ("inf", "*") else int(value)
            n_min = int(opts["min"]) if "min" in opts else None
            return Condition.max_trades(n_max, n_min), eval_window, {}
    except ValueError as exc:
        raise CliError("condition", f"bad value in {spec!r}: {exc}")
    if head in ("topwallets", "topcreators") and set(opts) <= {"window"}:
        try:
            k = int(value)
        except ValueError:
            raise CliError("condition", f"bad count in {spec!r}")
        if "window" not in opts:
            raise CliError("condition", f"{head} needs window=<W1>")
        if opts["window"] == "two-week":
            w1, eval_window = _two_week_windows(events, eval_window)
        else:
            try:
                w1 = Window.parse(opts["window"])
            except ValueError as exc:
                raise CliError("window", str(exc))
        if eval_window is None or w1.overlaps(eval_window) or w1.start >= eval_window.start:
            raise CliError(
                "causality",
                f"identification window {w1} must strictly precede the evaluation window "
                f"{eval_window if eval_window else '(entire input)'}",
                EXIT_CAUSALITY,
            )
        label = f"{head}={k}"
        if head == "topwallets":
            top = identify_top_traders(events, k, w1)
            cond = Condition.wallet_set(top.wallets, label=label) if top.wallets else None
            details = {"w1": str(w1), "n_members": len(top.wallets),
                       "insufficient": top.insufficient}
        else:
            topc = identify_top_creators(trajs, k, w1)
            cond = Condition.creator_set(topc.creators, label=label) if topc.creators else None
            details = {"w1": str(w1), "n_members": len(topc.creators)}
        if cond is None:
            raise CliError("condition", f"{label}: no members found in {w1}", EXIT_FAILURE)
        return cond, eval_window, details
    raise CliError("condition", f"unknown condition {spec!r}")


# -- commands ---------------------------------------------------------------

def _load(args, run: Run):
    path = run.add_input(_resolve_input(args.input))
    fmt = _format_of(path, args.format)
    errors: list = []
    events = parse_events(path, fmt, strict=not getattr(args, "lenient", False), errors=errors)
    quarantine: list = []
    trajs = build_trajectories(events, quarantine=quarantine)
    return events, trajs, errors, quarantine


def cmd_validate(args) -> int:
    run = Run("validate", args)
    events, trajs, errors, quarantine = _load(args, run)
    by_kind: dict[str, int] = {}
    flagged = []
    for mint, traj in trajs.items():
        rep = validate_trajectory(traj, tol=args.tol)
        for v in rep.violations:
            by_kind[v.kind] = by_kind.get(v.kind, 0) + 1
        if not rep.ok:
            flagged.append({"mint": mint, "n_violations": len(rep.violations),
                            "first_index": rep.violations[0].index,
                            "kinds": sorted({v.kind for v in rep.violations})})
    report = {
        "n_records": len(events) + len(errors),
        "n_events": len(events),
        "n_parse_errors": len(errors),
        "parse_errors": [{"line": e.line, "field": e.field, "message": e.message}
                         for e in errors],
        "n_tokens": len(trajs),
        "n_quarantined": sum(len(q.signatures) for q in quarantine),
        "quarantine": [{"mint": q.mint, "reason": q.reason, "n_events": len(q.signatures)}
                       for q in quarantine],
        "tol": args.tol,
        "n_violations": sum(by_kind.values()),
        "violations_by_kind": by_kind,
        "tokens_with_violations": flagged,
        "ok": not errors and not quarantine and not flagged,
    }
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(run.add_output(out), report)
    run.finish(out)
    return 0


def write_curve_csv(est: GraduationCurveEstimate, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["level", "n_eligible", "n_graduated", "p", "condition"])
    desc = est.condition.describe()
    for level, ne, ng, p in zip(est.levels, est.n_eligible, est.n_graduated, est.p):
        w.writerow([_fmt(float(level)), int(ne), int(ng), _fmt(float(p)), desc])


def cmd_estimate(args) -> int:
    run = Run("estimate", args)
    try:
        grid = Grid.from_spec(args.grid) if args.grid else Grid.default()
        grid.validate()
        eval_window = Window.parse(args.window) if args.window else None
    except (EstimationError, ValueError) as exc:
        raise CliError("argument", str(exc))
    events, trajs, _, _ = _load(args, run)
    cond, eval_window, details = build_condition(args.condition, events, trajs, eval_window)
    cohort = tokens_in_window(trajs, eval_window)
    est = estimate_curve(cohort, grid, cond, dataset_id=run.inputs[0]["sha256"])
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        write_curve_csv(est, fh)
    meta = _sidecar(out, ".json")
    _write_json(run.add_output(meta), {
        "manifest": _sidecar(out, ".manifest.json").name,
        "condition": cond.describe(),
        "condition_spec": args.condition,
        "evaluation_window": str(eval_window) if eval_window else None,
        "n_tokens": len(cohort),
        "grid": [grid.levels[0], grid.levels[-1], len(grid.levels)],
        "dataset_sha256": run.inputs[0]["sha256"],
        **details,
    })
    run.finish(out)
    return 0


def cmd_breakeven(args) -> int:
    run = Run("breakeven", args)
    try:
        grid = Grid.from_spec(args.grid) if args.grid else Grid.default()
        grid.validate()
    except EstimationError as exc:
        raise CliError("argument", str(exc))
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        write_breakeven_csv(breakeven_curve(grid.levels), fh)
    run.finish(out)
    return 0


def cmd_backtest(args) -> int:
    run = Run("backtest", args)
    window = Window.parse(args.window) if args.window else None
    events, trajs, _, _ = _load(args, run)
    cohort = tokens_in_window(trajs, window)
    try:
        res = backtest_buy_and_hold(cohort, args.entry_level, price_mode=args.price_mode)
    except ValueError as exc:
        raise CliError("argument", str(exc))
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        write_backtest_csv(res, fh)
    summary = _sidecar(out, ".json")
    _write_json(run.add_output(summary), {
        "manifest": _sidecar(out, ".manifest.json").name,
        "entry_level": args.entry_level,
        "price_mode": args.price_mode,
        "n_entered": res.n,
        "n_graduated": res.n_graduated,
        "p_hat": res.p_hat,
        "mean_return": res.mean_return,
        "expected_return_at_p_hat": (expected_return(res.p_hat, args.entry_level)
                                     if res.n else None),
        "p_breakeven": breakeven_probability(args.entry_level),
    })
    run.finish(out)
    return 0


def cmd_dump_scan(args) -> int:
    run = Run("dump-scan", args)
    opts = load_section(args.config, "dump", DumpConfig)
    for key in ("sigma_multiplier", "baseline_min", "baseline_max"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    if args.no_merge:
        opts["merge_runs"] = False
    try:
        config = DumpConfig(**opts)
    except ValueError as exc:
        raise CliError("config", str(exc))
    if args.config:
        run.add_input(_resolve_input(args.config))
    _, trajs, _, _ = _load(args, run)
    detections = scan_dataset(trajs, config)
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        write_episodes_csv(detections, fh)
    summary = _sidecar(out, ".summary.json")
    _write_json(run.add_output(summary), _jsonable({
        "manifest": _sidecar(out, ".manifest.json").name,
        "detector": dataclasses.asdict(config),
        **dump_summary(detections).to_json(),
    }))
    run.finish(out)
    return 0


def cmd_synth(args) -> int:
    run = Run("synth", args)
    opts = load_section(args.config, "synth", SynthConfig)
    if args.config:
        run.add_input(_resolve_input(args.config))
    if args.seed is not None:
        opts["seed"] = args.seed
    if args.n_tokens is not None:
        opts["n_tokens"] = args.n_tokens
    try:
        config = SynthConfig(**opts)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc))
    run.seed = config.seed
    run.extra["generator"] = market_metadata(config)
    events = generate_market(config)
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        write_events(events, fh, args.format or _format_of(out, None))
    run.finish(out)
    return 0


def _read_curve(path: Path) -> tuple[str, dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"level", "p", "condition"} <= set(reader.fieldnames):
            raise CliError("input", f"{path} is not a curve CSV", EXIT_INPUT)
        rows = list(reader)
    name = rows[0]["condition"] if rows else path.stem
    return name, {r["level"]: r["p"] for r in rows}


def cmd_report(args) -> int:
    run = Run("report", args)
    names, curves = [], []
    for c in args.curves:
        name, values = _read_curve(run.add_input(_resolve_input(c)))
        if name in names:
            name = f"{name}@{Path(c).stem}"
        names.append(name)
        curves.append(values)
    levels = sorted({lv for cv in curves for lv in cv}, key=float)
    out = Path(args.out)
    with _open_out(run.add_output(out)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", *names, "breakeven"])
        for lv in levels:
            w.writerow([lv, *(cv.get(lv, NULL) for cv in curves),
                        _fmt(breakeven_probability(float(lv)))])
    run.finish(out)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pumpgrad", description="Bonding-curve graduation analytics.")
    p.add_argument("--version", action="version", version=f"pumpgrad {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_input(sp):
        sp.add_argument("--input", required=True, help="event log (JSONL or CSV)")
        sp.add_argument("--format", choices=("jsonl", "csv"),
                        help="input format (default: from the file extension)")
        sp.add_argument("--lenient", action="store_true",
                        help="skip malformed records instead of failing")

    sp = sub.add_parser("validate", help="parse a log and check every trajectory")
    with_input(sp)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out", required=True, help="diagnostics JSON")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("estimate", help="graduation probability curve")
    with_input(sp)
    sp.add_argument("--grid", help="start:stop:step in SOL (default 31:115:1)")
    sp.add_argument("--condition", default="none",
                    help="none | mintime=S | nonbot=THETA | maxtrades=N[,min=M] | "
                         "topwallets=K,window=W1 | topcreators=K,window=W1")
    sp.add_argument("--window", help="evaluation window START/END (tokens created inside)")
    sp.add_argument("--out", required=True, help="curve CSV")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("breakeven", help="breakeven parabola on a grid")
    sp.add_argument("--grid")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_breakeven)

    sp = sub.add_parser("backtest", help="buy-and-hold from a fixed entry level")
    with_input(sp)
    sp.add_argument("--entry-level", type=float, required=True)
    sp.add_argument("--price-mode", choices=("level", "crossing"), default="level")
    sp.add_argument("--window")
    sp.add_argument("--out", required=True, help="per-token returns CSV")
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("dump-scan", help="robust dump detection")
    with_input(sp)
    sp.add_argument("--config", help="key-value file with a [dump] section")
    sp.add_argument("--sigma-multiplier", type=float)
    sp.add_argument("--baseline-min", type=int)
    sp.add_argument("--baseline-max", type=int)
    sp.add_argument("--no-merge", action="store_true",
                    help="count every violating return as its own episode")
    sp.add_argument("--out", required=True, help="episode CSV")
    sp.set_defaults(func=cmd_dump_scan)

    sp = sub.add_parser("synth", help="generate a synthetic event log")
    sp.add_argument("--config", help="key-value file with a [synth] section")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-tokens", type=int)
    sp.add_argument("--format", choices=("jsonl", "csv"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", help="merge curve CSVs with the breakeven curve")
    sp.add_argument("curves", nargs="+", help="curve CSVs written by 'estimate'")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message, "exit_code": code}},
                                sort_keys=True) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code)
    except EventParseError as exc:
        return _fail("parse", str(exc), EXIT_INPUT)
    except EstimationError as exc:
        return _fail("estimation", str(exc), EXIT_FAILURE)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_INPUT)
    except ValueError as exc:
        return _fail("value", str(exc), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
