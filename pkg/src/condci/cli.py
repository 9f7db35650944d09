"""Command-line front-end.

Subcommands::

    condci ci          conditional and Wald intervals from a summary or raw CSV
    condci pivot       pivot and p-values at a hypothesised value
    condci simulate    run a scenario and write its coverage report
    condci reanalyze   hazard-ratio intervals for a trial stopped at a boundary

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Everything is
computed before anything is written, so a failed run leaves no output file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .conditional_ci import conditional_ci, conditional_p_value, pivot, wald_ci
from .estimators import (
    bootstrap_cov,
    diff_in_means,
    read_survival_csv,
    read_two_arm_csv,
)
from .reanalysis import ReanalysisInput, bundled_sprint_summary, reanalyze, read_endpoints_csv, rejection_threshold
from .selection_region import GaussianSummary, SelectionEvent, as_event

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

_SUMMARY_KEYS = {
    "theta_hat", "sigma_hat", "n", "target", "target_name", "event", "gates", "data",
    "alpha", "sided", "delta_n", "theta0", "scale",
}
_DATA_KEYS = {"path", "kind", "outcomes", "times", "events", "treatment", "sample_mean", "covariance", "B", "seed"}
_GATE_KEYS = {"index", "kind", "z", "estimate"}


class UsageError(ValueError):
    """Invalid command-line or config input."""


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _cell(v: Any, digits: int = 12) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{float(v):.{digits}g}"
    return str(v)


def _json_value(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return None if math.isnan(v) else v
    return v


def render(rows: list[dict[str, Any]], fmt: str, header: Sequence[str] = ()) -> str:
    """Rows of uniform keys as aligned text, CSV or a JSON array."""
    if fmt == "json":
        return json.dumps([{k: _json_value(v) for k, v in r.items()} for r in rows], indent=2) + "\n"
    cols = list(rows[0]) if rows else []
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])
        return buf.getvalue()
    cells = [cols] + [[_cell(r[c], 5) for c in cols] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(cols))]
    lines = ["  ".join(row[j].ljust(widths[j]) for j in range(len(cols))).rstrip() for row in cells]
    if lines:
        lines.insert(1, "  ".join("-" * w for w in widths))
    return "".join(f"# {h}\n" for h in header) + "\n".join(lines) + "\n"


def _write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(outputs: list[tuple[str | None, str]]) -> None:
    """Write every ``(path, text)``; ``None`` means stdout."""
    for path, _ in outputs:
        if path is not None and not Path(path).parent.exists():
            raise UsageError(f"output directory does not exist: {Path(path).parent}")
    for path, text in outputs:
        if path is None:
            sys.stdout.write(text)
        else:
            _write_atomic(path, text)


def _output_format(args) -> str:
    if args.format is not None:
        return args.format
    return "csv" if args.out else "text"


# ---------------------------------------------------------------------------
# summary + event from config / flags
# ---------------------------------------------------------------------------


def _load_json(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return obj


def _parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse {text!r} as comma-separated numbers") from None


def _parse_matrix(text: str) -> list[list[float]]:
    return [_parse_vector(row) for row in text.split(";")]


def _summary_from_data(spec: dict[str, Any], base: Path) -> GaussianSummary:
    unknown = set(spec) - _DATA_KEYS
    if unknown:
        raise UsageError(f"unknown data keys: {sorted(unknown)}")
    if "path" not in spec or "treatment" not in spec:
        raise UsageError("data needs 'path' and 'treatment'")
    path = Path(spec["path"])
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise UsageError(f"data file not found: {path}")
    kind = spec.get("kind", "continuous")
    covariance = spec.get("covariance", "analytic" if kind == "continuous" else "bootstrap")
    B, seed = int(spec.get("B", 10_000)), int(spec.get("seed", 0))
    if kind == "continuous":
        if "outcomes" not in spec:
            raise UsageError("continuous data needs 'outcomes'")
        data = read_two_arm_csv(path, spec["outcomes"], spec["treatment"])
        sample_mean = bool(spec.get("sample_mean", False))
        if covariance == "analytic":
            return diff_in_means(data, sample_mean=sample_mean)
        if covariance == "bootstrap":
            est = "sample_mean" if sample_mean else "diff_in_means"
            return bootstrap_cov(data, est, B, seed).summary()
        raise UsageError(f"covariance must be 'analytic' or 'bootstrap', got {covariance!r}")
    if kind == "survival":
        if "times" not in spec or "events" not in spec:
            raise UsageError("survival data needs 'times' and 'events'")
        if covariance != "bootstrap":
            raise UsageError("survival data supports only bootstrap covariance")
        data = read_survival_csv(path, spec["times"], spec["events"], spec["treatment"])
        return bootstrap_cov(data, "cox", B, seed).summary()
    raise UsageError(f"data kind must be 'continuous' or 'survival', got {kind!r}")


def _gate_event(gate: dict[str, Any], gs: GaussianSummary) -> SelectionEvent:
    """One threshold gate; a ``z`` threshold is converted to the estimate scale here."""
    unknown = set(gate) - _GATE_KEYS
    if unknown:
        raise UsageError(f"unknown gate keys: {sorted(unknown)}")
    if ("z" in gate) == ("estimate" in gate):
        raise UsageError("a gate needs exactly one of 'z' and 'estimate'")
    index = int(gate.get("index", 0))
    if not 0 <= index < gs.d:
        raise UsageError(f"gate index {index} out of range for dimension {gs.d}")
    bound = float(gate["z"]) * gs.se(index) if "z" in gate else float(gate["estimate"])
    kind = gate.get("kind", "greater")
    if kind == "two":
        return SelectionEvent.two_sided(index, gs.d, abs(bound))
    if kind in ("greater", "less"):
        return SelectionEvent.one_sided(index, gs.d, bound, kind)
    raise UsageError(f"gate kind must be 'two', 'greater' or 'less', got {kind!r}")


def _analysis_config(args) -> tuple[dict[str, Any], Path]:
    cfg: dict[str, Any] = {}
    base = Path.cwd()
    if args.config:
        cfg = _load_json(args.config)
        base = Path(args.config).resolve().parent
    unknown = set(cfg) - _SUMMARY_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    flag_values = {
        "theta_hat": _parse_vector(args.theta) if args.theta else None,
        "sigma_hat": _parse_matrix(args.sigma) if args.sigma else None,
        "n": args.n,
        "target": args.target,
        "event": json.loads(args.event) if args.event else None,
        "alpha": args.alpha,
        "sided": getattr(args, "sided", None),
        "delta_n": args.delta_n,
        "scale": args.scale,
    }
    if args.gate_z is not None or args.gate_estimate is not None:
        gate = {"index": args.gate_index, "kind": args.gate_kind}
        gate.update({"z": args.gate_z} if args.gate_z is not None else {"estimate": args.gate_estimate})
        flag_values["gates"] = [gate]
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    if getattr(args, "theta0", None) is not None:
        cfg["theta0"] = args.theta0
    return cfg, base


def _build_analysis(cfg: dict[str, Any], base: Path):
    if "data" in cfg:
        if "theta_hat" in cfg or "sigma_hat" in cfg:
            raise UsageError("give either 'data' or 'theta_hat'/'sigma_hat', not both")
        gs = _summary_from_data(cfg["data"], base)
    else:
        for key in ("theta_hat", "sigma_hat", "n"):
            if key not in cfg:
                raise UsageError(f"missing {key!r} (or a 'data' block)")
        gs = GaussianSummary(cfg["theta_hat"], cfg["sigma_hat"], cfg["n"])
    target = int(cfg.get("target", gs.d - 1))
    if not 0 <= target < gs.d:
        raise UsageError(f"target {target} out of range for dimension {gs.d}")
    events = []
    if "event" in cfg:
        events.append(as_event(cfg["event"]))
    for gate in cfg.get("gates", []):
        events.append(_gate_event(gate, gs))
    if not events:
        event = SelectionEvent.always(gs.d)
    else:
        event = events[0]
        for e in events[1:]:
            event = event.conjoin(e)
    if event.d != gs.d:
        raise UsageError(f"event dimension {event.d} does not match summary dimension {gs.d}")
    alpha = float(cfg.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise UsageError("alpha must lie in (0, 1)")
    sided = cfg.get("sided", "two")
    if sided not in ("two", "lower", "upper"):
        raise UsageError(f"sided must be 'two', 'lower' or 'upper', got {sided!r}")
    delta_n = float(cfg.get("delta_n", 0.0))
    if delta_n < 0:
        raise UsageError("delta-n must be nonnegative")
    scale = cfg.get("scale", "identity")
    if scale not in ("identity", "exp"):
        raise UsageError(f"scale must be 'identity' or 'exp', got {scale!r}")
    return gs, target, event, alpha, sided, delta_n, scale


def _scaled(x: float, scale: str) -> float:
    if scale == "identity":
        return x
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 700 else math.inf


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ci(args) -> int:
    cfg, base = _analysis_config(args)
    gs, target, event, alpha, sided, delta_n, scale = _build_analysis(cfg, base)
    theta0 = cfg.get("theta0")
    cond = conditional_ci(gs, target, event, alpha, sided, delta_n, theta0=theta0)
    wald = wald_ci(cond.estimate, cond.se, alpha, sided)
    rows = []
    for res in (cond, wald):
        rows.append(
            {
                "method": res.method,
                "estimate": _scaled(res.estimate, scale),
                "lower": _scaled(res.lower, scale),
                "upper": _scaled(res.upper, scale),
                "alpha": alpha,
                "sided": sided,
                "region": str(cond.region) if res is cond else str(res.region),
                "pivot_at_null": res.pivot_at_null if res.pivot_at_null is not None else math.nan,
                "unbounded_lower": res.unbounded_lower,
                "unbounded_upper": res.unbounded_upper,
                "near_boundary": res.near_boundary,
            }
        )
    header = [f"target: {cfg.get('target_name', target)}", f"scale: {scale}", f"delta_n: {delta_n:g}"]
    fmt = _output_format(args)
    _emit([(args.out, render(rows, fmt, header if fmt == "text" else ()))])
    return EXIT_OK


def cmd_pivot(args) -> int:
    cfg, base = _analysis_config(args)
    if "theta0" not in cfg:
        cfg["theta0"] = 0.0
    gs, target, event, alpha, _, delta_n, _ = _build_analysis(cfg, base)
    theta0 = float(cfg["theta0"])
    u = pivot(gs, target, event, theta0, delta_n)
    row = {
        "target": cfg.get("target_name", target),
        "theta0": theta0,
        "estimate": float(gs.theta_hat[target]),
        "se": gs.se(target),
        "pivot": u,
    }
    for alt in ("greater", "less", "two_sided"):
        row[f"p_{alt}"] = conditional_p_value(gs, target, event, theta0, alt, delta_n)
    row["reject_two_sided"] = row["p_two_sided"] < alpha
    fmt = _output_format(args)
    _emit([(args.out, render([row], fmt))])
    return EXIT_OK


def _scenario_from_args(args):
    from .trial_sim import load_presets, scenario_from_config

    if args.config and args.scenario:
        raise UsageError("give either --scenario or --config, not both")
    if args.config:
        obj = _load_json(args.config)
    elif args.scenario:
        obj = {"preset": args.scenario} if args.scenario in load_presets() else {"scenario": args.scenario}
    else:
        raise UsageError("simulate needs --scenario or --config")
    if args.param:
        params = dict(obj.get("params", {}))
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"--param expects key=value, got {item!r}")
            try:
                params[key] = json.loads(value)
            except json.JSONDecodeError:
                raise UsageError(f"--param {key}: value must be JSON, got {value!r}") from None
        obj["params"] = params
    delta = [float(v) for v in _parse_vector(args.delta_n)] if args.delta_n else None
    if args.reps is not None and args.reps < 1:
        raise UsageError(f"--reps must be at least 1, got {args.reps}")
    return scenario_from_config(
        obj, reps=args.reps, seed=args.seed, alpha=args.alpha, delta_n=delta, block_size=args.block_size
    )


def cmd_simulate(args) -> int:
    from .trial_sim import report_for, run_monte_carlo

    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    scenario = _scenario_from_args(args)
    result = run_monte_carlo(scenario, workers=args.workers)
    report = report_for(result)
    fmt = _output_format(args)
    outputs: list[tuple[str | None, str]] = []
    if fmt == "json":
        body = render(report.table.to_dict("records"), "json")
    elif fmt == "csv":
        body = report.to_csv()
    else:
        body = report.to_text()
    outputs.append((args.out, body))
    if args.out and fmt != "text":
        outputs.append((str(Path(args.out).with_suffix(".txt")), report.to_text()))
    if args.records:
        outputs.append((args.records, result.records.to_csv(index=False, float_format="%.17g", lineterminator="\n")))
    _emit(outputs)
    return EXIT_OK


def _boundary_line(inp: ReanalysisInput) -> str:
    b = inp.boundary
    region = {"lower": f"estimate < {-b:.6g}", "upper": f"estimate > {b:.6g}", "two": f"|estimate| > {b:.6g}"}
    return f"selection: {region[inp.selection]} (log hazard ratio)"


def cmd_reanalyze(args) -> int:
    if args.config:
        obj = _load_json(args.config)
        inp = ReanalysisInput.from_dict(obj, read_endpoints_csv(args.endpoints) if args.endpoints else None)
    else:
        inp = bundled_sprint_summary()
        if args.endpoints:
            inp = ReanalysisInput(
                inp.n, inp.primary_estimate, inp.primary_variance, tuple(read_endpoints_csv(args.endpoints)),
                inp.threshold_z, inp.threshold_estimate, inp.selection, inp.alpha,
            )
    overrides: dict[str, Any] = {}
    if args.threshold_z is not None and args.threshold_estimate is not None:
        raise UsageError("give at most one of --threshold-z and --threshold-estimate")
    if args.threshold_z is not None:
        overrides.update(threshold_z=args.threshold_z, threshold_estimate=None)
    if args.threshold_estimate is not None:
        overrides.update(threshold_estimate=args.threshold_estimate, threshold_z=None)
    if args.selection is not None:
        overrides["selection"] = args.selection
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.n is not None:
        overrides["n"] = args.n
    if overrides:
        fields = {
            "n": inp.n, "primary_estimate": inp.primary_estimate, "primary_variance": inp.primary_variance,
            "endpoints": inp.endpoints, "threshold_z": inp.threshold_z,
            "threshold_estimate": inp.threshold_estimate, "selection": inp.selection, "alpha": inp.alpha,
        }
        fields.update(overrides)
        inp = ReanalysisInput(**fields)
    rows = [r.as_dict() for r in reanalyze(inp)]
    header = [
        f"n: {inp.n}",
        _boundary_line(inp),
        f"alpha: {inp.alpha:g}",
    ]
    if args.threshold_for:
        z = rejection_threshold(inp, args.threshold_for, args.threshold_side)
        header.append(f"rejection threshold for {args.threshold_for}: z = {z:.4f}")
        for r in rows:
            r["rejection_z"] = z if r["name"] == args.threshold_for else math.nan
    fmt = _output_format(args)
    _emit([(args.out, render(rows, fmt, header if fmt == "text" else ()))])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--format", choices=["text", "csv", "json"], help="default: text, or csv with --out")
    p.add_argument("--alpha", type=float)


def _add_analysis(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta", help="estimates, comma separated")
    p.add_argument("--sigma", help="per-observation covariance, rows separated by ';'")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--target", type=int, help="coordinate to make inference on (default: last)")
    p.add_argument("--event", help="selection event as JSON {\"clauses\": [...]}")
    p.add_argument("--gate-index", type=int, default=0)
    p.add_argument("--gate-kind", choices=["two", "greater", "less"], default="greater")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gate-z", type=float, help="gate threshold in standard errors")
    g.add_argument("--gate-estimate", type=float, help="gate threshold on the estimate scale")
    p.add_argument("--delta-n", type=float)
    p.add_argument("--scale", choices=["identity", "exp"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condci", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"condci {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ci", help="conditional and Wald confidence intervals")
    _add_common(p)
    _add_analysis(p)
    p.add_argument("--sided", choices=["two", "lower", "upper"])
    p.add_argument("--theta0", type=float, help="also report the pivot at this value")
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("pivot", help="pivot and conditional p-values")
    _add_common(p)
    _add_analysis(p)
    p.add_argument("--theta0", type=float, help="hypothesised value (default 0)")
    p.set_defaults(func=cmd_pivot)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    _add_common(p)
    p.add_argument("--scenario", help="preset or generator name")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--delta-n", help="comma-separated delta_n values")
    p.add_argument("--param", action="append", help="generator parameter key=JSON, repeatable")
    p.add_argument("--block-size", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--records", help="also write per-replicate records CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reanalyze", help="hazard-ratio reanalysis from summary statistics")
    _add_common(p)
    p.add_argument("--endpoints", help="CSV of endpoint rows: name,estimate,variance,covariance")
    p.add_argument("--n", type=int)
    t = p.add_mutually_exclusive_group()
    t.add_argument("--threshold-z", type=float)
    t.add_argument("--threshold-estimate", type=float)
    p.add_argument("--selection", choices=["two", "lower", "upper"])
    p.add_argument("--threshold-for", metavar="NAME", help="solve the rejection z threshold for this endpoint")
    p.add_argument("--threshold-side", choices=["lower", "upper"], default="lower")
    p.set_defaults(func=cmd_reanalyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ArithmeticError, FloatingPointError, RuntimeError) as exc:
        print(f"condci: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, json.JSONDecodeError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"condci: error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
