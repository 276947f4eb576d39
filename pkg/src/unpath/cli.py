"""Command line: ``unpath run <config>`` and ``unpath plotdata <results.csv>``.

A run config is a TOML file::

    experiment = "cf_convergence"
    seed = 7
    budget = 200000          # samples per spacing, Monte Carlo experiments only

    [params]
    d = 1
    m = 1.0
    a = [0.2, 0.1, 0.05]     # strictly decreasing

    [payload]                # experiment-specific
    kind = "pl"
    x = [0.2]

Floats are parsed as decimals so that the manifest echoes them exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tomli

from . import __version__
from .core import ConvergenceError, EmptyEnsembleError, ModelParams, ParameterError, RandomStream, worker_count
from .experiments import NEEDS_BUDGET, RUNNERS

TOP_KEYS = {"experiment", "seed", "budget", "params", "payload", "output"}
PARAM_KEYS = {"d", "m", "a"}


class ConfigError(ParameterError):
    """Invalid run configuration; the message names the file, line and field."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    params: ModelParams
    a_values: list
    payload: dict = field(default_factory=dict)
    budget: int = 100_000
    output: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)
    source: str = "<config>"


def _plain(v):
    """Decimals to floats, recursively."""
    if isinstance(v, Decimal):
        return float(v)
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


def _echo(v):
    """JSON-safe copy that keeps decimal literals as written."""
    if isinstance(v, Decimal):
        return str(v)
    if isinstance(v, dict):
        return {k: _echo(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_echo(x) for x in v]
    return v


def _locate(text: str, dotted: str) -> Optional[int]:
    """Line number of ``key = ...`` for a dotted field name, if it can be found."""
    *tables, key = dotted.split(".")
    table = ".".join(tables)
    current = ""
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"^\s*\[+\s*([^\]]+?)\s*\]+", line)
        if m:
            current = m.group(1)
            continue
        if current == table and pat.match(line):
            return i
    return None


def load_config(src, name: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate a run config from a path or TOML text."""
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src and "=" not in src):
        path = Path(src)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        name = name or str(path)
    else:
        text = src
        name = name or "<config>"

    def fail(fieldname: str, msg: str):
        line = _locate(text, fieldname)
        where = f"{name}:{line}" if line else name
        raise ConfigError(f"{where}: field '{fieldname}': {msg}")

    try:
        data = tomli.loads(text, parse_float=Decimal)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{name}: {exc}") from None

    for k in data:
        if k not in TOP_KEYS:
            fail(k, f"unknown key (expected one of {sorted(TOP_KEYS)})")
    exp = data.get("experiment")
    if exp is None:
        raise ConfigError(f"{name}: field 'experiment' is required")
    if exp not in RUNNERS:
        fail("experiment", f"unknown experiment {exp!r} (expected one of {sorted(RUNNERS)})")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        fail("seed", "must be an integer in [0, 2^64)")
    budget = data.get("budget", 100_000)
    if not isinstance(budget, int) or isinstance(budget, bool) or budget < 1:
        fail("budget", "must be a positive integer")

    params = data.get("params")
    if not isinstance(params, dict):
        raise ConfigError(f"{name}: table [params] is required")
    for k in params:
        if k not in PARAM_KEYS:
            fail(f"params.{k}", "unknown key")
    for k in PARAM_KEYS:
        if k not in params:
            raise ConfigError(f"{name}: field 'params.{k}' is required")
    d = params["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        fail("params.d", "must be a positive integer")
    if not isinstance(params["m"], (int, Decimal)) or not params["m"] > 0:
        fail("params.m", "must be a positive number")
    a_raw = params["a"] if isinstance(params["a"], list) else [params["a"]]
    if not a_raw or not all(isinstance(v, (int, Decimal)) and v > 0 for v in a_raw):
        fail("params.a", "must be a positive number or a non-empty list of them")
    a_values = [float(v) for v in a_raw]
    if any(b >= a for a, b in zip(a_values, a_values[1:])):
        fail("params.a", "spacings must be strictly decreasing")
    try:
        mp = ModelParams(int(d), float(params["m"]), a_values[0])
    except ParameterError as exc:
        fail("params", str(exc))

    payload = data.get("payload", {})
    if not isinstance(payload, dict):
        fail("payload", "must be a table")
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        fail("output", "must be a string")
    return ExperimentConfig(exp, seed, mp, a_values, _plain(payload), budget, output, data, name)


# ---------------------------------------------------------------------------
# output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def _versions() -> dict:
    import numba
    import scipy

    return {"unpath": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "tomli": tomli.__version__
            if hasattr(tomli, "__version__") else "unknown"}


@dataclass
class RunResult:
    csv_path: Path
    manifest_path: Path
    checks: dict
    exit_code: int


def run_experiment(cfg: ExperimentConfig, output_dir, strict: bool = False,
                   seed: Optional[int] = None) -> RunResult:
    """Run one configured experiment and write ``results.csv`` plus ``manifest.json``."""
    seed = cfg.seed if seed is None else int(seed)
    stream = RandomStream(seed)
    runner = RUNNERS[cfg.experiment]
    t0 = time.perf_counter()
    if cfg.experiment in NEEDS_BUDGET:
        cols, rows, checks = runner(cfg.params, cfg.a_values, cfg.payload, stream, cfg.budget)
    else:
        cols, rows, checks = runner(cfg.params, cfg.a_values, cfg.payload, stream)
    wall = time.perf_counter() - t0

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = format_csv(cols, rows)
    csv_path = out / "results.csv"
    csv_path.write_text(text)
    breaches = sorted(k for k, ok in checks.items() if not ok)
    manifest = {
        "experiment": cfg.experiment,
        "config": _echo(cfg.raw),
        "config_source": cfg.source,
        "seed": seed,
        "threads": worker_count(),
        "versions": _versions(),
        "wall_time_s": wall,
        "results": csv_path.name,
        "results_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "checks": {k: bool(v) for k, v in sorted(checks.items())},
        "breaches": breaches,
        "strict": strict,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    code = 1 if strict and breaches else 0
    return RunResult(csv_path, manifest_path, checks, code)


# ---------------------------------------------------------------------------
# plot data


def _series_layout(columns: list):
    """(series key or None, x column, y columns) for a known results table."""
    if "spec_id" in columns:
        return "spec_id", "a", ["abs_error"]
    if "lattice_abs_error" in columns:
        return "a", "r", ["lattice_abs_error"]
    if "z_score" in columns:
        return None, "a", ["estimate", "reference"]
    if "ball" in columns:
        return None, "c0", ["c1"] if "c1" in columns else ["radius"]
    if "p_value" in columns:
        return None, "row", ["p_value"]
    return None, columns[0], columns[1:]


def emit_plot_data(csv_path, out=None) -> str:
    """Long-format ``series,x,y`` triples for a results table.

    Convergence tables give one series per battery entry (x = a, y = error);
    propagator tables one series per spacing.  A table with no rows gives
    the header alone.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = list(reader.fieldnames or [])
        rows = list(reader)
    if rows and not columns:
        raise ParameterError(f"{csv_path}: missing header row")
    for i, r in enumerate(rows, 2):
        if None in r or any(v is None for v in r.values()):
            raise ParameterError(f"{csv_path}:{i}: row length differs from the header")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "x", "y"])
    if columns and rows:
        key, xcol, ycols = _series_layout(columns)
        for i, r in enumerate(rows):
            x = str(i) if xcol == "row" else r[xcol]
            for yc in ycols:
                if key is None:
                    series = yc
                elif len(ycols) == 1:
                    series = f"{key}={r[key]}"
                else:
                    series = f"{key}={r[key]}:{yc}"
                w.writerow([series, x, r[yc]])
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unpath", description="Discrete path-integral experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("config")
    r.add_argument("--strict", action="store_true", help="exit 1 if any threshold check fails")
    r.add_argument("--output", help="output directory (default: results/<config stem>)")
    r.add_argument("--seed", type=int, help="override the config seed")
    pd = sub.add_parser("plotdata", help="emit long-format series,x,y data from a results CSV")
    pd.add_argument("results")
    pd.add_argument("--output", help="write to a file instead of stdout")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plotdata":
        try:
            text = emit_plot_data(args.results, args.output)
        except (OSError, ParameterError) as exc:
            print(f"unpath: {exc}", file=sys.stderr)
            return 2
        if args.output is None:
            sys.stdout.write(text)
        return 0
    try:
        cfg = load_config(Path(args.config))
        out = args.output or cfg.output or str(Path("results") / Path(args.config).stem)
        res = run_experiment(cfg, out, args.strict, args.seed)
    except (ParameterError, EmptyEnsembleError, ConvergenceError) as exc:
        print(f"unpath: {exc}", file=sys.stderr)
        return 2
    for k, ok in sorted(res.checks.items()):
        print(f"{'ok  ' if ok else 'FAIL'} {k}")
    print(f"wrote {res.csv_path} and {res.manifest_path}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
