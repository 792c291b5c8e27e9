"""Command-line front end: ``polyens <subcommand> --config FILE``.

Exit status is 0 on success, 1 when a verification fails or a computation
breaks down (the report is still written when there is one), and 2 for
usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import Domain, FunctionBasis, make_basis
from .ensemble import average_char_poly, correlation_kernel, ensemble_from_basis, joint_density
from .output import (
    atomic_write_bytes,
    atomic_write_text,
    canonical_hash,
    write_spectra_binary,
    write_spectra_csv,
)
from .rmt import ExperimentConfig, sample_spectra
from .transforms import apply_pipeline, parse_pipeline
from .verify import DEFAULT_BINS, DEFAULT_THRESHOLDS, run_verification

__all__ = ["main", "describe", "SUBCOMMANDS", "ConfigError"]

SUBCOMMANDS = ("density", "kernel", "transform", "simulate", "verify", "acp")
FORMATS = ("json", "csv", "text")
_DEFAULT_FORMAT = {"density": "csv", "kernel": "csv", "transform": "csv", "simulate": "csv",
                   "verify": "text", "acp": "json"}
_KEYS = {"basis", "pipeline", "experiment", "thresholds", "grid", "points", "bins"}
_NEEDS = {
    "density": ("basis",),
    "kernel": ("basis",),
    "transform": ("basis",),
    "acp": ("basis",),
    "simulate": ("experiment",),
    "verify": ("basis", "experiment"),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# help text

_BASIS_SCHEMA = """\
  "basis": {"family": "laguerre" | "hermite" | "indicator" | "tabulated",
            "n": int, "nu": int (laguerre), "intervals": [[a, b], ...] (indicator),
            "table": [[x, f1, ..., fn], ...] (tabulated)}"""

_PIPELINE_SCHEMA = """\
  "pipeline": [{"step": "ginibre-product" | "truncation-product" | "restrict" |
                        "posdef-restrict" | "rank-one-add" | "rank-one-extend" |
                        "border-extend",
                "nu": int, "m": int, "c": number | "zero" | "infinity"}, ...]"""

_GRID_SCHEMA = """\
  "grid": {"lo": number, "hi": number, "points": int} or [x1, x2, ...]
          (default: 101 points on [0, 10] for the half-line, [-5, 5] otherwise)"""

_EXPERIMENT_SCHEMA = """\
  "experiment": {
    "initial": {"model": "ginibre", "rows": int, "cols": int}
             | {"model": "gue", "n": int}
             | {"model": "fixed", "spectrum": [...], "zeros": int}
             | {"model": "wishart", "size": int, "rank": int},
    "steps": [pipeline steps, as above],
    "extract": "eig" | "ssv" | "nonzero-eig",
    "trials": int,
    "seed": int (optional; --seed overrides, a fresh seed is recorded when absent)
  }"""

_DESCRIPTIONS = {
    "density": ("Level density K_n(x, x) of the basis after the pipeline, on a grid; "
                "with \"points\" also the joint density at each listed point set.",
                [_BASIS_SCHEMA, _PIPELINE_SCHEMA, _GRID_SCHEMA,
                 '  "points": [[x1, ..., xn], ...] (optional)'],
                {"basis": {"family": "laguerre", "nu": 0, "n": 2},
                 "pipeline": [{"step": "ginibre-product", "nu": 0}],
                 "grid": {"lo": 0, "hi": 8, "points": 33}}),
    "kernel": ("Correlation kernel K_n(x, y) on grid x grid, with its trace.",
               [_BASIS_SCHEMA, _PIPELINE_SCHEMA, _GRID_SCHEMA],
               {"basis": {"family": "hermite", "n": 3}, "grid": [-1, 0, 1]}),
    "transform": ("Tabulate the transformed functions g_1..g_n on the grid.",
                  [_BASIS_SCHEMA, _PIPELINE_SCHEMA, _GRID_SCHEMA],
                  {"basis": {"family": "hermite", "n": 3}, "pipeline": [{"step": "restrict"}],
                   "grid": {"lo": -4, "hi": 4, "points": 41}}),
    "acp": ("Coefficients (increasing degree) of the average characteristic polynomial.",
            [_BASIS_SCHEMA, _PIPELINE_SCHEMA],
            {"basis": {"family": "laguerre", "nu": 0, "n": 2}}),
    "simulate": ("Sample the matrix experiment and write one spectrum per trial "
                 "(CSV, JSON, text, or binary when --out ends in .bin).",
                 [_EXPERIMENT_SCHEMA],
                 {"experiment": {"initial": {"model": "ginibre", "rows": 2, "cols": 2},
                                 "steps": [{"step": "ginibre-product", "nu": 0}],
                                 "extract": "ssv", "trials": 1000, "seed": 1}}),
    "verify": ("Sample the matrix experiment and compare it with the ensemble predicted by "
               "\"pipeline\" (default: the experiment's steps) applied to \"basis\". "
               "Exit status 1 when any check fails. --format csv writes the plot data "
               "(x, empirical, predicted); otherwise the plot data goes next to --out "
               "as <out>.plot.csv.",
               [_BASIS_SCHEMA, _PIPELINE_SCHEMA, _EXPERIMENT_SCHEMA,
                '  "thresholds": {"l1": number, "acp_z": number, '
                '"interlacing_failures": number}',
                f'  "bins": int (default {DEFAULT_BINS})'],
               {"basis": {"family": "laguerre", "nu": 0, "n": 2},
                "experiment": {"initial": {"model": "ginibre", "rows": 2, "cols": 2},
                               "steps": [{"step": "ginibre-product", "nu": 0}],
                               "extract": "ssv", "trials": 10000, "seed": 42}}),
}


def describe(subcommand: str) -> str:
    """Schema and one runnable example for ``subcommand``."""
    if subcommand not in _DESCRIPTIONS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from "
                          f"{', '.join(SUBCOMMANDS)}")
    summary, schema, example = _DESCRIPTIONS[subcommand]
    lines = [f"polyens {subcommand}", "", summary, "", "config file:", "{"]
    lines += schema
    lines.append("}")
    if subcommand == "verify":
        lines += ["", "pass thresholds (defaults):"]
        lines += [f"  {k} = {v}" for k, v in DEFAULT_THRESHOLDS.items()]
        lines.append("  every check passes when its value is <= its threshold")
    lines += ["", "example config:", json.dumps(example, indent=2), "",
              f"example: polyens {subcommand} --config example.json --format "
              f"{_DEFAULT_FORMAT[subcommand]}"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config handling

@dataclass
class Bundle:
    raw: dict
    basis: FunctionBasis | None
    pipeline: list
    experiment: ExperimentConfig | None
    thresholds: dict
    grid: np.ndarray | None
    points: np.ndarray | None
    bins: int

    @property
    def hash(self) -> str:
        return canonical_hash(self.raw)


def _grid(spec, domain: Domain) -> np.ndarray:
    if spec is None:
        lo, hi = (0.0, 10.0) if domain is Domain.HALF_LINE else (-5.0, 5.0)
        return np.linspace(lo, hi, 101)
    if isinstance(spec, dict):
        pts = int(spec.get("points", 101))
        if pts < 1:
            raise ConfigError("grid needs at least one point")
        return np.linspace(float(spec["lo"]), float(spec["hi"]), pts)
    g = np.asarray(spec, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ConfigError("grid must be a non-empty list of numbers")
    return g


def load_bundle(path, subcommand: str, seed: int | None) -> Bundle:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in _NEEDS[subcommand]:
        if key not in raw:
            raise ConfigError(f"{subcommand} needs a {key!r} entry in the config")
    raw = json.loads(json.dumps(raw))
    try:
        basis = make_basis(raw["basis"]) if "basis" in raw else None
        experiment = None
        if "experiment" in raw:
            exp = dict(raw["experiment"])
            if seed is not None:
                exp["seed"] = seed
            if exp.get("seed") is None and subcommand in ("simulate", "verify"):
                exp["seed"] = int(np.random.SeedSequence().entropy % 2 ** 63)
            raw["experiment"] = exp
            experiment = ExperimentConfig.from_dict(exp)
        if "pipeline" in raw:
            pipeline = parse_pipeline(raw["pipeline"])
        elif experiment is not None and subcommand == "verify":
            pipeline = list(experiment.steps)
        else:
            pipeline = []
        thresholds = dict(DEFAULT_THRESHOLDS)
        extra = raw.get("thresholds", {})
        if set(extra) - set(DEFAULT_THRESHOLDS):
            raise ConfigError(f"unknown thresholds: {sorted(set(extra) - set(DEFAULT_THRESHOLDS))}")
        thresholds.update({k: float(v) for k, v in extra.items()})
        grid = _grid(raw.get("grid"), basis.domain) if basis is not None else None
        points = None
        if "points" in raw:
            points = np.atleast_2d(np.asarray(raw["points"], dtype=float))
        bins = int(raw.get("bins", DEFAULT_BINS))
        if bins < 1:
            raise ConfigError("bins must be positive")
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return Bundle(raw, basis, pipeline, experiment, thresholds, grid, points, bins)


# ---------------------------------------------------------------------------
# rendering

def _table(fmt: str, header: list[str], columns: list[np.ndarray], meta: dict) -> str:
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if fmt == "json":
        out = dict(meta)
        out.update({h: c.tolist() for h, c in zip(header, cols)})
        return json.dumps(out, indent=2, sort_keys=True) + "\n"
    rows = list(zip(*cols))
    if fmt == "csv":
        lines = [f"# {k} {v}" for k, v in meta.items()]
        lines.append(",".join(header))
        lines += [",".join(repr(float(v)) for v in r) for r in rows]
        return "\n".join(lines) + "\n"
    lines = [f"{k:<12} {v}" for k, v in meta.items()]
    lines.append("")
    lines.append("".join(f"{h:>22}" for h in header))
    lines += ["".join(f"{float(v):>22.14g}" for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _transformed(bundle: Bundle) -> FunctionBasis:
    return apply_pipeline(bundle.basis, bundle.pipeline)


def _cmd_density(bundle: Bundle, fmt: str, threads: int):
    basis = _transformed(bundle)
    ens = ensemble_from_basis(basis)
    kernel = correlation_kernel(ens)
    x = bundle.grid
    meta = {"config-hash": bundle.hash, "n": ens.n}
    text = _table(fmt, ["x", "level_density"], [x, kernel.diagonal(x)], meta)
    if bundle.points is not None:
        values = [joint_density(ens, p) for p in bundle.points]
        if fmt == "json":
            out = json.loads(text)
            out["points"] = bundle.points.tolist()
            out["joint_density"] = [float(v) for v in values]
            text = json.dumps(out, indent=2, sort_keys=True) + "\n"
        else:
            extra = _table(fmt, [f"x{j + 1}" for j in range(ens.n)] + ["joint_density"],
                           list(bundle.points.T) + [np.array(values)], {})
            text += "\n" + extra
    return text, 0


def _cmd_kernel(bundle: Bundle, fmt: str, threads: int):
    kernel = correlation_kernel(ensemble_from_basis(_transformed(bundle)))
    x = bundle.grid
    K = kernel(x[:, None], x[None, :])
    meta = {"config-hash": bundle.hash, "n": kernel.n, "trace": kernel.trace()}
    X, Y = np.meshgrid(x, x, indexing="ij")
    return _table(fmt, ["x", "y", "kernel"], [X, Y, K], meta), 0


def _cmd_transform(bundle: Bundle, fmt: str, threads: int):
    basis = _transformed(bundle)
    x = bundle.grid
    F = basis(x)
    header = ["x"] + [f"g{k + 1}" for k in range(basis.n)]
    meta = {"config-hash": bundle.hash, "n": basis.n}
    return _table(fmt, header, [x] + [F[:, k] for k in range(basis.n)], meta), 0


def _cmd_acp(bundle: Bundle, fmt: str, threads: int):
    poly = average_char_poly(ensemble_from_basis(_transformed(bundle)))
    deg = np.arange(poly.degree + 1)
    meta = {"config-hash": bundle.hash, "degree": poly.degree}
    return _table(fmt, ["power", "coefficient"], [deg, poly.coefficients], meta), 0


def _cmd_simulate(bundle: Bundle, fmt: str, threads: int, binary: bool = False):
    sample = sample_spectra(bundle.experiment, threads=threads)
    if binary:
        return write_spectra_binary(sample.spectra, bundle.hash, sample.seed), 0
    if fmt == "csv":
        return write_spectra_csv(sample.spectra, bundle.hash, sample.seed), 0
    meta = {"config-hash": bundle.hash, "seed": sample.seed, "rejected": sample.rejected}
    if fmt == "json":
        out = dict(meta)
        out["spectra"] = sample.spectra.tolist()
        return json.dumps(out, indent=2, sort_keys=True) + "\n", 0
    S = sample.spectra
    return _table(fmt, [f"x{j + 1}" for j in range(S.shape[1])], list(S.T), meta), 0


def _cmd_verify(bundle: Bundle, fmt: str, threads: int):
    report = run_verification(bundle.experiment, bundle.basis, bundle.pipeline,
                              thresholds=bundle.thresholds, threads=threads, bins=bundle.bins)
    report.config_hash = bundle.hash
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = f"# config-hash {bundle.hash}\n" + report.plot_csv()
    else:
        text = report.to_text()
    plot = f"# config-hash {bundle.hash}\n" + report.plot_csv()
    return text, (0 if report.passed else 1), plot


_COMMANDS = {"density": _cmd_density, "kernel": _cmd_kernel, "transform": _cmd_transform,
             "acp": _cmd_acp, "simulate": _cmd_simulate, "verify": _cmd_verify}


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, not {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _threads(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threads must be an integer, not {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="experiment JSON")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--seed", type=_seed, metavar="INT", help="override the config seed")
    common.add_argument("--threads", type=_threads, default=os.cpu_count() or 1, metavar="INT",
                        help="worker threads for sampling (default: all cores)")
    common.add_argument("--format", choices=FORMATS, help="output format")

    parser = _Parser(prog="polyens", description="Polynomial ensembles and their transforms.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=_DESCRIPTIONS[name][0].split(";")[0])
    d = sub.add_parser("describe", help="print the config schema and an example")
    d.add_argument("subcommand", help="one of: " + ", ".join(SUBCOMMANDS))
    return parser


def _emit(data, out):
    if out is None:
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
        else:
            sys.stdout.write(data)
        sys.stdout.flush()
    elif isinstance(data, bytes):
        atomic_write_bytes(out, data)
    else:
        atomic_write_text(out, data)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "describe":
        try:
            sys.stdout.write(describe(args.subcommand))
        except ConfigError as exc:
            print(f"polyens: error: {exc}", file=sys.stderr)
            return 2
        return 0

    fmt = args.format or _DEFAULT_FORMAT[args.command]
    try:
        bundle = load_bundle(args.config, args.command, args.seed)
    except ConfigError as exc:
        print(f"polyens: error: {exc}", file=sys.stderr)
        return 2

    binary = args.command == "simulate" and args.out is not None and args.out.endswith(".bin")
    try:
        if args.command == "simulate":
            result = _cmd_simulate(bundle, fmt, args.threads, binary)
        else:
            result = _COMMANDS[args.command](bundle, fmt, args.threads)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"polyens: {args.command} failed: {exc}", file=sys.stderr)
        return 1

    data, status = result[0], result[1]
    try:
        _emit(data, args.out)
        if args.command == "verify" and args.out is not None and fmt != "csv":
            atomic_write_text(args.out + ".plot.csv", result[2])
    except OSError as exc:
        print(f"polyens: cannot write output: {exc}", file=sys.stderr)
        return 2
    if status:
        print("polyens: verification failed", file=sys.stderr)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
