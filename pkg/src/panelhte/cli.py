"""Command line driver.

Subcommands:
  run       Monte Carlo sweep from a config file or preset, CSV out.
  trial     one (n, trial) cell, flags overriding the config; CSV to stdout.
  slope     log-log rate fit over a sweep CSV's per-size medians.
  validate  feasibility report: overlap, noise aggregates, thresholds, SNR.
  fixtures  emit reference matrices with brute-force singular values.
  report    render figures plus summary.csv from a sweep CSV.
  preset    print or save a named preset config as YAML.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
Relative default outputs land in $PANELHTE_OUTDIR (falling back to the
working directory); an explicit --out always wins.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np
import yaml

from .config import ExperimentConfig, config_to_mapping, load_config, save_config
from .diagnostics import design_params, incoherence
from .errors import ValidationError
from .estimator import THEORY_MULTIPLIER_DEFAULT
from .harness import (cell_rngs, fit_rate_slope, median_errors, read_sweep_csv,
                      run_sweep, run_trial, sweep_columns, write_sweep_csv)
from .model import build_design, generate_signal, save_matrix_csv
from .oracle import oracle_svd
from .presets import PRESET_NAMES, preset_config

OUTDIR_ENV = "PANELHTE_OUTDIR"


class _Parser(argparse.ArgumentParser):
    # usage problems (unknown flags included) exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _out_dir() -> str:
    return os.environ.get(OUTDIR_ENV) or "."


def _resolve_out(arg_out, config_output, default_name: str) -> str:
    path = arg_out or os.path.join(_out_dir(), config_output or default_name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _config_from_args(args, default_preset: str | None = None) -> ExperimentConfig:
    path = getattr(args, "config", None)
    preset = getattr(args, "preset", None)
    if path and preset:
        raise ValidationError("give either a config file or --preset, not both")
    if path:
        config = load_config(path)
    elif preset or default_preset:
        config = preset_config(preset or default_preset, nu=getattr(args, "nu", 0.5))
    else:
        raise ValidationError("a config file or --preset is required")
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    threads = args.threads if args.threads and args.threads > 0 else (os.cpu_count() or 1)
    out_path = _resolve_out(args.out, config.output, f"{config.name}.csv")
    records = run_sweep(config, threads=threads, out_path=out_path)
    failures = sum(1 for r in records if r.error)
    print(f"wrote {len(records)} rows to {out_path} ({failures} failed cells)")
    for record in records:
        if record.error:
            print(f"  failed n={record.n} trial={record.trial}: {record.error}")
    medians = median_errors(records)
    for n, med in medians:
        print(f"n={n} median_error={_fmt(med)}")
    if len(medians) >= 2:
        slope, intercept, r_squared = fit_rate_slope(medians)
        print(f"slope={_fmt(slope)} intercept={_fmt(intercept)} "
              f"r_squared={_fmt(r_squared)}")
    return 0


def _cmd_trial(args) -> int:
    config = _config_from_args(args, default_preset="row-homogeneous")
    n = args.n if args.n is not None else config.sizes[0][0]
    size_map = dict(config.sizes)
    if args.m is not None:
        m = args.m
    elif n in size_map:
        m = size_map[n]
    else:
        n0, m0 = config.sizes[0]
        m = int(round(n * (m0 / n0)))
    config = dataclasses.replace(config, sizes=((n, m),))
    record = run_trial(config, n, args.trial)
    columns = sweep_columns(config)
    if args.out:
        out_path = _resolve_out(args.out, None, "trial.csv")
        write_sweep_csv([record], columns, out_path)
        print(f"wrote {out_path}")
    else:
        write_sweep_csv([record], columns, sys.stdout)
    return 0


def _cmd_slope(args) -> int:
    table = read_sweep_csv(args.csv)
    medians = median_errors(table, column=args.column)
    for n, med in medians:
        print(f"n={n} median={format(med, '.17g')}")
    slope, intercept, r_squared = fit_rate_slope(medians)
    print(f"slope={format(slope, '.17g')} intercept={format(intercept, '.17g')} "
          f"r_squared={format(r_squared, '.17g')}")
    return 0


def _cmd_validate(args) -> int:
    config = _config_from_args(args)
    k_total = config.entry_bound + config.noise_bound
    rule = config.estimator.threshold
    print(f"experiment {config.name!r}: design={config.design_family} "
          f"rank={config.rank} spectrum={config.spectrum} K={_fmt(k_total)} "
          f"threshold={rule.kind}")
    if rule.kind == "theory" and rule.multiplier != THEORY_MULTIPLIER_DEFAULT:
        print(f"note: threshold multiplier {_fmt(rule.multiplier)} (desk-scale "
              f"calibration; analysis constant {_fmt(THEORY_MULTIPLIER_DEFAULT)})")
    feasible = True
    for n, m in config.sizes:
        rngs = cell_rngs(config.seed, n, 0)
        design = build_design(n, m, config.design_family, config.design_params,
                              rngs["design"])
        params = design_params(design)
        signal = generate_signal(n, m, config.rank, config.entry_bound,
                                 config.spectrum, rngs["signal"])
        sigma1 = (float(signal.singular_values_0[0]),
                  float(signal.singular_values_1[0]))
        floor = config.snr_floor_multiplier * k_total * config.rank \
            * max(params.t_0, params.t_1)
        ok = min(sigma1) >= floor
        feasible = feasible and ok
        mu = max(incoherence(signal.a0, config.rank).mu,
                 incoherence(signal.a1, config.rank).mu)
        line = (f"n={n} m={m}: q={_fmt(params.q)} r_p={_fmt(params.r_p)} "
                f"p_op=({_fmt(params.p_op_0)},{_fmt(params.p_op_1)}) "
                f"T=({_fmt(params.t_0)},{_fmt(params.t_1)})")
        if rule.kind == "theory":
            line += (f" tau=({_fmt(rule.multiplier * k_total * params.t_0)},"
                     f"{_fmt(rule.multiplier * k_total * params.t_1)})")
        elif rule.kind == "oracle":
            line += f" tau=({_fmt(rule.tau_0)},{_fmt(rule.tau_1)})"
        line += (f" sigma1=({_fmt(sigma1[0])},{_fmt(sigma1[1])}) "
                 f"snr_floor={_fmt(floor)} "
                 f"snr={'ok' if ok else 'INFEASIBLE'} mu={_fmt(mu)}")
        if design.nu_target is not None:
            line += (f" nu_target={_fmt(design.nu_target)} "
                     f"nu_realized={_fmt(max(design.nu_realized))} "
                     f"clipped={design.clip_count}")
        print(line)
    if not feasible:
        print("infeasible: requested SNR floor exceeds the strongest signal "
              "the entry bound allows at one or more sizes")
        return 1
    return 0


_FIXTURE_SIZES = ((2, 2), (3, 2), (1, 5), (4, 4), (5, 3), (6, 9), (8, 13),
                  (12, 7), (10, 10), (16, 24), (20, 30), (24, 17))
_MIN_RELATIVE_GAP = 1e-5


def _fixture_matrices(seed: int):
    """Deterministic reference matrices whose distinct singular values are
    separated by at least 1e-5 relative, so rank-s comparisons are stable."""
    rng = np.random.default_rng(seed)
    yield "zeros_4x6", np.zeros((4, 6))
    yield "ones_3x3", np.ones((3, 3))
    yield "diag_5x5", np.diag([5.0, 4.0, 3.0, 2.0, 1.0])
    for n, m in _FIXTURE_SIZES:
        r = min(n, m)
        for attempt in range(64):
            u, _ = np.linalg.qr(rng.standard_normal((n, r)))
            v, _ = np.linalg.qr(rng.standard_normal((m, r)))
            spectrum = 0.6 ** np.arange(r) * (1.0 + 0.1 * rng.random(r))
            spectrum = np.sort(spectrum)[::-1]
            gaps = np.diff(-np.concatenate([spectrum, [0.0]]))
            if np.min(gaps) > _MIN_RELATIVE_GAP * spectrum[0]:
                break
        else:
            raise RuntimeError(f"no well-separated spectrum found for ({n}, {m})")
        yield f"planted_{n}x{m}", (u * spectrum) @ v.T


def _cmd_fixtures(args) -> int:
    out_dir = args.out or os.path.join(_out_dir(), "fixtures")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    count = 0
    with open(manifest_path, "w", encoding="ascii") as manifest:
        manifest.write("name,rows,cols,singular_values\n")
        for name, matrix in _fixture_matrices(args.seed):
            save_matrix_csv(matrix, os.path.join(out_dir, f"{name}.csv"))
            reference = oracle_svd(matrix)
            values = ";".join(format(s, ".17g") for s in reference.s)
            manifest.write(f"{name},{matrix.shape[0]},{matrix.shape[1]},{values}\n")
            count += 1
    print(f"wrote {count} fixtures and manifest.csv to {out_dir}")
    return 0


def _cmd_report(args) -> int:
    from .plots import render_report  # matplotlib import deferred to use

    table = read_sweep_csv(args.csv)
    out_dir = args.out or os.path.join(_out_dir(), "report")
    paths = render_report(table, out_dir, column=args.column)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def _cmd_preset(args) -> int:
    config = preset_config(args.name, nu=args.nu)
    if args.out:
        save_config(config, args.out)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(yaml.safe_dump(config_to_mapping(config), sort_keys=False))
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_config_source(p):
    p.add_argument("config", nargs="?", default=None,
                   help="YAML experiment config file")
    p.add_argument("--preset", choices=PRESET_NAMES, default=None,
                   help="use a named preset instead of a config file")
    p.add_argument("--nu", type=float, default=0.5,
                   help="nonuniformity level for the spectral-nonuniform preset")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's base seed")


def _build_parser() -> _Parser:
    parser = _Parser(prog="panelhte",
                     description="Panel treatment-effect estimation experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser,
                                required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="run a seeded Monte Carlo sweep")
    _add_config_source(p)
    p.add_argument("--threads", type=int, default=0,
                   help="worker processes (default: all cores)")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("trial", help="run a single sweep cell")
    _add_config_source(p)
    p.add_argument("--n", type=int, default=None, help="units (rows)")
    p.add_argument("--m", type=int, default=None, help="time points (columns)")
    p.add_argument("--trial", type=int, default=0, help="trial index")
    p.add_argument("--out", default=None, help="output CSV path (default stdout)")
    p.set_defaults(handler=_cmd_trial)

    p = sub.add_parser("slope", help="fit a log-log rate to a sweep CSV")
    p.add_argument("csv", help="sweep CSV emitted by `run`")
    p.add_argument("--column", default="err_effect_two_infty_norm",
                   help="error column to fit")
    p.set_defaults(handler=_cmd_slope)

    p = sub.add_parser("validate", help="feasibility report for a config")
    _add_config_source(p)
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("fixtures", help="emit reference matrices + manifest")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="fixture generator seed")
    p.set_defaults(handler=_cmd_fixtures)

    p = sub.add_parser("report", help="render figures from a sweep CSV")
    p.add_argument("csv", help="sweep CSV emitted by `run`")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--column", default="err_effect_two_infty_norm",
                   help="error column to plot")
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("preset", help="print or save a named preset config")
    p.add_argument("name", choices=PRESET_NAMES)
    p.add_argument("--nu", type=float, default=0.5,
                   help="nonuniformity level for spectral-nonuniform")
    p.add_argument("--out", default=None, help="write YAML here instead of stdout")
    p.set_defaults(handler=_cmd_preset)

    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
