"""Seeded Monte Carlo sweeps over panel sizes, with incremental CSV output.

One trial = generate design/signal/noise for a cell (n, trial index), draw
assignments, estimate, diagnose, flatten everything to a fixed column set.
Sweeps run cells in a process pool; the writer consumes results in
deterministic (n, trial) order regardless of completion order, so output
bytes never depend on scheduling.  Wall-clock columns are off by default
because replays must be byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import math
import statistics
import time

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (column_subsets, design_params, error_report,
                          gap_condition_holds, incoherence,
                          propensity_discrepancy, recovery_error_bound,
                          residual_decomposition, residual_operator_bound,
                          truncation_perturbation_bound)
from .errors import ValidationError
from .estimator import estimate
from .linalg import best_rank_s, norm
from .model import build_design, generate_noise, generate_signal, realize

SCHEMA_VERSION = "panelhte-sweep-v1"
ERROR_COLUMN = "error"

_BASE_COLUMNS = ("n", "m", "seed", "trial")
_NORM_KEYS = ("two_infty_raw", "two_infty_norm", "frobenius_norm", "operator",
              "entry_max")
_TIMING_COLUMNS = ("wall_generate", "wall_estimate", "wall_diagnose")


@dataclasses.dataclass(frozen=True)
class TrialRecord:
    """One sweep cell, flattened.  `values` holds every non-key column;
    `error` is empty on success and carries the message on failure."""

    n: int
    m: int
    seed: int
    trial: int
    values: dict
    error: str = ""


def cell_seed(base_seed: int, n: int, trial: int) -> int:
    """Derived 64-bit seed for a sweep cell; distinct cells never collide in
    practice and every sweep audits that outright."""
    ss = np.random.SeedSequence((int(base_seed), int(n), int(trial)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def cell_rngs(base_seed: int, n: int, trial: int):
    ss = np.random.SeedSequence((int(base_seed), int(n), int(trial)))
    design_ss, signal_ss, noise_ss, assign_ss, sketch_ss = ss.spawn(5)
    return {
        "design": np.random.default_rng(design_ss),
        "signal": np.random.default_rng(signal_ss),
        "noise": np.random.default_rng(noise_ss),
        "assign": int(assign_ss.generate_state(1, dtype=np.uint64)[0]),
        "sketch": int(sketch_ss.generate_state(1, dtype=np.uint64)[0]),
    }


def _size_for(config: ExperimentConfig, n: int) -> int:
    for size_n, size_m in config.sizes:
        if size_n == n:
            return size_m
    raise ValidationError(f"n={n} is not one of the configured sizes "
                          f"{[s[0] for s in config.sizes]}")


def sweep_columns(config: ExperimentConfig) -> tuple[str, ...]:
    """The fixed column set for this experiment's CSV."""
    cols = list(_BASE_COLUMNS)
    cols += ["selected_rank_0", "selected_rank_1", "tau_0", "tau_1",
             "floor_count_0", "floor_count_1"]
    for prefix in ("err_effect", "err_outcome_0", "err_outcome_1"):
        cols += [f"{prefix}_{key}" for key in _NORM_KEYS]
    cols += [f"avg_err_{name}_max" for name in config.subsets]
    cols += ["q", "r_p", "p_op_0", "p_op_1", "t_0", "t_1"]
    cols += ["sigma_1_0", "sigma_1_1", "mu_0", "mu_1",
             "p_hat_gap_0", "p_hat_gap_1"]
    if config.record_bounds:
        cols += ["e0_op_0", "e0_op_1", "er_op_0", "er_op_1",
                 "sigma_noise_0", "sigma_noise_1",
                 "bound_recovery_0", "bound_recovery_1", "bound_residual_op",
                 "bound_trunc_0", "bound_trunc_1",
                 "trunc_err_0", "trunc_err_1", "gap_ok_0", "gap_ok_1"]
    if config.record_timings:
        cols += list(_TIMING_COLUMNS)
    cols.append(ERROR_COLUMN)
    return tuple(cols)


def _max_entry_sigma(instance, action: int) -> float:
    """Exact per-entry standard deviation ceiling of the scaled residual.

    Entry (i,j) of the residual is ((D-p)A + D E) / p_bar with D Bernoulli(p)
    and E independent mean-zero noise, so its variance is
    (A^2 p (1-p) + p var(E)) / p_bar^2.  Uses the configured noise law's
    variance (uniform on [-b,b] has b^2/3, sign flips have b^2).
    """
    a = instance.signal.for_action(action)
    pa = instance.design.propensity_for(action)
    from .model import row_means_exact
    pbar = row_means_exact(pa)
    b = instance.noise.entry_bound
    var_e = b * b / 3.0 if instance.noise.law == "uniform_symmetric" else b * b
    var = (a * a * pa * (1.0 - pa) + pa * var_e) / (pbar[:, None] ** 2)
    return float(np.sqrt(var.max()))


def run_trial(config: ExperimentConfig, n: int, trial_index: int) -> TrialRecord:
    """One generate -> observe -> estimate -> diagnose cycle, deterministic
    given (config.seed, n, trial_index)."""
    m = _size_for(config, n)
    seed = cell_seed(config.seed, n, trial_index)
    rngs = cell_rngs(config.seed, n, trial_index)
    k_total = config.entry_bound + config.noise_bound

    t0 = time.perf_counter()
    design = build_design(n, m, config.design_family, config.design_params,
                          rngs["design"])
    params = design_params(design)
    snr_floor = 0.0
    if config.snr_floor_multiplier > 0.0:
        snr_floor = config.snr_floor_multiplier * k_total * config.rank \
            * max(params.t_0, params.t_1)
    signal = generate_signal(n, m, config.rank, config.entry_bound,
                             config.spectrum, rngs["signal"],
                             snr_floor=snr_floor)
    noise = generate_noise(n, m, config.noise_bound, config.noise_law,
                           rngs["noise"])
    instance, obs = realize(design, signal, noise, rngs["assign"])
    t1 = time.perf_counter()

    est_config = dataclasses.replace(config.estimator, sketch_seed=rngs["sketch"])
    result = estimate(obs, est_config, design=design)
    t2 = time.perf_counter()

    subsets = column_subsets(m, config.subsets, seed=config.subset_seed)
    report = error_report(result.effect, signal.effect(),
                          (result.outcome_0, result.outcome_1),
                          (signal.a0, signal.a1), subsets=subsets)
    values = {
        "selected_rank_0": result.selected_rank_0,
        "selected_rank_1": result.selected_rank_1,
        "tau_0": result.tau_0,
        "tau_1": result.tau_1,
        "floor_count_0": result.floor_count_0,
        "floor_count_1": result.floor_count_1,
    }
    values.update(report.flatten())
    values.update(params.flatten())
    mu = {a: incoherence(signal.for_action(a), config.rank).mu for a in (0, 1)}
    values.update({
        "sigma_1_0": float(signal.singular_values_0[0]),
        "sigma_1_1": float(signal.singular_values_1[0]),
        "mu_0": mu[0],
        "mu_1": mu[1],
        "p_hat_gap_0": propensity_discrepancy(obs, design, 0),
        "p_hat_gap_1": propensity_discrepancy(obs, design, 1),
    })
    if config.record_bounds:
        values["bound_residual_op"] = residual_operator_bound(
            k_total, params.r_p, params.q, n, m)
        for action in (0, 1):
            bias, residual = residual_decomposition(obs, instance, action)
            e0_op = norm(bias, "operator")
            er_op = norm(residual, "operator")
            sigma = _max_entry_sigma(instance, action)
            sv = signal.singular_values_for(action)
            sigma_s = float(sv[-1])
            delta_s = sigma_s
            a_true = signal.for_action(action)
            trunc = best_rank_s(a_true + bias + residual, config.rank) - a_true
            values[f"e0_op_{action}"] = e0_op
            values[f"er_op_{action}"] = er_op
            values[f"sigma_noise_{action}"] = sigma
            values[f"bound_recovery_{action}"] = recovery_error_bound(
                k_total, config.rank, mu[action], params.r_p, params.q,
                params.p_op_for(action), n, m)
            values[f"bound_trunc_{action}"] = truncation_perturbation_bound(
                config.rank, k_total, sigma, e0_op, sigma_s, delta_s,
                mu[action], n, m)
            values[f"trunc_err_{action}"] = norm(trunc, "two_infty")
            values[f"gap_ok_{action}"] = gap_condition_holds(delta_s, er_op, e0_op)
    t3 = time.perf_counter()
    if config.record_timings:
        values["wall_generate"] = t1 - t0
        values["wall_estimate"] = t2 - t1
        values["wall_diagnose"] = t3 - t2
    return TrialRecord(n=n, m=m, seed=seed, trial=trial_index, values=values)


def _run_cell(args) -> TrialRecord:
    config, n, trial = args
    try:
        return run_trial(config, n, trial)
    except Exception as exc:  # failed cells become error rows, sweep continues
        message = " ".join(f"{type(exc).__name__}: {exc}".split())
        return TrialRecord(n=n, m=_size_for(config, n),
                           seed=cell_seed(config.seed, n, trial), trial=trial,
                           values={}, error=message)


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class SweepWriter:
    """Incremental CSV writer: schema comment, header, then one row per
    record in arrival order.  All numbers at 17 significant digits."""

    def __init__(self, stream, columns):
        self.columns = tuple(columns)
        self._stream = stream
        self._writer = csv.writer(stream, lineterminator="\n")
        stream.write(f"# schema={SCHEMA_VERSION}\n")
        self._writer.writerow(self.columns)

    def write_record(self, record: TrialRecord) -> None:
        known = {"n": record.n, "m": record.m, "seed": record.seed,
                 "trial": record.trial, ERROR_COLUMN: record.error}
        row = []
        for col in self.columns:
            if col in known:
                row.append(_format_value(known[col]))
            else:
                row.append(_format_value(record.values.get(col)))
        extra = set(record.values) - set(self.columns)
        if extra:
            raise ValidationError(f"record carries unknown columns {sorted(extra)}")
        self._writer.writerow(row)
        self._stream.flush()


@dataclasses.dataclass(frozen=True)
class SweepTable:
    """A parsed sweep CSV.  Cell text is kept verbatim so a re-serialization
    is byte-identical; floats(...) parses on demand."""

    schema: str
    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    def floats(self, column: str, n: int | None = None) -> list[float]:
        if column not in self.columns:
            raise ValidationError(f"no column {column!r} in sweep table")
        out = []
        for row in self.rows:
            if row.get(ERROR_COLUMN):
                continue
            if n is not None and int(row["n"]) != n:
                continue
            text = row[column]
            if text:
                out.append(float(text))
        return out

    def n_values(self) -> list[int]:
        seen = []
        for row in self.rows:
            value = int(row["n"])
            if value not in seen:
                seen.append(value)
        return sorted(seen)


def write_sweep_csv(records, columns, path_or_stream) -> None:
    if hasattr(path_or_stream, "write"):
        writer = SweepWriter(path_or_stream, columns)
        for record in records:
            writer.write_record(record)
        return
    with open(path_or_stream, "w", encoding="ascii", newline="") as fh:
        write_sweep_csv(records, columns, fh)


def read_sweep_csv(path_or_stream) -> SweepTable:
    if hasattr(path_or_stream, "read"):
        return _read_sweep(path_or_stream)
    with open(path_or_stream, "r", encoding="ascii", newline="") as fh:
        return _read_sweep(fh)


def _read_sweep(fh) -> SweepTable:
    first = fh.readline()
    if not first.startswith("# schema="):
        raise ValidationError("sweep CSV must begin with a '# schema=' line")
    schema = first[len("# schema="):].strip()
    reader = csv.reader(fh)
    try:
        columns = tuple(next(reader))
    except StopIteration:
        raise ValidationError("sweep CSV has no header row") from None
    rows = []
    for row in reader:
        if len(row) != len(columns):
            raise ValidationError(
                f"sweep CSV row has {len(row)} cells, header has {len(columns)}")
        rows.append(dict(zip(columns, row)))
    return SweepTable(schema=schema, columns=columns, rows=tuple(rows))


def serialize_table(table: SweepTable) -> str:
    """Re-emit a parsed table; byte-identical to the original file."""
    buffer = io.StringIO()
    buffer.write(f"# schema={table.schema}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([row[col] for col in table.columns])
    return buffer.getvalue()


def run_sweep(config: ExperimentConfig, threads: int = 1,
              out_path=None, progress=None) -> list[TrialRecord]:
    """All (n, trial) cells, seed-audited, optionally in a process pool.

    Results are written incrementally in sorted (n, trial) order when
    out_path is given; row order and bytes are independent of thread count.
    """
    cells = [(config, n, trial)
             for n, _ in config.sizes
             for trial in range(config.replications)]
    seeds = [cell_seed(config.seed, n, trial) for _, n, trial in cells]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError(
            "derived seed collision across sweep cells; change the base seed")
    columns = sweep_columns(config)

    records: list[TrialRecord] = []
    writer = None
    out_handle = None
    try:
        if out_path is not None:
            out_handle = open(out_path, "w", encoding="ascii", newline="")
            writer = SweepWriter(out_handle, columns)
        if threads <= 1:
            results = map(_run_cell, cells)
        else:
            pool = concurrent.futures.ProcessPoolExecutor(max_workers=threads)
            results = pool.map(_run_cell, cells)
        for record in results:
            records.append(record)
            if writer is not None:
                writer.write_record(record)
            if progress is not None:
                progress(record)
        if threads > 1:
            pool.shutdown()
    finally:
        if out_handle is not None:
            out_handle.close()
    return records


def median_errors(source, column: str = "err_effect_two_infty_norm"):
    """(n, median of column over non-failed trials) pairs, sorted by n.

    Accepts a list of TrialRecords or a SweepTable.
    """
    groups: dict[int, list[float]] = {}
    if isinstance(source, SweepTable):
        for n in source.n_values():
            values = source.floats(column, n=n)
            if values:
                groups[n] = values
    else:
        for record in source:
            if record.error:
                continue
            if column not in record.values:
                raise ValidationError(f"records carry no column {column!r}")
            groups.setdefault(record.n, []).append(float(record.values[column]))
    return [(n, float(statistics.median(values)))
            for n, values in sorted(groups.items())]


def fit_rate_slope(points) -> tuple[float, float, float]:
    """Least squares in log-log coordinates: (slope, intercept, r_squared).

    points are (n, error) pairs, all positive; two points determine the line
    exactly (r_squared 1 by convention when residuals vanish).
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise ValidationError(f"rate fitting needs at least 2 points, got {len(pts)}")
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValidationError("rate fitting needs positive sizes and errors")
    log_x = np.log([x for x, _ in pts])
    log_y = np.log([y for _, y in pts])
    slope, intercept = np.polyfit(log_x, log_y, 1)
    fitted = slope * log_x + intercept
    ss_res = float(np.sum((log_y - fitted) ** 2))
    ss_tot = float(np.sum((log_y - log_y.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if math.isclose(ss_res, 0.0, abs_tol=1e-24) else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r_squared)


def selection_rate(records, planted_rank: int) -> float:
    """Fraction of non-failed trials whose selected ranks (both actions)
    equal the planted rank."""
    good = [r for r in records if not r.error]
    if not good:
        raise ValidationError("no successful trials to summarize")
    hits = sum(1 for r in good
               if r.values["selected_rank_0"] == planted_rank
               and r.values["selected_rank_1"] == planted_rank)
    return hits / len(good)
