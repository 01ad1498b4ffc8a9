"""Batch front-end: run named experiments from JSON configs.

Commands
--------
``isaacslab run <config.json> [--seed S] [--output DIR] [--threads K]``
    Run the configured experiment, write a config echo, a metrics file
    and optional field dumps / convergence tables into the output
    directory.
``isaacslab list-instances``
    Print the built-in instance names.
``isaacslab validate <config.json>``
    Parse the config and probe the instance's standing assumptions.

Exit codes: 0 success, 2 configuration error, 3 numerical precondition
(stability bound, divergence, contract violation), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import (
    dpp_residual,
    lower_value,
    penalization_convergence,
    upper_value,
    value_comparison,
)
from .config import load_config, parse_config
from .errors import (
    CflError,
    ConfigError,
    DivergenceError,
    EvaluationError,
    FitError,
    NotFoundError,
    PreconditionError,
)
from .oracles import crr_put, degenerate_rbsde_value
from .pde import cfl_required_nt, solve_obstacle_pde
from .problems import BUILTIN_NAMES, builtin_instance, validate_instance
from .rbsde import RegressionBasis, solve_reflected
from .sde import ControlPath, TimeMesh, simulate_paths
from .problems import eval_terminal


@dataclass(frozen=True)
class ResultRecord:
    """Outcome of one experiment run."""

    experiment: str
    timestamp: str
    config_digest: str
    metrics: dict
    schedule: Optional[dict]
    files: tuple


def _instance_of(config):
    try:
        return builtin_instance(config.instance_name, config.instance_params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sized_grid(config, instance, grid=None):
    grid = grid if grid is not None else config.grid
    if grid is None:
        raise ConfigError(f"experiment '{config.experiment}' needs a grid section")
    if config.grid_nt_auto:
        grid = dataclasses.replace(grid, nt=cfl_required_nt(instance, grid))
    return grid


def _probe_initial(field, x_probe):
    x_probe = np.atleast_1d(np.asarray(x_probe, dtype=float))
    if field.grid.ndim == 1:
        return float(field.interp(0, x_probe[0]))
    nodes = field.grid.nodes()
    j = int(np.argmin(np.linalg.norm(nodes - x_probe, axis=1)))
    return float(field.slices[0].ravel()[j])


def _dump_field(field, directory, name):
    rows_t, rows_n = np.meshgrid(np.arange(len(field.times)),
                                 np.arange(field.slices[0].size), indexing="ij")
    nodes = field.grid.nodes()
    n = field.grid.ndim
    coords = nodes[rows_n.ravel()]
    data = np.column_stack([rows_t.ravel(), rows_n.ravel(), coords,
                            field.slices.reshape(len(field.times), -1).ravel()])
    header = ",".join(["t_index", "flat_node_index"]
                      + [f"x_{i}" for i in range(n)] + ["value"])
    path = Path(directory) / name
    fmt = ["%d", "%d"] + ["%.17g"] * (n + 1)
    np.savetxt(path, data, fmt=fmt, delimiter=",", header=header, comments="")
    return name


def _run_solve(config, outdir):
    instance = _instance_of(config)
    grid = _sized_grid(config, instance)
    which = config.options.get("which", "lower")
    field = solve_obstacle_pde(which, instance, grid)
    probe = config.options.get("probe_x")
    if probe is None:
        probe = [0.5 * (lo + hi) for lo, hi in grid.box]
    probe = np.atleast_1d(np.asarray(probe, dtype=float))
    metrics = {
        "which": which,
        "nt": grid.nt,
        "value_t0_probe": _probe_initial(field, probe),
        "probe_x": probe[0] if grid.ndim == 1 else list(probe),
        "initial_min": float(field.slices[0].min()),
        "initial_max": float(field.slices[0].max()),
    }
    files = []
    if "csv" in config.formats:
        files.append(_dump_field(field, outdir, "field.csv"))
    return metrics, None, files


def _run_penalization(config, outdir):
    instance = _instance_of(config)
    grid = _sized_grid(config, instance)
    table = penalization_convergence(instance, grid, config.m_schedule)
    metrics = {
        "nt": grid.nt,
        "monotone_ok": table.monotone_ok,
        "max_monotone_violation": table.max_monotone_violation,
        "final_gap": table.sup_gaps[-1],
    }
    schedule = {"parameter": "m", "values": list(table.m_schedule),
                "metric": "sup_gap", "metric_values": list(table.sup_gaps)}
    return metrics, schedule, []


def _run_dpp(config, outdir):
    instance = _instance_of(config)
    grid = _sized_grid(config, instance)
    field = solve_obstacle_pde(config.options.get("which", "lower"), instance, grid)
    t_fraction = float(config.options.get("t_fraction", 0.5))
    t_index = int(round(t_fraction * grid.nt))
    deltas, residuals = [], []
    for frac in config.delta_fractions:
        steps = max(1, int(round(frac * grid.nt)))
        steps = min(steps, grid.nt - t_index)
        if steps < 1:
            continue
        report = dpp_residual(field, instance, t_index, steps)
        deltas.append(report.delta)
        residuals.append(report.max_residual)
    if not residuals:
        raise PreconditionError("no usable (t, delta) pair inside the horizon")
    metrics = {"nt": grid.nt, "t_index": t_index,
               "max_residual": max(residuals)}
    schedule = {"parameter": "delta", "values": deltas,
                "metric": "max_residual", "metric_values": residuals}
    return metrics, schedule, []


def _run_compare_wu(config, outdir):
    instance = _instance_of(config)
    grid = _sized_grid(config, instance)
    low = lower_value(instance, grid)
    up = upper_value(instance, grid)
    violation, gap = value_comparison(low, up)
    metrics = {"nt": grid.nt, "max_violation": violation, "max_gap": gap}
    files = []
    if "csv" in config.formats:
        files.append(_dump_field(low, outdir, "field_lower.csv"))
        files.append(_dump_field(up, outdir, "field_upper.csv"))
    return metrics, None, files


def _run_american_oracle(config, outdir):
    if config.instance_name != "american_put":
        raise ConfigError("american_oracle runs on the 'american_put' instance")
    params = dict(config.instance_params)
    rate = float(params.get("r", 0.05))
    vol = float(params.get("sigma0", 0.2))
    strike = float(params.get("K0", 100.0))
    horizon = float(params.get("T", 1.0))
    instance = _instance_of(config)
    probe_x = float(config.options.get("probe_x", strike))
    steps = int(config.options.get("binomial_steps", 2000))
    reference = crr_put(probe_x, strike, rate, vol, horizon, steps, american=True)

    base = config.grid
    if base is None:
        raise ConfigError("american_oracle needs a grid section (box)")
    errors, nxs = [], []
    value = None
    for nx in config.nx_schedule:
        grid = dataclasses.replace(base, nx=(int(nx),))
        grid = _sized_grid(config, instance, grid)
        field = solve_obstacle_pde("lower", instance, grid)
        value = _probe_initial(field, probe_x)
        nxs.append(int(nx))
        errors.append(abs(value - reference) / abs(reference))
    metrics = {"binomial_value": reference, "binomial_steps": steps,
               "pde_value_final": value, "rel_error_final": errors[-1],
               "probe_x": probe_x}
    schedule = {"parameter": "nx", "values": nxs,
                "metric": "rel_error", "metric_values": errors}
    return metrics, schedule, []


def _run_rbsde_oracle(config, outdir):
    instance = _instance_of(config)
    if config.mc is None:
        raise ConfigError("rbsde_oracle needs an mc section")
    mesh = TimeMesh(0.0, instance.T, config.mc.steps)
    bundle = simulate_paths(instance, np.zeros(instance.n), mesh,
                            ControlPath.constant(0), ControlPath.constant(0),
                            config.mc.paths, config.mc.seed)
    terminal = eval_terminal(instance, bundle.states[:, -1])
    basis = RegressionBasis(degree=config.mc.basis_degree)
    solution = solve_reflected(instance, bundle, terminal, basis)
    metrics = {"y0": solution.value(), "paths": config.mc.paths,
               "steps": config.mc.steps}
    if config.instance_name == "lemma45":
        params = dict(config.instance_params)
        ref = degenerate_rbsde_value(float(params.get("C", 1.0)),
                                     float(params.get("theta", 1.0)),
                                     instance.T)
        metrics["reference"] = ref
        metrics["abs_error"] = abs(metrics["y0"] - ref)
    return metrics, None, []


_RUNNERS = {
    "solve": _run_solve,
    "penalization": _run_penalization,
    "dpp": _run_dpp,
    "compare_wu": _run_compare_wu,
    "american_oracle": _run_american_oracle,
    "rbsde_oracle": _run_rbsde_oracle,
}


def run(config):
    """Run the configured experiment and write its outputs.

    Creates the output directory, writes ``config.json`` (canonical
    echo), ``metrics.json`` (digest, metrics and schedule; no volatile
    fields, so reruns are byte-identical), ``run_info.json`` (timestamp)
    and any field dumps or convergence tables, and returns the record.
    """
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    metrics, schedule, files = _RUNNERS[config.experiment](config, outdir)

    record = ResultRecord(
        experiment=config.experiment,
        timestamp=datetime.now(timezone.utc).isoformat(),
        config_digest=config.digest(),
        metrics=metrics,
        schedule=schedule,
        files=tuple(files),
    )
    (outdir / "config.json").write_text(
        json.dumps(config.canonical, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (outdir / "metrics.json").write_text(
        json.dumps({"experiment": record.experiment,
                    "config_digest": record.config_digest,
                    "metrics": record.metrics,
                    "schedule": record.schedule}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (outdir / "run_info.json").write_text(
        json.dumps({"timestamp": record.timestamp, "files": list(record.files)},
                   indent=2) + "\n", encoding="utf-8")
    if record.schedule is not None and len(record.schedule["values"]) >= 2:
        table = emit_convergence_table(record)
        (outdir / "table.txt").write_text(table + "\n", encoding="utf-8")
        (outdir / "table.csv").write_text(_schedule_csv(record), encoding="utf-8")
    return record


def _ratios(values):
    out = [None]
    for prev, cur in zip(values, values[1:]):
        out.append(cur / prev if prev else None)
    return out


def _schedule_csv(record):
    sched = record.schedule
    lines = [f"{sched['parameter']},{sched['metric']},ratio"]
    for p, m, r in zip(sched["values"], sched["metric_values"],
                       _ratios(sched["metric_values"])):
        lines.append(f"{p},{m:.17g},{'' if r is None else f'{r:.6g}'}")
    return "\n".join(lines) + "\n"


def emit_convergence_table(record):
    """Render a schedule-indexed metric as an aligned text table.

    One row per schedule entry with columns (parameter, metric, ratio to
    the previous entry).  Records without a schedule, or with fewer than
    two entries, are an error.
    """
    sched = record.schedule
    if sched is None:
        raise PreconditionError("record carries no schedule-indexed metric")
    if len(sched["values"]) < 2:
        raise PreconditionError("need >= 2 schedule points")
    header = (sched["parameter"], sched["metric"], "ratio")
    rows = [header]
    for p, m, r in zip(sched["values"], sched["metric_values"],
                       _ratios(sched["metric_values"])):
        rows.append((f"{p:g}", f"{m:.6g}", "-" if r is None else f"{r:.2g}"))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in rows]
    return "\n".join(lines)


def _cmd_run(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        raw = json.loads(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config parse error in {args.config} at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    if args.seed is not None:
        raw.setdefault("mc", {})["seed"] = args.seed
    if args.output is not None:
        raw.setdefault("output", {})["directory"] = args.output
    if args.threads is not None:
        raw["threads"] = args.threads
    config = parse_config(raw)
    record = run(config)
    print(f"experiment: {record.experiment}")
    print(f"digest:     {record.config_digest}")
    for key in sorted(record.metrics):
        print(f"  {key} = {record.metrics[key]}")
    if record.schedule is not None and len(record.schedule["values"]) >= 2:
        print(emit_convergence_table(record))
    return 0


def _cmd_list_instances(args):
    for name in BUILTIN_NAMES:
        print(name)
    return 0


def _cmd_validate(args):
    config = load_config(args.config)
    instance = builtin_instance(config.instance_name, config.instance_params)
    seed = config.mc.seed if config.mc is not None else 0
    report = validate_instance(instance, probe_count=128, seed=seed)
    if report.passed:
        print(f"instance {config.instance_name!r}: assumptions hold "
              f"(estimated Lipschitz {report.estimated_lipschitz})")
        return 0
    print(f"instance {config.instance_name!r}: {len(report.violations)} violation(s)")
    for kind, witness, observed in report.violations[:10]:
        print(f"  {kind}: observed {observed:.6g} at {witness}")
    return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="isaacslab",
        description="Numerical laboratory for reflected stochastic differential games.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override mc.seed from the config")
    p_run.add_argument("--output", default=None,
                       help="override output.directory from the config")
    p_run.add_argument("--threads", type=int, default=None,
                       help="bound worker parallelism (solvers are vectorised; "
                            "recorded in the config echo)")
    sub.add_parser("list-instances", help="print built-in instance names")
    p_val = sub.add_parser("validate", help="validate a config and its instance")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "list-instances": _cmd_list_instances,
                "validate": _cmd_validate}
    try:
        return handlers[args.command](args)
    except (ConfigError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CflError, DivergenceError, PreconditionError, EvaluationError,
            FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
