"""Command-line entry point.

Four subcommands cover the experiment lifecycle:

* ``asbi run --config cfg.json`` executes one configured estimation into a
  fresh ``<timestamp>-<seed>-<method>`` directory.
* ``asbi sweep --config cfg.json --seeds 0,1,2`` repeats it across seeds,
  optionally in parallel worker processes, and aggregates quantiles.
* ``asbi plot-data <dir> --kind logprob|utility|reperr|intervol`` prints
  the comma-separated table behind a figure; plotting itself is external.
* ``asbi validate-plugin -- cmd args...`` runs the wire-protocol
  conformance checklist against an external simulator plugin.

Exit codes: 0 success, 1 runtime or conformance failure, 2 bad usage or
invalid config.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from asbi import experiment, simproto
from asbi.experiment import (
    CONFIG_FILE,
    HISTORY_FILE,
    METRICS_FILE,
    SWEEP_FILE,
    ExperimentConfig,
    apply_overrides,
    execute_run,
    fresh_run_dir,
    resolve_out_root,
    run_sweep,
)

#: clip floor applied to ALHI log-density tables, and only to those
ALHI_LOGPROB_FLOOR = -7.0


class CliError(Exception):
    """Bad usage or invalid input; maps to exit code 2."""


def _load_config_record(path: str, overrides: list[str]) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return apply_overrides(record, overrides)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _parse_config(record: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_record(record)
    except ValueError as exc:
        raise CliError(f"invalid config: {exc}") from None


# ---- run -----------------------------------------------------------------

def cmd_run(args) -> int:
    record = _load_config_record(args.config, args.set or [])
    cfg = _parse_config(record)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    root = resolve_out_root(args.out, cfg)
    run_dir = fresh_run_dir(root, cfg.run.seed, cfg.run.method)
    try:
        execute_run(cfg, run_dir)
    except Exception as exc:  # noqa: BLE001 - partial results stay on disk
        print(f"run failed ({type(exc).__name__}: {exc}); "
              f"partial results in {run_dir}", file=sys.stderr)
        return 1
    print(run_dir)
    return 0


# ---- sweep ----------------------------------------------------------------

def _parse_seeds(text: str) -> list[int]:
    if not text.strip():
        raise CliError("seed list is empty")
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise CliError(f"seeds must be comma-separated integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    record = _load_config_record(args.config, args.set or [])
    cfg = _parse_config(record)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise CliError("seed list is empty")
    root = resolve_out_root(args.out, cfg)
    sweep_dir = fresh_run_dir(root, "sweep", cfg.run.method)
    try:
        result = run_sweep(record, seeds, sweep_dir, parallel=args.parallel)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for seed, message in sorted(result.failures.items()):
        print(f"seed {seed} failed: {message}", file=sys.stderr)
    print(sweep_dir)
    return 1 if len(result.failures) == len(seeds) else 0


# ---- plot-data -------------------------------------------------------------

def _require_file(directory: Path, name: str) -> Path:
    path = directory / name
    if not path.exists():
        raise CliError(f"{directory} has no {name}")
    return path


def _read_metrics_rows(run_dir: Path) -> list[list[str]]:
    path = _require_file(run_dir, METRICS_FILE)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]  # drop header


def _run_method(run_dir: Path) -> str:
    config = json.loads(_require_file(run_dir, CONFIG_FILE).read_text())
    return config.get("run", {}).get("method", "")


def _seed_dirs(sweep_dir: Path) -> list[tuple[int, Path]]:
    out = []
    for child in sweep_dir.iterdir():
        if child.is_dir() and child.name.startswith("seed-"):
            out.append((int(child.name.split("-", 1)[1]), child))
    return sorted(out)


def _emit(writer, header, rows):
    writer.writerow(header)
    writer.writerows(rows)


def _logprob_rows(run_dir: Path, clip: bool) -> list[tuple]:
    rows = []
    for metric, key, value, _ in _read_metrics_rows(run_dir):
        if metric != "log_prob_true":
            continue
        v = float(value)
        if clip and v < ALHI_LOGPROB_FLOOR:
            v = ALHI_LOGPROB_FLOOR
        rows.append((key, format(v, ".17g")))
    return rows


def plot_data(directory: Path, kind: str, out=None) -> None:
    """Print one plot-ready CSV table for a run or sweep directory."""
    out = out or sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    is_sweep = (directory / SWEEP_FILE).exists()
    if kind == "logprob":
        if is_sweep:
            rows = []
            for seed, run_dir in _seed_dirs(directory):
                clip = _run_method(run_dir) == "alhi"
                rows.extend((seed,) + r for r in _logprob_rows(run_dir, clip))
            _emit(writer, ("seed", "round", "log_prob_true"), rows)
        else:
            clip = _run_method(directory) == "alhi"
            _emit(writer, ("round", "log_prob_true"), _logprob_rows(directory, clip))
    elif kind == "utility":
        history = json.loads(_require_file(directory, HISTORY_FILE).read_text())
        rows = []
        for rnd in history["rounds"]:
            for report in rnd["utilities"]:
                rows.append((
                    rnd["round"],
                    report["action"]["index"],
                    ";".join(format(v, ".17g") for v in report["action"]["values"]),
                    format(report["u_mean"], ".17g"),
                    report["skipped_terms"],
                    int(report["usable"]),
                ))
        _emit(writer, ("round", "action_index", "action", "u_mean",
                       "skipped_terms", "usable"), rows)
    elif kind == "reperr":
        if is_sweep:
            rows = []
            for seed, run_dir in _seed_dirs(directory):
                for metric, key, value, extra in _read_metrics_rows(run_dir):
                    if metric == "rep_err":
                        rows.append((seed, key, value, extra))
            _emit(writer, ("seed", "action", "mean", "std"), rows)
        else:
            rows = [(key, value, extra)
                    for metric, key, value, extra in _read_metrics_rows(directory)
                    if metric == "rep_err"]
            _emit(writer, ("action", "mean", "std"), rows)
    elif kind == "intervol":
        rows = [(key, value)
                for metric, key, value, _ in _read_metrics_rows(directory)
                if metric == "inter_vol"]
        if not rows:
            raise CliError(f"{directory / METRICS_FILE} has no inter_vol rows")
        _emit(writer, ("round", "inter_vol"), rows)
    else:
        raise CliError(f"unknown plot kind {kind!r}")


def cmd_plotdata(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise CliError(f"{directory} is not a directory")
    plot_data(directory, args.kind)
    return 0


# ---- validate-plugin --------------------------------------------------------

def _check(name: str, fn, out, failures: list[str]):
    try:
        detail = fn()
    except Exception as exc:  # noqa: BLE001 - each check reports independently
        failures.append(name)
        out.write(f"FAIL: {name}: {exc}\n")
        return None
    out.write(f"pass: {name}" + (f" ({detail})" if detail else "") + "\n")
    return detail


def validate_plugin(command: list[str], theta=None, action=None, out=None) -> int:
    """Conformance checklist: handshake, simulate, determinism, ordering,
    malformed-input survival, shutdown.  Returns 0 only when every check
    passes."""
    out = out or sys.stdout
    failures: list[str] = []
    state = {}

    def check_launch():
        state["h"] = simproto.launch(command)
        h = state["h"]
        return f"name={h.name} param_dim={h.param_dim} obs_dim={h.obs_dim}"

    _check("handshake (hello with version 1)", check_launch, out, failures)
    if "h" not in state:
        out.write("aborted: cannot continue without a session\n")
        return 1
    h = state["h"]
    probe_theta = np.asarray(theta if theta is not None else [0.0] * h.param_dim,
                             dtype=np.float64)
    probe_action = np.asarray(action if action is not None else [0.0] * h.action_dims,
                              dtype=np.float64)

    def check_simulate():
        got = simproto.simulate_batch(h, [(probe_theta, probe_action, 12345)])
        if isinstance(got[0], simproto.RequestError):
            raise RuntimeError(
                f"plugin rejected probe request: {got[0].message} "
                "(pick an in-bounds probe with --theta/--action)")
        state["obs"] = got[0]
        return f"observation of {len(got[0].values)} values"

    def check_dims():
        if len(state["obs"].values) != h.obs_dim:
            raise RuntimeError(
                f"hello promised obs_dim={h.obs_dim}, response has "
                f"{len(state['obs'].values)}")

    def check_determinism():
        again = simproto.simulate_batch(h, [(probe_theta, probe_action, 12345)])[0]
        if not np.array_equal(again.values, state["obs"].values):
            raise RuntimeError("same (theta, action, seed) gave different values")

    def check_ordering():
        reqs = [(probe_theta, probe_action, 1000 + i) for i in range(16)]
        batch = simproto.simulate_batch(h, reqs)
        singles = [simproto.simulate_batch(h, [r])[0] for r in reqs]
        for i, (a, b) in enumerate(zip(batch, singles)):
            bad = isinstance(a, simproto.RequestError) or isinstance(
                b, simproto.RequestError)
            if bad or not np.array_equal(a.values, b.values):
                raise RuntimeError(f"request {i} differs between batch and single")

    def check_malformed():
        h._send_line('{"kind": "simulate_request", "id": -1}')
        got = simproto.simulate_batch(h, [(probe_theta, probe_action, 7)])
        if isinstance(got[0], simproto.RequestError):
            raise RuntimeError("session did not survive a malformed line")

    def check_restart_determinism():
        h2 = simproto.launch(command)
        try:
            fresh = simproto.simulate_batch(h2, [(probe_theta, probe_action, 12345)])[0]
        finally:
            simproto.shutdown(h2)
        if not np.array_equal(fresh.values, state["obs"].values):
            raise RuntimeError("fresh process disagrees for the same seed")

    def check_shutdown():
        simproto.shutdown(h)
        if h.exit_code != 0:
            raise RuntimeError(f"exit code {h.exit_code}")

    checks = [
        ("simulate request answered", check_simulate),
        ("observation matches hello obs_dim", check_dims),
        ("determinism under a fixed seed", check_determinism),
        ("batch order preserved", check_ordering),
        ("survives malformed input", check_malformed),
        ("determinism across process restart", check_restart_determinism),
        ("clean shutdown", check_shutdown),
    ]
    for name, fn in checks:
        if "obs" not in state and name != "simulate request answered":
            out.write(f"skip: {name} (no successful probe)\n")
            failures.append(name)
            continue
        _check(name, fn, out, failures)
    if failures:
        out.write(f"{len(failures)} check(s) failed\n")
        return 1
    out.write("all checks passed\n")
    return 0


def cmd_validate_plugin(args) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        raise CliError("validate-plugin needs a plugin command after --")
    theta = json.loads(args.theta) if args.theta else None
    action = json.loads(args.action) if args.action else None
    return validate_plugin(command, theta=theta, action=action)


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asbi",
        description="sequential simulation-based calibration experiments",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="execute one configured estimation run")
    run.add_argument("--config", required=True, help="experiment config JSON")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--out", help="output root directory "
                     f"(default ${experiment.OUT_ROOT_ENV} or ./runs)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config field by dotted path")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="run one config across several seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seeds", required=True,
                       help="comma-separated seed list, e.g. 0,1,2")
    sweep.add_argument("--parallel", type=int, default=1,
                       help="worker processes (default 1)")
    sweep.add_argument("--out")
    sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    sweep.set_defaults(fn=cmd_sweep)

    plot = sub.add_parser("plot-data", help="print the CSV table behind a figure")
    plot.add_argument("directory", help="run or sweep directory")
    plot.add_argument("--kind", required=True,
                      choices=("logprob", "utility", "reperr", "intervol"))
    plot.set_defaults(fn=cmd_plotdata)

    validate = sub.add_parser("validate-plugin",
                              help="run the protocol conformance checklist")
    validate.add_argument("--theta", help="probe parameter vector as JSON")
    validate.add_argument("--action", help="probe action vector as JSON")
    validate.add_argument("command", nargs=argparse.REMAINDER,
                          help="plugin command, after --")
    validate.set_defaults(fn=cmd_validate_plugin)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
