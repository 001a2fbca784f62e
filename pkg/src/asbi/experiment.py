"""Config files, run directories, and seed sweeps.

One estimation run turns a validated config into a directory holding four
files: the config as parsed (``config.json``), the full per-round record
(``history.json``), flat metric rows (``metrics.csv``), and a short
human-readable ``summary.txt``.  Every float in the JSON files is written
with 17 significant digits, so identical runs produce byte-identical
files and determinism can be asserted with a plain file compare.

A sweep repeats one config over several seeds (optionally in parallel
processes), stores each run in a ``seed-<n>`` subdirectory, and writes
aggregate per-round log-density quantiles that depend only on the set of
seeds, never on scheduling order.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from asbi.inference import RunConfig, run_experiment
from asbi.metrics import MetricReport, inter_vol, log_prob_true, rep_err
from asbi.rng import derive_seed
from asbi.simulators import TargetEnvironment, get_simulator

OUT_ROOT_ENV = "ASBI_OUT_ROOT"

HISTORY_FILE = "history.json"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.txt"
SWEEP_FILE = "sweep.json"
SWEEP_SUMMARY_FILE = "sweep_summary.txt"


# ---- canonical JSON ------------------------------------------------------

def dumps_canonical(obj, indent: int = 0) -> str:
    """Serialize to JSON with floats at 17 significant digits.

    17 digits round-trip any IEEE-754 double exactly, and the fixed format
    makes equal values produce equal bytes.  Non-finite floats use the
    Infinity/NaN tokens the stdlib parser accepts.
    """
    pieces: list[str] = []
    _write(obj, pieces, indent, 0)
    return "".join(pieces)


def _write(obj, out: list[str], indent: int, level: int):
    pad = " " * (indent * (level + 1)) if indent else ""
    end_pad = " " * (indent * level) if indent else ""
    sep = ",\n" if indent else ","
    if obj is None or isinstance(obj, bool):
        out.append({None: "null", True: "true", False: "false"}[obj])
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if x != x:
            out.append("NaN")
        elif x == float("inf"):
            out.append("Infinity")
        elif x == float("-inf"):
            out.append("-Infinity")
        else:
            out.append(format(x, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[\n" + pad if indent else "[")
        for i, item in enumerate(items):
            if i:
                out.append(sep + pad)
            _write(item, out, indent, level + 1)
        out.append("\n" + end_pad + "]" if indent else "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n" + pad if indent else "{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(sep + pad)
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {type(key).__name__}")
            out.append(json.dumps(key) + (": " if indent else ":"))
            _write(value, out, indent, level + 1)
        out.append("\n" + end_pad + "}" if indent else "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, obj):
    path.write_text(dumps_canonical(obj, indent=2) + "\n")


# ---- experiment config ---------------------------------------------------

_TARGET_FIELDS = {"hidden_theta", "env_seed"}
_METRIC_FIELDS = {"rep_err_actions", "rep_err_samples", "inter_vol_samples"}
_PLUGIN_FIELDS = {"command", "action_grid", "param_bounds"}


@dataclass(frozen=True)
class ExperimentConfig:
    """A full experiment: simulator binding, run knobs, target, metrics."""

    simulator: str
    run: RunConfig
    hidden_theta: tuple
    env_seed: int = 0
    plugin: dict | None = None
    rep_err_actions: tuple = ()
    rep_err_samples: int = 200
    inter_vol_samples: int = 0
    out_root: str | None = None

    @classmethod
    def from_record(cls, record: dict) -> "ExperimentConfig":
        if not isinstance(record, dict):
            raise ValueError("experiment config must be a mapping")
        known = {"simulator", "run", "target", "metrics", "plugin", "out_root"}
        for key in record:
            if key not in known:
                raise ValueError(f"unknown experiment config field: {key!r}")
        if not isinstance(record.get("simulator"), str):
            raise ValueError("simulator must be a string")
        run = RunConfig.from_record(record.get("run", {}))
        target = record.get("target")
        if not isinstance(target, dict):
            raise ValueError("target must be a mapping")
        for key in target:
            if key not in _TARGET_FIELDS:
                raise ValueError(f"unknown target field: {key!r}")
        theta = target.get("hidden_theta")
        if not isinstance(theta, list) or not theta:
            raise ValueError("target.hidden_theta must be a nonempty list")
        env_seed = target.get("env_seed", 0)
        if not isinstance(env_seed, int) or isinstance(env_seed, bool):
            raise ValueError("target.env_seed must be an integer")
        metrics = record.get("metrics", {})
        if not isinstance(metrics, dict):
            raise ValueError("metrics must be a mapping")
        for key in metrics:
            if key not in _METRIC_FIELDS:
                raise ValueError(f"unknown metrics field: {key!r}")
        rep_actions = metrics.get("rep_err_actions", [])
        if not isinstance(rep_actions, list):
            raise ValueError("metrics.rep_err_actions must be a list of action vectors")
        rep_samples = metrics.get("rep_err_samples", 200)
        if not isinstance(rep_samples, int) or rep_samples < 1:
            raise ValueError("metrics.rep_err_samples must be a positive integer")
        iv_samples = metrics.get("inter_vol_samples", 0)
        if not isinstance(iv_samples, int) or iv_samples < 0:
            raise ValueError("metrics.inter_vol_samples must be a nonnegative integer")
        plugin = record.get("plugin")
        if plugin is not None:
            if not isinstance(plugin, dict):
                raise ValueError("plugin must be a mapping")
            for key in plugin:
                if key not in _PLUGIN_FIELDS:
                    raise ValueError(f"unknown plugin field: {key!r}")
            for key in _PLUGIN_FIELDS:
                if key not in plugin:
                    raise ValueError(f"plugin config missing field: {key!r}")
        out_root = record.get("out_root")
        if out_root is not None and not isinstance(out_root, str):
            raise ValueError("out_root must be a string")
        return cls(
            simulator=record["simulator"],
            run=run,
            hidden_theta=tuple(float(v) for v in theta),
            env_seed=env_seed,
            plugin=plugin,
            rep_err_actions=tuple(tuple(float(v) for v in np.atleast_1d(a))
                                  for a in rep_actions),
            rep_err_samples=rep_samples,
            inter_vol_samples=iv_samples,
            out_root=out_root,
        )

    def to_record(self) -> dict:
        rec = {
            "simulator": self.simulator,
            "run": self.run.to_record(),
            "target": {
                "hidden_theta": list(self.hidden_theta),
                "env_seed": self.env_seed,
            },
            "metrics": {
                "rep_err_actions": [list(a) for a in self.rep_err_actions],
                "rep_err_samples": self.rep_err_samples,
                "inter_vol_samples": self.inter_vol_samples,
            },
        }
        if self.plugin is not None:
            rec["plugin"] = self.plugin
        if self.out_root is not None:
            rec["out_root"] = self.out_root
        return rec

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=seed))


def apply_overrides(record: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.key=value`` pairs to a raw config mapping.

    Values parse as JSON when possible and fall back to plain strings, so
    ``--set run.seed=3`` and ``--set simulator=toy`` both do what they say.
    """
    record = copy.deepcopy(record)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        if not all(keys):
            raise ValueError(f"override {item!r} has an empty key segment")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = record
        for key in keys[:-1]:
            nxt = node.setdefault(key, {})
            if not isinstance(nxt, dict):
                raise ValueError(f"override {item!r} descends through non-mapping {key!r}")
            node = nxt
        node[keys[-1]] = value
    return record


def build_simulator(cfg: ExperimentConfig):
    """Instantiate the configured simulator, builtin or plugin-backed.

    Returns (simulator, closer): call closer() when done; it shuts the
    plugin session down and is a no-op for builtins.
    """
    if cfg.plugin is None:
        return get_simulator(cfg.simulator), lambda: None
    from asbi.density import BoxPrior
    from asbi.simproto import PluginSimulator, launch, shutdown
    from asbi.simulators import ActionGrid
    handle = launch([str(c) for c in cfg.plugin["command"]])
    try:
        if handle.name != cfg.simulator:
            raise ValueError(
                f"config names simulator {cfg.simulator!r} but plugin says {handle.name!r}"
            )
        bounds = cfg.plugin["param_bounds"]
        sim = PluginSimulator(
            handle,
            ActionGrid(np.asarray(cfg.plugin["action_grid"], dtype=np.float64)),
            BoxPrior(np.asarray(bounds["lower"], dtype=np.float64),
                     np.asarray(bounds["upper"], dtype=np.float64)),
        )
    except Exception:
        shutdown(handle)
        raise
    return sim, lambda: shutdown(handle)


# ---- single run ----------------------------------------------------------

def compute_metrics(simulator, cfg: ExperimentConfig, history) -> MetricReport:
    theta = np.asarray(cfg.hidden_theta, dtype=np.float64)
    report = MetricReport(
        log_prob_true=[log_prob_true(r.posterior, theta) for r in history.rounds],
    )
    final = history.rounds[-1].posterior
    for action in cfg.rep_err_actions:
        rng = np.random.default_rng(derive_seed(cfg.run.seed, "rep-err", *[
            int(round(v * 1e6)) for v in action
        ]))
        mean, std = rep_err(simulator, final, theta, np.asarray(action), cfg.rep_err_samples, rng)
        key = action[0] if len(action) == 1 else action
        report.rep_err[key] = (mean, std)
    if cfg.inter_vol_samples > 0:
        report.inter_vol = [
            _round_inter_vol(simulator, cfg, rec) for rec in history.rounds
        ]
    return report


def _round_inter_vol(simulator, cfg: ExperimentConfig, rec) -> float:
    """Overlap volume between a round's observation and posterior resims."""
    side = int(round(simulator.spec.obs_dim ** 0.5))
    if side * side != simulator.spec.obs_dim or side < 2:
        raise ValueError("inter_vol needs square-grid observations")
    from asbi.density import truncated_sample
    rng = np.random.default_rng(derive_seed(cfg.run.seed, "inter-vol", rec.round_index))
    thetas = truncated_sample(rec.posterior, rng, cfg.inter_vol_samples)
    sims = [simulator.noiseless(t, rec.action.values).values.reshape(side, side)
            for t in thetas]
    return inter_vol(rec.observation.values.reshape(side, side), sims)


def summary_text(cfg: ExperimentConfig, history, report: MetricReport) -> str:
    lines = [
        f"method: {cfg.run.method}",
        f"simulator: {cfg.simulator}",
        f"seed: {cfg.run.seed}",
        f"rounds: {len(history.rounds)}",
        "",
        "round  action                     log q(theta_true)",
    ]
    for rec, lp in zip(history.rounds, report.log_prob_true):
        action = ", ".join(f"{v:+.3g}" for v in rec.action.values)
        lines.append(f"{rec.round_index:>5}  [{action:<24}]  {lp:+.4f}")
    if report.rep_err:
        lines.append("")
        lines.append("reproduction error (mean over posterior draws)")
        for action, (mean, std) in report.rep_err.items():
            lines.append(f"  action {action}: {mean:.4f} (std {std:.4f})")
    return "\n".join(lines) + "\n"


def execute_run(cfg: ExperimentConfig, run_dir: Path) -> MetricReport:
    """Run one configured estimation and fill run_dir with its records.

    Partial results stay on disk when a round fails mid-run; the config is
    written first so a failed directory still identifies itself.
    """
    run_dir.mkdir(parents=True, exist_ok=False)
    write_json(run_dir / CONFIG_FILE, cfg.to_record())
    simulator, closer = build_simulator(cfg)
    try:
        # env_seed selects the environment noise family; folding in the run
        # seed makes every seeded run an independent replication, fresh
        # environment noise included
        env = TargetEnvironment(
            simulator,
            np.asarray(cfg.hidden_theta, dtype=np.float64),
            seed=derive_seed(cfg.env_seed, "env", cfg.run.seed),
        )
        history = run_experiment(simulator, env, cfg.run)
        write_json(run_dir / HISTORY_FILE, history.to_record())
        report = compute_metrics(simulator, cfg, history)
        rows = ["metric,key,value,extra"] + [",".join(r) for r in report.to_rows()]
        (run_dir / METRICS_FILE).write_text("\n".join(rows) + "\n")
        (run_dir / SUMMARY_FILE).write_text(summary_text(cfg, history, report))
        return report
    finally:
        closer()


def fresh_run_dir(root: Path, seed: int, method: str) -> Path:
    """Timestamped, collision-free directory name under root."""
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = f"{stamp}-{seed}-{method}"
    path = root / base
    suffix = 1
    while path.exists():
        path = root / f"{base}-{suffix}"
        suffix += 1
    return path


def resolve_out_root(cli_out: str | None, cfg: ExperimentConfig) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg.out_root:
        return Path(cfg.out_root)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


# ---- sweeps --------------------------------------------------------------

@dataclass
class SweepResult:
    seeds: list
    failures: dict = field(default_factory=dict)
    log_prob: dict = field(default_factory=dict)
    rep_err: dict = field(default_factory=dict)


def _sweep_worker(args):
    record, seed, run_dir = args
    cfg = ExperimentConfig.from_record(record).with_seed(seed)
    report = execute_run(cfg, Path(run_dir))
    return seed, report.log_prob_true, report.rep_err


def run_sweep(record: dict, seeds: list[int], sweep_dir: Path,
              parallel: int = 1) -> SweepResult:
    """Run one config across seeds; aggregate independent of scheduling.

    Each seed gets a deterministic ``seed-<n>`` subdirectory.  A failed
    seed is recorded and skipped in the aggregates; the sweep itself only
    fails when every seed does.
    """
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError("sweep seeds must be distinct")
    cfg = ExperimentConfig.from_record(record)
    sweep_dir.mkdir(parents=True, exist_ok=False)
    write_json(sweep_dir / CONFIG_FILE, cfg.to_record())
    jobs = [(record, seed, str(sweep_dir / f"seed-{seed}")) for seed in seeds]
    result = SweepResult(seeds=list(seeds))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_sweep_worker_safe, jobs))
    else:
        outcomes = [_sweep_worker_safe(job) for job in jobs]
    for seed, payload in outcomes:
        if isinstance(payload, str):
            result.failures[seed] = payload
        else:
            result.log_prob[seed], result.rep_err[seed] = payload
    _write_sweep_outputs(sweep_dir, cfg, result)
    return result


def _sweep_worker_safe(args):
    seed = args[1]
    try:
        _, log_prob, rep = _sweep_worker(args)
        return seed, (log_prob, rep)
    except Exception as exc:  # noqa: BLE001 - per-seed isolation is the point
        return seed, f"{type(exc).__name__}: {exc}"


def aggregate_quantiles(per_seed: dict) -> list[dict]:
    """Per-round (q25, median, q75) over seeds, sorted by seed first."""
    if not per_seed:
        return []
    ordered = [per_seed[s] for s in sorted(per_seed)]
    rounds = len(ordered[0])
    if any(len(row) != rounds for row in ordered):
        raise ValueError("seed runs disagree on round count")
    matrix = np.asarray(ordered, dtype=np.float64)
    out = []
    for r in range(rounds):
        col = matrix[:, r]
        q25, median, q75 = np.percentile(col, [25.0, 50.0, 75.0])
        out.append({"round": r + 1, "q25": float(q25), "median": float(median),
                    "q75": float(q75)})
    return out


def _write_sweep_outputs(sweep_dir: Path, cfg: ExperimentConfig, result: SweepResult):
    quantiles = aggregate_quantiles(result.log_prob)
    rep_quantiles = {}
    actions = sorted({a for rep in result.rep_err.values() for a in rep},
                     key=lambda a: (a,) if np.isscalar(a) else tuple(a))
    for action in actions:
        values = [result.rep_err[s][action][0]
                  for s in sorted(result.rep_err) if action in result.rep_err[s]]
        q25, median, q75 = np.percentile(values, [25.0, 50.0, 75.0])
        rep_quantiles[str(action)] = {"q25": float(q25), "median": float(median),
                                      "q75": float(q75)}
    record = {
        "method": cfg.run.method,
        "seeds": result.seeds,
        "failed": {str(s): msg for s, msg in sorted(result.failures.items())},
        "log_prob_true": {str(s): result.log_prob[s] for s in sorted(result.log_prob)},
        "log_prob_quantiles": quantiles,
        "rep_err_quantiles": rep_quantiles,
    }
    write_json(sweep_dir / SWEEP_FILE, record)
    lines = [
        f"method: {cfg.run.method}",
        f"seeds: {', '.join(str(s) for s in result.seeds)}",
    ]
    if result.failures:
        lines.append(f"failed seeds: {', '.join(str(s) for s in sorted(result.failures))}")
    lines.append("")
    lines.append("round    q25   median      q75   (log q at true theta)")
    for row in quantiles:
        lines.append(f"{row['round']:>5}  {row['q25']:+.3f}   {row['median']:+.3f}"
                     f"   {row['q75']:+.3f}")
    for action, row in rep_quantiles.items():
        lines.append(f"rep_err action {action}: median {row['median']:.4f} "
                     f"(q25 {row['q25']:.4f}, q75 {row['q75']:.4f})")
    (sweep_dir / SWEEP_SUMMARY_FILE).write_text("\n".join(lines) + "\n")
