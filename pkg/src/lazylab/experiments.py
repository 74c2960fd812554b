"""Experiment presets, the run harness, and CSV/JSON artifact emission.

An experiment expands into independent *tasks* (one per width, beta and
seed).  Every task is described by a plain JSON-able dict whose hash names
its output files, so artifacts are addressable and reruns overwrite the same
paths.  Tasks run inline or in a process pool; results are collected in task
order, so the worker count never changes the output.

Artifact layout::

    <out>/<experiment>-<config hash>/
        runs/<task hash>[-nn|-rf|-reg].csv
        reports/<claim>.json        (bound_audit and fit_random_labels)
        summary.json
        MANIFEST
"""
import copy
import csv
import hashlib
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .datagen import BarronDensity, OneNeuron, RandomLabels, make_dataset
from .dynamics import (RunConfig, TrainingDiverged, TrajectoryLog, coupled_run, default_probes,
                       stability_threshold, train_nn, train_regularized, train_rf)
from .kernels import spectral_summary
from .models import InitConfig, init_params
from .theory import (a_star_frequency, build_ledger, deviation_bound_check, envelope_check,
                     gradient_norm_identity_check, gram_init_frequency, init_risk_frequency,
                     neighborhood_check, rad_gen_frequency)

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "preset",
    "load_config",
    "run_experiment",
    "emit_plot_data",
    "resolve_beta",
    "summary_schema",
    "config_schema",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("fit_random_labels", "one_neuron", "width_sweep", "coupling_sweep", "bound_audit")
TARGETS = ("random_labels", "one_neuron")
ENVELOPE_SLACK = 0.05


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``betas`` entries are numbers or strings ``"m^e"`` meaning ``m ** e`` for
    the run's width.  The step size is ``min(eta, eta_factor * threshold)``
    over whichever of the two is set, where ``threshold`` is the linear
    stability limit at initialization.  ``reg_seeds`` restricts the width
    sweep's regularized runs to a subset of ``seeds`` (default: all).
    """

    experiment: str
    n: int
    d: int
    widths: list
    betas: list
    seeds: list = field(default_factory=lambda: [0])
    eta: Optional[float] = None
    eta_factor: Optional[float] = 0.5
    max_steps: int = 100_000
    stop_risk: Optional[float] = None
    log_every: int = 10
    target: str = "random_labels"
    n_test: int = 0
    lam: float = 0.01
    reg_horizon: Optional[float] = None
    reg_seeds: Optional[list] = None
    horizon: Optional[float] = None
    n_probes: int = 100
    delta: float = 0.1
    trials: int = 100
    out_dir: str = "lazylab-out"
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; choose from {TARGETS}")
        for name in ("widths", "betas", "seeds"):
            v = getattr(self, name)
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{name} must be a non-empty list")
        if self.n < 1 or self.d < 1:
            raise ConfigError("n and d must be >= 1")
        if any(int(m) != m or m < 1 for m in self.widths):
            raise ConfigError("widths must be positive integers")
        for b in self.betas:
            resolve_beta(b, 1)
        if self.eta is None and self.eta_factor is None:
            raise ConfigError("set eta, eta_factor, or both")
        if (self.eta is not None and not self.eta > 0) or (
                self.eta_factor is not None and not self.eta_factor > 0):
            raise ConfigError("eta and eta_factor must be positive")
        if self.max_steps < 1 or self.log_every < 1:
            raise ConfigError("max_steps and log_every must be >= 1")
        if self.experiment == "coupling_sweep" and not (self.horizon and self.horizon > 0):
            raise ConfigError("coupling_sweep needs a positive horizon")
        if self.experiment == "width_sweep" and not (self.reg_horizon and self.reg_horizon > 0):
            raise ConfigError("width_sweep needs a positive reg_horizon")
        if self.reg_seeds is not None and (
                not isinstance(self.reg_seeds, list) or not self.reg_seeds
                or not set(self.reg_seeds) <= set(self.seeds)):
            raise ConfigError("reg_seeds must be a non-empty subset of seeds")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        """Hash of every field that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("notes")
        return _hash(d)


def resolve_beta(spec, m):
    """Turn a beta entry into a number for width ``m``."""
    if isinstance(spec, bool):
        raise ConfigError(f"bad beta {spec!r}")
    if isinstance(spec, (int, float)):
        if spec < 0 or not math.isfinite(spec):
            raise ConfigError(f"beta must be finite and >= 0, got {spec}")
        return float(spec)
    if isinstance(spec, str):
        mt = re.fullmatch(r"\s*m\s*\^\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*", spec)
        if mt:
            return float(m) ** float(mt.group(1))
    raise ConfigError(f"bad beta {spec!r}; use a number or 'm^e'")


_PRESETS = {
    "fit_random_labels": dict(
        n=50, d=50, widths=[10_000],
        betas=["m^-1", "m^-0.5", "m^-0.25", "m^0", "m^0.5", "m^1"],
        eta=None, eta_factor=0.5, max_steps=100_000, stop_risk=1e-8, log_every=10,
        notes=["beta ladder {1/m, 1/sqrt(m), m^-1/4, 1, sqrt(m), m} is a chosen substitute; "
               "only beta = m and 'six magnitudes' are given",
               "stopping rule stop_risk = 1e-8 with max_steps = 1e5 is a chosen substitute"]),
    "one_neuron": dict(
        n=50, d=10, widths=[4, 50, 1000], betas=[0.0], eta=0.01, eta_factor=None,
        max_steps=100_000, log_every=500, target="one_neuron", n_test=10_000),
    "width_sweep": dict(
        n=50, d=10, widths=[10, 50, 250, 1000, 5000], betas=[0.0], seeds=[0, 1, 2, 3, 4],
        eta=0.01, eta_factor=0.5, max_steps=2_000_000, stop_risk=1e-5, log_every=1000,
        target="one_neuron", n_test=10_000, lam=0.01, reg_horizon=2000.0, reg_seeds=[0],
        notes=["width grid {10, 50, 250, 1000, 5000} is a chosen substitute; 20000 is left out "
               "because its stable step is 0.0028, so the regularized run to t = 2000 needs 7e5 steps",
               "regularized runs stop at the common continuous time reg_horizon",
               "unregularized runs use seeds 0-4 (compare per-width medians); regularized runs "
               "use seed 0 only, since each costs minutes at large width"]),
    "coupling_sweep": dict(
        n=50, d=10, widths=[1000, 4000, 16000], betas=["m^-0.5"], eta=None, eta_factor=0.9,
        max_steps=1_000_000, log_every=100, horizon=5.0,
        notes=["terminal time is horizon / (m lambda_a), the same kernel time for every width"]),
    "bound_audit": dict(
        n=20, d=20, widths=[2000], betas=["m^-0.5", "m^0", "m^0.5"], eta=None, eta_factor=0.5,
        max_steps=100_000, stop_risk=1e-8, log_every=10, trials=100),
}


def preset(name, **overrides):
    """The preset configuration for ``name`` with keyword overrides applied."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    d = copy.deepcopy(_PRESETS[name])
    d.update(overrides)
    return _build(name, d)


def _build(name, d):
    known = {f.name for f in fields(ExperimentConfig)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    try:
        kw = {k: v for k, v in d.items() if k != "experiment"}
        return ExperimentConfig(experiment=name, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _schema(name):
    return json.loads(resources.files("lazylab").joinpath("schemas", name).read_text())


def config_schema():
    return _schema("config.schema.json")


def summary_schema():
    return _schema("summary.schema.json")


def load_config(experiment, path=None, **overrides):
    """Preset for ``experiment`` updated by a JSON config file, then by ``overrides``.

    The file is validated against the shipped config schema.
    """
    import jsonschema

    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            jsonschema.validate(d, config_schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config {path}: {exc.message}") from None
        if d.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {d['experiment']!r}, not {experiment!r}")
    d.pop("experiment", None)
    d.update({k: v for k, v in overrides.items() if v is not None})
    if experiment not in _PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    base = copy.deepcopy(_PRESETS[experiment])
    base.update(d)
    return _build(experiment, base)


# -- tasks -----------------------------------------------------------------------------------

def _hash(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _target(name, d):
    return OneNeuron.axis(d) if name == "one_neuron" else RandomLabels()


def _tasks(cfg):
    kind = {"fit_random_labels": "nn", "bound_audit": "nn", "one_neuron": "nn_rf",
            "width_sweep": "sweep", "coupling_sweep": "coupled"}[cfg.experiment]
    base = {k: getattr(cfg, k) for k in ("n", "d", "eta", "eta_factor", "max_steps",
                                         "stop_risk", "log_every", "target", "n_test")}
    out = []
    for seed in cfg.seeds:
        for m in cfg.widths:
            for b in cfg.betas:
                t = dict(base, kind=kind, seed=int(seed), m=int(m), beta_spec=b,
                         beta=resolve_beta(b, m))
                if kind == "sweep":
                    reg = cfg.reg_seeds is None or seed in cfg.reg_seeds
                    t.update(lam=cfg.lam, reg_horizon=cfg.reg_horizon if reg else None)
                if kind == "coupled":
                    t.update(horizon=cfg.horizon, n_probes=cfg.n_probes)
                if kind == "nn":
                    t.update(delta=cfg.delta, audit=True)
                t["id"] = _hash(t)
                out.append(t)
    return out


def _step_size(task, params0, X):
    cands = []
    if task["eta"] is not None:
        cands.append(task["eta"])
    if task["eta_factor"] is not None:
        cands.append(task["eta_factor"] * stability_threshold(params0, X))
    return min(cands)


def _guarded(fn, *args, **kw):
    """Run a trainer; on divergence return the partial log instead of raising."""
    try:
        return fn(*args, **kw)
    except TrainingDiverged as exc:
        return None, exc.log


def _run_task(task):
    """Execute one task; returns ``{"logs": {suffix: TrajectoryLog}, "run": summary dict}``."""
    n, d, m, seed = task["n"], task["d"], task["m"], task["seed"]
    target = _target(task["target"], d)
    data = make_dataset(target, n, d, (seed, 0))
    test = make_dataset(target, task["n_test"], d, (seed, 1)) if task["n_test"] else None
    p0 = init_params(InitConfig(m, d, task["beta"], (seed, 2)))
    eta = _step_size(task, p0, data.inputs)
    run = {"id": task["id"], "kind": task["kind"], "seed": seed, "m": m, "beta": task["beta"],
           "beta_spec": str(task["beta_spec"]), "eta": eta, "files": [], "metrics": {},
           "reports": []}
    logs = {}
    kind = task["kind"]
    if kind == "nn":
        cfg = RunConfig(eta, task["max_steps"], task["log_every"], task["stop_risk"])
        _, lg = _guarded(train_nn, p0, data, cfg, test=test, track_gram=task.get("audit", False))
        logs[""] = lg
        if task.get("audit"):
            spec = spectral_summary(data.inputs)
            ledger = build_ledger(p0, data, spec, task["delta"])
            run["ledger"] = _clean(ledger.to_dict())
            lhs, rhs = gradient_norm_identity_check(p0, data)
            run["metrics"]["grad_identity_rel_err"] = abs(lhs - rhs) / max(1.0, lhs)
            run["reports"] = [envelope_check(lg, ledger, ENVELOPE_SLACK).to_dict(),
                              deviation_bound_check(lg, ledger).to_dict(),
                              neighborhood_check(lg, ledger).to_dict()]
    elif kind == "nn_rf":
        cfg = RunConfig(eta, task["max_steps"], task["log_every"], task["stop_risk"])
        _, logs["nn"] = _guarded(train_nn, p0, data, cfg, test=test)
        _, logs["rf"] = _guarded(train_rf, p0.a, p0.B, data, cfg, test=test)
    elif kind == "sweep":
        cfg = RunConfig(eta, task["max_steps"], task["log_every"], task["stop_risk"])
        _, logs["nn"] = _guarded(train_nn, p0, data, cfg, test=test)
        if task["reg_horizon"] is not None:
            reg_cfg = RunConfig(eta, task["max_steps"], task["log_every"],
                                stop_time=task["reg_horizon"])
            _, logs["reg"] = _guarded(train_regularized, p0, data, task["lam"], reg_cfg,
                                      test=test)
    elif kind == "coupled":
        spec = spectral_summary(data.inputs)
        stop_time = task["horizon"] / (m * spec.lambda_a)
        cfg = RunConfig(eta, task["max_steps"], task["log_every"], stop_time=stop_time)
        probes = default_probes(data, task["n_probes"], seed)
        try:
            ln, lr, gap = coupled_run(p0, data, cfg, probes)
        except TrainingDiverged as exc:
            ln, lr, gap = exc.log, exc.log, np.zeros((0, 2))
        logs["nn"], logs["rf"] = ln, lr
        run["metrics"].update(lambda_a=spec.lambda_a, stop_time=stop_time,
                              terminal_gap=float(gap[-1, 1]) if len(gap) else math.nan,
                              max_gap=float(gap[:, 1].max()) if len(gap) else math.nan)
    for suffix, lg in logs.items():
        key = f"{suffix}_" if suffix else ""
        fin = lg.final
        run["metrics"][f"{key}final_train_risk"] = fin["train_risk"]
        run["metrics"][f"{key}final_step"] = fin["step"]
        run["metrics"][f"{key}final_t"] = fin["t"]
        if "test_risk" in fin:
            run["metrics"][f"{key}final_test_risk"] = fin["test_risk"]
        run["metrics"][f"{key}status"] = lg.status
    statuses = [lg.status for lg in logs.values()]
    run["status"] = ("diverged" if "diverged" in statuses else
                     "budget-exhausted" if "budget-exhausted" in statuses else "ok")
    run["metrics"] = _clean(run["metrics"])
    return {"logs": logs, "run": run}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _single_thread_init():
    from threadpoolctl import threadpool_limits

    # kept alive for the worker's lifetime
    _single_thread_init.limit = threadpool_limits(1)


def _execute(tasks, workers, reproducible):
    if workers <= 1:
        if reproducible:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(1):
                return [_run_task(t) for t in tasks]
        return [_run_task(t) for t in tasks]
    init = _single_thread_init if reproducible else None
    with ProcessPoolExecutor(max_workers=workers, initializer=init) as pool:
        return list(pool.map(_run_task, tasks))


# -- audit-only frequency checks -------------------------------------------------------------

def _audit_reports(cfg):
    seed = int(cfg.seeds[0])
    data = make_dataset(RandomLabels(), cfg.n, cfg.d, (seed, 0))
    m = int(cfg.widths[0])
    reports = [init_risk_frequency(data, m, 0.01, cfg.delta, cfg.trials, (seed, 10))]
    small = make_dataset(RandomLabels(), 5, 10, (seed, 11)).inputs
    reports.append(gram_init_frequency(small, 1.0, cfg.delta, cfg.trials, (seed, 12)))
    barron = BarronDensity.linear(np.eye(cfg.d)[0], scale=0.5, offset=0.5)
    reports.append(a_star_frequency(barron, cfg.d, 500, cfg.delta, cfg.trials, seed=(seed, 13)))
    reports.append(rad_gen_frequency(barron, cfg.d, 50, 200, cfg.delta, cfg.trials,
                                     seed=(seed, 14)))
    return [r.to_dict() for r in reports]


# -- artifacts -------------------------------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _prepare_dir(out_dir, cfg):
    root = Path(out_dir) / f"{cfg.experiment}-{cfg.config_hash()}"
    try:
        (root / "runs").mkdir(parents=True, exist_ok=True)
        probe = root / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from None
    return root


def run_experiment(cfg, workers=1, reproducible=False):
    """Run every task of ``cfg`` and write artifacts; returns the artifact directory.

    The summary's ``status`` is ``ok``, ``budget-exhausted`` or ``diverged``
    (worst over runs); neither of the latter raises.
    """
    import jsonschema

    root = _prepare_dir(cfg.out_dir, cfg)
    tasks = _tasks(cfg)
    log.info("%s: %d task(s), %d worker(s)", cfg.experiment, len(tasks), workers)
    results = _execute(tasks, workers, reproducible)
    runs = []
    for res in results:
        run = res["run"]
        for suffix, lg in res["logs"].items():
            name = f"runs/{run['id']}{'-' + suffix if suffix else ''}.csv"
            lg.to_csv(root / name)
            run["files"].append(name)
        runs.append(run)
        log.info("run %s m=%d beta=%s: %s", run["id"], run["m"], run["beta_spec"], run["status"])
    reports = []
    if cfg.experiment == "bound_audit":
        reports = _audit_reports(cfg)
    report_dir = root / "reports"
    all_reports = reports + [r for run in runs for r in run["reports"]]
    report_files = []
    if all_reports:
        report_dir.mkdir(exist_ok=True)
        for run in runs:
            for r in run["reports"]:
                name = f"reports/{run['id']}-{r['claim_id']}.json"
                (root / name).write_text(json.dumps(r, sort_keys=True, indent=1) + "\n")
                report_files.append(name)
        for r in reports:
            name = f"reports/{r['claim_id']}.json"
            (root / name).write_text(json.dumps(r, sort_keys=True, indent=1) + "\n")
            report_files.append(name)
    statuses = [r["status"] for r in runs]
    status = ("diverged" if "diverged" in statuses else
              "budget-exhausted" if "budget-exhausted" in statuses else "ok")
    summary = {"experiment": cfg.experiment, "config_hash": cfg.config_hash(),
               "config": _clean(cfg.to_dict()), "status": status, "runs": runs,
               "reports": reports,
               "all_checks_pass": all(r["pass"] for r in all_reports)}
    jsonschema.validate(summary, summary_schema())
    (root / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    _write_manifest(root, cfg, runs, report_files)
    return root


def _write_manifest(root, cfg, runs, report_files):
    lines = [f"# experiment {cfg.experiment}", f"# config_hash {cfg.config_hash()}"]
    lines += [f"# substitute: {note}" for note in cfg.notes]
    lines.append("# path\tconfig_hash\trun_id\tsha256")
    for run in runs:
        for name in run["files"]:
            lines.append(f"{name}\t{cfg.config_hash()}\t{run['id']}\t{_sha256(root / name)}")
    for name in report_files:
        lines.append(f"{name}\t{cfg.config_hash()}\t-\t{_sha256(root / name)}")
    lines.append(f"summary.json\t{cfg.config_hash()}\t-\t{_sha256(root / 'summary.json')}")
    (root / "MANIFEST").write_text("\n".join(lines) + "\n")


# -- plot data -------------------------------------------------------------------------------

def _series_name(run, suffix):
    parts = [f"m={run['m']}", f"beta={run['beta_spec']}", f"seed={run['seed']}"]
    if suffix:
        parts.insert(0, suffix)
    return " ".join(parts)


def emit_plot_data(artifact_dir):
    """Write tidy ``series,x,y`` CSVs for the experiment in ``artifact_dir``.

    Returns ``{"files": [...], "missing": [...]}``; runs whose CSVs are
    missing are listed and skipped.  Raises ``FileNotFoundError`` when there
    is no summary or it lists zero runs.
    """
    root = Path(artifact_dir)
    summary_path = root / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"{root}: no summary.json, zero runs found")
    summary = json.loads(summary_path.read_text())
    runs = summary["runs"]
    if not runs:
        raise FileNotFoundError(f"{root}: summary lists zero runs")
    exp = summary["experiment"]
    rows = {}
    missing = []

    def add(fname, series, x, y):
        rows.setdefault(fname, []).append((series, x, y))

    for run in runs:
        for name in run["files"]:
            path = root / name
            stem = Path(name).stem
            suffix = stem[len(run["id"]) + 1:] if stem != run["id"] else ""
            if not path.exists():
                missing.append(name)
                continue
            lg = TrajectoryLog.from_csv(path)
            series = _series_name(run, suffix)
            for r in lg.records:
                add("plot_train_risk.csv", series, r["t"], r["train_risk"])
                if "test_risk" in r:
                    add("plot_test_risk.csv", series, r["t"], r["test_risk"])
                if "sup_gap" in r and suffix != "rf":
                    add("plot_sup_gap.csv", series, r["t"], r["sup_gap"])
            if exp == "width_sweep" and "test_risk" in lg.final:
                label = "regularized" if suffix == "reg" else "unregularized"
                add("plot_width_test_risk.csv", f"{label} seed={run['seed']}", run["m"],
                    lg.final["test_risk"])
        if exp == "coupling_sweep" and isinstance(run["metrics"].get("terminal_gap"), float):
            add("plot_gap_vs_width.csv", f"terminal_gap seed={run['seed']}", run["m"],
                run["metrics"]["terminal_gap"])
    written = []
    for fname, rs in sorted(rows.items()):
        path = root / fname
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("series", "x", "y"))
            for s, x, y in rs:
                w.writerow((s, f"{x:.17g}" if isinstance(x, float) else x, f"{float(y):.17g}"))
        written.append(path)
    _register_plots(root, summary["config_hash"], written)
    if missing:
        log.warning("missing run files: %s", ", ".join(missing))
    return {"files": written, "missing": missing}


def _register_plots(root, config_hash, paths):
    """Replace the plot entries of an existing MANIFEST so it keeps covering every file."""
    manifest = root / "MANIFEST"
    if not manifest.exists():
        return
    keep = [ln for ln in manifest.read_text().splitlines() if not ln.startswith("plot_")]
    keep += [f"{p.name}\t{config_hash}\t-\t{_sha256(p)}" for p in paths]
    manifest.write_text("\n".join(keep) + "\n")


def env_workers(default=1):
    """Worker count from ``LAZYLAB_WORKERS`` (falls back to ``default``)."""
    raw = os.environ.get("LAZYLAB_WORKERS")
    if raw is None or raw == "":
        return default
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"LAZYLAB_WORKERS must be an integer, got {raw!r}") from None
    if w < 1:
        raise ConfigError("LAZYLAB_WORKERS must be >= 1")
    return w
