"""Command-line entry point.

Subcommands::

    blendexo calibrate --out DIR              fit Blend weights -> DIR/weights.json
    blendexo run --weights W --out DIR        one trial -> CSV + JSON sidecar
    blendexo protocol --out DIR               8 trials x strategies x ankle settings
    blendexo report DIR                       recompute metrics from saved CSVs
    blendexo gait --out DIR                   export the synthetic gait

Set ``BLENDEXO_LOG`` (DEBUG, INFO, WARNING, ERROR) for log verbosity.  Errors
are written to stderr as one JSON object and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import U64_MAX, ConfigError, FullConfig, load_config, load_config_file
from .control import BlendWeights, train_blend_weights
from .gait import gait_trace, make_calibration_dataset
from .metrics import compare_runs, default_labels, report_to_csv, report_to_json, report_to_long_csv
from .model import ValidationError
from .sim import ConfigurationError, RunRecord, Scenario, SimulationError, run_trial

log = logging.getLogger("blendexo")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, status: int = EXIT_FAILURE, **extra):
        super().__init__(message)
        self.kind, self.message, self.status, self.extra = kind, message, status, extra

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": self.message, **self.extra}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--seed", type=_u64, help="override the configured seed (u64)")
    common.add_argument("--out", type=Path, help="output directory")

    trial = argparse.ArgumentParser(add_help=False)
    trial.add_argument("--strategy", choices=("blend", "fsm"))
    trial.add_argument("--ankle", choices=("on", "off"))
    pick = trial.add_mutually_exclusive_group()
    pick.add_argument("--trial", type=int, choices=range(1, 9), metavar="{1..8}",
                      help="protocol trial number")
    pick.add_argument("--condition", choices=("T1", "T3.5", "SS"), help="preset condition")

    p = _Parser(prog="blendexo", description="Blend vs FSM exoskeleton assistance benchmark")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("calibrate", parents=[common], help="fit the Blend regression weights")
    r = sub.add_parser("run", parents=[common, trial], help="simulate one trial")
    r.add_argument("--weights", type=Path, help="weights artifact from `calibrate`")
    pr = sub.add_parser("protocol", parents=[common], help="run the full trial grid")
    pr.add_argument("--weights", type=Path, help="reuse a weights artifact instead of calibrating")
    pr.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    rep = sub.add_parser("report", parents=[common], help="recompute metrics from saved runs")
    rep.add_argument("runs", type=Path, help="directory holding run CSV/JSON pairs")
    sub.add_parser("gait", parents=[common, trial], help="export synthetic gait as CSV")
    return p


# files -------------------------------------------------------------------

def write_once(path: Path, text: str) -> str:
    """Write ``text`` unless ``path`` already holds different content.  Returns the sha256."""
    data = text.encode()
    if path.exists():
        if path.read_bytes() != data:
            raise CliError("io", f"refusing to overwrite {path} with different content",
                           path=str(path))
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def _load(args) -> FullConfig:
    cfg = load_config_file(args.config) if args.config else load_config("")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg: FullConfig) -> Path:
    return args.out if args.out is not None else Path(cfg.output)


def _read_weights(path: Path) -> BlendWeights:
    try:
        return BlendWeights.from_json(path.read_text())
    except FileNotFoundError:
        raise CliError("weights", f"weights file not found: {path}", path=str(path)) from None
    except (ValueError, KeyError) as exc:
        raise CliError("weights", f"invalid weights file {path}: {exc}", path=str(path)) from None


def calibrate(cfg: FullConfig) -> BlendWeights:
    cal = cfg.calibration
    data = make_calibration_dataset(cfg.calibration_profile(), cal.duration, cfg.rate, cal.start)
    w = train_blend_weights(data.Q, data.c, ridge=cal.ridge)
    log.info("calibrated on %d samples, residual %.4g", w.n_samples, w.residual_norm)
    return w


def run_name(scenario: Scenario, strategy: str, ankle: str, seed: int) -> str:
    return f"{scenario.tag}_{strategy}_ankle-{ankle}_seed{seed}"


def _simulate(cfg: FullConfig, scenario: Scenario, strategy: str, ankle: str,
              weights: BlendWeights | None) -> RunRecord:
    ctl = cfg.controller_config(strategy=strategy, ankle_actuated=(ankle == "on"))
    return run_trial(scenario, ctl, exo=cfg.exo, subject=cfg.subject, weights=weights,
                     seed=cfg.seed, gait=cfg.gait, limits=cfg.limits,
                     target=cfg.controller.target)


def save_record(record: RunRecord, directory: Path, name: str) -> dict:
    csv_path, json_path = directory / f"{name}.csv", directory / f"{name}.json"
    return {"csv": str(csv_path), "json": str(json_path),
            "csv_sha256": write_once(csv_path, record.to_csv()),
            "json_sha256": write_once(json_path, record.to_json())}


# subcommands -------------------------------------------------------------

def cmd_calibrate(args) -> dict:
    cfg = _load(args)
    w = calibrate(cfg)
    path = _out(args, cfg) / "weights.json"
    write_once(path, w.to_json())
    return {"weights": str(path), "n_samples": w.n_samples, "residual_norm": w.residual_norm}


def cmd_run(args) -> dict:
    cfg = _load(args)
    strategy = args.strategy or cfg.controller.strategy
    ankle = args.ankle or ("on" if cfg.controller.ankle_actuated else "off")
    needs_weights = strategy == "blend" or cfg.controller.target == "blend"
    if args.weights is None and needs_weights:
        why = "the Blend strategy" if strategy == "blend" else "the Blend required-torque target"
        raise CliError("weights", f"`run` with {why} needs --weights (produce it with `calibrate`)")
    weights = _read_weights(args.weights) if args.weights else None
    scenario = cfg.scenario_for(trial=args.trial, name=args.condition)
    rec = _simulate(cfg, scenario, strategy, ankle, weights)
    name = run_name(scenario, strategy, ankle, cfg.seed)
    return {"samples": len(rec), **save_record(rec, _out(args, cfg), name)}


def _protocol_job(job):
    cfg, scenario, strategy, ankle, weights = job
    return _simulate(cfg, scenario, strategy, ankle, weights)


def protocol_group(scenarios: list[Scenario], scenario: Scenario) -> str:
    """Tag of the first trial that differs from ``scenario`` only in the carried load."""
    def key(s):
        return replace(s, name="", trial=None, load_mass=0.0)
    return next(s.tag for s in scenarios if key(s) == key(scenario))


def cmd_protocol(args) -> dict:
    cfg = _load(args)
    out = _out(args, cfg)
    if args.weights:
        weights = _read_weights(args.weights)
    else:
        weights = calibrate(cfg)
        write_once(out / "weights.json", weights.to_json())
    scenarios = cfg.protocol_scenarios()
    jobs, entries = [], []
    for sc in scenarios:
        for strategy in cfg.protocol.strategies:
            for ankle in cfg.protocol.ankle:
                jobs.append((cfg, sc, strategy, ankle, weights))
                entries.append({"trial": sc.trial, "scenario": sc.to_dict(), "strategy": strategy,
                                "ankle": ankle, "group": protocol_group(scenarios, sc),
                                "name": run_name(sc, strategy, ankle, cfg.seed)})
    t0 = time.perf_counter()
    results = _run_jobs(jobs, args.jobs)
    runs, failed = [], 0
    for entry, res in zip(entries, results):
        if isinstance(res, Exception):
            failed += 1
            entry.update(status="failed", error=f"{type(res).__name__}: {res}")
            log.error("%s failed: %s", entry["name"], res)
            continue
        labels = default_labels(res)
        labels["group"] = entry["group"]
        res.meta["labels"] = labels
        saved = save_record(res, out / f"trial{entry['trial']}", entry["name"])
        for key in ("csv", "json"):
            saved[key] = Path(saved[key]).relative_to(out).as_posix()
        entry.update(status="ok", samples=len(res), **saved)
        runs.append((entry["csv"], labels, res))
    elapsed = time.perf_counter() - t0
    if runs:
        runs.sort(key=lambda r: r[0])
        _write_reports(compare_runs([(lab, rec) for _, lab, rec in runs]), out)
    manifest = {"schema_version": 1, "package_version": __version__, "seed": cfg.seed,
                "weights": str(args.weights) if args.weights else "weights.json",
                "n_records": len(runs), "n_failed": failed, "trials": entries}
    write_once(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("protocol: %d records in %.1f s", len(runs), elapsed)
    if failed:
        raise CliError("protocol", f"{failed} of {len(entries)} trials failed",
                       manifest=str(out / "manifest.json"))
    return {"records": len(runs), "manifest": str(out / "manifest.json")}


def _run_jobs(jobs, n_workers):
    if n_workers <= 1:
        results = []
        for job in jobs:
            try:
                results.append(_protocol_job(job))
            except (ValidationError, ConfigurationError, SimulationError) as exc:
                results.append(exc)
        return results
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_protocol_job, job) for job in jobs]
        results = []
        for f in futures:
            exc = f.exception()
            results.append(exc if exc is not None else f.result())
        return results


def _write_reports(report: dict, out: Path) -> None:
    write_once(out / "report.json", report_to_json(report))
    write_once(out / "report.csv", report_to_csv(report))
    write_once(out / "report_long.csv", report_to_long_csv(report))


def load_runs(directory: Path) -> list[tuple[dict, RunRecord]]:
    """Every CSV with a matching run sidecar below ``directory``, in path order."""
    runs = []
    for csv_path in sorted(directory.rglob("*.csv"), key=str):
        side = csv_path.with_suffix(".json")
        if not side.exists():
            continue
        meta = json.loads(side.read_text())
        if "columns" not in meta:
            continue
        rec = RunRecord.from_csv(csv_path.read_text(), meta)
        runs.append((meta.get("labels") or default_labels(rec), rec))
    return runs


def cmd_report(args) -> dict:
    if not args.runs.is_dir():
        raise CliError("io", f"not a directory: {args.runs}", path=str(args.runs))
    runs = load_runs(args.runs)
    if not runs:
        raise CliError("report", f"no run CSV/JSON pairs below {args.runs}")
    out = args.out if args.out is not None else args.runs / "recomputed"
    _write_reports(compare_runs(runs), out)
    return {"records": len(runs), "report": str(out / "report.json")}


def cmd_gait(args) -> dict:
    cfg = _load(args)
    scenario = cfg.scenario_for(trial=args.trial, name=args.condition)
    profile = scenario.gait_profile(cfg.subject, cfg.exo.total_mass, template=cfg.gait,
                                    seed=cfg.seed)
    trace = gait_trace(profile, scenario.times())
    path = _out(args, cfg) / f"gait_{scenario.tag}_seed{cfg.seed}.csv"
    write_once(path, trace.to_csv())
    return {"gait": str(path), "samples": len(trace)}


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "protocol": cmd_protocol,
            "report": cmd_report, "gait": cmd_gait}


def main(argv=None) -> int:
    level = os.environ.get("BLENDEXO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        result = COMMANDS[args.command](args)
    except CliError as exc:
        err = exc.to_dict()
        status = exc.status
    except ConfigError as exc:
        err, status = exc.to_dict(), EXIT_USAGE
    except (ValidationError, ConfigurationError) as exc:
        err, status = {"error": "configuration", "message": str(exc)}, EXIT_USAGE
    except SimulationError as exc:
        err, status = {"error": "simulation", "message": str(exc), "tick": exc.tick}, EXIT_FAILURE
    except OSError as exc:
        err, status = {"error": "io", "message": str(exc)}, EXIT_FAILURE
    else:
        print(json.dumps({"status": "ok", **result}, sort_keys=True))
        return 0
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
