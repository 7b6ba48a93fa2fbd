"""Outcome metrics: torque smoothness, cuff-force transparency, ankle torque statistics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .model import DEVICE_JOINTS
from .sim import CUFFS, RunRecord

JUMP_THRESHOLD = 5.0
BASELINE = {"strategy": "fsm", "ankle": "off", "load": 0.0}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothnessReport:
    max_jump: tuple[float, ...]
    rms_rate: tuple[float, ...]
    jumps_above: tuple[int, ...]
    threshold: float

    @property
    def overall_max_jump(self) -> float:
        return max(self.max_jump)


@dataclass(frozen=True)
class TransparencyReport:
    mean: tuple[float, ...]
    peak: tuple[float, ...]
    rms: tuple[float, ...]
    pooled_mean: float
    pooled_peak: float
    pooled_rms: float


@dataclass(frozen=True)
class AnkleTorqueStats:
    """Ankle residual statistics for one condition.

    ``average``/``std``/``maximum`` are over all samples of ``|torque|``;
    ``cycle_peak_mean``/``cycle_peak_std`` over the per-gait-cycle peaks.
    """

    average: float
    std: float
    maximum: float
    cycle_peak_mean: float
    cycle_peak_std: float
    n_samples: int
    n_cycles: int


def smoothness_metrics(record: RunRecord, threshold: float = JUMP_THRESHOLD,
                       signal: str = "applied") -> SmoothnessReport:
    """Sample-to-sample jumps of a torque trace (default: the applied torque)."""
    tau = np.asarray(getattr(record, signal))
    if len(tau) < 2:
        raise MetricsError("smoothness needs at least 2 samples")
    jumps = np.abs(np.diff(tau, axis=0))
    rate = record.rate
    return SmoothnessReport(
        max_jump=tuple(float(x) for x in jumps.max(axis=0)),
        rms_rate=tuple(float(x) for x in np.sqrt(np.mean((jumps * rate) ** 2, axis=0))),
        jumps_above=tuple(int(x) for x in np.sum(jumps > threshold, axis=0)),
        threshold=float(threshold),
    )


def transparency_metrics(record: RunRecord) -> TransparencyReport:
    f = np.abs(np.asarray(record.forces))
    return TransparencyReport(
        mean=tuple(float(x) for x in f.mean(axis=0)),
        peak=tuple(float(x) for x in f.max(axis=0)),
        rms=tuple(float(x) for x in np.sqrt(np.mean(f**2, axis=0))),
        pooled_mean=float(f.mean()),
        pooled_peak=float(f.max()),
        pooled_rms=float(np.sqrt(np.mean(f**2))),
    )


def _stats(values: np.ndarray, cycle_peaks: np.ndarray) -> AnkleTorqueStats:
    return AnkleTorqueStats(
        average=float(values.mean()) if values.size else 0.0,
        std=float(values.std()) if values.size else 0.0,
        maximum=float(values.max()) if values.size else 0.0,
        cycle_peak_mean=float(cycle_peaks.mean()) if cycle_peaks.size else 0.0,
        cycle_peak_std=float(cycle_peaks.std()) if cycle_peaks.size else 0.0,
        n_samples=int(values.size),
        n_cycles=int(cycle_peaks.size),
    )


def _cycle_peaks(record: RunRecord, values: np.ndarray) -> np.ndarray:
    """Peak of ``values`` in each gait cycle; cycles split where the phase wraps."""
    peaks = []
    for c in np.unique(record.cycle):
        peaks.append(values[record.cycle == c].max(axis=0))
    return np.asarray(peaks)


def ankle_stats(records: dict[str, list[RunRecord]], signal: str = "residual") -> dict:
    """Ankle torque statistics per condition, both-legs and stance-leg variants.

    Returns ``{condition: {"both_legs": AnkleTorqueStats, "stance_leg": ...}}``.
    """
    out = {}
    for name, recs in records.items():
        if not recs:
            raise MetricsError(f"condition {name!r} has no records")
        both, stance, both_peaks, stance_peaks = [], [], [], []
        for r in recs:
            tau = np.abs(np.asarray(getattr(r, signal))[:, [2, 5]])
            st = np.where(r.support >= 0.5, tau[:, 0], tau[:, 1])
            both.append(tau.ravel())
            stance.append(st)
            both_peaks.append(_cycle_peaks(r, tau).ravel())
            stance_peaks.append(_cycle_peaks(r, st))
        out[name] = {
            "both_legs": _stats(np.concatenate(both), np.concatenate(both_peaks)),
            "stance_leg": _stats(np.concatenate(stance), np.concatenate(stance_peaks)),
        }
    return out


def _record_metrics(record: RunRecord) -> dict[str, float]:
    sm = smoothness_metrics(record)
    tr = transparency_metrics(record)
    an = ankle_stats({"_": [record]})["_"]
    m = {
        "max_jump": sm.overall_max_jump,
        "jumps_above": float(sum(sm.jumps_above)),
        "rms_rate": float(np.sqrt(np.mean(np.square(sm.rms_rate)))),
        "force_mean": tr.pooled_mean,
        "force_peak": tr.pooled_peak,
        "force_rms": tr.pooled_rms,
        "ankle_avg": an["both_legs"].average,
        "ankle_std": an["both_legs"].std,
        "ankle_max": an["both_legs"].maximum,
        "ankle_cycle_peak_mean": an["both_legs"].cycle_peak_mean,
        "stance_ankle_avg": an["stance_leg"].average,
        "stance_ankle_max": an["stance_leg"].maximum,
        "peak_required": float(np.abs(record.tau_required).max()),
    }
    for j, name in enumerate(DEVICE_JOINTS):
        m[f"max_jump_{name}"] = sm.max_jump[j]
    for k, name in enumerate(CUFFS):
        m[f"force_mean_{name}"] = tr.mean[k]
    return m


def default_labels(record: RunRecord) -> dict:
    """Factor labels read from a record's metadata."""
    sc, ctl = record.meta["scenario"], record.meta["controller"]
    return {
        "condition": f"trial{sc['trial']}" if sc.get("trial") is not None else sc["name"],
        "strategy": ctl["strategy"],
        "ankle": "on" if ctl["ankle_actuated"] else "off",
        "load": float(sc["load_mass"]),
    }


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    return a / b if b != 0 else float("inf")


def _baseline(group: list[dict]) -> dict:
    for keys in (("strategy", "ankle", "load"), ("strategy", "ankle")):
        for row in group:
            if all(row["labels"].get(k) == BASELINE[k] for k in keys):
                return row
    return group[0]


def compare_runs(runs: list[tuple[dict, RunRecord]]) -> dict:
    """Factor-wise metric table with ratios against a baseline run.

    ``runs`` pairs factor labels (condition, strategy, ankle, load and an
    optional ``group``) with records.  Rows sharing a group (default: the
    condition) are compared with the group's FSM, passive-ankle, no-load run;
    failing that the FSM passive-ankle run, failing that the first row.
    """
    if not runs:
        raise MetricsError("nothing to compare")
    ref_labels, ref = runs[0]
    ref_cols = json.loads(ref.to_json())["columns"]
    for labels, r in runs[1:]:
        diffs = []
        if r.rate != ref.rate:
            diffs.append(f"rate ({r.rate} vs {ref.rate})")
        cols = json.loads(r.to_json())["columns"]
        if cols != ref_cols:
            diffs.append("columns " + ", ".join(sorted(set(cols) ^ set(ref_cols)) or ["(order)"]))
        if diffs:
            raise MetricsError(f"record {labels} differs from {ref_labels} in {'; '.join(diffs)}")

    rows = [{"labels": dict(labels), "metrics": _record_metrics(r)} for labels, r in runs]
    groups: dict[str, list[dict]] = {}
    for row in rows:
        key = row["labels"].get("group", row["labels"].get("condition", ""))
        groups.setdefault(str(key), []).append(row)
    for group in groups.values():
        base = _baseline(group)
        for row in group:
            row["baseline"] = dict(base["labels"])
            row["ratios"] = {k: _ratio(v, base["metrics"][k]) for k, v in row["metrics"].items()}
    return {"rows": rows}


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_plain) + "\n"


def _plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_to_csv(report: dict) -> str:
    """One row per run: factor labels, metrics, then ratios."""
    rows = report["rows"]
    label_keys = sorted({k for r in rows for k in r["labels"]})
    metric_keys = list(rows[0]["metrics"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(label_keys + metric_keys + [f"ratio_{k}" for k in metric_keys])
    for r in rows:
        w.writerow([r["labels"].get(k, "") for k in label_keys]
                   + [repr(r["metrics"][k]) for k in metric_keys]
                   + [repr(r["ratios"][k]) for k in metric_keys])
    return buf.getvalue()


def report_to_long_csv(report: dict) -> str:
    """Plot-ready long format: ``condition, strategy, ankle, load, metric, value``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "strategy", "ankle", "load", "metric", "value"])
    for r in report["rows"]:
        lab = r["labels"]
        for k, v in r["metrics"].items():
            w.writerow([lab.get("condition", ""), lab.get("strategy", ""), lab.get("ankle", ""),
                        lab.get("load", ""), k, repr(v)])
    return buf.getvalue()
