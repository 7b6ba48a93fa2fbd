import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest

from blendexo.control import ControllerConfig, Strategy
from blendexo.metrics import (
    MetricsError,
    ankle_stats,
    compare_runs,
    default_labels,
    report_to_csv,
    report_to_json,
    report_to_long_csv,
    smoothness_metrics,
    transparency_metrics,
)
from blendexo.sim import RunRecord, condition, run_trial


@pytest.fixture(scope="module")
def runs(weights):
    out = {}
    for kmh_name in ("T1", "T3.5"):
        sc = condition(kmh_name)
        for strat in (Strategy.BLEND, Strategy.FSM):
            for ankle in (False, True):
                cfg = ControllerConfig(strategy=strat, ankle_actuated=ankle)
                out[(kmh_name, strat.value, ankle)] = run_trial(sc, cfg, weights=weights)
    return out


def with_arrays(rec, **arrays):
    return replace(rec, **arrays)


def test_constant_torque_is_perfectly_smooth(runs):
    rec = runs[("T1", "blend", False)]
    flat = with_arrays(rec, applied=np.ones_like(rec.applied) * 3.0)
    sm = smoothness_metrics(flat)
    assert sm.max_jump == (0.0,) * 6 and sm.rms_rate == (0.0,) * 6 and sum(sm.jumps_above) == 0


def test_single_step(runs):
    rec = runs[("T1", "blend", False)]
    tau = np.zeros_like(rec.applied)
    tau[100:, 3] = 12.0
    sm = smoothness_metrics(with_arrays(rec, applied=tau))
    assert sm.max_jump[3] == 12.0 and sm.jumps_above == (0, 0, 0, 1, 0, 0)
    n = len(rec) - 1
    assert sm.rms_rate[3] == pytest.approx(np.sqrt(12.0**2 * 100.0**2 / n))


def test_max_jump_is_linf_of_first_difference(runs):
    rec = runs[("T3.5", "fsm", False)]
    sm = smoothness_metrics(rec)
    assert np.array_equal(sm.max_jump, np.max(np.abs(np.diff(rec.applied, axis=0)), axis=0))


def test_too_short_record_errors(runs):
    rec = runs[("T1", "blend", False)]
    short = RunRecord(**{k: (v[:1] if isinstance(v, np.ndarray) else v)
                         for k, v in vars(rec).items()})
    with pytest.raises(MetricsError):
        smoothness_metrics(short)


def test_fsm_much_rougher_than_blend(runs):
    fsm = smoothness_metrics(runs[("T3.5", "fsm", False)]).overall_max_jump
    blend = smoothness_metrics(runs[("T3.5", "blend", False)]).overall_max_jump
    assert fsm >= 5 * blend


def test_transparency_zero_and_homogeneous(runs):
    rec = runs[("T3.5", "blend", False)]
    zero = transparency_metrics(with_arrays(rec, forces=np.zeros_like(rec.forces)))
    assert zero.pooled_mean == zero.pooled_peak == zero.pooled_rms == 0.0
    a = transparency_metrics(rec)
    b = transparency_metrics(with_arrays(rec, forces=2 * rec.forces))
    assert b.pooled_mean == pytest.approx(2 * a.pooled_mean)
    assert b.pooled_peak == pytest.approx(2 * a.pooled_peak)
    assert b.pooled_rms == pytest.approx(2 * a.pooled_rms)
    for mean, peak in zip(a.mean, a.peak):
        assert peak >= mean >= 0
    # pooled RMS^2 is the mean of per-cuff RMS^2 (equal sample counts)
    assert a.pooled_rms**2 == pytest.approx(np.mean(np.square(a.rms)), rel=1e-12)


def test_passive_default_pooled_force_in_range(runs):
    assert 5 <= transparency_metrics(runs[("T3.5", "blend", False)]).pooled_mean <= 60


def test_ankle_stats_zero_when_fully_actuated(runs):
    stats = ankle_stats({"T3.5": [runs[("T3.5", "blend", True)]]})["T3.5"]
    for variant in stats.values():
        assert variant.maximum == variant.average == variant.std == 0.0
        assert variant.cycle_peak_mean == variant.cycle_peak_std == 0.0


def test_ankle_stats_speed_ordering(runs):
    st = ankle_stats({"T1": [runs[("T1", "blend", False)]],
                      "T3.5": [runs[("T3.5", "blend", False)]]})
    for variant in ("both_legs", "stance_leg"):
        assert st["T3.5"][variant].maximum > st["T1"][variant].maximum
        s = st["T3.5"][variant]
        assert s.maximum >= s.average >= 0 and s.std >= 0 and s.n_cycles > 10


def test_ankle_stats_order_invariant(runs):
    a, b = runs[("T1", "blend", False)], runs[("T3.5", "blend", False)]
    x = ankle_stats({"c": [a, b]})["c"]
    y = ankle_stats({"c": [b, a]})["c"]
    assert x["both_legs"].average == pytest.approx(y["both_legs"].average, rel=1e-12)
    assert x["stance_leg"].std == pytest.approx(y["stance_leg"].std, rel=1e-12)
    assert x["stance_leg"].cycle_peak_mean == pytest.approx(y["stance_leg"].cycle_peak_mean, rel=1e-12)


def test_ankle_stats_match_flat_csv_recomputation(runs):
    rec = runs[("T3.5", "fsm", False)]
    rows = list(csv.DictReader(io.StringIO(rec.to_csv())))
    values = [abs(float(r[k])) for r in rows for k in ("res_l_ankle", "res_r_ankle")]
    st = ankle_stats({"x": [rec]})["x"]["both_legs"]
    assert st.average == pytest.approx(sum(values) / len(values), rel=1e-12)
    assert st.maximum == max(values)
    mean = sum(values) / len(values)
    assert st.std == pytest.approx((sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5,
                                   rel=1e-9)


def test_ankle_stats_needs_records():
    with pytest.raises(MetricsError):
        ankle_stats({"empty": []})


def test_compare_identity(runs):
    rec = runs[("T1", "fsm", False)]
    rep = compare_runs([(default_labels(rec), rec), (default_labels(rec), rec)])
    for row in rep["rows"]:
        assert all(v == 1.0 for v in row["ratios"].values())


def test_compare_rows_and_baseline(runs):
    pairs = [(default_labels(r), r) for r in runs.values()]
    rep = compare_runs(pairs)
    assert len(rep["rows"]) == len(pairs)
    for row in rep["rows"]:
        assert row["baseline"]["strategy"] == "fsm" and row["baseline"]["ankle"] == "off"
        assert row["baseline"]["condition"] == row["labels"]["condition"]
    json.loads(report_to_json(rep))
    assert len(report_to_csv(rep).splitlines()) == len(pairs) + 1
    long = list(csv.reader(io.StringIO(report_to_long_csv(rep))))
    assert long[0] == ["condition", "strategy", "ankle", "load", "metric", "value"]


def test_load_increases_gravity_dominated_peaks(weights):
    sc = condition("T3.5")
    cfg = ControllerConfig(strategy=Strategy.FSM)
    plain = run_trial(sc, cfg, weights=weights)
    loaded = run_trial(replace(sc, load_mass=10.0), cfg, weights=weights)
    rep = compare_runs([({"group": "g", **default_labels(plain)}, plain),
                        ({"group": "g", **default_labels(loaded)}, loaded)])
    assert rep["rows"][1]["ratios"]["peak_required"] > 1.0


def test_compare_rejects_mismatched_rates(weights):
    a = run_trial(condition("T1"), ControllerConfig(strategy=Strategy.FSM), weights=weights)
    b = run_trial(condition("T1", rate=200.0), ControllerConfig(strategy=Strategy.FSM),
                  weights=weights)
    with pytest.raises(MetricsError, match="rate"):
        compare_runs([(default_labels(a), a), (default_labels(b), b)])
    with pytest.raises(MetricsError):
        compare_runs([])
