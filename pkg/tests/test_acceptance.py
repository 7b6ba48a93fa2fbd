"""Acceptance criteria 1-11, each reported as a PASS/FAIL line at the end of the run."""
import filecmp
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from blendexo.cli import main
from blendexo.control import ControllerConfig, Strategy, blend_gains
from blendexo.gait import GaitProfile, make_calibration_dataset
from blendexo.metrics import smoothness_metrics, transparency_metrics
from blendexo.model import (Environment, ExoParams, JointState, Side, build_grounded_chain,
                            compensation_torques, gravity_load, gravity_torques)
from blendexo.sim import condition, protocol_suite, run_trial
from conftest import VERDICTS, random_q
from oracles import ChainOracle

EXO = ExoParams()


def verdict(n, ok, detail):
    VERDICTS.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def runs(weights):
    out = {}
    for name in ("T1", "T3.5"):
        for strat in Strategy:
            for ankle in (False, True):
                cfg = ControllerConfig(strategy=strat, ankle_actuated=ankle)
                out[name, strat.value, ankle] = run_trial(condition(name), cfg, weights=weights)
    return out


def test_c01_gain_throughput_and_partition(rng):
    Y = rng.normal(size=(100_000, 6))
    q = rng.normal(size=(100_000, 6))
    t0 = time.perf_counter()
    g = blend_gains(Y, q)
    elapsed = time.perf_counter() - t0
    worst = np.abs(g.left + g.right - 1.0).max()
    ok = worst == 0.0 and g.left.min() >= 0 and g.left.max() <= 1 and elapsed < 1.0
    verdict(1, ok, f"1e5 draws, max|gL+gR-1|={worst:.1e}, {elapsed:.3f} s")


def test_c02_gravity_matches_potential_gradient(rng):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(1000):
        side = Side.LEFT if k % 2 else Side.RIGHT
        env = Environment(slope=rng.uniform(-0.35, 0.35), load_mass=rng.uniform(0, 20))
        chain = build_grounded_chain(EXO, side, env)
        q = random_q(rng)
        fd = -ChainOracle(EXO, side, env).grad_potential(q)
        tau = gravity_load(chain, q)
        worst = max(worst, np.linalg.norm(tau - fd) / np.linalg.norm(fd))
        assert np.array_equal(gravity_torques(chain, q), -tau)
    elapsed = time.perf_counter() - t0
    verdict(2, worst < 1e-6 and elapsed < 5.0,
            f"1000 configs, max rel err {worst:.1e}, {elapsed:.2f} s")


def test_c03_power_balance(rng):
    worst = 0.0
    for k in range(100):
        side = Side.LEFT if k % 2 else Side.RIGHT
        env = Environment(slope=rng.uniform(-0.35, 0.35), load_mass=rng.uniform(0, 15))
        chain = build_grounded_chain(EXO, side, env)
        oracle = ChainOracle(EXO, side, env)
        q0 = random_q(rng, margin=0.4)
        amp, w, ph = rng.uniform(0.05, 0.3, 6), rng.uniform(1, 8, 6), rng.uniform(0, 6.3, 6)
        t, h = rng.uniform(0, 2), 1e-4

        def traj(tt):
            return q0 + amp * np.sin(w * tt + ph)
        qd = amp * w * np.cos(w * t + ph)
        qdd = -amp * w * w * np.sin(w * t + ph)
        dE = (oracle.energy(traj, t + h) - oracle.energy(traj, t - h)) / (2 * h)
        tau = compensation_torques(chain, JointState(traj(t), qd, qdd))
        worst = max(worst, abs(tau @ qd - dE) / np.abs(tau * qd).sum())
    verdict(3, worst < 1e-4, f"100 trajectories, max rel power error {worst:.1e}")


def test_c04_blend_smoother_than_fsm(runs):
    # defaults: passive ankle
    blend = smoothness_metrics(runs["T3.5", "blend", False]).overall_max_jump
    fsm = smoothness_metrics(runs["T3.5", "fsm", False]).overall_max_jump
    over = sum(smoothness_metrics(runs["T3.5", "blend", False]).jumps_above)
    verdict(4, fsm >= 5 * blend and over == 0,
            f"max jump FSM {fsm:.1f} N·m vs Blend {blend:.2f} N·m, Blend jumps > 5 N·m: {over}")


def test_c05_passive_ankle_residual_grows_with_speed(runs):
    slow = np.abs(runs["T1", "blend", False].stance_ankle_residual()).max()
    fast = np.abs(runs["T3.5", "blend", False].stance_ankle_residual()).max()
    verdict(5, fast > slow, f"peak stance-ankle residual {fast:.1f} (3.5 km/h) vs {slow:.1f} N·m (1 km/h)")


def test_c06_stance_ankle_compensation_magnitude(runs):
    rec = runs["T3.5", "blend", True]
    peak = np.abs(rec.stance_ankle_compensation()[rec.single_support()]).max()
    verdict(6, 40 <= peak <= 130, f"single-support stance-ankle peak {peak:.1f} N·m")


def test_c07_cuff_forces(runs):
    pooled = transparency_metrics(runs["T3.5", "blend", False]).pooled_mean
    full = runs["T3.5", "blend", True]
    residual = np.abs(full.forces[full.single_support()]).max()
    verdict(7, 5 <= pooled <= 60 and residual < 1e-6,
            f"passive-ankle pooled mean {pooled:.1f} N, full actuation max {residual:.1e} N")


def test_c08_classifier_accuracy(weights):
    held = make_calibration_dataset(GaitProfile(speeds_kmh=(3.5,)), 30.0, 100.0, start=30.0)
    single = held.trace.contact.sum(axis=1) == 1
    acc = np.mean(np.where(held.Q @ weights.Y > 0, 1, -1)[single] == held.c[single])
    verdict(8, acc >= 0.95, f"held-out single-support accuracy {acc:.1%}")


def test_c09_load_and_slope(weights, rng):
    cfg = ControllerConfig(strategy=Strategy.FSM, ankle_actuated=True)
    sc = condition("T3.5")
    plain = run_trial(sc, cfg, weights=weights)
    loaded = run_trial(replace(sc, load_mass=10.0), cfg, weights=weights)
    ss = plain.single_support() & loaded.single_support()
    hip_p = np.abs(plain.tau_required[ss][:, [0, 3]]).max()
    hip_l = np.abs(loaded.tau_required[ss][:, [0, 3]]).max()
    env = Environment(slope=np.radians(10.0))
    worst = 0.0
    for side in Side:
        chain, oracle = build_grounded_chain(EXO, side, env), ChainOracle(EXO, side, env)
        for q in random_q(rng, 50):
            fd = oracle.grad_potential(q)
            worst = max(worst, np.linalg.norm(gravity_torques(chain, q) - fd) / np.linalg.norm(fd))
    verdict(9, hip_l > hip_p and worst < 1e-6,
            f"hip peak {hip_p:.1f} -> {hip_l:.1f} N·m with 10 kg, 10 deg slope err {worst:.1e}")


def _protocol(out, capsys):
    status = main(["protocol", "--out", str(out)])
    capsys.readouterr()
    return status


@pytest.fixture(scope="module")
def protocol_dirs(tmp_path_factory):
    return tmp_path_factory.mktemp("proto_a"), tmp_path_factory.mktemp("proto_b")


def test_c10_protocol_grid(protocol_dirs, capsys):
    suite = protocol_suite()
    rows_ok = (len(suite) == 8 and all(s.ramp_duration == 15.0 for s in suite)
               and [s.load_mass for s in suite] == [0, 0, 10, 0, 0, 10, 0, 10])
    t0 = time.perf_counter()
    status = _protocol(protocol_dirs[0], capsys)
    elapsed = time.perf_counter() - t0
    manifest = json.loads((protocol_dirs[0] / "manifest.json").read_text())
    ok = rows_ok and status == 0 and manifest["n_records"] == 32 and elapsed < 60
    verdict(10, ok, f"8 scenarios, {manifest['n_records']} records in {elapsed:.1f} s")


def test_c11_protocol_is_reproducible(protocol_dirs, capsys):
    a, b = protocol_dirs
    if not (a / "manifest.json").exists():
        _protocol(a, capsys)
    assert _protocol(b, capsys) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    same = files == other and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    verdict(11, same, f"{len(files)} output files byte-identical across two runs")
