"""Acceptance criteria, one test per criterion.

Each test records a one-line verdict; the lines are printed at the end of the
pytest run (and directly when this file is executed as a script).
The Monte Carlo criteria take several minutes on one core.
"""

import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from covbreak import cli
from covbreak.bootstrap import (
    bootstrap_statistic,
    calibrate,
    empirical_quantile,
    familywise_exceedance,
)
from covbreak.detector import OnlineDetector, detect_offline, exceedances
from covbreak.simulation import CovarianceSpec, ExperimentConfig, delay_sweep, run_experiment
from covbreak.stats import WindowSet, compute_scaling, scan_window

sys.path.insert(0, str(Path(__file__).parent))
from oracles import direct_boot_statistic, direct_trace, full_scaling  # noqa: E402

VERDICTS = {}


def record(key, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}"
    VERDICTS[key] = line
    print(line)
    assert ok, line


def binom_se(p, runs):
    return math.sqrt(max(p * (1 - p), 0.0) / runs)


def within_2se(lo, hi, runs):
    """``hi >= lo`` up to two standard errors of the difference."""
    return hi >= lo - 2 * math.sqrt(binom_se(lo, runs) ** 2 + binom_se(hi, runs) ** 2)


# desk-scale break configuration shared by criteria 5, 6 and 8
RUNS = 200


def break_config(windows, calib_range=None, runs=RUNS, seed=11):
    return ExperimentConfig(
        p=20,
        N=400,
        tau=300,
        sigma1=CovarianceSpec("factor_model", 20, k=3, noise=0.1),
        sigma2=CovarianceSpec("block_scaled", 20, block=10, factor=3.0),
        windows=WindowSet.of(windows),
        alpha=0.05,
        M=500,
        calib_range=calib_range,
        runs=runs,
        seed=seed,
    )


def test_criterion_1_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        p = int(rng.integers(1, 6))
        sizes = sorted(rng.choice([2, 3, 5], size=int(rng.integers(1, 4)), replace=False).tolist())
        N = int(rng.integers(2 * max(sizes) + 1, 61))
        X = rng.standard_t(5, size=(N, p))
        sc = compute_scaling(X)
        full = full_scaling(X, range(1, N + 1))
        Z = rng.normal(size=(N, sc.sigma.size))
        boot = bootstrap_statistic(Z, sc, WindowSet(sizes))
        for j, n in enumerate(sizes):
            ref = direct_trace(X, full, n)
            got = scan_window(X, sc, n).values
            worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300))))
            ref_b = direct_boot_statistic(Z, sc.sigma, sc.active_mask, n)
            worst = max(worst, abs(boot[j] - ref_b) / max(ref_b, 1e-300))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-9 and elapsed < 10,
           f"50 instances, max relative error {worst:.2e} (tol 1e-9), {elapsed:.1f}s (limit 10s)")


def test_criterion_2_scale_invariance():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(10):
        X = rng.normal(size=(int(rng.integers(30, 80)), int(rng.integers(1, 6))))
        base = [scan_window(X, compute_scaling(X), n).values for n in (3, 7)]
        for c in (1e-3, 1.0, 1e3):
            Y = c * X
            sc = compute_scaling(Y)
            for n, ref in zip((3, 7), base):
                got = scan_window(Y, sc, n).values
                worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(ref, 1e-300))))
    elapsed = time.perf_counter() - start
    record(2, worst <= 1e-12 and elapsed < 5,
           f"max relative deviation {worst:.2e} (tol 1e-12), {elapsed:.1f}s (limit 5s)")


def test_criterion_3_calibration_construction():
    start = time.perf_counter()
    rng = np.random.default_rng(103)
    failures = []
    for i in range(24):
        p = int(rng.integers(1, 6))
        sizes = sorted(rng.choice([2, 4, 6, 10], size=int(rng.integers(1, 4)), replace=False).tolist())
        N = int(rng.integers(2 * max(sizes) + 1, 120))
        X = rng.normal(size=(N, p))
        alpha = float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        M = int(rng.choice([100, 200, 333]))
        lo = int(rng.integers(1, N // 2))
        cal = calibrate(X, sizes, alpha=alpha, calib_range=range(lo, N + 1), M=M, seed=i)
        rep = cal.matrix.replicates
        fwe = familywise_exceedance(rep, cal.threshold_vector())
        mono = all(
            all(a >= b for a, b in zip(q, q[1:]))
            for q in ([empirical_quantile(rep[:, j], k / M) for k in range(1, M)] for j in range(len(sizes)))
        )
        if not (cal.alpha_star <= alpha and fwe <= alpha and mono):
            failures.append((i, cal.alpha_star, fwe, mono))
    elapsed = time.perf_counter() - start
    record(3, not failures and elapsed < 60,
           f"24 calibrations, violations {failures or 'none'}, {elapsed:.1f}s (limit 60s)")


@pytest.mark.slow
def test_criterion_4_type1_error():
    start = time.perf_counter()
    cfg = ExperimentConfig(
        p=20,
        N=300,
        tau=0,
        sigma1=CovarianceSpec("factor_model", 20, k=3, noise=0.1),
        sigma2=CovarianceSpec("factor_model", 20, k=3, noise=0.1),
        windows=WindowSet([20, 40]),
        alpha=0.05,
        M=500,
        runs=200,
        seed=4,
    )
    rate = run_experiment(cfg).rejection_rate
    bound = 0.05 + 2.58 * math.sqrt(0.05 * 0.95 / 200)
    elapsed = time.perf_counter() - start
    record(4, rate <= bound, f"H0 rejection rate {rate:.3f} <= {bound:.3f} over 200 runs, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_5_power_ordering():
    start = time.perf_counter()
    sizes = [5, 10, 20, 40]
    powers = [run_experiment(break_config([n])).rejection_rate for n in sizes]
    ordered = all(within_2se(a, b, RUNS) for a, b in zip(powers, powers[1:]))
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{{{n}}}: {p:.3f}" for n, p in zip(sizes, powers))
    record(5, powers[-1] >= 0.9 and ordered,
           f"power {detail}; largest >= 0.9 and nondecreasing within 2 SE, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_6_localization():
    start = time.perf_counter()
    prefix = (1, 250)  # ends before tau = 300
    multi = run_experiment(break_config([10, 40], calib_range=prefix))
    single = run_experiment(break_config([10], calib_range=prefix)).rejection_rate
    cover_ok = multi.coverage >= 0.9
    n_ok = multi.mean_n_hat < 40 if single > 0.2 else True
    elapsed = time.perf_counter() - start
    record(6, cover_ok and n_ok,
           f"coverage {multi.coverage:.3f} (>= 0.9) over {multi.rejection_rate * RUNS:.0f} detections; "
           f"mean n_hat for {{10,40}} {multi.mean_n_hat:.2f} (< 40 required as {{10}} power is {single:.3f}), "
           f"{elapsed:.0f}s")


def test_criterion_7_online_offline():
    start = time.perf_counter()
    rng = np.random.default_rng(107)
    mismatches = 0
    worst = 0.0
    for i in range(20):
        p = int(rng.integers(1, 5))
        sizes = sorted(rng.choice([3, 5, 8, 12], size=int(rng.integers(1, 4)), replace=False).tolist())
        N = int(rng.integers(2 * max(sizes) + 20, 200))
        X = rng.normal(size=(N, p))
        X[N // 2:] *= rng.uniform(1.0, 2.0)
        cal = calibrate(X, sizes, calib_range=range(1, N // 2 + 1), M=100, seed=i)
        offline = exceedances(detect_offline(X, None, cal), cal)
        det = OnlineDetector(cal, stop_on_first=False)
        det.run(X)
        online = sorted((a.t, a.n, a.statistic) for a in det.alarm_log)
        if [(t, n) for t, n, _ in online] != [(t, n) for t, n, _ in offline]:
            mismatches += 1
            continue
        for (_, _, a), (_, _, b) in zip(online, offline):
            worst = max(worst, abs(a - b) / b)
    elapsed = time.perf_counter() - start
    record(7, mismatches == 0 and worst <= 1e-10 and elapsed < 60,
           f"20 configurations, {mismatches} set mismatches, max relative deviation {worst:.1e}, "
           f"{elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_8_sensitivity_direction():
    start = time.perf_counter()
    mults = [0.0, 0.5, 1.0]
    rows = delay_sweep(break_config([10]), mults, window_sets=[[10], [40]])
    rate = {(r["n_plus"], r["multiplier"]): r["detection_rate"] for r in rows}
    in_delta = all(within_2se(rate[n, a], rate[n, b], RUNS) for n in (10, 40) for a, b in zip(mults, mults[1:]))
    in_n = all(within_2se(rate[10, m], rate[40, m], RUNS) for m in mults)
    elapsed = time.perf_counter() - start
    detail = "; ".join(f"n+={n}: " + ", ".join(f"{rate[n, m]:.3f}" for m in mults) for n in (10, 40))
    record(8, in_delta and in_n, f"detection rate by multiplier {mults}: {detail}, {elapsed:.0f}s")


def _cli_outputs(tmp, threads):
    rng = np.random.default_rng(109)
    X = rng.normal(size=(150, 4))
    X[100:] *= 2.5
    data = tmp / "data.csv"
    data.write_text("".join(",".join(repr(float(v)) for v in r) + "\n" for r in X))
    sim = tmp / "sim.json"
    sim.write_text(json.dumps({
        "mode": "table", "p": 4, "N": 100, "tau": 60,
        "sigma1": {"kind": "factor_model", "k": 2},
        "sigma2": {"kind": "block_scaled", "block": 2, "factor": 2.0},
        "window_sets": [[5], [5, 10]], "calib_ranges": [None, [1, 50]],
        "M": 100, "runs": 3, "seed": 5,
    }))
    sweep = tmp / "sweep.json"
    sweep.write_text(json.dumps(dict(json.loads(sim.read_text()), mode="sweep", windows=[5],
                                     multipliers=[0.0, 1.0], window_sets=[[5], [10]])))
    out = {}
    t = ["--threads", str(threads)]
    cal = tmp / f"cal{threads}.json"
    cli.main(t + ["calibrate", str(data), "--windows", "5,10,20", "--calib-range", "1:90", "-M", "300",
                  "--seed", "7", "-o", str(cal)])
    out["calibrate"] = cal.read_bytes()
    rep = tmp / f"rep{threads}.json"
    cli.main(t + ["detect", str(data), "-c", str(cal), "-o", str(rep)])
    out["detect"] = rep.read_bytes()
    rep2 = tmp / f"rep_inline{threads}.json"
    cli.main(t + ["detect", str(data), "--windows", "5,10", "-M", "200", "--seed", "3", "-o", str(rep2)])
    out["detect_inline"] = rep2.read_bytes()
    buf = io.StringIO()
    old = sys.stdin
    sys.stdin = io.StringIO(data.read_text())
    try:
        args = cli.build_parser().parse_args(t + ["stream", "-c", str(cal), "--stop-on-first", "false"])
        cli.cmd_stream(args, stdout=buf)
    finally:
        sys.stdin = old
    out["stream"] = buf.getvalue().encode()
    for name, conf in (("table", sim), ("sweep", sweep)):
        j, c = tmp / f"{name}{threads}.json", tmp / f"{name}{threads}.csv"
        cli.main(t + ["simulate", str(conf), "--output-json", str(j), "--output-csv", str(c)])
        out[f"simulate_{name}_json"] = j.read_bytes()
        out[f"simulate_{name}_csv"] = c.read_bytes()
    return out


def test_criterion_9_cli_determinism(tmp_path, capsys):
    start = time.perf_counter()
    runs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        (tmp_path / name).mkdir()
        runs.append(_cli_outputs(tmp_path / name, threads))
    capsys.readouterr()
    a, b, c = runs
    differing = [k for k in a if not (a[k] == b[k] == c[k]) or not a[k]]
    elapsed = time.perf_counter() - start
    record(9, not differing and elapsed < 120,
           f"{len(a)} outputs byte-identical across reruns and --threads 1/4 "
           f"(differing: {differing or 'none'}), {elapsed:.1f}s")

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
