"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -s``; the lines
are also collected into the terminal summary of any pytest run.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from r4.cli import main as cli_main
from r4.io import build_var_design, load_csv_matrix, trimmed_mse, write_matrix
from r4.rrr import RegressionData, rrr_fit
from r4.simbench import (
    STUDY_OPTIONS,
    SimConfig,
    breakdown_sweep,
    generate_instance,
    run_study,
)
from r4.solver import (
    Constrained,
    PenalizedElementwise,
    PenalizedRowwise,
    R4Problem,
    SolverOptions,
    c_step,
    joint_objective,
    multistart_fit,
    r4_fit,
)
from r4.thresholding import ThresholdRule, verify_threshold_identity
from r4.tuning import GridSpec, fit_path

JOBS = os.cpu_count() or 1


def test_criterion_1_threshold_identity(criterion):
    rng = np.random.default_rng(1)
    rs = rng.uniform(-10, 10, 200)
    t0 = time.perf_counter()
    worst = max(verify_threshold_identity(ThresholdRule(kind, lam), r)
                for kind in ("soft", "hard") for lam in (0.5, 1.0, 3.0) for r in rs)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 1.0
    criterion("criterion 1 threshold identity", ok, f"max residual {worst:.2e} (<= 1e-8), {dt:.2f}s (< 1s)")
    assert ok


def test_criterion_2_rrr_optimality(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    beaten = 0
    for _ in range(20):
        X, Y = rng.standard_normal((20, 5)), rng.standard_normal((20, 4))
        B = rrr_fit(RegressionData(X, Y), 2).B_hat
        obj = float(np.sum((Y - X @ B) ** 2))
        cands = rng.standard_normal((10000, 5, 2)) @ np.swapaxes(rng.standard_normal((10000, 4, 2)), 1, 2)
        R = Y[None] - X[None] @ cands
        beaten += obj <= float(np.min(np.sum(R * R, axis=(1, 2))))
    Y = rng.standard_normal((12, 6))
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    gap = max(np.linalg.norm(rrr_fit(RegressionData(np.eye(12), Y), r).fitted - (U[:, :r] * s[:r]) @ Vt[:r])
              for r in range(1, 7))
    dt = time.perf_counter() - t0
    ok = beaten == 20 and gap <= 1e-8 and dt < 5.0
    criterion("criterion 2 RRR optimality", ok,
              f"{beaten}/20 beat random search, X=I gap {gap:.1e} (<= 1e-8), {dt:.2f}s (< 5s)")
    assert ok


def _descent_config(k, rng):
    n = int(rng.integers(15, 61))
    p = int(rng.integers(2, 9))
    m = int(rng.integers(2, 7))
    r = int(rng.integers(1, min(p, m) + 1))
    X = rng.standard_normal((n, p))
    Y = X @ rng.standard_normal((p, r)) @ rng.standard_normal((r, m)) + rng.standard_normal((n, m))
    bad = rng.choice(n, size=int(rng.integers(0, n // 5 + 1)), replace=False)
    Y[bad] += rng.normal(0, 8, size=(len(bad), m))
    scale = float(np.median(np.abs(Y)))
    lam = float(rng.uniform(0.5, 3.0)) * scale
    kind = k % 5
    if kind == 0:
        spec = PenalizedRowwise(ThresholdRule("soft", lam))
    elif kind == 1:
        spec = PenalizedRowwise(ThresholdRule("hard", lam))
    elif kind == 2:
        spec = PenalizedRowwise(ThresholdRule("hard_ridge", lam, float(rng.uniform(0.1, 2))))
    elif kind == 3:
        spec = PenalizedElementwise(ThresholdRule(("soft", "hard")[k % 2], lam / 2))
    else:
        spec = Constrained(int(rng.integers(0, n // 4 + 1)), float(rng.choice([0.0, 0.5])))
    return R4Problem(RegressionData(X, Y), r, spec)


def test_criterion_3_descent(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    monotone = converged = 0
    for k in range(100):
        fit = r4_fit(_descent_config(k, rng), SolverOptions(max_iterations=500))
        monotone += bool(np.all(np.diff(fit.objective_trace) <= 1e-12))
        converged += fit.converged
    dt = time.perf_counter() - t0
    ok = monotone == 100 and converged >= 95 and dt < 30
    criterion("criterion 3 descent", ok,
              f"monotone {monotone}/100, converged {converged}/100 (>= 95), {dt:.2f}s (< 30s)")
    assert ok


def test_criterion_4_profiled_equivalence(criterion):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(100):
        n, p, m = int(rng.integers(10, 40)), int(rng.integers(2, 6)), int(rng.integers(2, 5))
        X, Y = rng.standard_normal((n, p)), 3 * rng.standard_normal((n, m))
        B = rng.standard_normal((p, m))
        lam = float(rng.uniform(0.5, 5))
        kind = ("soft", "hard")[k % 2]
        prob = R4Problem(RegressionData(X, Y), min(p, m), PenalizedRowwise(ThresholdRule(kind, lam)))
        rn = np.linalg.norm(Y - X @ B, axis=1)
        # robust losses written out directly: Huber for soft, capped quadratic for hard
        if kind == "soft":
            rho = np.where(rn <= lam, rn * rn / 2, lam * rn - lam * lam / 2)
        else:
            rho = np.minimum(rn * rn, lam * lam) / 2
        F = joint_objective(prob, B, c_step(Y - X @ B, prob.spec))
        worst = max(worst, abs(F - float(np.sum(rho))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    criterion("criterion 4 profiled equivalence", ok, f"max gap {worst:.2e} (<= 1e-8), {dt:.2f}s (< 5s)")
    assert ok


def _trimmed_oracle(X, Y, r, rho):
    n = X.shape[0]
    best = math.inf
    for S in itertools.combinations(range(n), rho):
        keep = np.setdiff1d(np.arange(n), S)
        B = rrr_fit(RegressionData(X[keep], Y[keep]), r).B_hat
        best = min(best, 0.5 * float(np.sum((Y[keep] - X[keep] @ B) ** 2)))
    return best


def test_criterion_5_trimmed_ls(criterion):
    t0 = time.perf_counter()
    hits = {1: 0, 2: 0}
    for rho in (1, 2):
        for seed in range(50):
            rng = np.random.default_rng([5, rho, seed])
            X = rng.standard_normal((10, 2))
            Y = X @ rng.standard_normal((2, 1)) @ rng.standard_normal((1, 2)) + 0.5 * rng.standard_normal((10, 2))
            Y[rng.choice(10, rho, replace=False)] += rng.normal(0, 4, size=(rho, 2))
            fit = multistart_fit(R4Problem(RegressionData(X, Y), 1, Constrained(rho)),
                                 SolverOptions(multistart=20, seed=seed))
            hits[rho] += abs(fit.objective - _trimmed_oracle(X, Y, 1, rho)) <= 1e-6
    dt = time.perf_counter() - t0
    ok = min(hits.values()) >= 45 and dt < 60
    criterion("criterion 5 trimmed LS oracle", ok,
              f"optimum reached rho=1: {hits[1]}/50, rho=2: {hits[2]}/50 (>= 45 each), {dt:.1f}s (< 60s)")
    assert ok


def test_criterion_6_breakdown(criterion):
    t0 = time.perf_counter()
    data = generate_instance(SimConfig.for_model("I", outlier_fraction=0.0, leverage=False), 0).data
    lam = 3.0 * float(np.median(np.linalg.norm(data.Y - rrr_fit(data, 3).fitted, axis=1)))
    res = breakdown_sweep(data, [1e2, 1e4, 1e6], 3, lam)
    dt = time.perf_counter() - t0
    rrr, r4 = np.array(res["rrr"]), np.array(res["r4"])
    growth = rrr[1:] / rrr[:-1]
    change = float(np.ptp(r4) / r4[0])
    ok = bool(np.all(growth >= 10)) and change < 0.01 and dt < 5
    criterion("criterion 6 breakdown", ok,
              f"RRR growth per step {np.round(growth, 1).tolist()} (>= 10), "
              f"R4 change {100 * change:.3f}% (< 1%), {dt:.2f}s (< 5s)")
    assert ok


def test_criterion_7_model_I(criterion):
    cfg = SimConfig.for_model("I", outlier_fraction=0.05, alpha=2.0, snr=0.75, replications=50)
    t0 = time.perf_counter()
    rep = run_study(cfg, ("R4", "RRR"), STUDY_OPTIONS, n_jobs=JOBS)
    dt = time.perf_counter() - t0
    s, rr = rep.summary["R4"], rep.summary["RRR"]
    checks = {
        f"Err {s['err_B']:.3f} in [0.1, 0.4]": 0.1 <= s["err_B"] <= 0.4,
        f"rank {s['rank']:.2f} in [2.9, 3.1]": 2.9 <= s["rank"] <= 3.1,
        f"detection {100 * s['joint_detection']:.0f}% >= 95%": s["joint_detection"] >= 0.95,
        f"RRR masking {100 * rr['masking']:.0f}% = 100%": rr["masking"] == 1.0,
        f"{dt:.0f}s < 120s on {JOBS} core(s)": dt < 120,
    }
    ok = all(checks.values())
    criterion("criterion 7 Model I", ok, "; ".join(f"{k} {'ok' if v else 'MISS'}" for k, v in checks.items()))
    assert ok


def test_criterion_7_model_III(criterion):
    cfg = SimConfig.for_model("III", outlier_fraction=0.10, replications=50)
    t0 = time.perf_counter()
    rep = run_study(cfg, ("R4",), STUDY_OPTIONS, n_jobs=JOBS)
    dt = time.perf_counter() - t0
    s = rep.summary["R4"]
    checks = {
        f"detection {100 * s['joint_detection']:.0f}% >= 95%": s["joint_detection"] >= 0.95,
        f"Err/100 {s['err_B'] / 100:.2f} in [0.4, 1.3]": 0.4 <= s["err_B"] / 100 <= 1.3,
        f"{dt:.0f}s < 900s on {JOBS} core(s)": dt < 900,
    }
    ok = all(checks.values())
    criterion("criterion 7 Model III", ok,
              "; ".join(f"{k} {'ok' if v else 'MISS'}" for k, v in checks.items())
              + f" (mean rank {s['rank']:.2f}, masking {100 * s['masking']:.0f}%)")
    assert ok


def test_criterion_8_pic_selection(criterion):
    t0 = time.perf_counter()
    hits = {}
    for frac in (0.0, 0.05):
        cfg = SimConfig.for_model("I", outlier_fraction=frac, seed=8)
        good = 0
        for rep in range(50):
            data = generate_instance(cfg, rep).data
            fit = fit_path(data, GridSpec(list(range(1, 9))), STUDY_OPTIONS).selected_fit
            good += fit is not None and fit.n_outliers == cfg.n_outliers and fit.rank == 3
        hits[frac] = good
    dt = time.perf_counter() - t0
    ok = hits[0.0] >= 45 and hits[0.05] >= 45 and dt < 300
    criterion("criterion 8 PIC selection", ok,
              f"clean J=0 & rank 3: {hits[0.0]}/50, 5% J=5 & rank 3: {hits[0.05]}/50 (>= 45 each), "
              f"{dt:.0f}s (< 300s)")
    assert ok


def test_criterion_9_var_workflow(criterion, tmp_path, capsys):
    # the published stock-return MSEs need an external dataset; check the workflow end to end
    rng = np.random.default_rng(9)
    S = np.zeros((120, 4))
    A = 0.4 * np.eye(4)
    for t in range(1, 120):
        S[t] = S[t - 1] @ A + rng.standard_normal(4)
    S[[30, 31, 70]] += 15
    write_matrix(tmp_path / "series.csv", S)
    code = cli_main(["path", "--series", str(tmp_path / "series.csv"), "--split", "90",
                     "--grid", "30", "--out", str(tmp_path / "var"), "--no-timestamp"])
    capsys.readouterr()
    d = build_var_design(S)
    ok = code == 0 and (tmp_path / "var" / "fit.json").exists()
    ok = ok and trimmed_mse(d.X[90:] @ load_csv_matrix(tmp_path / "var" / "B_hat.csv"), d.Y[90:], 0.4) > 0
    criterion("criterion 9 VAR workflow", ok,
              "lagged design, path fit and trimmed forecast MSE run end to end; "
              "published stock-data MSEs not reproducible without that dataset")
    assert ok


def test_criterion_10_cli_round_trip(criterion, tmp_path, capsys):
    inst = generate_instance(SimConfig.for_model("I"), 0)
    write_matrix(tmp_path / "X.csv", inst.data.X)
    write_matrix(tmp_path / "Y.csv", inst.data.Y)
    base = ["fit", "--x", str(tmp_path / "X.csv"), "--y", str(tmp_path / "Y.csv"), "--rank", "3",
            "--lambda", "5", "--multistart", "5", "--seed", "7", "--no-timestamp"]
    codes = [cli_main(base + ["--out", str(tmp_path / d)]) for d in ("a", "b")]
    capsys.readouterr()
    X, Y = load_csv_matrix(tmp_path / "X.csv"), load_csv_matrix(tmp_path / "Y.csv")
    inputs_exact = np.array_equal(X, inst.data.X) and np.array_equal(Y, inst.data.Y)
    fit = multistart_fit(R4Problem(RegressionData(X, Y), 3, PenalizedRowwise(ThresholdRule("hard", 5.0))),
                         SolverOptions(multistart=5, seed=7))
    outputs_exact = (np.array_equal(load_csv_matrix(tmp_path / "a" / "B_hat.csv"), fit.B_hat)
                     and np.array_equal(load_csv_matrix(tmp_path / "a" / "C_hat.csv"), fit.C_hat))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("B_hat.csv", "C_hat.csv", "outliers.csv", "fit.json"))
    ok = codes == [0, 0] and inputs_exact and outputs_exact and same
    criterion("criterion 10 CLI round trip", ok,
              f"inputs bit-exact {inputs_exact}, outputs bit-exact {outputs_exact}, "
              f"identical reruns {same}")
    assert ok
