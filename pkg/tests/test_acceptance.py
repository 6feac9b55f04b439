"""Acceptance suite on the bundled four-model set, T- = T+ = 32.

Each check prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the pytest terminal summary.  Run standalone with
``python3 tests/test_acceptance.py``.
"""

import dataclasses
import json
import sys
import time

import numpy as np
import pytest

from afd.cli import main as cli_main
from afd.design import (EllipsoidProblem, design_input, maxmin_optimize,
                        performance_index, robust_margin_check)
from afd.diagnose import build_fd_bank, run_diagnosis
from afd.harness import default_experiments, monte_carlo, report, simulate_measurement
from afd.initstate import build_MN, least_squares_x0, past_input_x0
from afd.model import parse_model_file, table1_path
from afd.sysalg import (OutputNullingRep, StateSpaceModel, build_bank,
                        build_output_nulling, hankel_matrix, hankel_norm,
                        l2_induced_norm, normalize, simulate)

RESULTS = []

ORACLE_SAMPLES = 100_000
GAMMA_FLOOR = 0.04
ORACLE_REL_TOL = 0.02
HANKEL_REL_TOL = 1e-8
NORM_TOL = 1e-6
ZERO_TOL = 1e-9
LS_TOL = 1e-8
AMBIGUITY_GAP = 1e-3
GRID_REL_TOL = 0.02
MC_TRIALS_PER_MODEL = 250  # 1000 draws over four models
INFLATE = 100.0


def check(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _block(bank, l):
    rows = bank.block_rows(l)
    return StateSpaceModel(bank.F.A, bank.F.B, bank.F.C[rows], bank.F.D[rows])


@pytest.fixture(scope="module")
def ms():
    return parse_model_file(table1_path())


@pytest.fixture(scope="module")
def dr(ms):
    return design_input(ms, starts=64, seed=1)


@pytest.fixture(scope="module")
def bank(ms):
    return build_bank(ms.nominal_models(), ms.T_minus, ms.T_plus)


@pytest.fixture(scope="module")
def oracle_best(bank):
    """Best min-block energy over uniform samples of the reachability
    ellipsoid boundary (uniform on the reduced unit sphere)."""
    g = bank.gramians()
    prob = EllipsoidProblem.from_gramians(g.P, g.Q, Rmat=g.Rmat)
    rng = np.random.default_rng(12345)
    best = 0.0
    for _ in range(ORACLE_SAMPLES // 10_000):
        E = rng.standard_normal((10_000, prob.S.size))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        best = max(best, float(prob.values(E).min(axis=1).max()))
    return np.sqrt(best)


# -- 1 -----------------------------------------------------------------------------

def test_c1a_feasible_and_gamma_floor(dr):
    check("criterion 1a feasibility and gamma floor",
          bool(dr.feasible) and dr.gamma_norm >= GAMMA_FLOOR,
          f"feasible={dr.feasible} gamma_norm={dr.gamma_norm:.6f} (>= {GAMMA_FLOOR})")


def test_c1b_never_below_oracle(dr, oracle_best):
    check("criterion 1b optimizer not below random-sphere oracle",
          dr.gamma_norm >= oracle_best * (1 - 1e-12),
          f"gamma_norm={dr.gamma_norm:.6f} oracle={oracle_best:.6f}")


def test_c1c_within_two_percent_of_oracle(dr, oracle_best):
    rel = abs(dr.gamma_norm - oracle_best) / oracle_best
    check("criterion 1c optimizer within 2% of random-sphere oracle",
          rel <= ORACLE_REL_TOL,
          f"relative gap {rel:.4f} (tol {ORACLE_REL_TOL}), "
          f"gamma_norm={dr.gamma_norm:.6f} oracle={oracle_best:.6f}")


# -- 2 -----------------------------------------------------------------------------

def test_c2_worst_case_argmin_pattern(ms, dr):
    records = default_experiments(ms, dr)
    j = [r.diagnosis.j_star for r in records]
    v00 = records[0].diagnosis.residual_norms[0]
    mins = [r.diagnosis.residual_norms[r.truth_index] for r in records[1:]]
    ok = j == [0, 1, 2, 3] and v00 <= ZERO_TOL and all(m > 0 for m in mins)
    check("criterion 2 worst-case argmin pattern", ok,
          f"j*={j} ||v_0||(row 1)={v00:.2e} row minima 2-4="
          + ", ".join(f"{m:.4f}" for m in mins))


# -- 3 -----------------------------------------------------------------------------

def test_c3_hankel_oracle(ms, bank):
    systems = ms.nominal_models() + [_block(bank, l) for l in range(bank.n_blocks)]
    worst = 0.0
    for g in systems:
        s = np.linalg.norm(hankel_matrix(g, ms.T_minus, ms.T_plus), 2)
        h = hankel_norm(g, ms.T_minus, ms.T_plus)
        worst = max(worst, abs(h - s) / s)
    check("criterion 3 Hankel norm Gramian vs SVD", worst <= HANKEL_REL_TOL,
          f"{len(systems)} systems, max rel err {worst:.2e} (tol {HANKEL_REL_TOL})")


# -- 4 -----------------------------------------------------------------------------

def test_c4_normalization(ms, bank):
    Tm, Tp = ms.T_minus, ms.T_plus
    models = ms.nominal_models()
    dev = max(abs(hankel_norm(_block(bank, l), Tm, Tp) - 1.0)
              for l in range(bank.n_blocks))
    for g in models:
        rep = normalize(build_output_nulling(g), "l2_induced", Tm, Tp)
        dev = max(dev, abs(l2_induced_norm(rep.system(), Tp) - 1.0))

    rng = np.random.default_rng(4)
    mismatches = 0
    for l, (i, j) in enumerate(bank.block_index):
        raw = build_output_nulling(models[j])
        scaled = OutputNullingRep(raw.Acal, raw.Bcal, raw.Ccal, raw.Dcal, raw.m, raw.p,
                                  scale=bank.scales[l] * np.eye(raw.r))
        for t in range(100):
            # half compatible with G_j, half generated by G_i
            src = models[j] if t % 2 == 0 else models[i]
            u = rng.standard_normal(Tm + Tp + 1)
            y = simulate(src, u)[Tm:]
            x0 = past_input_x0(models[j], u[:Tm])
            z_raw = np.max(np.abs(raw.residual(u[Tm:], y, x0))) <= ZERO_TOL
            z_scl = np.max(np.abs(scaled.residual(u[Tm:], y, x0))) <= ZERO_TOL
            mismatches += z_raw != z_scl or (src is models[j] and not z_scl)
    check("criterion 4 normalization", dev <= NORM_TOL and mismatches == 0,
          f"max |norm-1|={dev:.2e} (tol {NORM_TOL}); zero-set mismatches "
          f"{mismatches}/{100 * bank.n_blocks}")


# -- 5 -----------------------------------------------------------------------------

def test_c5_initial_state_round_trip(ms):
    Tm, Tp = ms.T_minus, ms.T_plus
    rng = np.random.default_rng(5)
    worst_ls, worst_past = 0.0, 0.0
    for g in ms.nominal_models():
        rep = build_output_nulling(g)
        prob = build_MN(rep, Tp)
        for _ in range(50):
            x0 = rng.standard_normal(g.n)
            y = simulate(g, np.zeros(Tp + 1), x0)[:, 0]
            w = np.column_stack([np.zeros(Tp + 1), y]).ravel()
            xs = least_squares_x0(prob, w)
            worst_ls = max(worst_ls, np.linalg.norm(xs - x0) / np.linalg.norm(x0))
        u = rng.standard_normal(Tm)
        u /= np.linalg.norm(u)
        v = rep.residual(np.zeros(Tp + 1), simulate_measurement(g, u, Tp),
                         past_input_x0(g, u))
        worst_past = max(worst_past, float(np.linalg.norm(v)))

    G = ms.nominal_models()[0]
    G2 = StateSpaceModel(G.A, G.B, 2 * G.C, 2 * G.D)
    u = rng.standard_normal(Tm)
    u /= np.linalg.norm(u)
    y = simulate_measurement(G, u, Tp)
    w = np.column_stack([np.zeros(Tp + 1), y]).ravel()
    rep2 = normalize(build_output_nulling(G2), "l2_induced", Tm, Tp)
    prob2 = build_MN(rep2, Tp)
    ls2 = float(np.linalg.norm(prob2.residual(least_squares_x0(prob2, w), w)))
    past2 = float(np.linalg.norm(prob2.residual(past_input_x0(G2, u), w)))

    ok = (worst_ls <= LS_TOL and worst_past <= ZERO_TOL and ls2 <= ZERO_TOL
          and past2 > AMBIGUITY_GAP)
    check("criterion 5 initial-state round trip and (G, 2G) ambiguity", ok,
          f"LS rel err {worst_ls:.2e}; past-input |v| {worst_past:.2e}; "
          f"(G,2G) LS {ls2:.2e} past-input {past2:.3e}")


# -- 6 -----------------------------------------------------------------------------

def _sphere_grid(dim, step_deg=1.0):
    if dim == 1:
        return np.array([[1.0]])
    t = np.deg2rad(np.arange(0.0, 180.0 + step_deg / 2, step_deg))
    if dim == 2:
        return np.column_stack([np.cos(t), np.sin(t)])
    ph = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    T, Ph = np.meshgrid(t, ph, indexing="ij")
    return np.column_stack([np.cos(T).ravel(), (np.sin(T) * np.cos(Ph)).ravel(),
                            (np.sin(T) * np.sin(Ph)).ravel()])


def test_c6_low_dimension_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        X = rng.standard_normal((n, n))
        P = X @ X.T + 0.05 * np.eye(n)
        Qs = []
        for _ in range(int(rng.integers(2, 6))):
            Y = rng.standard_normal((n, n))
            Qs.append(Y @ Y.T)
        val = maxmin_optimize(P, Qs, starts=16, seed=0)["value"]
        Z = _sphere_grid(n) @ np.linalg.cholesky(P).T
        ref = np.min([np.einsum("ni,ij,nj->n", Z, Q, Z) for Q in Qs], axis=0).max()
        worst = max(worst, abs(val - ref) / ref)
    check("criterion 6 max-min vs dense sphere grid", worst <= GRID_REL_TOL,
          f"20 instances, max rel diff {worst:.2e} (tol {GRID_REL_TOL})")


# -- 7 -----------------------------------------------------------------------------

def test_c7_exact_case_two_models(ms):
    two = ms.with_models([0, 1])
    models = two.nominal_models()
    bank2 = build_bank(models, two.T_minus, two.T_plus)
    gram = bank2.gramians()
    fd = build_fd_bank(two)
    rng = np.random.default_rng(7)
    used, wrong = 0, 0
    while used < 100:
        u = rng.standard_normal(two.T_minus)
        u /= np.linalg.norm(u)
        if performance_index(bank2, u, gram)[1] <= 1e-6:
            continue
        used += 1
        for i, g in enumerate(models):
            res = run_diagnosis(two, u, simulate_measurement(g, u, two.T_plus), fd_bank=fd)
            wrong += res.j_star != i
    check("criterion 7 exact-case diagnosis on a two-model set", wrong == 0,
          f"{wrong} misdiagnoses in {2 * used} experiments")


# -- 8 -----------------------------------------------------------------------------

def test_c8_robust_guarantee(ms, dr):
    factor = 1.0
    while not robust_margin_check(ms.with_uncertainty_scaled(factor), dr)["condition_met"]:
        factor /= 2
    shrunk = ms.with_uncertainty_scaled(factor)
    mc = monte_carlo(shrunk, dr, MC_TRIALS_PER_MODEL, seed=8)

    start = time.perf_counter()
    wide = monte_carlo(ms.with_uncertainty_scaled(INFLATE), dr, 25, seed=8)
    elapsed = time.perf_counter() - start
    ok = (mc["sufficient_condition_met"] and mc["misdiagnoses"] == 0
          and not wide["sufficient_condition_met"])
    check("criterion 8 robust guarantee and violation flag", ok,
          f"box factor {factor:g}: {mc['misdiagnoses']} misdiagnoses in "
          f"{mc['total_trials']} draws; x{INFLATE:g} boxes: condition flagged="
          f"{not wide['sufficient_condition_met']}, {wide['misdiagnoses']} misdiagnoses "
          f"in {wide['total_trials']} draws, finished in {elapsed:.1f} s")


# -- 9 -----------------------------------------------------------------------------

def test_c9_determinism(tmp_path, capsys):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        assert cli_main(["design", "--out", str(out / "design.json")]) == 0
        assert cli_main(["report", "--design", str(out / "design.json"),
                         "--out-dir", str(out)]) == 0
        blobs.append(((out / "design.json").read_bytes(),
                      (out / "report.json").read_bytes()))
    capsys.readouterr()
    same_design = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    check("criterion 9 determinism", same_design and same_report,
          f"design.json identical={same_design}, report.json identical={same_report}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
