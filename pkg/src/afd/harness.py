"""End-to-end experiments, Monte Carlo sweeps, reports and oracle checks."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as mdl
from .design import DesignResult, robust_margin_check
from .diagnose import DiagnosisResult, build_fd_bank, run_diagnosis
from .initstate import build_MN, least_squares_x0, past_input_x0
from .sysalg import (build_bank, build_output_nulling, frequency_response,
                     hankel_matrix, hankel_norm, l2_induced_norm, normalize,
                     simulate, toeplitz_matrix)

__all__ = ["ExperimentRecord", "simulate_measurement", "run_experiment",
           "default_experiments", "monte_carlo", "report", "verify_all",
           "dumps", "results_table"]


def dumps(obj):
    """Deterministic JSON text."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


@dataclass
class ExperimentRecord:
    truth_index: int
    mode: str
    seed: int | None
    code: int | None
    parameters: dict
    u: np.ndarray
    y: np.ndarray
    diagnosis: DiagnosisResult

    @property
    def correct(self):
        return self.diagnosis.j_star == self.truth_index

    def to_dict(self):
        return {
            "truth_index": int(self.truth_index),
            "uncertainty_sample": {"mode": self.mode, "seed": self.seed,
                                   "vertex": self.code},
            "parameters": {k: float(v) for k, v in self.parameters.items()},
            "y": [float(x) for x in self.y],
            "diagnosis": self.diagnosis.to_dict(),
            "correct": bool(self.correct),
        }


def simulate_measurement(g, u_past, T_plus):
    """Response of ``g`` on ``[0, T_plus]`` to ``u_past`` followed by zeros."""
    u = np.concatenate([np.asarray(u_past, dtype=float).ravel(), np.zeros(T_plus + 1)])
    return simulate(g, u)[len(u) - T_plus - 1:, 0]


def run_experiment(ms, dr, truth, seed=None, code=None, init_scheme="past_input",
                   fd_bank=None):
    """Sample the true system, measure its transient under ``dr.u_star`` and
    diagnose it.  ``truth`` is ``(i, mode)`` with a sampling mode from
    :func:`afd.model.sample_parameters`."""
    i, mode = truth
    mode = {"worst": "worst_case"}.get(mode, mode)
    params = mdl.sample_parameters(ms, i, mode, seed=seed, code=code)
    g = mdl.realize(ms.tfs[i].with_params(params))
    y = simulate_measurement(g, dr.u_star, ms.T_plus)
    diag = run_diagnosis(ms, dr.u_star, y, init_scheme=init_scheme,
                         gamma_ref=dr.gamma_norm, fd_bank=fd_bank)
    return ExperimentRecord(i, mode, seed, code, params, np.asarray(dr.u_star), y, diag)


def default_experiments(ms, dr, fd_bank=None):
    """One worst-case experiment per model, the layout of the reference table."""
    fd_bank = fd_bank or build_fd_bank(ms)
    return [run_experiment(ms, dr, (i, "worst_case"), fd_bank=fd_bank)
            for i in ms.indices]


def monte_carlo(ms, dr, trials, seed=0, mode="random", init_scheme="past_input",
                margin_samples=100):
    """``trials`` random experiments per model.

    Seeds of the individual draws come from one SeedSequence so the summary
    is reproducible; ``wall_time_s`` is the only non-deterministic field.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    fd_bank = build_fd_bank(ms)
    children = np.random.SeedSequence(seed).spawn(len(ms.tfs))
    per_model = []
    for i in ms.indices:
        seeds = children[i].generate_state(trials, dtype=np.uint64)
        margins, wrong = [], []
        for t, s in enumerate(seeds):
            rec = run_experiment(ms, dr, (i, mode), seed=int(s), fd_bank=fd_bank,
                                 init_scheme=init_scheme)
            norms = rec.diagnosis.residual_norms
            margins.append(np.delete(norms, i).min() - norms[i])
            if not rec.correct:
                wrong.append({"trial": t, "seed": int(s),
                              "j_star": rec.diagnosis.j_star})
        m = np.array(margins)
        per_model.append({
            "i": int(i), "label": ms.labels[i], "trials": trials,
            "misdiagnoses": len(wrong), "misdiagnosed_trials": wrong[:20],
            "min_margin": float(m.min()), "median_margin": float(np.median(m)),
        })
    margin = robust_margin_check(ms, dr, samples=margin_samples, seed=seed)
    return {
        "mode": mode, "seed": seed, "trials_per_model": trials,
        "total_trials": trials * len(ms.tfs),
        "misdiagnoses": sum(p["misdiagnoses"] for p in per_model),
        "models": per_model,
        "sufficient_condition_met": margin["condition_met"],
        "margin_report": margin,
        "wall_time_s": time.perf_counter() - start,
    }


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if not isinstance(x, int) else x for x in row])


def results_table(ms, records):
    """Plain-text table of residual norms, minimum of each row marked ``_x_``."""
    n = len(ms.tfs)
    rows = [["Exp", "Truth"] + [f"||v_{j}||" for j in range(n)] + ["j*", "ok"]]
    for e, rec in enumerate(records, 1):
        mode = "" if rec.mode == "nominal" else f" ({rec.mode})"
        cells = [str(e), f"G_u = G{rec.truth_index}{mode}"]
        for j, v in enumerate(rec.diagnosis.residual_norms):
            s = f"{v:.4f}"
            cells.append(f"_{s}_" if j == rec.diagnosis.j_star else s)
        cells += [str(rec.diagnosis.j_star), "yes" if rec.correct else "NO"]
        rows.append(cells)
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = [" | ".join(c.rjust(w) if k != 1 else c.ljust(w)
                        for k, (c, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines) + "\n"


def report(ms, dr, records, out_dir, bode_points=512):
    """Write the result table (text and JSON), the input and residual CSVs
    and nominal frequency responses to ``out_dir``.  Returns the paths."""
    if not records:
        raise ValueError("report needs at least one experiment record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    table = results_table(ms, records)
    paths["table"] = out / "results_table.txt"
    paths["table"].write_text(table)

    doc = {
        "T_minus": ms.T_minus, "T_plus": ms.T_plus,
        "gamma_energy": dr.gamma_energy, "gamma_norm": dr.gamma_norm,
        "feasible": bool(dr.feasible),
        "labels": list(ms.labels),
        "experiments": [r.to_dict() for r in records],
        "margin_report": dr.margin_report,
        "worst_case_criterion": (f"max over stable box vertices of the "
                                 f"{mdl.FREQ_GRID_POINTS}-point grid sup |G_theta - G_i|"),
    }
    paths["json"] = out / "report.json"
    paths["json"].write_text(dumps(doc))

    paths["input"] = out / "input_u.csv"
    _write_csv(paths["input"], ["k", "value"],
               [(k - ms.T_minus, v) for k, v in enumerate(dr.u_star)])
    for e, rec in enumerate(records, 1):
        for j, v in enumerate(rec.diagnosis.residuals):
            p = out / f"residual_exp{e}_v{j}.csv"
            _write_csv(p, ["k", "value"], [(k, x) for k, x in enumerate(np.ravel(v))])
            paths[f"residual_exp{e}_v{j}"] = p

    omega = np.linspace(0.0, np.pi, bode_points)
    freq = omega / (2 * np.pi) * ms.sample_rate
    for i, g in enumerate(ms.nominal_models()):
        mag = np.abs(frequency_response(g, omega))
        p = out / f"bode_G{i}.csv"
        _write_csv(p, ["f_hz", "magnitude"], zip(freq, mag))
        paths[f"bode_G{i}"] = p
    return paths


# --------------------------------------------------------------------------
# Oracle cross-checks
# --------------------------------------------------------------------------

def _power_iteration(T, iters=5000, seed=0):
    x = np.random.default_rng(seed).standard_normal(T.shape[1])
    sigma = 0.0
    for _ in range(iters):
        x = T.T @ (T @ x)
        nx = np.linalg.norm(x)
        x /= nx
        if abs(np.sqrt(nx) - sigma) <= 1e-15 * max(sigma, 1.0):
            break
        sigma = np.sqrt(nx)
    return float(np.linalg.norm(T @ x))


def verify_all(ms, dr=None, seed=0):
    """Run the independent cross-checks; returns ``[(name, ok, detail)]``."""
    rng = np.random.default_rng(seed)
    Tm, Tp = ms.T_minus, ms.T_plus
    models = ms.nominal_models()
    checks = []

    omega = np.linspace(0.0, np.pi, 512)
    err = max(np.max(np.abs(tf.evaluate(omega) - frequency_response(g, omega)))
              / np.max(np.abs(tf.evaluate(omega))) for tf, g in zip(ms.tfs, models))
    checks.append(("realization matches biquad product", bool(err <= 1e-10), f"{err:.2e}"))

    bank = build_bank(models, Tm, Tp)
    systems = list(models) + [
        mdl.StateSpaceModel(bank.F.A, bank.F.B, bank.F.C[bank.block_rows(l)] / r,
                            bank.F.D[bank.block_rows(l)] / r)
        for l, r in enumerate(bank.scales)]
    worst = 0.0
    for g in systems:
        h = hankel_norm(g, Tm, Tp)
        s = np.linalg.norm(hankel_matrix(g, Tm, Tp), 2)
        worst = max(worst, abs(h - s) / max(s, 1e-300))
    checks.append(("Hankel norm: Gramian vs Hankel-matrix SVD", bool(worst <= 1e-8),
                   f"max rel err {worst:.2e}"))

    worst = 0.0
    for g in models:
        T = toeplitz_matrix(g, Tp)
        worst = max(worst, abs(l2_induced_norm(g, Tp) - _power_iteration(T))
                    / _power_iteration(T))
    checks.append(("l2-induced norm: SVD vs power iteration", worst <= 1e-8,
                   f"max rel err {worst:.2e}"))

    worst = 0.0
    for l in range(bank.n_blocks):
        rows = bank.block_rows(l)
        blk = mdl.StateSpaceModel(bank.F.A, bank.F.B, bank.F.C[rows], bank.F.D[rows])
        if l not in bank.flagged:
            worst = max(worst, abs(hankel_norm(blk, Tm, Tp) - 1.0))
    for g in models:
        rep = normalize(build_output_nulling(g), "l2_induced", Tm, Tp)
        worst = max(worst, abs(l2_induced_norm(rep.system(), Tp) - 1.0))
    checks.append(("normalized norms equal one", worst <= 1e-6, f"max dev {worst:.2e}"))

    worst_ls, worst_past = 0.0, 0.0
    for g in models:
        rep = build_output_nulling(g)
        prob = build_MN(rep, Tp)
        for _ in range(10):
            x0 = rng.standard_normal(g.n)
            y = simulate(g, np.zeros(Tp + 1), x0)[:, 0]
            w = np.column_stack([np.zeros(Tp + 1), y]).ravel()
            with np.errstate(all="ignore"):
                xs = least_squares_x0(prob, w)
            worst_ls = max(worst_ls, np.linalg.norm(xs - x0) / np.linalg.norm(x0))
        u = rng.standard_normal(Tm)
        u /= np.linalg.norm(u)
        y = simulate_measurement(g, u, Tp)
        v = rep.residual(np.zeros(Tp + 1), y, past_input_x0(g, u))
        worst_past = max(worst_past, float(np.max(np.abs(v))))
    checks.append(("least-squares initial state round trip", bool(worst_ls <= 1e-8),
                   f"max rel err {worst_ls:.2e}"))
    checks.append(("past-input initialization nulls true residual",
                   bool(worst_past <= 1e-9),
                   f"max |v| {worst_past:.2e}"))

    if dr is not None:
        gram = bank.gramians()
        zeta = simulate(bank.F, dr.u_star, return_state=True)[1]
        future = simulate(bank.F, np.zeros(Tp + 1), zeta)
        sim = np.array([np.sum(future[:, bank.block_rows(l)] ** 2)
                        for l in range(bank.n_blocks)])
        quad = np.array([zeta @ Q @ zeta for Q in gram.Q])
        err = float(np.max(np.abs(sim - quad)))
        checks.append(("residual energy: simulation vs Gramian form", err <= 1e-8,
                       f"max abs err {err:.2e}"))
        energy = float(dr.u_star @ dr.u_star)
        checks.append(("designed input has unit energy", abs(energy - 1) <= 1e-9,
                       f"energy {energy:.12f}"))
    return checks


# --------------------------------------------------------------------------
# Signal files
# --------------------------------------------------------------------------

def write_signal_csv(path, values, k0=0):
    """``k,value`` rows with ``k`` counted from ``k0``."""
    _write_csv(path, ["k", "value"], [(k0 + k, v) for k, v in enumerate(np.ravel(values))])


def read_signal_csv(path):
    """Return ``(k, values)`` from a ``k,value`` file, sorted by ``k``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    k = np.array([int(float(r[0])) for r in rows])
    v = np.array([float(r[1]) for r in rows])
    order = np.argsort(k, kind="stable")
    return k[order], v[order]


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
