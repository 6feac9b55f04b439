"""Offline design of the discriminating input.

The input lives on the past window and has unit energy.  It drives the
stacked-state bank of cross residual generators to ``zeta(0)`` on the
reachability ellipsoid ``zeta^T P^+ zeta = 1``; the energy of residual block
``l`` on the future window is ``zeta(0)^T Q_l zeta(0)``.  The design
maximizes the smallest of those energies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import delta_system, parameter_names, sample_uncertainty, vertices
from .sysalg import build_bank, hankel_norm, simulate

__all__ = [
    "DesignResult",
    "InputError",
    "EllipsoidProblem",
    "performance_index",
    "maxmin_optimize",
    "extract_input",
    "design_input",
    "robust_margin_check",
    "check_input",
]

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6
GAMMA_CONVENTION = ("gamma_energy = min_l ||v_l||^2 over the future window; "
                    "gamma_norm = sqrt(gamma_energy) is used in all threshold tests")


class InputError(ValueError):
    """Input signal is not a unit-energy past-window signal."""


def check_input(u, T_minus, T_plus=None, tol=1e-8):
    """Return the past part of ``u`` after checking it belongs to the
    admissible input set.  ``u`` is either the ``T_minus`` past samples or
    the full experiment ``[-T_minus, T_plus]`` with a zero future part."""
    u = np.asarray(u, dtype=float).ravel()
    if T_plus is not None and u.size == T_minus + T_plus + 1:
        if np.any(u[T_minus:] != 0):
            raise InputError("input must vanish on the measurement window")
        u = u[:T_minus]
    if u.size != T_minus:
        raise InputError(f"input has {u.size} samples, expected {T_minus}")
    energy = float(u @ u)
    if abs(energy - 1.0) > tol:
        raise InputError(f"input energy {energy:.12g} is not 1")
    return u


# --------------------------------------------------------------------------
# Performance index
# --------------------------------------------------------------------------

def boundary_state(bank, u):
    """Bank state at ``k = 0`` after the past input ``u`` from rest."""
    _, zeta = simulate(bank.F, u, return_state=True)
    return zeta


def performance_index(bank, u, gram=None):
    """``(gamma_energy, gamma_norm, per_block)`` for the input ``u``."""
    u = check_input(u, bank.T_minus, bank.T_plus)
    gram = gram or bank.gramians()
    zeta = boundary_state(bank, u)
    per_block = np.array([zeta @ Q @ zeta for Q in gram.Q])
    g = float(max(per_block.min(), 0.0))
    return g, float(np.sqrt(g)), per_block


# --------------------------------------------------------------------------
# Max-min on the reachability ellipsoid
# --------------------------------------------------------------------------

@dataclass
class EllipsoidProblem:
    """Reduced form of ``max min_l z^T Q_l z`` s.t. ``z^T P^+ z = 1``.

    With ``P = U S^2 U^T`` (range part only) the states on the ellipsoid are
    ``z = U S eta`` with ``||eta|| = 1`` and the objective becomes
    ``min_l eta^T K_l eta``, ``K_l = S U^T Q_l U S``.
    """

    U: np.ndarray
    S: np.ndarray
    K: np.ndarray  # (blocks, k, k)
    rank_deficient: bool

    @classmethod
    def from_gramians(cls, P, Q_list, cutoff=1e-10, Rmat=None):
        if Rmat is not None:
            U, s, _ = np.linalg.svd(Rmat, full_matrices=False)
        else:
            w, U = np.linalg.eigh((P + P.T) / 2)
            w, U = w[::-1], U[:, ::-1]
            s = np.sqrt(np.clip(w, 0.0, None))
        keep = s > cutoff * (s[0] if s.size else 0.0)
        U, s = U[:, keep], s[keep]
        K = np.array([(s[:, None] * (U.T @ Q @ U)) * s[None, :] for Q in Q_list])
        K = (K + K.transpose(0, 2, 1)) / 2
        return cls(U, s, K, rank_deficient=not keep.all())

    def state(self, eta):
        return self.U @ (self.S * eta)

    def values(self, eta):
        """Block energies ``eta^T K_l eta``; ``eta`` may be ``(k,)`` or ``(N, k)``."""
        eta = np.asarray(eta)
        if eta.ndim == 1:
            return np.einsum("i,lij,j->l", eta, self.K, eta)
        return np.einsum("ni,lij,nj->nl", eta, self.K, eta)


def _smooth_min(q, tau):
    a = -tau * q
    amax = a.max()
    w = np.exp(a - amax)
    total = w.sum()
    return -(amax + np.log(total)) / tau, w / total


def _ascend(prob, eta, tau, max_iter, tol):
    def f(e):
        return _smooth_min(prob.values(e), tau)

    val, w = f(eta)
    step = 0.1
    for _ in range(max_iter):
        grad = 2.0 * np.einsum("l,lij,j->i", w, prob.K, eta)
        rgrad = grad - (eta @ grad) * eta
        gnorm = np.linalg.norm(rgrad)
        if gnorm <= tol:
            break
        while step > 1e-14:
            cand = eta + step * rgrad / gnorm
            cand /= np.linalg.norm(cand)
            cval, cw = f(cand)
            if cval > val:
                eta, val, w = cand, cval, cw
                step = min(step * 1.5, 1.0)
                break
            step *= 0.5
        else:
            break
    return eta


def _polish(prob, eta):
    """Local refinement of the exact (non-smooth) min with SLSQP."""
    k = eta.size
    t0 = prob.values(eta).min()
    x0 = np.append(eta, t0)
    cons = [
        {"type": "eq", "fun": lambda x: x[:k] @ x[:k] - 1.0,
         "jac": lambda x: np.append(2.0 * x[:k], 0.0)},
        {"type": "ineq",
         "fun": lambda x: prob.values(x[:k]) - x[k],
         "jac": lambda x: np.hstack([2.0 * (prob.K @ x[:k]),
                                     -np.ones((prob.K.shape[0], 1))])},
    ]
    res = optimize.minimize(lambda x: -x[k], x0,
                            jac=lambda x: np.append(np.zeros(k), -1.0),
                            constraints=cons, method="SLSQP",
                            options={"maxiter": 500, "ftol": 1e-14})
    cand = res.x[:k] / np.linalg.norm(res.x[:k])
    if prob.values(cand).min() > t0:
        return cand
    return eta


def maxmin_optimize(P, Q_list, starts=64, seed=1, tol=1e-10, Rmat=None,
                    temperatures=(10.0, 1e2, 1e3, 1e4), max_iter=400):
    """Local maximizer of ``min_l z^T Q_l z`` on ``z^T P^+ z = 1``.

    Multi-start projected gradient ascent on the unit sphere of the reduced
    problem, using a log-sum-exp smoothed min whose temperature is annealed
    through ``temperatures`` (relative to the largest block eigenvalue),
    followed by an SLSQP polish of the exact min.

    Returns a dict with ``zeta`` (best state), ``value`` (its min block
    energy), ``eta``, ``problem`` and ``trace`` (one entry per start).
    """
    prob = EllipsoidProblem.from_gramians(P, Q_list, Rmat=Rmat)
    k = prob.S.size
    lam = max((np.linalg.eigvalsh(K)[-1] for K in prob.K), default=0.0) if k else 0.0
    if k == 0 or lam <= 0:
        return {"zeta": np.zeros(P.shape[0]), "eta": np.zeros(k), "value": 0.0,
                "problem": prob, "trace": [], "degenerate": True}

    rng = np.random.default_rng(seed)
    trace, best = [], None
    for s in range(starts):
        eta = rng.standard_normal(k)
        eta /= np.linalg.norm(eta)
        start_val = float(prob.values(eta).min())
        for t in temperatures:
            eta = _ascend(prob, eta, t / lam, max_iter, tol * lam)
        smooth_val = float(prob.values(eta).min())
        eta = _polish(prob, eta)
        val = float(prob.values(eta).min())
        trace.append({"start": s, "initial": start_val, "ascent": smooth_val,
                      "polished": val})
        if best is None or val > best[1]:
            best = (eta, val, s)
    eta, val, chosen = best
    return {"zeta": prob.state(eta), "eta": eta, "value": val, "problem": prob,
            "trace": trace, "chosen_start": chosen, "degenerate": False}


def extract_input(Rmat, P, zeta0, rtol=1e-8):
    """Minimum-energy past input reaching ``zeta0``, in time order
    ``u(-T_minus), ..., u(-1)``.

    ``Rmat^T P^+ zeta0`` lists the samples from ``u(-1)`` backwards; the
    result is reversed into time order.
    """
    U, s, Vt = np.linalg.svd(Rmat, full_matrices=False)
    keep = s > 1e-10 * s[0]
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    coeff = U.T @ zeta0
    if np.linalg.norm(zeta0 - U @ coeff) > rtol * max(np.linalg.norm(zeta0), 1e-300):
        raise ValueError("zeta0 is not reachable (outside the range of P)")
    u_rev = Vt.T @ (coeff / s)
    energy = float(u_rev @ u_rev)
    if abs(energy - 1.0) > 1e-8 and energy > 0:
        log.info("renormalizing extracted input from energy %.12g", energy)
        u_rev = u_rev / np.sqrt(energy)
    return u_rev[::-1].copy()


# --------------------------------------------------------------------------
# Design driver
# --------------------------------------------------------------------------

@dataclass
class DesignResult:
    u_star: np.ndarray
    zeta0_star: np.ndarray
    gamma_energy: float
    gamma_norm: float
    per_block_values: np.ndarray
    block_index: list
    block_scales: np.ndarray
    block_raw_norms: np.ndarray
    flagged_blocks: list
    feasible: bool
    scope: str
    T_minus: int
    T_plus: int
    starts: int
    seed: int
    optimizer_trace: list = field(default_factory=list)
    margin_report: dict | None = None

    def to_dict(self):
        return {
            "scope": self.scope,
            "T_minus": self.T_minus,
            "T_plus": self.T_plus,
            "starts": self.starts,
            "seed": self.seed,
            "feasible": bool(self.feasible),
            "gamma_energy": self.gamma_energy,
            "gamma_norm": self.gamma_norm,
            "gamma_convention": GAMMA_CONVENTION,
            "u_star": [float(x) for x in self.u_star],
            "zeta0_star": [float(x) for x in self.zeta0_star],
            "blocks": [
                {"l": l, "i": int(i), "j": int(j), "scale": float(r),
                 "raw_hankel_norm": float(h), "energy": float(e),
                 "flagged": l in self.flagged_blocks}
                for l, ((i, j), r, h, e) in enumerate(zip(
                    self.block_index, self.block_scales, self.block_raw_norms,
                    self.per_block_values))
            ],
            "optimizer_trace": self.optimizer_trace,
            "margin_report": self.margin_report,
        }

    @classmethod
    def from_dict(cls, d):
        blocks = d["blocks"]
        return cls(
            u_star=np.array(d["u_star"]), zeta0_star=np.array(d["zeta0_star"]),
            gamma_energy=d["gamma_energy"], gamma_norm=d["gamma_norm"],
            per_block_values=np.array([b["energy"] for b in blocks]),
            block_index=[(b["i"], b["j"]) for b in blocks],
            block_scales=np.array([b["scale"] for b in blocks]),
            block_raw_norms=np.array([b["raw_hankel_norm"] for b in blocks]),
            flagged_blocks=[b["l"] for b in blocks if b["flagged"]],
            feasible=d["feasible"], scope=d["scope"], T_minus=d["T_minus"],
            T_plus=d["T_plus"], starts=d["starts"], seed=d["seed"],
            optimizer_trace=d.get("optimizer_trace", []),
            margin_report=d.get("margin_report"))


def design_input(ms, scope="full", starts=64, seed=1, margin=True, margin_samples=100):
    """Optimal discriminating input for a model set.

    ``scope`` is ``"full"`` (separate every model from every other) or an
    integer ``i`` (separate model ``i`` from the rest).
    """
    models = ms.nominal_models()
    i = None if scope == "full" else int(scope)
    bank = build_bank(models, ms.T_minus, ms.T_plus, i=i)
    gram = bank.gramians()
    opt = maxmin_optimize(gram.P, gram.Q, starts=starts, seed=seed, Rmat=gram.Rmat)

    if opt["degenerate"] or opt["value"] <= 0:
        u = np.zeros(ms.T_minus)
        u[-1] = 1.0
    else:
        u = extract_input(gram.Rmat, gram.P, opt["zeta"])
    g, gn, per_block = performance_index(bank, u, gram)
    zeta = boundary_state(bank, u)
    result = DesignResult(
        u_star=u, zeta0_star=zeta, gamma_energy=g, gamma_norm=gn,
        per_block_values=per_block, block_index=bank.block_index,
        block_scales=bank.scales, block_raw_norms=bank.raw_norms,
        flagged_blocks=bank.flagged, feasible=gn > FEASIBILITY_TOL,
        scope="full" if i is None else f"per_model({i})",
        T_minus=ms.T_minus, T_plus=ms.T_plus, starts=starts, seed=seed,
        optimizer_trace=[dict(t) for t in opt["trace"]])
    if margin:
        result.margin_report = robust_margin_check(ms, result, samples=margin_samples,
                                                   seed=seed)
    return result


# --------------------------------------------------------------------------
# Robustness margins
# --------------------------------------------------------------------------

def _perturbations(ms, i, samples, seed):
    """Stable vertex realizations and ``samples`` uniform draws of model ``i``."""
    if not parameter_names(ms, i):
        return []
    out = [sample_uncertainty(ms, i, "vertex", code=code)
           for code, stable in vertices(ms, i) if stable]
    rng = np.random.default_rng(seed)
    for s in rng.integers(0, 2**63 - 1, size=samples):
        out.append(sample_uncertainty(ms, i, "random", seed=int(s)))
    return out


def perturbation_norms(ms, i, samples=100, seed=0):
    """Hankel norms of ``G_i,theta - G_i`` over the stable box vertices and
    ``samples`` uniform draws.  Their maximum is a lower bound on the true
    maximum over the box."""
    nominal = ms.nominal_models()[i]
    return [hankel_norm(delta_system(nominal, g), ms.T_minus, ms.T_plus)
            for g in _perturbations(ms, i, samples, seed)] or [0.0]


def robust_margin_check(ms, dr, samples=100, seed=0):
    """Compare the perturbation size of every model with ``gamma_norm``.

    The perturbation of model ``i`` reaches the design residuals through
    the blocks ``(i, j)``, each scaled by its normalization factor, so its
    size in the units of ``gamma_norm`` is
    ``max_j scale_(i,j) * max ||Delta_i||_H``.  The sufficient condition for
    robust diagnosis is that this stays below ``gamma_norm``.

    Two informational entries are added per model: the same comparison with
    the unscaled Hankel norm, and the output check
    ``||v_hat_(i,j)|| >= scale_(i,j) * ||Delta_i u*||`` on the future window.
    """
    models = ms.nominal_models()
    u = np.concatenate([dr.u_star, np.zeros(ms.T_plus + 1)])
    per_model, ok_all = [], True
    for i in ms.indices:
        perturbed = _perturbations(ms, i, samples, seed + i)
        deltas = [delta_system(models[i], g) for g in perturbed]
        norms = [hankel_norm(d, ms.T_minus, ms.T_plus) for d in deltas] or [0.0]
        dy = [float(np.linalg.norm(simulate(d, u)[ms.T_minus:])) for d in deltas] or [0.0]
        raw = float(max(norms))
        blocks = [(l, r) for l, ((a, _), r) in
                  enumerate(zip(dr.block_index, dr.block_scales)) if a == i]
        scale = float(max(r for _, r in blocks)) if blocks else 1.0
        scaled = raw * scale
        ok = scaled < dr.gamma_norm
        ok_all &= ok
        output_ok = all(np.sqrt(max(dr.per_block_values[l], 0.0)) >= r * max(dy)
                        for l, r in blocks)
        per_model.append({
            "i": int(i), "label": ms.labels[i],
            "delta_hankel_norm_estimate": raw,
            "delta_scaled_estimate": scaled,
            "samples": len(perturbed),
            "condition_met": bool(ok),
            "unscaled_condition_met": bool(raw < dr.gamma_norm),
            "max_delta_output_norm": float(max(dy)),
            "output_check_met": bool(output_ok),
            "estimate_kind": "lower bound (stable vertices + random draws)",
        })
    if not ok_all:
        bad = [m["i"] for m in per_model if not m["condition_met"]]
        log.warning("robust sufficient condition violated for model(s) %s", bad)
    return {"gamma_norm": dr.gamma_norm, "condition_met": bool(ok_all),
            "models": per_model, "convention": GAMMA_CONVENTION}
