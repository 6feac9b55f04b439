import dataclasses
import logging

import numpy as np
import pytest

from afd.design import (DesignResult, EllipsoidProblem, InputError, boundary_state,
                        check_input, design_input, extract_input, maxmin_optimize,
                        performance_index, robust_margin_check)
from afd.sysalg import build_bank, simulate


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + 0.1 * np.eye(n)


def grid_oracle(P, Q_list, points=721):
    """Dense search over the ellipsoid boundary in two dimensions."""
    L = np.linalg.cholesky(P)
    t = np.linspace(0.0, np.pi, points)
    Z = (L @ np.vstack([np.cos(t), np.sin(t)])).T
    vals = np.min([np.einsum("ni,ij,nj->n", Z, Q, Z) for Q in Q_list], axis=0)
    return vals.max()


# -- max-min solver ------------------------------------------------------------

def test_single_block_is_rayleigh_quotient(rng):
    P, Q = np.eye(4), random_spd(rng, 4)
    res = maxmin_optimize(P, [Q], starts=8)
    assert res["value"] == pytest.approx(np.linalg.eigvalsh(Q)[-1], rel=1e-9)


def test_single_block_generalized_eigenvalue(rng):
    P, Q = random_spd(rng, 3), random_spd(rng, 3)
    L = np.linalg.cholesky(P)
    expected = np.linalg.eigvalsh(L.T @ Q @ L)[-1]
    res = maxmin_optimize(P, [Q], starts=8)
    assert res["value"] == pytest.approx(expected, rel=1e-9)
    z = res["zeta"]
    assert z @ np.linalg.solve(P, z) == pytest.approx(1.0, abs=1e-9)


def test_two_dimensional_grid_oracle(rng):
    for _ in range(10):
        P = random_spd(rng, 2)
        Qs = [random_spd(rng, 2) for _ in range(int(rng.integers(2, 5)))]
        val = maxmin_optimize(P, Qs, starts=16)["value"]
        ref = grid_oracle(P, Qs)
        assert val >= ref * (1 - 1e-9)
        assert val <= ref * 1.005


def test_rank_deficient_P_stays_in_range():
    P = np.diag([1.0, 0.0])
    Q = np.eye(2)
    res = maxmin_optimize(P, [Q], starts=4)
    assert res["problem"].rank_deficient
    assert abs(res["zeta"][1]) <= 1e-12
    assert res["value"] == pytest.approx(1.0)


def test_zero_blocks_are_degenerate():
    res = maxmin_optimize(np.eye(2), [np.zeros((2, 2))], starts=4)
    assert res["degenerate"] and res["value"] == 0.0


def test_optimizer_is_seeded(rng):
    P = random_spd(rng, 4)
    Qs = [random_spd(rng, 4) * 0.1 + np.outer(v, v) for v in rng.standard_normal((3, 4))]
    a = maxmin_optimize(P, Qs, starts=6, seed=5)
    b = maxmin_optimize(P, Qs, starts=6, seed=5)
    assert np.array_equal(a["zeta"], b["zeta"])


def test_ellipsoid_problem_values_match_quadratic_forms(rng):
    P = random_spd(rng, 3)
    Qs = [random_spd(rng, 3) for _ in range(2)]
    prob = EllipsoidProblem.from_gramians(P, Qs)
    eta = rng.standard_normal(3)
    eta /= np.linalg.norm(eta)
    z = prob.state(eta)
    assert z @ np.linalg.solve(P, z) == pytest.approx(1.0)
    assert np.allclose(prob.values(eta), [z @ Q @ z for Q in Qs])


# -- input extraction --------------------------------------------------------------

def test_extract_input_round_trip(nominal):
    bank = build_bank(nominal, 32, 32)
    gram = bank.gramians()
    u = np.random.default_rng(2).standard_normal(32)
    u /= np.linalg.norm(u)
    zeta = boundary_state(bank, u)
    # the minimum-energy input reaching zeta is not longer than u
    z_unit = zeta / np.sqrt(zeta @ np.linalg.pinv(gram.P, rcond=1e-12, hermitian=True) @ zeta)
    u2 = extract_input(gram.Rmat, gram.P, z_unit)
    assert u2 @ u2 == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(boundary_state(bank, u2), z_unit, atol=1e-8)


def test_extract_rejects_unreachable():
    R = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="not reachable"):
        extract_input(R, R @ R.T, np.array([0.0, 1.0]))


# -- input checks ------------------------------------------------------------------

def test_check_input_accepts_past_or_full():
    u = np.ones(4) / 2
    assert np.array_equal(check_input(u, 4, 3), u)
    assert np.array_equal(check_input(np.concatenate([u, np.zeros(4)]), 4, 3), u)


@pytest.mark.parametrize("u", [np.ones(4), np.ones(3) / np.sqrt(3),
                               np.r_[np.ones(4) / 2, 0, 0.1, 0, 0]])
def test_check_input_rejects(u):
    with pytest.raises(InputError):
        check_input(u, 4, 3)


# -- performance index ---------------------------------------------------------------

def test_gamma_gramian_equals_simulation(nominal):
    bank = build_bank(nominal, 32, 32)
    u = np.random.default_rng(7).standard_normal(32)
    u /= np.linalg.norm(u)
    g, gn, per_block = performance_index(bank, u)
    y = simulate(bank.F, np.concatenate([u, np.zeros(33)]))[32:]
    sim = [np.sum(y[:, bank.block_rows(l)] ** 2) for l in range(bank.n_blocks)]
    assert np.allclose(per_block, sim, rtol=1e-9, atol=1e-12)
    assert gn == pytest.approx(np.sqrt(min(sim)))


def test_gamma_sign_invariant(nominal):
    bank = build_bank(nominal, 32, 32)
    u = np.random.default_rng(1).standard_normal(32)
    u /= np.linalg.norm(u)
    assert performance_index(bank, u)[0] == pytest.approx(performance_index(bank, -u)[0])


# -- design driver ---------------------------------------------------------------------

def test_table1_design(design):
    assert design.feasible
    assert design.gamma_norm == pytest.approx(np.sqrt(design.gamma_energy))
    assert design.u_star @ design.u_star == pytest.approx(1.0, abs=1e-9)
    assert len(design.block_index) == 12
    assert design.gamma_energy == pytest.approx(design.per_block_values.min())


def test_design_beats_random_inputs(table1, design):
    bank = build_bank(table1.nominal_models(), 32, 32)
    gram = bank.gramians()
    rng = np.random.default_rng(0)
    for _ in range(200):
        u = rng.standard_normal(32)
        u /= np.linalg.norm(u)
        assert performance_index(bank, u, gram)[0] <= design.gamma_energy + 1e-12


def test_duplicate_models_infeasible(table1):
    dr = design_input(table1.with_models([0, 0]), starts=4, margin=False)
    assert not dr.feasible
    assert dr.flagged_blocks == [0, 1]


def test_subset_has_larger_gamma(table1, design):
    dr = design_input(table1.with_models([0, 1]), starts=16, margin=False)
    assert dr.gamma_energy >= design.gamma_energy - 1e-9


def test_single_past_sample(table1):
    ms = dataclasses.replace(table1, T_minus=1)
    dr = design_input(ms, starts=4, margin=False)
    assert abs(dr.u_star[0]) == pytest.approx(1.0)


def test_per_model_scope(table1):
    dr = design_input(table1, scope=2, starts=8, margin=False)
    assert dr.scope == "per_model(2)"
    assert [i for i, _ in dr.block_index] == [2, 2, 2]


def test_design_result_round_trip(design):
    again = DesignResult.from_dict(design.to_dict())
    assert again.to_dict() == design.to_dict()


# -- robustness margins ------------------------------------------------------------------

def test_margin_exact_model_is_zero(table1, design):
    rep = robust_margin_check(table1, design, samples=10)
    g0 = rep["models"][0]
    assert g0["delta_hankel_norm_estimate"] == 0.0
    assert g0["condition_met"]


def test_margin_table1_condition_met(design):
    assert design.margin_report["condition_met"]


def test_margin_inflated_box_warns(table1, design, caplog):
    wide = table1.with_uncertainty_scaled(100.0)
    with caplog.at_level(logging.WARNING, logger="afd.design"):
        rep = robust_margin_check(wide, design, samples=20)
    assert not rep["condition_met"]
    assert "violated" in caplog.text


def test_design_beats_random_ellipsoid_points(table1, design):
    bank = build_bank(table1.nominal_models(), 32, 32)
    g = bank.gramians()
    prob = EllipsoidProblem.from_gramians(g.P, g.Q, Rmat=g.Rmat)
    E = np.random.default_rng(10).standard_normal((10_000, prob.S.size))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    assert design.gamma_energy >= prob.values(E).min(axis=1).max()
