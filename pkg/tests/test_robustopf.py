"""Set-point optimization: NLP kernel oracles, certificates, robust solves."""

import dataclasses

import numpy as np
import pytest
import scipy.optimize as sopt

from dcropf.powerflow import (
    PowerFlowError,
    grid_equations,
    losses,
    normalized_impedance,
    open_circuit,
    pf_residual,
    solve_pf,
)
from dcropf.robustopf import (
    FEAS_TOL,
    KKT_TOL,
    NlpProblem,
    OpfError,
    certify_solvability,
    nlp_solve,
    solve_nominal_opf,
    solve_robust_opf,
    worst_case_load,
)
from dcropf.stabset import robust_stability_set

from conftest import make_twobus


def test_nlp_scalar_with_active_bound():
    """min (x-3)^2 subject to x >= 5 sits at the bound."""
    prob = NlpProblem(
        fun=lambda z: (z[0] - 3.0) ** 2,
        jac=lambda z: np.array([2.0 * (z[0] - 3.0)]),
        x0=np.array([8.0]),
        bounds=sopt.Bounds(np.array([5.0]), np.array([np.inf])))
    res = nlp_solve(prob)
    assert res.x[0] == pytest.approx(5.0, abs=1e-6)
    assert res.fun == pytest.approx(4.0, rel=1e-6)


def test_nlp_equality_constraint_and_multipliers():
    """min x^2 + y^2 subject to x + y = 2 has the analytic solution (1, 1)."""
    con = sopt.LinearConstraint(np.array([[1.0, 1.0]]), 2.0, 2.0)
    prob = NlpProblem(
        fun=lambda z: float(z @ z),
        jac=lambda z: 2.0 * z,
        x0=np.array([3.0, -1.0]),
        constraints=[con])
    res = nlp_solve(prob)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-7)
    assert res.kkt_residual <= 1e-6
    assert len(res.multipliers) >= 1


def _box_qp_oracle(Q, c, lo, hi, iters=40000):
    """Projected gradient with the exact Lipschitz step, box constraints."""
    step = 1.0 / np.linalg.eigvalsh(Q)[-1]
    x = np.clip(np.zeros_like(c), lo, hi)
    for _ in range(iters):
        x = np.clip(x - step * (Q @ x + c), lo, hi)
    return x


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_nlp_matches_projected_gradient_on_random_qps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    M = rng.standard_normal((n, n))
    Q = M @ M.T + n * np.eye(n)
    c = rng.standard_normal(n) * 3.0
    lo, hi = -rng.uniform(0.1, 2.0, n), rng.uniform(0.1, 2.0, n)
    oracle = _box_qp_oracle(Q, c, lo, hi)
    prob = NlpProblem(
        fun=lambda z: float(0.5 * z @ Q @ z + c @ z),
        jac=lambda z: Q @ z + c,
        x0=np.zeros(n),
        bounds=sopt.Bounds(lo, hi))
    res = nlp_solve(prob)
    assert np.max(np.abs(res.x - oracle)) <= 1e-5


def test_certificate_zero_deviation_has_zero_radius(twobus_ge):
    vref = np.array([510.0])
    p = np.array([25e3])
    cert = certify_solvability(twobus_ge, vref, p, p)
    assert cert.holds
    assert cert.b == 0.0
    assert cert.radius_r == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(cert.band_lo, cert.band_hi, atol=1e-9)


def test_certificate_chain_closed_form(twobus_ge):
    """Every certified quantity against the scalar closed forms."""
    vref = np.array([510.0])
    cert = certify_solvability(twobus_ge, vref, np.array([25e3]),
                               np.array([50e3]))
    w = 500.0
    v_star = solve_pf(twobus_ge, vref, np.array([25e3])).v_load[0]
    zt = 1.0 / (10.2 * w * w)
    assert cert.u_min == pytest.approx(v_star / w, rel=1e-12)
    assert cert.a == pytest.approx(zt * 25e3, rel=1e-9)
    assert cert.b == pytest.approx(zt * 25e3, rel=1e-9)
    gamma = (cert.u_min - cert.a / cert.u_min) ** 2 - 4.0 * cert.b
    assert cert.gamma_s == pytest.approx(gamma, rel=1e-12)
    assert cert.holds == (cert.a < cert.u_min ** 2 and gamma > 0)
    r = ((cert.u_min - cert.a / cert.u_min) - np.sqrt(gamma)) / 2.0
    assert cert.radius_r == pytest.approx(r, rel=1e-12)
    # For a single load the radius bound is exact: the deviated root sits
    # on the band edge itself (to roundoff), and never outside.
    v_dev = solve_pf(twobus_ge, vref, np.array([50e3])).v_load[0]
    assert v_dev == pytest.approx(cert.band_lo[0], abs=1e-8)
    assert cert.band_lo[0] - 1e-8 <= v_dev <= cert.band_hi[0]


def test_certificate_fails_on_overload(twobus_ge):
    vref = np.array([510.0])
    cert = certify_solvability(twobus_ge, vref, np.array([25e3]),
                               np.array([10e6]))
    assert not cert.holds
    assert cert.radius_r == np.inf
    with pytest.raises(PowerFlowError):
        solve_pf(twobus_ge, vref, np.array([10e6]))


def test_worst_case_load_endpoint_selection():
    case = make_twobus(p_nom_w=25e3, p_min_w=0.0, p_max_w=50e3)
    np.testing.assert_array_equal(worst_case_load(case), [50e3])  # tie -> hi
    case = make_twobus(p_nom_w=10e3, p_min_w=0.0, p_max_w=50e3)
    np.testing.assert_array_equal(worst_case_load(case), [50e3])
    case = make_twobus(p_nom_w=45e3, p_min_w=0.0, p_max_w=50e3)
    np.testing.assert_array_equal(worst_case_load(case), [0.0])
    case = make_twobus(p_nom_w=25e3, p_min_w=25e3, p_max_w=25e3)
    np.testing.assert_array_equal(worst_case_load(case), [25e3])


def test_worst_case_load_exact_mode(ieee14, ieee14_ge):
    w = open_circuit(ieee14_ge, np.full(5, 510.0))
    Zt = normalized_impedance(ieee14_ge, w)
    exact = worst_case_load(ieee14, mode="exact", Zt=Zt)
    endpoint = worst_case_load(ieee14, mode="endpoint")
    # Symmetric boxes with uniform-sign impedance rows: both pick the
    # heavy corner, and the exact deviation norm can never be smaller.
    np.testing.assert_array_equal(exact, endpoint)
    dev_exact = np.max(np.abs(Zt @ (ieee14.p_nom() - exact)))
    dev_endpoint = np.max(np.abs(Zt @ (ieee14.p_nom() - endpoint)))
    assert dev_exact >= dev_endpoint - 1e-15
    with pytest.raises(ValueError, match="normalized impedance"):
        worst_case_load(ieee14, mode="exact")
    with pytest.raises(ValueError, match="unknown worst-case mode"):
        worst_case_load(ieee14, mode="median")


def test_nominal_opf_twobus_boundary_solution(twobus, twobus_ge):
    """Loss minimization drives the load voltage to its lower bound."""
    sol = solve_nominal_opf(twobus)
    assert sol.kkt_residual <= KKT_TOL
    assert sol.constr_violation <= FEAS_TOL
    assert sol.v_star[0] == pytest.approx(425.0, abs=1e-2)
    assert sol.vref[0] == pytest.approx(439.38, abs=0.05)
    pf = solve_pf(twobus_ge, sol.vref, twobus.p_nom())
    assert sol.objective == pytest.approx(losses(twobus_ge, sol.vref, pf),
                                          rel=1e-6)
    assert sol.loss_series_w < sol.loss_total_w


def test_nominal_opf_matches_grid_search_at_zero_load():
    """1-D exhaustive search over vref agrees at p = 0 (closed-form pf)."""
    case = make_twobus(p_nom_w=0.0, p_min_w=0.0, p_max_w=0.0)
    ge = grid_equations(case)
    sol = solve_nominal_opf(case, ge=ge)
    best_obj, best_vref = np.inf, None
    for vref in np.linspace(425.0, 575.0, 3001):
        v = vref * 10.0 / 10.2
        if v < 425.0 or v > 575.0:
            continue
        pf = solve_pf(ge, np.array([vref]), np.array([0.0]))
        obj = losses(ge, np.array([vref]), pf)
        if obj < best_obj:
            best_obj, best_vref = obj, vref
    assert sol.vref[0] == pytest.approx(best_vref, abs=0.1)
    assert sol.objective <= best_obj + 1e-6 * abs(best_obj)


def test_nominal_opf_pinned_reference(twobus_ge):
    """Equal vref bounds leave the power flow as the only freedom."""
    base = make_twobus()
    src = dataclasses.replace(base.sources[0], vref_min=500.0, vref_max=500.0)
    case = dataclasses.replace(base, sources=(src,))
    sol = solve_nominal_opf(case)
    assert sol.vref[0] == pytest.approx(500.0, abs=1e-9)
    pf = solve_pf(twobus_ge, np.array([500.0]), np.array([25e3]))
    assert sol.v_star[0] == pytest.approx(pf.v_load[0], rel=1e-9)


def test_nominal_opf_infeasible_window():
    """vref pinned too low to hold the load voltage above its minimum."""
    base = make_twobus()
    src = dataclasses.replace(base.sources[0], vref_min=430.0, vref_max=430.0)
    case = dataclasses.replace(base, sources=(src,))
    with pytest.raises(OpfError):
        solve_nominal_opf(case)


def test_nominal_opf_ieee9_frozen(ieee9):
    sol = solve_nominal_opf(ieee9)
    assert sol.objective == pytest.approx(245004.30, rel=1e-4)
    assert np.max(sol.vref) - np.min(sol.vref) <= 2.0
    assert np.mean(sol.vref) == pytest.approx(457.4, abs=1.0)


def test_robust_opf_twobus_invariants(twobus, twobus_ge):
    sol = solve_robust_opf(twobus)
    assert sol.kkt_residual <= KKT_TOL
    assert sol.constr_violation <= FEAS_TOL
    cert = sol.certificate
    assert cert.holds
    # Radius identity and epigraph tightness at the recomputed point.
    u, a, b = sol.u_min, sol.aux["a"], sol.aux["b"]
    d, c = sol.aux["d"], sol.aux["c"]
    assert abs(d * u - a) <= 1e-8
    assert abs(c * c - (u - d) ** 2 + 4.0 * b) <= 1e-8
    assert abs(2.0 * sol.r_bar - (u - d) + c) <= 1e-8
    w = open_circuit(twobus_ge, sol.vref)
    Zt = normalized_impedance(twobus_ge, w)
    assert a == pytest.approx(np.max(np.abs(Zt @ twobus.p_nom())), abs=1e-8)
    assert b == pytest.approx(np.max(np.abs(Zt @ (twobus.p_nom() - sol.p_worst))),
                              abs=1e-8)
    # Nominal consistency: v_star solves the nominal power flow.
    r = pf_residual(twobus_ge, sol.vref, twobus.p_nom(), sol.v_star)
    assert np.max(np.abs(r)) <= 1e-8 * max(1.0, float(np.max(twobus.p_nom())))
    # Certified band inside the hard voltage limits.
    assert np.all(sol.band_lo >= twobus.v_min() - 1e-6)
    assert np.all(sol.band_hi <= twobus.v_max() + 1e-6)
    np.testing.assert_allclose(sol.band_lo, sol.v_star - sol.r_bar * w,
                               rtol=1e-9)
    np.testing.assert_allclose(sol.band_hi, sol.v_star + sol.r_bar * w,
                               rtol=1e-9)


def test_robust_opf_twobus_frozen_point(twobus):
    sol = solve_robust_opf(twobus)
    assert sol.vref[0] == pytest.approx(445.26, abs=0.1)
    assert sol.r_bar == pytest.approx(0.01339, abs=2e-4)
    assert sol.band_lo[0] == pytest.approx(425.0, abs=1e-2)


def test_robust_opf_band_covers_box_samples(twobus, twobus_ge, rng):
    """Every sampled in-box load solves inside the certified band."""
    sol = solve_robust_opf(twobus)
    for _ in range(50):
        p = rng.uniform(0.0, 50e3, 1)
        pf = solve_pf(twobus_ge, sol.vref, p)
        assert np.all(pf.v_load >= sol.band_lo - 1e-9)
        assert np.all(pf.v_load <= sol.band_hi + 1e-9)


def test_robust_opf_degenerate_box_matches_nominal():
    """A zero-width box makes the robust problem the nominal problem."""
    case = make_twobus(p_nom_w=25e3, p_min_w=25e3, p_max_w=25e3)
    nom = solve_nominal_opf(case)
    rob = solve_robust_opf(case)
    assert rob.objective == pytest.approx(nom.objective, rel=1e-4)
    assert rob.r_bar == pytest.approx(0.0, abs=1e-6)


def test_robust_opf_with_stability_floor(twobus):
    stab = robust_stability_set(twobus, method="passivity")
    sol = solve_robust_opf(twobus, stab=stab)
    assert sol.v_floor[0] == pytest.approx(500.0, rel=1e-9)
    assert np.all(sol.band_lo >= sol.v_floor - 1e-6)
    assert sol.certificate.holds


def test_robust_opf_infeasible_box_raises():
    """A box too wide for the network fails loudly, not silently."""
    case = make_twobus(p_nom_w=300e3, p_min_w=0.0, p_max_w=600e3)
    with pytest.raises(OpfError, match="infeasible|stalled"):
        solve_robust_opf(case)


def test_robust_opf_uses_nominal_warm_start(twobus):
    nom = solve_nominal_opf(twobus)
    sol = solve_robust_opf(twobus, nominal=nom)
    assert sol.certificate.holds
    assert sol.objective >= nom.objective - 1e-6 * abs(nom.objective)


def test_robust_objective_dominates_nominal(ieee9):
    """Robustness can only cost losses, never save them."""
    nom = solve_nominal_opf(ieee9)
    rob = solve_robust_opf(ieee9)
    assert rob.objective >= nom.objective * (1.0 - 1e-9)
