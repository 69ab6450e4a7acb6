"""Reduced grid equations and Newton power flow against closed forms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcropf.powerflow import (
    PowerFlowError,
    back_solve,
    grid_equations,
    loss_breakdown,
    losses,
    normalized_impedance,
    open_circuit,
    pf_residual,
    solve_pf,
)

from conftest import make_twobus

# Two-bus reduction: series 1/(R_s + R_t) = 10 S, load shunt 0.2 S.
G_SERIES = 10.0
G_SHUNT = 0.2
Y_LL = -(G_SERIES + G_SHUNT)


def closed_form_root(vref: float, p: float) -> float:
    """High root of g_tot v^2 - g_ser vref v + p = 0 for the two-bus case."""
    a, b = -Y_LL, G_SERIES * vref
    disc = b * b - 4.0 * a * p
    if disc < 0:
        raise ValueError("no real root")
    return (b + np.sqrt(disc)) / (2.0 * a)


def test_twobus_reduction_closed_form(twobus_ge):
    ge = twobus_ge
    np.testing.assert_allclose(ge.Y_ll, [[Y_LL]], rtol=1e-12)
    np.testing.assert_allclose(ge.Y_ls, [[G_SERIES]], rtol=1e-12)
    np.testing.assert_allclose(ge.K, [[1.0 / Y_LL]], rtol=1e-12)
    np.testing.assert_allclose(ge.W, [[G_SERIES / (G_SERIES + G_SHUNT)]],
                               rtol=1e-12)


def test_twobus_open_circuit_and_impedance(twobus_ge):
    w = open_circuit(twobus_ge, np.array([510.0]))
    np.testing.assert_allclose(w, [500.0], rtol=1e-12)
    Zt = normalized_impedance(twobus_ge, w)
    np.testing.assert_allclose(Zt, [[1.0 / (Y_LL * 500.0**2)]], rtol=1e-12)
    # Doubling the open-circuit voltage quarters the normalized impedance.
    Zt2 = normalized_impedance(twobus_ge, 2.0 * w)
    np.testing.assert_allclose(Zt2, Zt / 4.0, rtol=1e-12)


def test_zero_load_solves_to_open_circuit(twobus_ge):
    vref = np.array([510.0])
    sol = solve_pf(twobus_ge, vref, np.array([0.0]))
    np.testing.assert_allclose(sol.v_load, open_circuit(twobus_ge, vref),
                               rtol=1e-12)
    assert sol.iterations <= 1


def test_newton_matches_quadratic_root(twobus_ge):
    vref = np.array([510.0])
    for p in (10e3, 25e3):
        sol = solve_pf(twobus_ge, vref, np.array([p]))
        assert abs(sol.v_load[0] - closed_form_root(510.0, p)) <= 1e-8


def test_known_operating_points(twobus_ge):
    sol = solve_pf(twobus_ge, np.array([510.0]), np.array([25e3]))
    assert sol.v_load[0] == pytest.approx(495.0490147034, abs=1e-6)
    sol = solve_pf(twobus_ge, np.array([510.0]), np.array([10e3]))
    assert sol.v_load[0] == pytest.approx(498.0314654, abs=1e-6)


def test_residual_contract(twobus_ge, ieee14_ge):
    for ge, nv, p_w in ((twobus_ge, 1, 25e3), (ieee14_ge, 5, 25e3)):
        vref = np.full(nv, 510.0)
        p = np.full(ge.n_loads, p_w)
        sol = solve_pf(ge, vref, p)
        assert sol.residual <= 1e-8 * max(1.0, np.max(np.abs(p)))
        r = pf_residual(ge, vref, p, sol.v_load)
        assert np.max(np.abs(r)) == pytest.approx(sol.residual, rel=1e-9)


def test_high_root_selected(twobus_ge):
    """The returned solution is the high-voltage root, above w/2."""
    vref = np.array([510.0])
    w = open_circuit(twobus_ge, vref)
    for p in (1e3, 100e3, 400e3, 600e3):
        sol = solve_pf(twobus_ge, vref, np.array([p]))
        assert sol.v_load[0] > w[0] / 2.0
        assert sol.v_load[0] <= w[0]


def test_back_solve_consistency(ieee14, ieee14_ge):
    vref = np.full(5, 510.0)
    p = np.full(9, 25e3)
    sol = solve_pf(ieee14_ge, vref, p)
    v_source, i_line = back_solve(ieee14_ge, vref, sol.v_load)
    np.testing.assert_allclose(v_source, sol.v_source, rtol=1e-12)
    np.testing.assert_allclose(i_line, sol.i_line, rtol=1e-12)
    # Every line current equals conductance times the bus-voltage drop.
    v_bus = {}
    for s, v in zip(ieee14.sources, sol.v_source):
        v_bus[s.bus] = v
    for l, v in zip(ieee14.loads, sol.v_load):
        v_bus[l.bus] = v
    for line, i in zip(ieee14.lines, i_line):
        drop = v_bus[line.from_bus] - v_bus[line.to_bus]
        assert i == pytest.approx(drop / line.r_ohm, rel=1e-9, abs=1e-12)


def test_loss_audit_power_balance(twobus, twobus_ge, ieee14, ieee14_ge):
    """Injected regulator power minus load power equals total dissipation."""
    for case, ge in ((twobus, twobus_ge), (ieee14, ieee14_ge)):
        vref = np.full(case.n_sources, 510.0)
        p = np.full(case.n_loads, 25e3)
        sol = solve_pf(ge, vref, p)
        injected = float(np.sum(vref * (vref - sol.v_source) * ge.g_source))
        total = losses(ge, vref, sol)
        assert total == pytest.approx(injected - p.sum(), rel=1e-8)
        br = loss_breakdown(case, ge, vref, sol)
        assert br.total == pytest.approx(total, rel=1e-12)
        assert br.total == pytest.approx(br.line + br.source + br.shunt,
                                         rel=1e-12)
        assert min(br.line, br.source, br.shunt) >= 0.0


def test_twobus_losses_at_nominal(twobus_ge):
    sol = solve_pf(twobus_ge, np.array([510.0]), np.array([25e3]))
    assert losses(twobus_ge, np.array([510.0]), sol) == pytest.approx(
        51250.025, rel=1e-6)


def test_losses_increase_with_load(ieee14_ge):
    vref = np.full(5, 510.0)
    lo = solve_pf(ieee14_ge, vref, np.full(9, 25e3))
    hi = solve_pf(ieee14_ge, vref, np.full(9, 40e3))
    assert losses(ieee14_ge, vref, hi) > losses(ieee14_ge, vref, lo)


def test_reduction_invariants(ieee9_ge, ieee14_ge):
    """Sign structure of the reduced equations on meshy cases."""
    for ge in (ieee9_ge, ieee14_ge):
        off = ge.Y_ll - np.diag(np.diag(ge.Y_ll))
        assert np.all(np.diag(ge.Y_ll) < 0)
        assert np.all(off >= 0)
        assert np.all(ge.Y_ls >= 0)
        assert np.all(ge.W >= 0)
        assert np.all(ge.K <= 1e-15)
        w = open_circuit(ge, np.full(ge.n_sources, 510.0))
        assert np.all(w > 0)
        assert np.all(w < 510.0)


def test_overload_raises_with_residual(twobus_ge):
    with pytest.raises(PowerFlowError, match="residual"):
        solve_pf(twobus_ge, np.array([510.0]), np.array([10e6]))


def test_warm_start_converges_faster(ieee14_ge):
    vref = np.full(5, 510.0)
    p = np.full(9, 30e3)
    cold = solve_pf(ieee14_ge, vref, p)
    warm = solve_pf(ieee14_ge, vref, p * 1.001, v0=cold.v_load)
    assert warm.iterations <= cold.iterations


@settings(max_examples=100, deadline=None)
@given(vref=st.floats(min_value=425.0, max_value=575.0),
       p=st.floats(min_value=0.0, max_value=600e3))
def test_newton_agrees_with_closed_form_everywhere(vref, p):
    """Solvable two-bus instances always land on the quadratic high root."""
    ge = grid_equations(make_twobus())
    try:
        target = closed_form_root(vref, p)
    except ValueError:
        return
    try:
        sol = solve_pf(ge, np.array([vref]), np.array([p]))
    except PowerFlowError:
        # Newton may give up within machine precision of the fold point.
        disc = (G_SERIES * vref) ** 2 - 4.0 * (-Y_LL) * p
        assert disc <= 1e-6 * (G_SERIES * vref) ** 2
        return
    assert abs(sol.v_load[0] - target) <= max(1e-8, 1e-10 * target)
