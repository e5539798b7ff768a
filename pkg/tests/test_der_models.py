import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcsindy.der_models import (
    GflParams,
    GflState,
    GfmParams,
    GfmState,
    SystemConstants,
    analytical_block,
    analytical_xi_gfl,
    analytical_xi_gfm,
    assemble_xi,
    gfl_derivative,
    gfl_library_row,
    gfm_derivative,
    gfm_library_row,
    library_labels,
    order_ders,
    target_labels,
)

C = SystemConstants()
W0 = C.omega0


def test_omega0():
    assert W0 == pytest.approx(2 * math.pi * 60)


def test_gfm_equilibrium():
    par = GfmParams(omega_c=31.416, k_dp=3.7699, p_set=0.5, bus_id=1)
    assert gfm_derivative(GfmState(0.0, W0), 0.5, par, C) == pytest.approx((0.0, 0.0), abs=1e-9)


def test_gfm_substitution():
    par = GfmParams(omega_c=31.416, k_dp=3.7699, p_set=0.5, bus_id=1)
    th, w = gfm_derivative(GfmState(0.0, W0 + 1.0), 0.5, par, C)
    assert th == pytest.approx(1.0)
    assert w == pytest.approx(-31.416, abs=1e-9)


def test_gfm_setpoint_override():
    par = GfmParams(omega_c=10.0, k_dp=2.0, p_set=0.5, bus_id=1)
    _, w = gfm_derivative(GfmState(0.0, W0), 0.5, par, C, p_set=0.6)
    assert w == pytest.approx(10.0 * 2.0 * 0.1)


def test_gfl_locked_equilibrium():
    par = GflParams(k_p=1.0, k_i=15.0, omega_c=20.0, zeta=0.7, bus_id=2)
    st_ = GflState(0.3, W0, 0.0, W0 / par.k_i)
    assert gfl_derivative(st_, 0.0, par, C) == pytest.approx((0.0, 0.0, 0.0, 0.0), abs=1e-12)


@given(st.floats(-1, 1))
def test_vq_int_dot_is_vq(vq):
    par = GflParams(k_p=1.0, k_i=15.0, omega_c=20.0, zeta=0.7, bus_id=2)
    assert gfl_derivative(GflState(0, W0, 0, W0 / 15), vq, par, C)[3] == vq


def test_gfl_step_response_matches_second_order():
    # step in vq from lock: omega follows a damped 2nd-order response with wn = omega_c
    # a vanishing K_i freezes the integral path, so the step acts through K_p alone
    par = GflParams(k_p=2.0, k_i=1e-12, omega_c=20.0, zeta=0.5, bus_id=2)
    vq, dt = 0.05, 1e-4
    x = np.array([0.0, W0, 0.0, W0 / par.k_i])
    ts, ws = [], []
    for k in range(4000):
        def f(y):
            return np.array(gfl_derivative(GflState(*y), vq, par, C))
        k1 = f(x); k2 = f(x + dt / 2 * k1); k3 = f(x + dt / 2 * k2); k4 = f(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append((k + 1) * dt)
        ws.append(x[1])
    t = np.array(ts)
    wn, z = par.omega_c, par.zeta
    wd = wn * math.sqrt(1 - z * z)
    step = par.k_p * vq
    ref = W0 + step * (1 - np.exp(-z * wn * t) * (np.cos(wd * t) + z / math.sqrt(1 - z * z) * np.sin(wd * t)))
    assert np.max(np.abs(np.array(ws) - ref)) < 1e-6


def test_gfm_block_unit_params():
    par = GfmParams(omega_c=1.0, k_dp=1.0, p_set=0.0, bus_id=1)
    np.testing.assert_array_equal(analytical_xi_gfm(par), [[1, -1], [-1, 1], [0, -1], [0, 1]])


def test_gfl_block_unit_params():
    par = GflParams(k_p=0.0, k_i=1.0, omega_c=1.0, zeta=1.0, bus_id=2)
    np.testing.assert_array_equal(analytical_xi_gfl(par),
                                  [[0, 0, -1], [-1, 0, 0], [0, 1, -2], [0, 0, 0], [1, 0, 1]])


def test_theta_dot_support():
    par = GfmParams(omega_c=7.0, k_dp=3.0, p_set=0.1, bus_id=1)
    assert list(np.flatnonzero(analytical_xi_gfm(par)[:, 0])) == [0, 1]
    b = analytical_xi_gfl(GflParams(1.0, 5.0, 9.0, 0.7, 2))
    assert list(np.flatnonzero(b[:, 1])) == [2]
    assert b[2, 1] == 1.0


pos = st.floats(0.1, 100)


@settings(max_examples=60)
@given(pos, pos, st.floats(-1, 1), st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_gfm_roundtrip(wc, kdp, ps, dw, p, theta):
    par = GfmParams(omega_c=wc, k_dp=kdp, p_set=ps, bus_id=1)
    s = GfmState(theta, W0 + dw)
    lhs = np.array(gfm_derivative(s, p, par, C))
    rhs = gfm_library_row(s, p, ps, C) @ analytical_xi_gfm(par)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + wc * kdp))


@settings(max_examples=60)
@given(pos, pos, pos, st.floats(0.05, 2), st.floats(-1, 1), st.floats(-2, 2), st.floats(-50, 50))
def test_gfl_roundtrip(kp, ki, wc, zeta, vq, dw, wdot):
    par = GflParams(k_p=kp, k_i=ki, omega_c=wc, zeta=zeta, bus_id=3)
    s = GflState(0.2, W0 + dw, wdot, (W0 + dw) / ki)
    lhs = np.array(gfl_derivative(s, vq, par, C)[:3])
    rhs = gfl_library_row(s, vq, C) @ analytical_xi_gfl(par)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * wc * wc * W0)


def test_assemble_single_gfm():
    par = GfmParams(omega_c=3.0, k_dp=2.0, p_set=0.0, bus_id=1)
    np.testing.assert_array_equal(assemble_xi([analytical_block(par)]), analytical_xi_gfm(par))


def test_assemble_four_bus(system):
    xi = assemble_xi([analytical_block(d) for d in system.ders])
    assert xi.shape == (19, 11)
    labels = [t for d in system.ders for t in target_labels(d)]
    assert labels == ["gfm1.theta_dot", "gfm1.omega_dot",
                      "gfl2.theta_dot", "gfl2.omega_dot", "gfl2.omega_ddot",
                      "gfl3.theta_dot", "gfl3.omega_dot", "gfl3.omega_ddot",
                      "gfl4.theta_dot", "gfl4.omega_dot", "gfl4.omega_ddot"]
    # off-diagonal blocks are exactly zero
    assert np.count_nonzero(xi[:4, 2:]) == 0 and np.count_nonzero(xi[4:, :2]) == 0


def test_assemble_empty():
    with pytest.raises(ValueError, match="no DERs"):
        assemble_xi([])


def test_permutation_consistency(system, rng):
    ders = list(system.ders)
    perm = [ders[i] for i in rng.permutation(len(ders))]
    ordered = order_ders(perm)
    assert [d.bus_id for d in ordered] == [1, 2, 3, 4]
    a = assemble_xi([analytical_block(d) for d in ordered])
    np.testing.assert_array_equal(a, assemble_xi([analytical_block(d) for d in system.ders]))
    assert library_labels(ordered[1])[0] == "gfl2.omega"


@pytest.mark.parametrize("kw", [dict(omega_c=0.0, k_dp=1.0), dict(omega_c=1.0, k_dp=-1.0)])
def test_gfm_param_validation(kw):
    with pytest.raises(ValueError):
        GfmParams(p_set=0.0, bus_id=1, **kw)


@pytest.mark.parametrize("kw", [dict(k_i=0.0, zeta=0.7), dict(k_i=1.0, zeta=0.0)])
def test_gfl_param_validation(kw):
    with pytest.raises(ValueError):
        GflParams(k_p=1.0, omega_c=10.0, bus_id=2, **kw)


def test_duplicate_bus_ids():
    a = GfmParams(omega_c=1.0, k_dp=1.0, p_set=0.0, bus_id=1)
    b = GflParams(k_p=1.0, k_i=1.0, omega_c=1.0, zeta=1.0, bus_id=1)
    with pytest.raises(ValueError, match="duplicate"):
        order_ders([a, b])
