import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cube_ctx
from onlineica.coeffs import Regularizer
from onlineica.errors import ConfigError, DomainError, IntegratorError
from onlineica.model import StepSchedule, sparse_ternary
from onlineica.ode import (
    bifurcation,
    cube_rhs,
    find_fixed_points,
    find_tau_c,
    g_curve,
    general_rhs_q,
    integrate,
    rhs_example1,
    rhs_general,
)

RAD = (1.0, 1.0)


def test_rhs_general_examples():
    assert rhs_general(cube_ctx(0.05), 0.0) == 0.0
    assert rhs_general(cube_ctx(0.05), 1.0) == pytest.approx(-0.00125, abs=1e-14)
    with pytest.raises(ConfigError):
        rhs_general(cube_ctx(phi=Regularizer("l1", 0.1)), 0.5)


@given(st.floats(1e-3, 1.0), st.floats(0.01, 1.0), st.sampled_from([0.2, 0.5, 1.0]))
@settings(max_examples=80, deadline=None)
def test_chain_rule_identity(Q, tau, p):
    src = sparse_ternary(p)
    ctx = cube_ctx(tau, source=src)
    assert abs(2 * Q * rhs_general(ctx, Q) - rhs_example1(tau, Q * Q, src.m4, src.m6)) < 1e-12


def test_rhs_example1_examples():
    assert rhs_example1(0.3, 0.0, *RAD) == 0.0
    assert rhs_example1(0.05, 1.0, *RAD) == pytest.approx(-0.0025, abs=1e-15)
    q = np.linspace(0, 1, 11)
    np.testing.assert_allclose(rhs_example1(0.2, q, 3.0, 15.0), -15 * 0.04 * q, atol=1e-15)


def test_integrate_zero():
    sol = integrate(cube_rhs(0.1, *RAD), 0.0, 5.0)
    assert np.all(sol.q == 0)


def test_integrate_lands_on_t_end():
    sol = integrate(cube_rhs(0.1, *RAD), 0.5, 1.0005, dt=1e-3)
    assert sol.times[-1] == 1.0005


def test_bistability_tau_004():
    fps = find_fixed_points(0.04, *RAD)
    qu, qs = fps[0].q, fps[1].q
    up = integrate(cube_rhs(0.04, *RAD), qu + 0.05, 1000.0, dt=1e-2)
    down = integrate(cube_rhs(0.04, *RAD), qu - 0.05, 1000.0, dt=1e-2)
    assert abs(up.q[-1] - qs) < 1e-6
    assert down.q[-1] < 1e-6
    # monotone approach from above q_u*
    assert np.all(np.diff(up.q) >= -1e-12) and up.q.max() <= qs + 1e-9


def test_default_dt_is_converged():
    rhs = cube_rhs(0.1, *RAD)
    a = integrate(rhs, 0.7, 5.0, dt=1e-3).q[-1]
    b = integrate(rhs, 0.7, 5.0, dt=5e-4).q[-1]
    assert abs(a - b) < 1e-8


def test_rk4_order():
    rhs = cube_rhs(0.5, *RAD)
    ref = integrate(rhs, 0.9, 2.0, dt=1e-4).q[-1]
    dts = np.array([1e-2, 5e-3, 2.5e-3])
    errs = np.array([abs(integrate(rhs, 0.9, 2.0, dt=h).q[-1] - ref) for h in dts])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 3.7 <= slope <= 4.3


def test_integrator_errors():
    with pytest.raises(IntegratorError):
        integrate(lambda t, q: q**3, 1.0, 10.0, dt=0.5)
    with pytest.raises(DomainError):
        integrate(cube_rhs(0.1, *RAD), 1.5, 1.0)
    assert integrate(lambda t, q: 1.0, 0.99, 1.0).out_of_range


def test_fixed_points_structure():
    assert find_fixed_points(0.3, 3.0, 15.0) == []
    fps = find_fixed_points(0.02, *RAD)
    assert len(fps) == 2 and fps[0].q < fps[1].q
    assert not fps[0].stable and fps[1].stable
    for fp in fps:
        assert abs(rhs_example1(0.02, fp.q, *RAD)) < 1e-9
    assert find_fixed_points(0.5, *RAD) == []


def test_tau_c():
    tau_c = find_tau_c(*RAD)
    assert len(find_fixed_points(tau_c - 1e-6, *RAD)) == 2
    assert find_fixed_points(tau_c + 1e-6, *RAD) == []
    with pytest.raises(DomainError):
        find_tau_c(3.0, 15.0)


def test_bifurcation_branches():
    res = bifurcation([0.02, 0.08, 0.5], *RAD)
    for tau, qu, qs in res.branches:
        if tau < res.tau_c:
            assert 0 < qu < qs <= 1
        else:
            assert qu is None and qs is None


def test_g_curves_ordered_by_tau():
    q = np.linspace(0, 1, 1001)[1:]
    curves = np.array([g_curve(t, q, *RAD) for t in (0.02, 0.04, 0.06, 0.08)])
    assert np.all(np.diff(curves, axis=0) < 0)


def test_gaussian_source_curves_negative():
    q = np.linspace(0, 1, 101)[1:]
    assert np.all(g_curve(0.05, q, 3.0, 15.0) < 0)


def test_general_rhs_matches_closed_form_with_schedule():
    sched = StepSchedule("table", 0.1, ((0.0, 0.1), (5.0, 0.05)))
    a = integrate(general_rhs_q(cube_ctx(0.1), sched), 0.6, 8.0, dt=1e-2)
    b = integrate(cube_rhs(sched, *RAD), 0.6, 8.0, dt=1e-2)
    np.testing.assert_allclose(a.q, b.q, atol=1e-12)
