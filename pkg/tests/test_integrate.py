import math

import numpy as np
import pytest

from rhomb4 import dynamics, integrate, model


def vf_closure(m, E):
    return lambda y: dynamics.vf_2df(y, m, E)


STATE0 = np.array([0.4, 1.3, 1.9, -0.7])
M, E = 0.6, -1.1


def test_zero_span_returns_initial_state():
    traj = integrate.integrate(vf_closure(M, E), STATE0, 0.0)
    assert traj.s.shape == (1,)
    assert np.array_equal(traj.y[0], STATE0)
    assert not traj.escaped


def test_config_validation():
    with pytest.raises(ValueError):
        integrate.IntegratorConfig(h_min=1.0, h_init=0.1)
    with pytest.raises(ValueError):
        integrate.IntegratorConfig(abs_tol=-1.0)


def test_clock_event_is_exact():
    # artificial clock event: g depends on an appended time coordinate
    def vf(y):
        out = np.empty(5)
        out[:4] = dynamics.vf_2df(y[:4], M, E)
        out[4] = 1.0
        return out

    c = 0.8232
    ev = integrate.EventSpec(g=lambda y: y[4] - c, direction="rising",
                             refine_tol=1e-12)
    s_star, y_star = integrate.integrate_until(vf, np.append(STATE0, 0.0), ev)
    assert s_star == pytest.approx(c, abs=1e-11)
    assert y_star[4] == pytest.approx(c, abs=1e-11)


def test_event_localization_residual():
    ev = integrate.EventSpec(g=lambda y: y[0] - 0.9, direction="both",
                             refine_tol=1e-12)
    s_star, y_star = integrate.integrate_until(vf_closure(M, E), STATE0, ev)
    assert abs(y_star[0] - 0.9) < 1e-9
    assert s_star > 0.0


def test_no_event_error():
    ev = integrate.EventSpec(g=lambda y: y[0] - 1e6)
    with pytest.raises(integrate.NoEventError):
        integrate.integrate_until(vf_closure(M, E), STATE0, ev, horizon=3.0)


def test_gamma_is_conserved_along_flow():
    g0 = model.gamma_2df(STATE0, M, E)
    traj = integrate.integrate(vf_closure(M, E), STATE0, 6.0)
    g1 = model.gamma_2df(traj.final, M, E)
    assert abs(g1 - g0) < 1e-10


def test_escape_guard_triggers():
    cfg = integrate.IntegratorConfig(guard=1.5)
    traj = integrate.integrate(vf_closure(M, E), STATE0, 50.0, cfg)
    assert traj.escaped
    assert np.max(np.abs(traj.final)) > 1.5


def test_checkpoints_are_hit_exactly():
    pts = [0.5, 1.25, 2.0]
    traj = integrate.integrate(vf_closure(M, E), STATE0, 3.0, checkpoints=pts)
    assert np.allclose(traj.s, [0.0, 0.5, 1.25, 2.0, 3.0])


def test_convergence_sanity_on_tolerance_halving():
    cfg1 = integrate.IntegratorConfig(abs_tol=1e-10, rel_tol=1e-10)
    cfg2 = integrate.IntegratorConfig(abs_tol=5e-11, rel_tol=5e-11)
    cfg_ref = integrate.IntegratorConfig(abs_tol=1e-13, rel_tol=1e-13)
    vf = vf_closure(M, E)
    y1 = integrate.integrate(vf, STATE0, 4.0, cfg1).final
    y2 = integrate.integrate(vf, STATE0, 4.0, cfg2).final
    yr = integrate.integrate(vf, STATE0, 4.0, cfg_ref).final
    err1 = np.max(np.abs(y1 - yr))
    err2 = np.max(np.abs(y2 - yr))
    assert err2 < 10.0 * max(err1, 1e-15)


def test_generic_and_kernel_paths_agree():
    # the jitted endpoint integrator must match the generic python driver
    vf = vf_closure(M, E)
    y_generic = integrate.integrate(vf, STATE0, 3.0).final
    y_kernel = integrate.advance_state(STATE0, M, E, 3.0)
    assert np.max(np.abs(y_generic - y_kernel)) < 1e-9

    y4 = model.embed_2df_in_4df(STATE0)
    vf4 = lambda y: dynamics.vf_4df(y, M, E)
    y_generic4 = integrate.integrate(vf4, y4, 2.0).final
    y_kernel4 = integrate.advance_state(y4, M, E, 2.0, dof=4)
    assert np.max(np.abs(y_generic4 - y_kernel4)) < 1e-9


def test_variational_trivial_cases():
    res = integrate.integrate_variational(STATE0, np.eye(4), 0.0, M, E)
    assert np.array_equal(res.tangent, np.eye(4))
    with pytest.raises(ValueError):
        integrate.integrate_variational(STATE0, np.zeros((4, 4)), 1.0, M, E)


def test_variational_symplecticity_short_span():
    res = integrate.integrate_variational(STATE0, np.eye(4), 3.0, M, E)
    defect = np.max(np.abs(res.tangent.T @ model.J2 @ res.tangent - model.J2))
    assert defect < 1e-9
    assert res.symplectic_defect == pytest.approx(defect, rel=1e-6, abs=1e-12)


def test_variational_matches_flow_linearization():
    # columns of the tangent track finite-difference perturbations of the flow
    h = 1e-7
    res = integrate.integrate_variational(STATE0, np.eye(4), 2.0, M, E)
    for i in range(4):
        dp = STATE0.copy()
        dp[i] += h
        dm = STATE0.copy()
        dm[i] -= h
        col_fd = (integrate.advance_state(dp, M, E, 2.0)
                  - integrate.advance_state(dm, M, E, 2.0)) / (2.0 * h)
        assert np.max(np.abs(res.tangent[:, i] - col_fd)) < 1e-5


def test_variational_known_solution_column():
    # gamma'(0) solves the variational equation: a tangent column equal to
    # the flow direction stays equal to it along the trajectory
    v0 = dynamics.vf_2df(STATE0, M, E)
    seed = np.eye(4)
    seed[:, 0] = v0
    res = integrate.integrate_variational(STATE0, seed, math.pi / 2.0, M, E)
    v_end = dynamics.vf_2df(res.base, M, E)
    assert np.max(np.abs(res.tangent[:, 0] - v_end)) < 1e-8
