import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhomb4 import dynamics, model

RNG = np.random.default_rng(7151)


def fd_gradient(f, y, h=1e-6):
    """Central-difference gradient oracle."""
    g = np.empty(y.shape[0])
    for i in range(y.shape[0]):
        yp = y.copy()
        ym = y.copy()
        yp[i] += h
        ym[i] -= h
        g[i] = (f(yp) - f(ym)) / (2.0 * h)
    return g


def fd_jacobian(f, y, h=1e-6):
    """Central-difference Jacobian oracle for a vector function."""
    f0 = f(y)
    Jm = np.empty((f0.shape[0], y.shape[0]))
    for i in range(y.shape[0]):
        yp = y.copy()
        ym = y.copy()
        yp[i] += h
        ym[i] -= h
        Jm[:, i] = (f(yp) - f(ym)) / (2.0 * h)
    return Jm


def random_state_2df():
    y = RNG.uniform(0.3, 2.0, size=4) * RNG.choice([-1, 1], size=4)
    return y


def random_state_4df():
    while True:
        y = RNG.uniform(-2.0, 2.0, size=8)
        y[0] = RNG.uniform(0.3, 2.0) * RNG.choice([-1, 1])
        y[3] = RNG.uniform(0.3, 2.0) * RNG.choice([-1, 1])
        r1 = y[0] ** 2 + y[1] ** 2
        r2 = y[2] ** 2 + y[3] ** 2
        h = r1 * r1 + r2 * r2
        from rhomb4._kernels import _quartic4
        if h - 4.0 * abs(_quartic4(y)) > 0.05 * h:
            return y


def random_state_on_a():
    y2 = RNG.uniform(0.3, 2.0, size=4) * RNG.choice([-1, 1], size=4)
    return model.embed_2df_in_4df(y2)


# ---------------------------------------------------------------------------
# 2DF flow
# ---------------------------------------------------------------------------

def test_vf_2df_at_collision_state():
    # at (0, zeta, +-sqrt(8), 0) only Q1 moves: every other term carries a
    # factor Q1 or (1 - P1^2/8)
    for sign in (1.0, -1.0):
        zeta = 1.37
        y = np.array([0.0, zeta, sign * math.sqrt(8.0), 0.0])
        dy = dynamics.vf_2df(y, 0.62, -1.1)
        assert dy[0] == pytest.approx(0.125 * zeta ** 2 * sign * math.sqrt(8.0))
        assert dy[1] == 0.0
        assert dy[2] == 0.0
        assert dy[3] == pytest.approx(0.0, abs=1e-14)


def test_vf_2df_is_j_grad_gamma_fd():
    m, E = 0.47, -1.3
    for _ in range(300):
        y = random_state_2df()
        fd = fd_gradient(lambda z: model.gamma_2df(z, m, E), y)
        vf = dynamics.vf_2df(y, m, E)
        expected = model.J2 @ fd
        scale = np.maximum(np.abs(expected), 1.0)
        assert np.max(np.abs(vf - expected) / scale) < 1e-7


def test_grad_gamma_2df_matches_fd():
    for _ in range(100):
        y = random_state_2df()
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        fd = fd_gradient(lambda z: model.gamma_2df(z, m, E), y)
        g = dynamics.grad_gamma_2df(y, m, E)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(g - fd) / scale) < 1e-7


def test_hess_gamma_2df_matches_fd():
    for _ in range(50):
        y = random_state_2df()
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        H = dynamics.hess_gamma_2df(y, m, E)
        fd = fd_jacobian(lambda z: dynamics.grad_gamma_2df(z, m, E), y)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(H - fd)) / scale < 1e-6
        assert np.array_equal(H, H.T)


# ---------------------------------------------------------------------------
# 4DF flow
# ---------------------------------------------------------------------------

def test_grad_gamma_4df_matches_fd():
    for _ in range(100):
        y = random_state_4df()
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        fd = fd_gradient(lambda z: model.gamma_4df(z, m, E), y)
        g = dynamics.grad_gamma_4df(y, m, E)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(g - fd) / scale) < 1e-7


def test_vf_4df_vanishing_components_on_a():
    # the flow is tangent to the invariant subspace A
    for _ in range(50):
        y = random_state_on_a()
        dy = dynamics.vf_4df(y, 0.3, -1.0)
        assert abs(dy[1]) < 1e-14
        assert abs(dy[2]) < 1e-14
        assert abs(dy[5]) < 1e-14
        assert abs(dy[6]) < 1e-14


def test_vf_4df_reduces_to_vf_2df_on_a():
    for _ in range(50):
        y2 = random_state_2df()
        m = RNG.uniform(0.05, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        dy4 = dynamics.vf_4df(model.embed_2df_in_4df(y2), m, E)
        dy2 = dynamics.vf_2df(y2, m, E)
        assert np.allclose(dy4[[0, 3, 4, 7]], dy2, rtol=1e-12, atol=1e-13)


def test_hess_gamma_4df_matches_fd():
    for _ in range(30):
        y = random_state_4df()
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        H = dynamics.hess_gamma_4df(y, m, E)
        fd = fd_jacobian(lambda z: dynamics.grad_gamma_4df(z, m, E), y)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(H - fd)) / scale < 1e-6
        assert np.max(np.abs(H - H.T)) == 0.0


def test_hess_zero_pattern_off_a():
    # at generic states exactly the '0'-marked entries vanish
    for _ in range(30):
        y = random_state_4df()
        H = dynamics.hess_gamma_4df(y, 0.57, -0.9)
        assert np.max(np.abs(H[dynamics.HESS4_ALWAYS_ZERO])) == 0.0
        assert np.min(np.abs(H[dynamics.HESS4_ZERO_ON_A])) > 0.0


def test_hess_zero_pattern_on_a():
    # on A both the '0'- and 'a'-marked entries vanish
    for _ in range(30):
        y = random_state_on_a()
        H = dynamics.hess_gamma_4df(y, 0.57, -0.9)
        dead = dynamics.HESS4_ALWAYS_ZERO | dynamics.HESS4_ZERO_ON_A
        assert np.max(np.abs(H[dead])) < 1e-10
        assert dynamics.in_pattern_m2(H, tol=1e-10)


# ---------------------------------------------------------------------------
# block patterns
# ---------------------------------------------------------------------------

def test_structure_matrices_in_pattern():
    assert dynamics.in_pattern_m2(model.J4)
    assert dynamics.in_pattern_m2(model.S4)
    assert dynamics.in_pattern_m2(model.Y0)
    assert dynamics.in_pattern_m2(np.eye(8))
    assert not dynamics.in_pattern_m2(np.ones((8, 8)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_pattern_closed_under_multiplication(seed):
    rng = np.random.default_rng(seed)
    A = np.where(dynamics.M2_PATTERN, rng.normal(size=(8, 8)), 0.0)
    B = np.where(dynamics.M2_PATTERN, rng.normal(size=(8, 8)), 0.0)
    assert dynamics.in_pattern_m2(A @ B, tol=0.0 + 1e-300)
    A4 = np.where(dynamics.M_PATTERN, rng.normal(size=(4, 4)), 0.0)
    B4 = np.where(dynamics.M_PATTERN, rng.normal(size=(4, 4)), 0.0)
    assert dynamics.in_pattern_m(A4 @ B4, tol=0.0 + 1e-300)


def test_pattern_inverse():
    rng = np.random.default_rng(5)
    A = np.where(dynamics.M2_PATTERN, rng.normal(size=(8, 8)), 0.0)
    A += np.eye(8)  # keep it comfortably invertible
    assert dynamics.in_pattern_m2(np.linalg.inv(A), tol=1e-12)


# ---------------------------------------------------------------------------
# variational right-hand side
# ---------------------------------------------------------------------------

def test_variational_rhs_zero_tangent_stays_zero():
    y = random_state_4df()
    _, dXi = dynamics.variational_rhs(y, np.zeros((8, 8)), 0.5, -1.0)
    assert np.array_equal(dXi, np.zeros((8, 8)))


def test_variational_rhs_matches_fd_of_flow():
    # d(vf)/dy equals J*Hess: push the identity tangent through both
    m, E = 0.73, -1.4
    for dim, vf in ((4, dynamics.vf_2df), (8, dynamics.vf_4df)):
        y = random_state_2df() if dim == 4 else random_state_4df()
        _, dXi = dynamics.variational_rhs(y, np.eye(dim), m, E)
        fd = fd_jacobian(lambda z: vf(z, m, E), y)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(dXi - fd)) / scale < 1e-6
