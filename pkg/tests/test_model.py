import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhomb4 import model

RNG = np.random.default_rng(20240817)

coord = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)
nonzero_coord = st.floats(min_value=0.1, max_value=3.0, allow_nan=False)
mass = st.floats(min_value=0.05, max_value=1.0, allow_nan=False)
energy = st.floats(min_value=-3.0, max_value=-0.1, allow_nan=False)


def random_states_4df(n, lo=0.2, hi=2.0):
    Y = RNG.uniform(-hi, hi, size=(n, 8))
    # keep both pair radii and the cross denominators safely away from zero
    Y[:, 0] = RNG.uniform(lo, hi, size=n) * RNG.choice([-1.0, 1.0], size=n)
    Y[:, 3] = RNG.uniform(lo, hi, size=n) * RNG.choice([-1.0, 1.0], size=n)
    return Y


# ---------------------------------------------------------------------------
# structure matrices
# ---------------------------------------------------------------------------

def test_s_matrices_are_involutions():
    assert np.array_equal(model.S2 @ model.S2, np.eye(4))
    assert np.array_equal(model.S4 @ model.S4, np.eye(8))


def test_s4_anticommutes_with_j():
    assert np.array_equal(model.S4 @ model.J4, -model.J4 @ model.S4)


def test_y0_orthogonal_and_symplectic():
    Y0 = model.Y0
    assert np.array_equal(Y0.T @ Y0, np.eye(8))
    assert np.max(np.abs(Y0.T @ model.J4 @ Y0 - model.J4)) < 1e-14


def test_y0_conjugates_s4_to_lambda():
    # the Klein-four generator pair is {S4, -S4}; conjugating by Y0 sends
    # one generator to LAMBDA and the other to -LAMBDA
    lhs = -np.linalg.inv(model.Y0) @ (-model.S4) @ model.Y0
    assert np.array_equal(lhs, model.LAMBDA)
    assert np.array_equal(np.linalg.inv(model.Y0) @ model.S4 @ model.Y0,
                          model.LAMBDA)


# ---------------------------------------------------------------------------
# 2DF Hamiltonian
# ---------------------------------------------------------------------------

def test_gamma_2df_zero_at_mass1_collision():
    # at an x-pair collision (Q1 = P2 = 0) the momentum condition P1^2 = 8
    # kills the Hamiltonian identically, whatever zeta, m and E are
    for zeta in (0.5, 1.3, 2.7):
        for sign in (1.0, -1.0):
            y = np.array([0.0, zeta, sign * math.sqrt(8.0), 0.0])
            assert abs(model.gamma_2df(y, 0.37, -1.6)) < 1e-14


def test_gamma_2df_direct_substitution():
    y = np.array([1.0, 1.0, 0.0, 0.0])
    expected = -1.0 - 2.0 * math.sqrt(2.0)
    assert model.gamma_2df(y, 1.0, 0.0) == pytest.approx(expected, abs=1e-15)


def test_gamma_2df_matches_physical_hamiltonian():
    # gamma = x1*x2*(H - E) away from collisions
    for _ in range(100):
        y = RNG.uniform(0.3, 2.0, size=4) * RNG.choice([-1, 1], size=4)
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        p = model.reg_to_phys_2df(y)
        H = model.hamiltonian_2df(p.x1, p.x2, p.w1, p.w2, m)
        assert model.gamma_2df(y, m, E) == pytest.approx(
            p.x1 * p.x2 * (H - E), rel=1e-12, abs=1e-12)


def test_gamma_2df_rescaling_invariance():
    # if gamma vanishes it still vanishes after (eps*Q, P, E/eps^2)
    y = np.array([0.7, 1.1, 1.9, -0.4])
    m = 0.45
    # choose E so that gamma(y) = 0
    E = model.gamma_2df(y, m, 0.0) / (y[0] ** 2 * y[1] ** 2)
    assert abs(model.gamma_2df(y, m, E)) < 1e-13
    for eps in (0.5, 1.55, 2.0):
        ys = y.copy()
        ys[:2] *= eps
        assert abs(model.gamma_2df(ys, m, E / eps ** 2)) < 1e-12


def test_gamma_2df_total_collapse_raises():
    with pytest.raises(model.DomainError):
        model.gamma_2df(np.array([0.0, 0.0, 1.0, 1.0]), 0.5, -1.0)


# ---------------------------------------------------------------------------
# 4DF Hamiltonian
# ---------------------------------------------------------------------------

def test_gamma_4df_restricts_to_gamma_2df_on_a():
    for _ in range(200):
        y2 = RNG.uniform(0.2, 2.0, size=4) * RNG.choice([-1, 1], size=4)
        m = RNG.uniform(0.05, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        y4 = model.embed_2df_in_4df(y2)
        g4 = model.gamma_4df(y4, m, E)
        g2 = model.gamma_2df(y2, m, E)
        assert g4 == pytest.approx(g2, rel=1e-12, abs=1e-12)


def test_gamma_4df_mass1_collision_condition():
    # Q1 = Q2 = 0 with P1^2 + P2^2 = 8 gives gamma = 0
    for _ in range(20):
        phi = RNG.uniform(0.0, 2.0 * np.pi)
        y = np.zeros(8)
        y[2:4] = RNG.uniform(0.3, 1.5, size=2)
        y[4] = math.sqrt(8.0) * math.cos(phi)
        y[5] = math.sqrt(8.0) * math.sin(phi)
        y[6:8] = RNG.uniform(-1.0, 1.0, size=2)
        assert abs(model.gamma_4df(y, 0.6, -1.2)) < 1e-13


def test_gamma_4df_massm_collision_condition():
    # Q3 = Q4 = 0 with P3^2 + P4^2 = 8 m^3 gives gamma = 0
    m = 0.35
    for _ in range(20):
        phi = RNG.uniform(0.0, 2.0 * np.pi)
        y = np.zeros(8)
        y[0:2] = RNG.uniform(0.3, 1.5, size=2)
        y[4:6] = RNG.uniform(-1.0, 1.0, size=2)
        y[6] = math.sqrt(8.0 * m ** 3) * math.cos(phi)
        y[7] = math.sqrt(8.0 * m ** 3) * math.sin(phi)
        assert abs(model.gamma_4df(y, m, -0.8)) < 1e-13


def test_gamma_4df_klein_symmetry_bulk():
    # invariance under +S and -S on a large random sample
    n = 1_000_000
    Y = random_states_4df(n)
    m, E = 0.41, -1.3
    from rhomb4._kernels import gamma4_batch
    g0 = np.empty(n)
    gS = np.empty(n)
    gamma4_batch(Y, m, E, g0)
    YS = Y * np.diag(model.S4)
    gamma4_batch(YS, m, E, gS)
    scale = np.maximum(np.abs(g0), 1.0)
    assert np.max(np.abs(gS - g0) / scale) < 1e-12
    YmS = -YS
    gamma4_batch(YmS, m, E, gS)
    assert np.max(np.abs(gS - g0) / scale) < 1e-12


def test_gamma_4df_matches_physical_hamiltonian():
    for _ in range(100):
        y = random_states_4df(1)[0]
        m = RNG.uniform(0.1, 1.0)
        E = RNG.uniform(-2.0, -0.2)
        x, w = model.reg_to_phys_4df(y)
        try:
            H = model.hamiltonian_4df(x, w, m)
        except model.DomainError:
            continue
        r1 = y[0] ** 2 + y[1] ** 2
        r2 = y[2] ** 2 + y[3] ** 2
        assert model.gamma_4df(y, m, E) == pytest.approx(
            r1 * r2 * (H - E), rel=1e-11, abs=1e-11)


def test_gamma_4df_unequal_mass_collision_raises():
    # put the x-pair body exactly on top of the y-pair body
    x = np.array([1.0, 0.0, 1.0, 0.0])
    w = np.zeros(4)
    y = model.phys_to_reg_4df(x, w)
    with pytest.raises(model.DomainError):
        model.gamma_4df(y, 0.5, -1.0)


# ---------------------------------------------------------------------------
# collision momenta and angular momentum
# ---------------------------------------------------------------------------

def test_collision_momentum_values():
    assert model.collision_momentum("mass-1", 0.123) == pytest.approx(
        2.0 * math.sqrt(2.0), abs=1e-15)
    assert model.collision_momentum("mass-m", 1.0) == pytest.approx(
        2.0 * math.sqrt(2.0), abs=1e-15)
    assert model.collision_momentum("mass-m", 0.5) == pytest.approx(1.0,
                                                                    abs=1e-15)


def test_angular_momentum_zero_on_a():
    y = model.embed_2df_in_4df(np.array([0.4, 1.7, -2.2, 0.9]))
    assert model.angular_momentum(y) == 0.0
    y0 = np.array([0.0, 0.0, 0.0, 1.4, math.sqrt(8.0), 0.0, 0.0, 0.0])
    assert model.angular_momentum(y0) == 0.0


def test_angular_momentum_matches_physical_formula():
    for _ in range(200):
        y = random_states_4df(1)[0]
        x, w = model.reg_to_phys_4df(y)
        assert model.angular_momentum(y) == pytest.approx(
            model.angular_momentum_phys(x, w), rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def test_reg_to_phys_2df_basic():
    y = np.array([1.5, 0.8, 3.0, -1.6])
    p = model.reg_to_phys_2df(y)
    assert p.x1 == pytest.approx(2.25)
    assert p.x2 == pytest.approx(0.64)
    assert p.w1 == pytest.approx(1.0)
    assert p.w2 == pytest.approx(-1.0)
    assert not (p.collision_x or p.collision_y)


def test_reg_to_phys_2df_collision_tagged():
    y = np.array([0.0, 1.2, math.sqrt(8.0), 0.0])
    p = model.reg_to_phys_2df(y)
    assert p.collision_x and not p.collision_y
    assert math.isnan(p.w1)
    assert p.P1 == pytest.approx(math.sqrt(8.0))


@settings(max_examples=200, deadline=None)
@given(nonzero_coord, nonzero_coord, coord, coord)
def test_phys_reg_round_trip_2df(x1, x2, w1, w2):
    y = model.phys_to_reg_2df(x1, x2, w1, w2)
    p = model.reg_to_phys_2df(y)
    assert p.x1 == pytest.approx(x1, rel=1e-12, abs=1e-12)
    assert p.x2 == pytest.approx(x2, rel=1e-12, abs=1e-12)
    assert p.w1 == pytest.approx(w1, rel=1e-12, abs=1e-12)
    assert p.w2 == pytest.approx(w2, rel=1e-12, abs=1e-12)


def test_reg_to_phys_4df_identity_cases():
    y = np.array([1.0, 0.0, 0.0, 0.7, 0.1, 0.2, 0.3, 0.4])
    x, _ = model.reg_to_phys_4df(y)
    assert x[0] == pytest.approx(1.0)
    assert x[1] == 0.0
    assert x[2] == 0.0
    assert x[3] == pytest.approx(0.49)


@settings(max_examples=200, deadline=None)
@given(st.lists(coord, min_size=8, max_size=8))
def test_phys_reg_round_trip_4df(vals):
    x = np.array([vals[0], vals[1], vals[2], vals[3]])
    w = np.array(vals[4:])
    if math.hypot(x[0], x[1]) < 0.1 or math.hypot(x[2], x[3]) < 0.1:
        return
    y = model.phys_to_reg_4df(x, w)
    x2, w2 = model.reg_to_phys_4df(y)
    assert np.allclose(x2, x, rtol=1e-12, atol=1e-12)
    assert np.allclose(w2, w, rtol=1e-12, atol=1e-12)


def test_reg_round_trip_4df_with_branch():
    for _ in range(100):
        y = random_states_4df(1)[0]
        x, w = model.reg_to_phys_4df(y)
        y2 = model.phys_to_reg_4df(x, w)
        # the square-root lift is a double cover: compare physical images
        x3, w3 = model.reg_to_phys_4df(y2)
        assert np.allclose(x3, x, rtol=1e-12, atol=1e-12)
        assert np.allclose(w3, w, rtol=1e-12, atol=1e-12)


def test_mass_ratio_validation():
    with pytest.raises(ValueError):
        model.check_mass_ratio(0.0)
    with pytest.raises(ValueError):
        model.check_mass_ratio(1.5)
    assert model.check_mass_ratio(1.0) == 1.0
