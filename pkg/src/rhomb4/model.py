"""Phase-space model of the rhomboidal symmetric-mass four-body problem.

Two pairs of bodies with masses (1, 1) on the x-axis and (m, m) on the
y-axis, 0 < m <= 1.  Binary collisions of each pair at the origin are
regularized by a Levi-Civita-type square-root change of coordinates plus a
time rescaling, which turns collisions into regular points of the flow.

Two formulations are covered:

* 2DF: bodies pinned to the axes.  State [Q1, Q2, P1, P2] with
  Q1^2 = x1, Q2^2 = x2, Pi = 2*Qi*wi and time rescaling dt/ds = x1*x2.
* 4DF: free planar motion of the symmetric configuration.  State
  [Q1..Q4, P1..P4] from the complex-square (Levi-Civita) generating
  function, dt/ds = (Q1^2+Q2^2)(Q3^2+Q4^2).

Trajectories of physical interest live on the zero level of the extended
phase-space Hamiltonian returned by :func:`gamma_2df` / :func:`gamma_4df`.
The invariant subspace Q2 = Q3 = P2 = P3 = 0 of the 4DF problem (called
``A`` throughout) reduces exactly to the 2DF problem via
(Q1, Q4, P1, P4) <-> (Q1, Q2, P1, P2).

Mass ratios are plain floats validated by :func:`check_mass_ratio`; states
are plain float64 arrays in the orderings above.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class DomainError(ValueError):
    """State outside the domain of the regularized Hamiltonian."""


def check_mass_ratio(m):
    if not (0.0 < m <= 1.0):
        raise ValueError(f"mass ratio must be in (0, 1], got {m}")
    return float(m)


def _symplectic_j(dof):
    n = 2 * dof
    J = np.zeros((n, n))
    J[:dof, dof:] = np.eye(dof)
    J[dof:, :dof] = -np.eye(dof)
    return J


def _build_y0():
    Y = np.zeros((8, 8))
    Y[0, 4] = 1.0
    Y[1, 2] = 1.0
    Y[2, 5] = 1.0
    Y[3, 3] = 1.0
    Y[4, 0] = -1.0
    Y[5, 6] = 1.0
    Y[6, 1] = -1.0
    Y[7, 7] = 1.0
    return Y


#: canonical symplectic matrices
J2 = _symplectic_j(2)
J4 = _symplectic_j(4)

#: time-reversing symmetry of the 2DF flow, S2^2 = I
S2 = np.diag([-1.0, 1.0, 1.0, -1.0])

#: time-reversing symmetry of the 4DF flow, built from diag(1, -1) blocks
S4 = np.diag([-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0])

#: block diag(I, -I).  Y0^{-1} S4 Y0 = LAMBDA; the Klein partner -S4
#: conjugates to -LAMBDA.
LAMBDA = np.diag([1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0])

#: fixed orthogonal symplectic seed for the quarter-period tangent flow
Y0 = _build_y0()

for _mat in (J2, J4, S2, S4, LAMBDA, Y0):
    _mat.setflags(write=False)

#: indices of the 2DF state inside a 4DF state on the invariant subspace A
A_EMBED_IDX = (0, 3, 4, 7)


@dataclass(frozen=True)
class Phys2DFState:
    """Physical 2DF coordinates, collision-tagged.

    w1/w2 are NaN when the corresponding pair sits at the origin (the
    physical momentum blows up there); the regularized momenta P1/P2 stay
    finite and are always carried along.
    """

    x1: float
    x2: float
    w1: float
    w2: float
    collision_x: bool
    collision_y: bool
    P1: float
    P2: float


def _as_state(y, dim):
    y = np.asarray(y, dtype=float)
    if y.shape != (dim,):
        raise ValueError(f"expected state of shape ({dim},), got {y.shape}")
    return y


def gamma_2df(y, m, E):
    """Extended phase-space Hamiltonian of the regularized 2DF flow.

    Zero along physical trajectories of energy E.  Raises DomainError at
    total collapse Q1 = Q2 = 0.
    """
    y = _as_state(y, 4)
    m = check_mass_ratio(m)
    _check_domain_2df(y)
    return float(_kernels.gamma2(y, m, E))


def gamma_4df(y, m, E):
    """Extended phase-space Hamiltonian of the regularized 4DF flow.

    Raises DomainError at total collapse and at unregularized collisions
    between bodies of unequal mass.
    """
    y = _as_state(y, 8)
    m = check_mass_ratio(m)
    _check_domain_4df(y)
    return float(_kernels.gamma4(y, m, E))


def _check_domain_2df(y):
    if y[0] ** 4 + y[1] ** 4 <= _kernels.DEN_FLOOR:
        raise DomainError("total collapse: Q1 = Q2 = 0")


def _check_domain_4df(y):
    r1 = y[0] ** 2 + y[1] ** 2
    r2 = y[2] ** 2 + y[3] ** 2
    h = r1 * r1 + r2 * r2
    QQ = _kernels._quartic4(y)
    if h <= _kernels.DEN_FLOOR:
        raise DomainError("total collapse: all bodies at the origin")
    # the unequal-mass pair distances are h +- 4*QQ up to a square root;
    # catch exact collisions through their rounding noise with a relative test
    if h - 4.0 * abs(QQ) <= 1e-13 * h:
        raise DomainError("collision between bodies of unequal mass")


def embed_2df_in_4df(y2):
    """Map a 2DF state onto the invariant subspace A of the 4DF problem."""
    y2 = _as_state(y2, 4)
    y4 = np.zeros(8)
    y4[list(A_EMBED_IDX)] = y2
    return y4


def restrict_4df_to_2df(y4):
    y4 = _as_state(y4, 8)
    return y4[list(A_EMBED_IDX)].copy()


def on_invariant_subspace(y4, tol=1e-12):
    y4 = _as_state(y4, 8)
    return bool(max(abs(y4[1]), abs(y4[2]), abs(y4[5]), abs(y4[6])) < tol)


def collision_momentum(pair, m):
    """Regularized momentum magnitude at a pair collision at the origin.

    pair is "mass-1" (the x-axis pair, magnitude sqrt(8)) or "mass-m"
    (the y-axis pair, magnitude sqrt(8 m^3)).
    """
    m = check_mass_ratio(m)
    if pair == "mass-1":
        return math.sqrt(8.0)
    if pair == "mass-m":
        return math.sqrt(8.0 * m ** 3)
    raise ValueError(f"pair must be 'mass-1' or 'mass-m', got {pair!r}")


def angular_momentum(y, m=None):
    """Angular momentum in regularized 4DF coordinates.

    Identically zero on the invariant subspace A.  The mass ratio is
    accepted for interface symmetry but the formula does not need it.
    """
    y = _as_state(y, 8)
    return 0.5 * (y[0] * y[5] - y[1] * y[4] + y[2] * y[7] - y[3] * y[6])


def angular_momentum_phys(x, w):
    """Angular momentum A = x1 w2 - x2 w1 + x3 w4 - x4 w3."""
    x = _as_state(x, 4)
    w = _as_state(w, 4)
    return x[0] * w[1] - x[1] * w[0] + x[2] * w[3] - x[3] * w[2]


def hamiltonian_2df(x1, x2, w1, w2, m):
    """Physical 2DF Hamiltonian (w1 = 2*xdot1, w2 = 2m*xdot2)."""
    m = check_mass_ratio(m)
    if x1 <= 0.0 or x2 <= 0.0:
        raise DomainError("physical Hamiltonian undefined at collision")
    return (0.25 * w1 ** 2 + 0.25 * w2 ** 2 / m
            - 0.5 / x1 - 0.5 * m ** 2 / x2
            - 4.0 * m / math.sqrt(x1 ** 2 + x2 ** 2))


def hamiltonian_4df(x, w, m):
    """Physical 4DF Hamiltonian K - U for the symmetric configuration."""
    x = _as_state(x, 4)
    w = _as_state(w, 4)
    m = check_mass_ratio(m)
    rx = math.hypot(x[0], x[1])
    ry = math.hypot(x[2], x[3])
    d1 = math.hypot(x[2] - x[0], x[3] - x[1])
    d2 = math.hypot(x[2] + x[0], x[3] + x[1])
    if min(rx, ry, d1, d2) <= 0.0:
        raise DomainError("physical Hamiltonian undefined at collision")
    kin = 0.25 * (w[0] ** 2 + w[1] ** 2) + 0.25 * (w[2] ** 2 + w[3] ** 2) / m
    pot = 0.5 / rx + 0.5 * m ** 2 / ry + 2.0 * m / d1 + 2.0 * m / d2
    return kin - pot


# ----------------------------------------------------------------------------
# coordinate transforms
# ----------------------------------------------------------------------------

def reg_to_phys_2df(y, collision_tol=0.0):
    """Regularized -> physical 2DF coordinates.

    xi = Qi^2, wi = Pi / (2 Qi).  At a collision (Qi = 0) the physical
    momentum is undefined; the result is collision-tagged and carries the
    finite regularized momenta instead (wi = NaN).
    """
    y = _as_state(y, 4)
    Q1, Q2, P1, P2 = y
    col_x = abs(Q1) <= collision_tol
    col_y = abs(Q2) <= collision_tol
    w1 = math.nan if col_x else P1 / (2.0 * Q1)
    w2 = math.nan if col_y else P2 / (2.0 * Q2)
    return Phys2DFState(x1=Q1 ** 2, x2=Q2 ** 2, w1=w1, w2=w2,
                        collision_x=col_x, collision_y=col_y,
                        P1=P1, P2=P2)


def phys_to_reg_2df(x1, x2, w1, w2, signs=(1.0, 1.0)):
    """Physical -> regularized 2DF coordinates with a branch choice of signs."""
    if x1 < 0.0 or x2 < 0.0:
        raise ValueError("physical positions must be nonnegative")
    Q1 = signs[0] * math.sqrt(x1)
    Q2 = signs[1] * math.sqrt(x2)
    return np.array([Q1, Q2, 2.0 * Q1 * w1, 2.0 * Q2 * w2])


def reg_to_phys_4df(y):
    """Regularized -> physical 4DF coordinates (x, w), each shape (4,).

    Positions come from the complex squares x1 + i x2 = (Q1 + i Q2)^2 and
    x4 + i x3 = (Q4 + i Q3)^2; momenta from the 2x2 linear solves of the
    generating-function transform.  Raises DomainError when a pair sits at
    the origin (momenta undefined there).
    """
    y = _as_state(y, 8)
    Q1, Q2, Q3, Q4, P1, P2, P3, P4 = y
    r1 = Q1 ** 2 + Q2 ** 2
    r2 = Q3 ** 2 + Q4 ** 2
    if r1 <= 0.0 or r2 <= 0.0:
        raise DomainError("physical momenta undefined at pair collision")
    x = np.array([Q1 ** 2 - Q2 ** 2, 2.0 * Q1 * Q2,
                  2.0 * Q3 * Q4, Q4 ** 2 - Q3 ** 2])
    w = np.array([(Q1 * P1 - Q2 * P2) / (2.0 * r1),
                  (Q2 * P1 + Q1 * P2) / (2.0 * r1),
                  (Q4 * P3 + Q3 * P4) / (2.0 * r2),
                  (-Q3 * P3 + Q4 * P4) / (2.0 * r2)])
    return x, w


def phys_to_reg_4df(x, w, branch=(1.0, 1.0)):
    """Physical -> regularized 4DF coordinates.

    The square roots Q1 + i Q2 = sqrt(x1 + i x2), Q4 + i Q3 =
    sqrt(x4 + i x3) carry a sign ambiguity; branch supplies the sign of
    each principal root.
    """
    x = _as_state(x, 4)
    w = _as_state(w, 4)
    z12 = complex(x[0], x[1])
    z43 = complex(x[3], x[2])
    q12 = branch[0] * np.sqrt(z12)
    q43 = branch[1] * np.sqrt(z43)
    Q1, Q2 = q12.real, q12.imag
    Q4, Q3 = q43.real, q43.imag
    P1 = 2.0 * w[0] * Q1 + 2.0 * w[1] * Q2
    P2 = -2.0 * w[0] * Q2 + 2.0 * w[1] * Q1
    P3 = 2.0 * w[2] * Q4 - 2.0 * w[3] * Q3
    P4 = 2.0 * w[2] * Q3 + 2.0 * w[3] * Q4
    return np.array([Q1, Q2, Q3, Q4, P1, P2, P3, P4])
