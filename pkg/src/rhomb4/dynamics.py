"""Vector fields and variational (linearized) dynamics for both flows.

The flows are Hamiltonian, z' = J grad(state), with the analytic gradient
and Hessian implemented in closed form (finite-difference versions live in
the test suite as oracles only; the variational system is the hot loop and
noisy FD Hessians would leak into the stability eigenvalues).

The module also houses the checkerboard zero-structure used by the
stability reduction: 4x4 matrices whose only nonzero entries sit at the
corners+center pattern (:data:`M_PATTERN`) and 8x8 matrices whose four
4x4 blocks all conform (:data:`M2_PATTERN`).  Both sets are closed under
multiplication, the structure matrices J, S4, Y0 conform, and the Hessian
conforms along the planar invariant subspace A, which is what decouples
in-plane from transverse perturbations.
"""

import numpy as np

from . import _kernels
from .model import (J2, J4, _as_state, _check_domain_2df, _check_domain_4df,
                    check_mass_ratio)


def vf_2df(y, m, E):
    """Right-hand side of the regularized 2DF equations of motion."""
    y = _as_state(y, 4)
    m = check_mass_ratio(m)
    _check_domain_2df(y)
    out = np.empty(4)
    _kernels.rhs2(y, m, E, out)
    return out


def grad_gamma_2df(y, m, E):
    y = _as_state(y, 4)
    m = check_mass_ratio(m)
    _check_domain_2df(y)
    out = np.empty(4)
    _kernels.grad2(y, m, E, out)
    return out


def hess_gamma_2df(y, m, E):
    y = _as_state(y, 4)
    m = check_mass_ratio(m)
    _check_domain_2df(y)
    out = np.empty((4, 4))
    _kernels.hess2(y, m, E, out)
    return out


def vf_4df(y, m, E):
    """Right-hand side of the regularized 4DF flow, J * grad_gamma_4df."""
    y = _as_state(y, 8)
    m = check_mass_ratio(m)
    _check_domain_4df(y)
    out = np.empty(8)
    _kernels.rhs4(y, m, E, out)
    return out


def grad_gamma_4df(y, m, E):
    """Analytic gradient of the regularized 4DF Hamiltonian."""
    y = _as_state(y, 8)
    m = check_mass_ratio(m)
    _check_domain_4df(y)
    out = np.empty(8)
    _kernels.grad4(y, m, E, out)
    return out


def hess_gamma_4df(y, m, E):
    """Analytic Hessian of the regularized 4DF Hamiltonian (symmetric 8x8)."""
    y = _as_state(y, 8)
    m = check_mass_ratio(m)
    _check_domain_4df(y)
    out = np.empty((8, 8))
    _kernels.hess4(y, m, E, out)
    return out


def variational_rhs(y, tangent, m, E):
    """Time derivative of (base, tangent) under the linearized flow.

    The base state evolves by the flow; the tangent matrix (columns are
    linearized solutions) evolves by J * Hess(base) * tangent.  The base
    dimension (4 or 8) selects the flow.
    """
    y = np.asarray(y, dtype=float)
    tangent = np.asarray(tangent, dtype=float)
    if y.shape == (4,):
        dy = vf_2df(y, m, E)
        H = hess_gamma_2df(y, m, E)
        return dy, J2 @ H @ tangent
    if y.shape == (8,):
        dy = vf_4df(y, m, E)
        H = hess_gamma_4df(y, m, E)
        return dy, J4 @ H @ tangent
    raise ValueError(f"base state must have shape (4,) or (8,), got {y.shape}")


# ----------------------------------------------------------------------------
# block zero-patterns
# ----------------------------------------------------------------------------

def _build_m_pattern():
    mask = np.zeros((4, 4), dtype=bool)
    for i, j in ((0, 0), (0, 3), (3, 0), (3, 3), (1, 1), (1, 2), (2, 1), (2, 2)):
        mask[i, j] = True
    return mask


#: allowed nonzero positions of the 4x4 corners+center pattern
M_PATTERN = _build_m_pattern()

#: allowed nonzero positions of the 8x8 blockwise pattern
M2_PATTERN = np.tile(M_PATTERN, (2, 2))

M_PATTERN.setflags(write=False)
M2_PATTERN.setflags(write=False)


def _hess_display_masks():
    """Zero structure of the 4DF Hessian, row/col order (Q1..Q4, P1..P4).

    '0' entries vanish identically, 'a' entries vanish on the invariant
    subspace A (Q2 = Q3 = P2 = P3 = 0), '*' entries are generically
    nonzero.
    """
    rows = ["*aa*00a*",
            "a**a00aa",
            "a**aaa00",
            "*aa**a00",
            "00a**000",
            "00aa0*00",
            "aa0000*0",
            "*a00000*"]
    zero = np.array([[ch == "0" for ch in r] for r in rows])
    on_a = np.array([[ch in "0a" for ch in r] for r in rows])
    return zero, ~zero & on_a


HESS4_ALWAYS_ZERO, HESS4_ZERO_ON_A = _hess_display_masks()
HESS4_ALWAYS_ZERO.setflags(write=False)
HESS4_ZERO_ON_A.setflags(write=False)


def in_pattern_m2(M, tol=1e-10):
    """True iff every entry outside the 8x8 block pattern has |entry| < tol."""
    M = np.asarray(M, dtype=float)
    if M.shape != (8, 8):
        raise ValueError(f"expected an 8x8 matrix, got {M.shape}")
    return bool(np.all(np.abs(M[~M2_PATTERN]) < tol))


def in_pattern_m(M, tol=1e-10):
    """True iff every entry outside the 4x4 corners+center pattern is < tol."""
    M = np.asarray(M, dtype=float)
    if M.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {M.shape}")
    return bool(np.all(np.abs(M[~M_PATTERN]) < tol))


def pattern_defect_m2(M):
    """Largest magnitude among entries that the block pattern forbids."""
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M[~M2_PATTERN])))
