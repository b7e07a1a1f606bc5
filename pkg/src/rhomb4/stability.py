"""Linear-stability machinery built on the quarter-period factorization.

The monodromy matrix of the 4DF orbit factors through the time-reversing
symmetry: with Y(s) the fundamental matrix seeded at the fixed orthogonal
symplectic Y0 and B = Y(T/4),

    W = Y0^{-1} S Y0 B^{-1} S B,      Y0^{-1} Y(T) = W^2,

and (W + W^{-1})/2 is block-diagonal diag(K^T, K) for a real 4x4 K whose
entries come straight from columns of B:  K[i, j] = -c_i^T S J c_{j+4}.
Stability therefore reduces to eigenvalues of K, all real here:
two trivial -1's (flow direction and angular momentum), the central-block
value lambda_block = a + d + 1, and the (4,4) entry e which carries the
in-plane (2DF) verdict.  Each K eigenvalue k in [-1, 1] is the real part
of a square root of a unit-circle characteristic multiplier, so interior
k means a stable multiplier pair and coincidences among them mean
repeated multipliers (spectral stability only).

An independent cross-check integrates the full-period 2DF monodromy with
identity seed and compares its nontrivial multiplier pair against e.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import pattern_defect_m2
from .integrate import IntegratorConfig, integrate_variational
from .model import J4, S4, Y0
from .orbit import ROOT8

#: defect ceiling past which K extraction refuses to classify
STRUCTURAL_TOL = 1e-5


class StructuralDefectError(RuntimeError):
    """K-matrix invariants violated: bad orbit or integration."""


@dataclass(frozen=True)
class KMatrix:
    """Reduced 4x4 stability matrix and its structural diagnostics."""

    full: np.ndarray
    zeta: float

    @property
    def a(self):
        return float(self.full[1, 1])

    @property
    def b(self):
        return float(self.full[1, 2])

    @property
    def c(self):
        return float(self.full[2, 1])

    @property
    def d(self):
        return float(self.full[2, 2])

    @property
    def e(self):
        return float(self.full[3, 3])

    @property
    def corner14(self):
        return float(self.full[0, 3])

    @property
    def lambda_block(self):
        """Nontrivial eigenvalue of the central 2x2 block (the other is -1)."""
        return self.a + self.d + 1.0

    @property
    def first_column_defect(self):
        return float(np.max(np.abs(self.full[:, 0] - [-1.0, 0.0, 0.0, 0.0])))

    @property
    def pattern_defect(self):
        from .dynamics import M_PATTERN
        return float(np.max(np.abs(self.full[~M_PATTERN])))

    @property
    def bc_relation_defect(self):
        """Residuals of b = (a+1) zeta / sqrt(8), c = (d+1) sqrt(8) / zeta."""
        rb = self.b - (self.a + 1.0) * self.zeta / ROOT8
        rc = self.c - (self.d + 1.0) * ROOT8 / self.zeta
        return float(max(abs(rb), abs(rc)))

    def eigenvalues(self):
        """The four (real) eigenvalues: -1, -1, lambda_block, e."""
        return np.array([-1.0, -1.0, self.lambda_block, self.e])


@dataclass(frozen=True)
class QuarterResult:
    """Fundamental matrix at the quarter period plus diagnostics."""

    B: np.ndarray
    base_end: np.ndarray
    symplectic_defect: float
    pattern_defect: float
    endpoint_defect: float


@dataclass(frozen=True)
class StabilityReport:
    m: float
    zeta: float
    E: float
    K: KMatrix
    classification: str
    classification_2df: str
    symplectic_defect: float
    pattern_defect: float

    @property
    def lambda_block(self):
        return self.K.lambda_block

    @property
    def e(self):
        return self.K.e


def quarter_matrix(orbit, config=None):
    """Integrate the 4DF variational system over a quarter period.

    The orbit is embedded in the invariant planar subspace, the tangent is
    seeded with Y0, and the endpoint must be the mass-m pair collision
    (Q4 = P1 = 0 in 4DF coordinates).
    """
    cfg = config or IntegratorConfig()
    res = integrate_variational(orbit.initial_state_4df(), Y0,
                                orbit.period / 4.0, orbit.m, orbit.E, cfg)
    endpoint = float(max(abs(res.base[3]), abs(res.base[4])))
    return QuarterResult(B=res.tangent, base_end=res.base,
                         symplectic_defect=res.symplectic_defect,
                         pattern_defect=pattern_defect_m2(res.tangent),
                         endpoint_defect=endpoint)


def compute_K(B, zeta, strict=True):
    """Extract K from quarter-period columns: K[i,j] = -c_i^T (-S) J c_{j+4}.

    The sign convention follows the Klein generator -S4 (the partner that
    conjugates to LAMBDA under Y0), for which the column formula
    reproduces the diag(K^T, K) blocks of (W + W^{-1})/2 exactly.  This
    bypasses forming W^{-1} (W may be poorly conditioned).  The structural
    invariants (first column, zero pattern, b/c relations) are verified;
    defects above STRUCTURAL_TOL raise StructuralDefectError when strict.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (8, 8):
        raise ValueError("B must be the 8x8 quarter-period matrix")
    K = B[:, :4].T @ (S4 @ J4) @ B[:, 4:]
    km = KMatrix(full=K, zeta=float(zeta))
    if strict:
        worst = max(km.first_column_defect, km.pattern_defect,
                    km.bc_relation_defect)
        if worst > STRUCTURAL_TOL:
            raise StructuralDefectError(
                f"K structure defect {worst:.2e} exceeds {STRUCTURAL_TOL:g} "
                "(bad orbit or integration)")
    return km


def symplectic_inverse(M):
    """Inverse of a symplectic matrix via -J M^T J (no linear solve)."""
    return -J4 @ M.T @ J4


def w_from_quarter(B):
    """W = Y0^{-1} S Y0 B^{-1} S B with the symplectic inverse for B."""
    return Y0.T @ S4 @ Y0 @ symplectic_inverse(B) @ S4 @ B


def half_period_w(orbit, config=None):
    """W computed independently as Y0^T Y(T/2)."""
    cfg = config or IntegratorConfig()
    res = integrate_variational(orbit.initial_state_4df(), Y0,
                                orbit.period / 2.0, orbit.m, orbit.E, cfg)
    return Y0.T @ res.tangent


def classify(K, tol_coincidence=1e-6, boundary_band=1e-8):
    """Stability labels from the nontrivial K eigenvalues.

    4DF linear stability needs both lambda_block and e strictly inside
    (-1, 1) with no coincidence among {lambda_block, e, -e, 0, +-1} within
    tol_coincidence: interior coincidences mean repeated unit-circle
    multipliers, hence spectral stability only.  Values within
    boundary_band of +-1 are flagged boundary-indeterminate, never
    silently stable.  The 2DF verdict reads e alone.
    """
    lam = K.lambda_block
    e = K.e
    cls4 = _classify_pair(lam, e, tol_coincidence, boundary_band)
    cls2 = _classify_single(e, tol_coincidence, boundary_band)
    return cls4, cls2


def _classify_single(e, tol, band):
    if abs(abs(e) - 1.0) <= band:
        return "boundary-indeterminate"
    if abs(e) > 1.0:
        return "unstable"
    if abs(e) < tol:
        return "spectrally-stable-only"
    return "linearly-stable"


def _classify_pair(lam, e, tol, band):
    if abs(abs(lam) - 1.0) <= band or abs(abs(e) - 1.0) <= band:
        return "boundary-indeterminate"
    if abs(lam) > 1.0 or abs(e) > 1.0:
        return "unstable"
    scale = max(1.0, abs(lam), abs(e))
    coincident = (abs(lam - e) < tol * scale
                  or abs(lam + e) < tol * scale
                  or abs(lam) < tol
                  or abs(e) < tol
                  or abs(abs(lam) - 1.0) < tol
                  or abs(abs(e) - 1.0) < tol)
    return "spectrally-stable-only" if coincident else "linearly-stable"


def stability_report(orbit, config=None, tol_coincidence=1e-6):
    q = quarter_matrix(orbit, config)
    K = compute_K(q.B, orbit.zeta)
    cls4, cls2 = classify(K, tol_coincidence)
    return StabilityReport(m=orbit.m, zeta=orbit.zeta, E=orbit.E, K=K,
                           classification=cls4, classification_2df=cls2,
                           symplectic_defect=q.symplectic_defect,
                           pattern_defect=q.pattern_defect)


def sweep(orbits, config=None, tol_coincidence=1e-6):
    """Per-orbit stability reports; failures are recorded, not fatal.

    Returns (reports, errors) where errors is a list of (m, message).
    """
    reports = []
    errors = []
    for orb in orbits:
        try:
            reports.append(stability_report(orb, config, tol_coincidence))
        except Exception as exc:  # noqa: BLE001 - per-row error capture
            errors.append((orb.m, f"{type(exc).__name__}: {exc}"))
    return reports, errors


def monodromy_oracle_2df(orbit, config=None):
    """Eigenvalues of the full-period 2DF monodromy with identity seed.

    Independent check of the e-based 2DF verdict: e lies in (-1, 1) iff
    the nontrivial multiplier pair sits on the unit circle.
    """
    cfg = config or IntegratorConfig()
    res = integrate_variational(orbit.initial_state(), np.eye(4),
                                orbit.period, orbit.m, orbit.E, cfg)
    X_T = res.tangent
    return np.linalg.eigvals(X_T), X_T


def nontrivial_multipliers(eigvals):
    """Drop the two trivial unit multipliers (those nearest 1)."""
    order = np.argsort(np.abs(eigvals - 1.0))
    return eigvals[order][2:]


def verdict_from_multipliers(eigvals, circle_tol=1e-5):
    """True iff the nontrivial pair lies on the unit circle (2DF stable)."""
    pair = nontrivial_multipliers(eigvals)
    return bool(np.all(np.abs(np.abs(pair) - 1.0) < circle_tol))


# ----------------------------------------------------------------------------
# CSV emission
# ----------------------------------------------------------------------------

CSV_HEADER = ("m,zeta,E,a,b,c,d,e,corner14,lambda_block,classification,"
              "symplectic_defect,pattern_defect")


def _fmt(x):
    return format(float(x), ".17g")


def report_csv_row(r):
    vals = [r.m, r.zeta, r.E, r.K.a, r.K.b, r.K.c, r.K.d, r.K.e,
            r.K.corner14, r.lambda_block]
    return ",".join([_fmt(v) for v in vals]
                    + [r.classification,
                       _fmt(r.symplectic_defect), _fmt(r.pattern_defect)])


def write_stability_csv(path, reports):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in reports:
            fh.write(report_csv_row(r) + "\n")


def stable_window(reports):
    """Largest run of linearly-stable masses and the lambda_block sign
    change bracket, from a sweep sorted by m."""
    rs = sorted(reports, key=lambda r: r.m)
    stable = [r.m for r in rs if r.classification == "linearly-stable"]
    window = (min(stable), max(stable)) if stable else None
    bracket = None
    for lo, hi in zip(rs, rs[1:]):
        if lo.lambda_block * hi.lambda_block < 0.0:
            bracket = (lo.m, hi.m)
            break
    return window, bracket
