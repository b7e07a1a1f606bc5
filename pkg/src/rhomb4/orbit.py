"""Periodic-orbit determination for the regularized 2DF flow.

Two independent routes produce the same orbit and cross-validate each
other:

* :func:`fit_orbit` -- model each coordinate by truncated odd-harmonic
  trigonometric polynomials, minimize the integrated squared defect of the
  equations of motion over the coefficients at fixed energy, and adjust E
  by a secant iteration until a true integration from the model's initial
  collision state closes up over one period.
* :func:`shooting_oracle` -- two-unknown Newton iteration on the collision
  amplitude zeta and the energy E, enforcing the quarter-period collision
  conditions Q2 = P1 = 0 at s = pi/2.

All orbits are normalized to period 2*pi (the scaling freedom of the
regularized flow allows this), so the initial state is always
(0, zeta, sqrt(8), 0): the mass-1 pair at collision, the mass-m pair at
maximum amplitude with zero momentum.  :func:`continue_in_mass` marches
the family in the mass ratio by seeding each fit with its neighbor.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from . import _kernels
from .integrate import IntegratorConfig, advance_state
from .model import DomainError, check_mass_ratio

ROOT8 = math.sqrt(8.0)

#: default harmonic count of the trig model (see the decisions notes: 12 is
#: too few to pin the collision amplitude below the period-defect budget)
DEFAULT_HARMONICS = 28

#: default quadrature node count for the defect functional
DEFAULT_NODES = 512


class NonConvergenceError(RuntimeError):
    """Orbit solve failed; carries the best iterate and its history."""

    def __init__(self, msg, best=None, history=None):
        super().__init__(msg)
        self.best = best
        self.history = history or []


class BasinError(NonConvergenceError):
    """Residual increased from the start: the guess was outside the basin."""


@dataclass(frozen=True)
class TrigModel:
    """Truncated odd-harmonic model of one 2*pi-periodic orbit.

    Q1 ~ sum a_i sin((2i+1) s)          (odd about s = 0)
    Q2 ~ sum b_i sin((2i+1)(s + pi/2))  (even)
    P1 ~ sum c_i sin((2i+1)(s - pi/2))  (even)
    P2 ~ sum d_i sin((2i+1) s)          (odd)

    The time shifts build the orbit's time-reversal symmetries and the
    zero-momentum collision conditions directly into the basis.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for arr in (self.a, self.b, self.c, self.d):
            if arr.shape != self.a.shape or arr.ndim != 1:
                raise ValueError("coefficient arrays must share one shape")

    @property
    def n(self):
        return self.a.shape[0] - 1

    @property
    def harmonics(self):
        return 2 * np.arange(self.n + 1) + 1

    def eval(self, s):
        """Model state at s: shape (4,) for scalar s, else (len(s), 4)."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        k = self.harmonics
        sin_b = np.sin(np.outer(s_arr, k))
        sgn = (-1.0) ** np.arange(self.n + 1)
        cos_b = np.cos(np.outer(s_arr, k)) * sgn
        out = np.stack([sin_b @ self.a, cos_b @ self.b,
                        -(cos_b @ self.c), sin_b @ self.d], axis=-1)
        return out[0] if np.isscalar(s) or np.ndim(s) == 0 else out

    def eval_deriv(self, s):
        """Analytic s-derivative of the model state."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        k = self.harmonics
        dsin = np.cos(np.outer(s_arr, k)) * k
        sgn = (-1.0) ** np.arange(self.n + 1)
        dcos = -np.sin(np.outer(s_arr, k)) * k * sgn
        out = np.stack([dsin @ self.a, dcos @ self.b,
                        -(dcos @ self.c), dsin @ self.d], axis=-1)
        return out[0] if np.isscalar(s) or np.ndim(s) == 0 else out

    @property
    def zeta_model(self):
        """Q2(0), the mass-m pair amplitude at the reference collision."""
        return float(np.sum(self.b * (-1.0) ** np.arange(self.n + 1)))

    @property
    def zeta1_model(self):
        """Q1(pi/2), the mass-1 pair amplitude at the other collision."""
        return float(np.sum(self.a * (-1.0) ** np.arange(self.n + 1)))

    def coefficient_decay(self, index=12):
        """max |coefficient| at the given index over all four families,
        relative to the leading one; diagnostic for sufficient harmonics."""
        stack = np.abs(np.vstack([self.a, self.b, self.c, self.d]))
        lead = np.max(stack[:, 0])
        if index > self.n:
            index = self.n
        return float(np.max(stack[:, index]) / lead)

    def as_theta(self):
        return np.concatenate([self.a, self.b, self.c, self.d])

    @classmethod
    def from_theta(cls, theta, n):
        n1 = n + 1
        if theta.shape != (4 * n1,):
            raise ValueError("theta length must be 4*(n+1)")
        return cls(a=theta[:n1].copy(), b=theta[n1:2 * n1].copy(),
                   c=theta[2 * n1:3 * n1].copy(), d=theta[3 * n1:].copy())


@dataclass(frozen=True)
class OrbitSolution:
    """Converged periodic-orbit record, normalized to period 2*pi/scale."""

    m: float
    zeta: float
    E: float
    model: TrigModel
    period_residual: float
    zeta1: float
    scale: float = 1.0

    @property
    def period(self):
        return 2.0 * math.pi / self.scale

    def initial_state(self):
        """Reference collision state (0, zeta, sqrt(8), 0)."""
        return np.array([0.0, self.zeta, ROOT8, 0.0])

    def initial_state_4df(self):
        """The same state embedded in the invariant planar subspace."""
        return np.array([0.0, 0.0, 0.0, self.zeta, ROOT8, 0.0, 0.0, 0.0])

    def eval(self, s):
        """Orbit state at time s from the model, honoring the rescaling."""
        base = self.model.eval(np.asarray(s) * self.scale)
        out = np.array(base, dtype=float)
        out[..., 0] *= self.scale
        out[..., 1] *= self.scale
        return out

    def __post_init__(self):
        if self.zeta <= 0.0:
            raise ValueError("collision amplitude zeta must be positive")
        if self.E >= 0.0:
            raise ValueError("orbit energy must be negative")


# ----------------------------------------------------------------------------
# quadrature basis (cached per (n, nodes))
# ----------------------------------------------------------------------------

class _Quadrature:
    def __init__(self, n, nodes):
        self.n = n
        self.nodes = nodes
        s = np.arange(nodes) * 2.0 * math.pi / nodes
        k = 2 * np.arange(n + 1) + 1
        sgn = (-1.0) ** np.arange(n + 1)
        self.sin_b = np.sin(np.outer(s, k))
        self.cos_b = np.cos(np.outer(s, k)) * sgn
        self.dsin = np.cos(np.outer(s, k)) * k
        self.dcos = -np.sin(np.outer(s, k)) * k * sgn
        self.weight = math.sqrt(2.0 * math.pi / nodes)

    def states(self, theta):
        n1 = self.n + 1
        a, b = theta[:n1], theta[n1:2 * n1]
        c, d = theta[2 * n1:3 * n1], theta[3 * n1:]
        Y = np.empty((self.nodes, 4))
        Y[:, 0] = self.sin_b @ a
        Y[:, 1] = self.cos_b @ b
        Y[:, 2] = -(self.cos_b @ c)
        Y[:, 3] = self.sin_b @ d
        dY = np.empty((self.nodes, 4))
        dY[:, 0] = self.dsin @ a
        dY[:, 1] = self.dcos @ b
        dY[:, 2] = -(self.dcos @ c)
        dY[:, 3] = self.dsin @ d
        return Y, dY


_QUAD_CACHE = {}


def _quadrature(n, nodes):
    key = (n, nodes)
    if key not in _QUAD_CACHE:
        _QUAD_CACHE[key] = _Quadrature(n, nodes)
    return _QUAD_CACHE[key]


def _residual_vector(theta, quad, m, E):
    Y, dY = quad.states(theta)
    if np.min(Y[:, 0] ** 4 + Y[:, 1] ** 4) <= _kernels.DEN_FLOOR:
        raise DomainError("model state hits total collapse at a "
                          "quadrature node")
    F = np.empty_like(Y)
    _kernels.rhs2_batch(Y, m, E, F)
    return ((dY - F) * quad.weight).ravel()


def residual(model, m, E, nodes=DEFAULT_NODES):
    """Integrated squared defect of the equations of motion on the model.

    Composite trapezoid on a uniform grid, which is spectrally accurate
    for this periodic integrand; the value is what the inner optimizer
    minimizes (as a per-node vector).
    """
    m = check_mass_ratio(m)
    quad = _quadrature(model.n, nodes)
    r = _residual_vector(model.as_theta(), quad, m, E)
    return float(np.dot(r, r))


# ----------------------------------------------------------------------------
# shooting oracle
# ----------------------------------------------------------------------------

def _quarter_conditions(zeta, E, m, cfg):
    y0 = np.array([0.0, zeta, ROOT8, 0.0])
    y = advance_state(y0, m, E, math.pi / 2.0, cfg)
    return np.array([y[1], y[2]])


def _newton_polish(zeta, E, m, cfg, tol=1e-12, max_iter=40):
    history = []
    for _ in range(max_iter):
        f = _quarter_conditions(zeta, E, m, cfg)
        history.append((zeta, E, float(np.max(np.abs(f)))))
        if np.max(np.abs(f)) < tol:
            return zeta, E, history
        hz = 1e-7 * max(1.0, abs(zeta))
        hE = 1e-7 * max(1.0, abs(E))
        J = np.empty((2, 2))
        J[:, 0] = (_quarter_conditions(zeta + hz, E, m, cfg)
                   - _quarter_conditions(zeta - hz, E, m, cfg)) / (2.0 * hz)
        J[:, 1] = (_quarter_conditions(zeta, E + hE, m, cfg)
                   - _quarter_conditions(zeta, E - hE, m, cfg)) / (2.0 * hE)
        try:
            dz, dE = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"singular shooting Jacobian at "
                                      f"m={m}", best=(zeta, E),
                                      history=history) from exc
        # keep the iterate physical, damping if a full step leaves the domain
        lam = 1.0
        while lam > 1e-6 and (zeta + lam * dz <= 0.0 or E + lam * dE >= 0.0):
            lam *= 0.5
        zeta += lam * dz
        E += lam * dE
    raise NonConvergenceError(f"shooting Newton did not converge at m={m}",
                              best=(zeta, E), history=history)


def _bootstrap_m1(cfg):
    """Coarse scan over zeta in [1, 3], E in [-3, -0.1] for sign-change
    cells of the quarter-period conditions, then Newton from each."""
    zs = np.linspace(1.0, 3.0, 11)
    Es = np.linspace(-3.0, -0.1, 11)
    F = {}
    for z in zs:
        for Ev in Es:
            try:
                F[(z, Ev)] = _quarter_conditions(z, Ev, 1.0, cfg)
            except Exception:
                F[(z, Ev)] = None
    cells = []
    for i in range(len(zs) - 1):
        for j in range(len(Es) - 1):
            corners = [F[(zs[i], Es[j])], F[(zs[i + 1], Es[j])],
                       F[(zs[i], Es[j + 1])], F[(zs[i + 1], Es[j + 1])]]
            if any(c is None for c in corners):
                continue
            if (len({np.sign(c[0]) for c in corners}) > 1
                    and len({np.sign(c[1]) for c in corners}) > 1):
                cells.append((0.5 * (zs[i] + zs[i + 1]),
                              0.5 * (Es[j] + Es[j + 1])))
    if not cells:
        best = min((k for k in F if F[k] is not None),
                   key=lambda k: float(np.hypot(*F[k])))
        cells = [best]
    last_exc = None
    for z0, E0 in cells:
        try:
            return _newton_polish(z0, E0, 1.0, cfg)[:2]
        except NonConvergenceError as exc:
            last_exc = exc
    raise NonConvergenceError("bootstrap scan found no converging cell "
                              "at m=1") from last_exc


def project_model(m, zeta, E, n=DEFAULT_HARMONICS, nodes=DEFAULT_NODES,
                  config=None):
    """Least-squares trig coefficients of the integrated orbit through
    (0, zeta, sqrt(8), 0): the standard curve-fit used to seed the model."""
    cfg = config or IntegratorConfig()
    quad = _quadrature(n, nodes)
    s = np.arange(nodes) * 2.0 * math.pi / nodes
    Y = np.empty((nodes, 4))
    Y[0] = np.array([0.0, zeta, ROOT8, 0.0])
    for j in range(1, nodes):
        Y[j] = advance_state(Y[j - 1], m, E, s[j] - s[j - 1], cfg)
    a = np.linalg.lstsq(quad.sin_b, Y[:, 0], rcond=None)[0]
    b = np.linalg.lstsq(quad.cos_b, Y[:, 1], rcond=None)[0]
    c = np.linalg.lstsq(-quad.cos_b, Y[:, 2], rcond=None)[0]
    d = np.linalg.lstsq(quad.sin_b, Y[:, 3], rcond=None)[0]
    return TrigModel(a=a, b=b, c=c, d=d)


def _period_residual(zeta, m, E, cfg):
    y0 = np.array([0.0, zeta, ROOT8, 0.0])
    yT = advance_state(y0, m, E, 2.0 * math.pi, cfg)
    return float(np.max(np.abs(yT - y0)))


def shooting_oracle(m, zeta_guess=None, E_guess=None, n=DEFAULT_HARMONICS,
                    tol=1e-12, config=None):
    """Independent orbit determination by quarter-period shooting.

    Newton iteration on (zeta, E): integrate from (0, zeta, sqrt(8), 0) and
    require Q2 = P1 = 0 at s = pi/2; the time-reversal symmetries then
    close the orbit over 2*pi.  Without a guess the m = 1 seed comes from
    a coarse grid scan and the solution is continued down to m.
    """
    m = check_mass_ratio(m)
    cfg = config or IntegratorConfig()
    if zeta_guess is None or E_guess is None:
        zeta, E = _bootstrap_m1(cfg)
        m_cur = 1.0
        while abs(m_cur - m) > 1e-13:
            m_cur = max(m, m_cur - 0.05)
            zeta, E, _ = _newton_polish(zeta, E, m_cur, cfg, tol=tol)
    else:
        zeta, E, _ = _newton_polish(float(zeta_guess), float(E_guess), m,
                                    cfg, tol=tol)
    model = project_model(m, zeta, E, n=n, config=cfg)
    return OrbitSolution(m=m, zeta=zeta, E=E, model=model,
                         period_residual=_period_residual(zeta, m, E, cfg),
                         zeta1=model.zeta1_model)


# ----------------------------------------------------------------------------
# trig-polynomial fit (the primary method)
# ----------------------------------------------------------------------------

def _fit_coefficients(theta0, quad, m, E):
    r0 = _residual_vector(theta0, quad, m, E)
    sol = least_squares(_residual_vector, theta0, args=(quad, m, E),
                        method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=40000)
    if sol.cost > 0.5 * float(np.dot(r0, r0)) + 1e-12 and sol.nfev > 1:
        raise BasinError(f"inner fit increased the residual at m={m}, "
                         f"E={E}", best=sol.x)
    return sol.x, float(sol.cost)


def _signed_defect(zeta, m, E, cfg):
    # Q1 is odd about the reference collision with Q1'(0) != 0, so its
    # one-period defect is linear and signed in the phase slip (P1 and Q2
    # are even: their defects are quadratic and cannot be root-found)
    y0 = np.array([0.0, zeta, ROOT8, 0.0])
    yT = advance_state(y0, m, E, 2.0 * math.pi, cfg)
    return float(yT[0] - y0[0]), float(np.max(np.abs(yT - y0)))


def fit_orbit(m, E_guess, model_guess, nodes=DEFAULT_NODES,
              secant_tol=1e-10, max_outer=30, config=None):
    """Orbit determination by residual minimization plus energy root-find.

    Inner loop: Levenberg-Marquardt least squares on the per-node defect
    of the equations of motion over the trig coefficients at fixed E.
    Outer loop: secant iteration on E driving the signed one-period defect
    of a true integration from the model's initial collision state to
    zero.  Raises NonConvergenceError (with the best iterate attached) if
    the secant stalls above tolerance.
    """
    m = check_mass_ratio(m)
    cfg = config or IntegratorConfig()
    quad = _quadrature(model_guess.n, nodes)
    theta = model_guess.as_theta()
    E = float(E_guess)
    E_prev = D_prev = None
    best = None
    history = []
    for _ in range(max_outer):
        theta, cost = _fit_coefficients(theta, quad, m, E)
        zeta = TrigModel.from_theta(theta, quad.n).zeta_model
        D, full = _signed_defect(zeta, m, E, cfg)
        history.append((E, D, full))
        if best is None or abs(D) < best[0]:
            best = (abs(D), theta.copy(), E, full, cost)
        if abs(D) < secant_tol:
            break
        if E_prev is None or D == D_prev:
            E_prev, D_prev = E, D
            E = E * (1.0 + 1e-5)
        else:
            E_next = E - D * (E - E_prev) / (D - D_prev)
            E_prev, D_prev = E, D
            E = E_next
            if E >= 0.0:
                raise NonConvergenceError(
                    f"secant left the bound-energy range at m={m}",
                    best=best, history=history)
    else:
        if best[0] > 1e-8:
            raise NonConvergenceError(
                f"energy secant stalled at |defect|={best[0]:.2e} for m={m}",
                best=best, history=history)
    _, theta, E, full, cost = best
    model = TrigModel.from_theta(theta, quad.n)
    return OrbitSolution(m=m, zeta=model.zeta_model, E=E, model=model,
                         period_residual=full, zeta1=model.zeta1_model)


def find_orbit(m, seed=None, n=DEFAULT_HARMONICS, config=None):
    """Full pipeline: shooting bootstrap (or a seed solution) then trig fit."""
    if seed is None:
        shoot = shooting_oracle(m, n=n, config=config)
        return fit_orbit(m, shoot.E, shoot.model, config=config)
    guess = seed.model
    if seed.model.n != n:
        guess = project_model(seed.m, seed.zeta, seed.E, n=n, config=config)
    if abs(seed.m - m) < 1e-13:
        return fit_orbit(m, seed.E, guess, config=config)
    sols = continue_in_mass(seed.m, m, 0.02 if m < seed.m else -0.02,
                            start=seed, n=n, config=config)
    return sols[-1]


def continue_in_mass(m_start, m_end, dm, start=None, n=DEFAULT_HARMONICS,
                     dm_min=1e-4, config=None, collect=True):
    """Step-down (or step-up) continuation of the orbit family in m.

    Seeds each fit with the previous converged solution, halving the step
    on failure down to dm_min.  Returns the list of converged solutions
    (including the starting one); stops with partial results only if the
    step floor is reached.
    """
    check_mass_ratio(m_start)
    check_mass_ratio(m_end)
    dm = abs(dm) * (1.0 if m_end >= m_start else -1.0)
    if start is None:
        start = find_orbit(m_start, n=n, config=config)
    sols = [start]
    if m_start == m_end:
        return sols
    if dm == 0.0:
        raise ValueError("dm must be nonzero for a real sweep")
    m_cur = m_start
    cur = start
    step = dm
    while (m_end - m_cur) * np.sign(dm) > 1e-13:
        m_next = m_cur + step
        if (m_next - m_end) * np.sign(dm) > 0.0:
            m_next = m_end
        try:
            nxt = fit_orbit(m_next, cur.E, cur.model, config=config)
        except (NonConvergenceError, DomainError):
            if abs(step) / 2.0 < dm_min:
                raise NonConvergenceError(
                    f"continuation stalled at m={m_cur} (dm floor reached)",
                    best=sols)
            step /= 2.0
            continue
        m_cur = m_next
        cur = nxt
        if collect or m_cur == m_end:
            sols.append(nxt)
        step = dm
    return sols


def rescale_solution(orbit, eps):
    """Scale positions by eps, time by 1/eps, energy by 1/eps^2.

    The rescaled trajectory solves the same equations of motion with
    period 2*pi/(scale*eps); linear stability is unchanged.
    """
    if eps <= 0.0:
        raise ValueError("scaling factor must be positive")
    if eps == 1.0:
        return orbit
    cfg = IntegratorConfig()
    scale = orbit.scale * eps
    zeta = orbit.zeta * eps
    E = orbit.E / eps ** 2
    y0 = np.array([0.0, zeta, ROOT8, 0.0])
    yT = advance_state(y0, orbit.m, E, 2.0 * math.pi / scale, cfg)
    return replace(orbit, zeta=zeta, E=E, scale=scale,
                   zeta1=orbit.zeta1 * eps,
                   period_residual=float(np.max(np.abs(yT - y0))))


# ----------------------------------------------------------------------------
# orbit store: line-delimited key=value records, newest record wins per m
# ----------------------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def orbit_record(sol):
    """One plain-text store line for a converged (unit-scale) solution."""
    if sol.scale != 1.0:
        raise ValueError("only 2*pi-normalized orbits belong in the store")
    parts = [f"m={_fmt(sol.m)}", f"zeta={_fmt(sol.zeta)}", f"E={_fmt(sol.E)}",
             f"n={sol.model.n}",
             "a=" + ",".join(_fmt(v) for v in sol.model.a),
             "b=" + ",".join(_fmt(v) for v in sol.model.b),
             "c=" + ",".join(_fmt(v) for v in sol.model.c),
             "d=" + ",".join(_fmt(v) for v in sol.model.d),
             f"period_residual={_fmt(sol.period_residual)}"]
    return " ".join(parts)


def parse_orbit_record(line):
    fields = {}
    for token in line.split():
        key, _, value = token.partition("=")
        if not _:
            raise ValueError(f"malformed store token {token!r}")
        fields[key] = value
    n = int(fields["n"])
    coeffs = {}
    for key in "abcd":
        vals = np.array([float(v) for v in fields[key].split(",")])
        if vals.shape != (n + 1,):
            raise ValueError(f"coefficient family {key} has wrong length")
        coeffs[key] = vals
    model = TrigModel(**coeffs)
    return OrbitSolution(m=float(fields["m"]), zeta=float(fields["zeta"]),
                         E=float(fields["E"]), model=model,
                         period_residual=float(fields["period_residual"]),
                         zeta1=model.zeta1_model)


def save_orbits(path, solutions, append=True):
    mode = "a" if append else "w"
    with open(path, mode, encoding="ascii") as fh:
        for sol in solutions:
            fh.write(orbit_record(sol) + "\n")


def load_orbits(path):
    """Read the store; the newest record wins for each mass ratio."""
    by_m = {}
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            sol = parse_orbit_record(line)
            by_m[sol.m] = sol
    return by_m


def nearest_orbit(store, m):
    """Stored solution with mass ratio closest to m (continuation seed)."""
    if not store:
        raise ValueError("orbit store is empty")
    key = min(store, key=lambda mm: abs(mm - m))
    return store[key]
