"""Poincare-section analysis of the 2DF flow at fixed energy E = -1.

The section is Sigma = {x1 = alpha * x2}, where alpha is the homographic
shape ratio: the unique root in (0, 1] of

    (1 + a^2)^3 (m a^3 - 1)^2 - 64 a^6 (1 - m)^2 = 0

so that a trajectory started with x1/x2 = alpha and velocities along the
ray keeps that ratio forever (total-collapse/ejection orbit).  On Sigma
with E = -1 the position is bounded by x1 <= r_max, giving normalized
coordinates

    r = x1 / r_max,    theta = atan(xdot1 / (alpha * xdot2)),

with the homographic orbit on the line theta = pi/4.  Seeds are lifted
back to the regularized chart, integrated there (collisions are regular
points), and successive surface crossings are recorded in (r, theta).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .integrate import IntegratorConfig, integrate
from .model import check_mass_ratio

SECTION_ENERGY = -1.0


class LiftInfeasibleError(ValueError):
    """No real velocity magnitude exists for the requested (r, theta)."""


class RootNotFoundError(RuntimeError):
    """The shape-ratio polynomial had no root bracket in (0, 1]."""


def alpha_polynomial(a, m):
    """Degree-12 polynomial whose (0, 1] root is the homographic ratio."""
    return (1.0 + a * a) ** 3 * (m * a ** 3 - 1.0) ** 2 \
        - 64.0 * a ** 6 * (1.0 - m) ** 2


def solve_alpha(m, hint=None):
    """Homographic ratio x1/x2 for mass ratio m.

    The root is unique in (0, 1] and continuous in m with alpha(1) = 1
    (returned exactly) and alpha -> 1/sqrt(3) as m -> 0.  hint selects the
    nearest root should the bracketing scan ever find several.
    """
    m = check_mass_ratio(m)
    if m == 1.0:
        return 1.0
    grid = np.linspace(1e-9, 1.0, 2001)
    vals = alpha_polynomial(grid, m)
    idx = np.where(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if idx.size == 0:
        raise RootNotFoundError(f"no sign change in (0, 1] for m={m}")
    roots = [brentq(alpha_polynomial, grid[i], grid[i + 1], args=(m,),
                    xtol=1e-15, rtol=8.9e-16) for i in idx]
    if hint is not None:
        root = min(roots, key=lambda a: abs(a - hint))
    else:
        root = max(roots)
    if abs(alpha_polynomial(root, m)) > 1e-12:
        raise RootNotFoundError(f"root residual too large at m={m}")
    return float(root)


def r_max(m, alpha):
    """Largest x1 on the section at E = -1 (zero-velocity bound)."""
    m = check_mass_ratio(m)
    return 0.5 + 0.5 * m ** 2 * alpha + 4.0 * m / math.sqrt(1.0 + 1.0 / alpha ** 2)


def lift(r, theta, m, alpha=None, rmax=None):
    """Regularized 2DF state on Sigma at E = -1 for section coords (r, theta).

    The velocity direction is split as xdot1 = rho*alpha*sin(theta),
    xdot2 = rho*cos(theta) (making theta = atan(xdot1/(alpha xdot2))
    exact) and the magnitude rho >= 0 comes from the mass-weighted kinetic
    energy xdot1^2 + m xdot2^2 = U - 1.  Raises LiftInfeasibleError when
    U - 1 < 0, which on Sigma means r > 1.
    """
    m = check_mass_ratio(m)
    if alpha is None:
        alpha = solve_alpha(m)
    if rmax is None:
        rmax = r_max(m, alpha)
    if not (0.0 < r):
        raise ValueError("need r > 0")
    x1 = r * rmax
    x2 = x1 / alpha
    U = (0.5 / x1 + 0.5 * m ** 2 / x2 + 4.0 * m / math.hypot(x1, x2))
    kinetic = U + SECTION_ENERGY
    if kinetic < 0.0:
        raise LiftInfeasibleError(f"U - 1 = {kinetic:.3e} < 0 at r={r}, "
                                  f"theta={theta}")
    rho = math.sqrt(kinetic / (alpha ** 2 * math.sin(theta) ** 2
                               + m * math.cos(theta) ** 2))
    xd1 = rho * alpha * math.sin(theta)
    xd2 = rho * math.cos(theta)
    Q1 = math.sqrt(x1)
    Q2 = math.sqrt(x2)
    return np.array([Q1, Q2, 4.0 * Q1 * xd1, 4.0 * m * Q2 * xd2])


def section_coords(y, m, alpha=None, rmax=None):
    """(r, theta) of a regularized state on Sigma.

    theta is taken in (-pi/2, pi/2] by the single-argument arctangent,
    with xdot2 = 0 mapped to +-pi/2.  Undefined (raises) if both
    velocities vanish.
    """
    m = check_mass_ratio(m)
    if alpha is None:
        alpha = solve_alpha(m)
    if rmax is None:
        rmax = r_max(m, alpha)
    Q1, Q2, P1, P2 = np.asarray(y, dtype=float)
    xd1 = P1 / (4.0 * Q1)
    xd2 = P2 / (4.0 * m * Q2)
    if xd2 == 0.0:
        if xd1 == 0.0:
            raise ValueError("section coordinates undefined at a "
                             "zero-velocity point")
        theta = math.copysign(math.pi / 2.0, xd1)
    else:
        theta = math.atan(xd1 / (alpha * xd2))
        if theta == -math.pi / 2.0:
            theta = math.pi / 2.0
    return Q1 ** 2 / rmax, theta


@dataclass(frozen=True)
class SectionConfig:
    """Grid and termination settings for section sweeps at one mass."""

    m: float
    grid_r: tuple = (9, 0.1, 0.9)
    grid_theta: tuple = (15, math.pi / 30.0, math.pi / 2.0 - math.pi / 30.0)
    max_crossings: int = 200
    guard: float = 1000.0
    s_max: float = 40000.0
    max_steps: int = 40_000_000
    refine_tol: float = 1e-12
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12

    def __post_init__(self):
        check_mass_ratio(self.m)
        if self.max_crossings < 1:
            raise ValueError("max_crossings must be >= 1")
        for count, lo, hi in (self.grid_r, self.grid_theta):
            if count < 1 or lo >= hi:
                raise ValueError("grid spec must be (count, lo, hi) "
                                 "with lo < hi")
        if not (0.0 < self.grid_r[1] and self.grid_r[2] < 1.0):
            raise ValueError("r range must lie inside (0, 1)")
        if not (0.0 < self.grid_theta[1]
                and self.grid_theta[2] < math.pi / 2.0):
            raise ValueError("theta range must lie inside (0, pi/2)")

    def r_values(self):
        return np.linspace(self.grid_r[1], self.grid_r[2], self.grid_r[0])

    def theta_values(self):
        return np.linspace(self.grid_theta[1], self.grid_theta[2],
                           self.grid_theta[0])


@dataclass
class SectionSeries:
    """Recorded crossings of one seed (the seed itself is not counted)."""

    seed: tuple
    crossings: np.ndarray          # shape (found, 2): columns r, theta
    escaped: bool
    crossings_found: int
    s_values: np.ndarray = field(default=None, repr=False)

    @property
    def r_extent(self):
        if self.crossings_found == 0:
            return 0.0
        return float(np.max(self.crossings[:, 0])
                     - np.min(self.crossings[:, 0]))


def iterate_section(seed, config, alpha=None, rmax=None):
    """Integrate one seed and record section crossings in (r, theta).

    Both crossing directions are recorded.  Escape past the guard is a
    tagged termination, not an error; hitting max_crossings is success.
    """
    cfg = config
    m = cfg.m
    if alpha is None:
        alpha = solve_alpha(m)
    if rmax is None:
        rmax = r_max(m, alpha)
    r0, th0 = seed
    y0 = lift(r0, th0, m, alpha, rmax)
    out = np.empty((cfg.max_crossings, 5))
    status, nfound, _ = _kernels.crossings2(
        y0, m, SECTION_ENERGY, alpha, cfg.max_crossings, cfg.guard,
        cfg.rel_tol, cfg.abs_tol, 1e-3, 1e-14, 0.1, cfg.refine_tol,
        cfg.s_max, cfg.max_steps, out)
    if status == _kernels.STATUS_UNDERFLOW:
        raise RuntimeError(f"step underflow while iterating seed {seed}")
    if status == _kernels.STATUS_COLLAPSE:
        raise RuntimeError(f"seed {seed} hit total collapse")
    coords = np.empty((nfound, 2))
    for i in range(nfound):
        coords[i] = section_coords(out[i, 1:5], m, alpha, rmax)
    return SectionSeries(seed=(float(r0), float(th0)), crossings=coords,
                         escaped=status == _kernels.STATUS_ESCAPED,
                         crossings_found=int(nfound),
                         s_values=out[:nfound, 0].copy())


def _worker_count():
    env = os.environ.get("RHOMB_THREADS", "")
    cap = min(4, os.cpu_count() or 1)
    if env.strip():
        cap = max(1, min(int(env), os.cpu_count() or 1))
    return cap


HOMOGRAPHIC_SKIP_TOL = 1e-9


def grid_sweep(config, alpha=None):
    """Run iterate_section over the whole grid.

    Homographic nodes (theta = pi/4, where the surface function is
    identically zero and sign changes are pure noise) and infeasible
    lifts are skipped, not failures.  Returns (series_list, skipped)
    where skipped holds (r, theta, reason) tuples; ordering is the
    row-major grid order regardless of thread scheduling.
    """
    m = config.m
    if alpha is None:
        alpha = solve_alpha(m)
    rmax = r_max(m, alpha)
    seeds = [(float(r), float(th)) for r in config.r_values()
             for th in config.theta_values()]

    tasks = []
    skipped = []
    for seed in seeds:
        if abs(seed[1] - math.pi / 4.0) < HOMOGRAPHIC_SKIP_TOL:
            skipped.append((seed[0], seed[1], "homographic"))
            continue
        try:
            lift(seed[0], seed[1], m, alpha, rmax)
        except LiftInfeasibleError:
            skipped.append((seed[0], seed[1], "infeasible"))
            continue
        tasks.append(seed)

    def run(seed):
        return iterate_section(seed, config, alpha, rmax)

    workers = _worker_count()
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(run, tasks))
    else:
        series = [run(seed) for seed in tasks]
    return series, skipped


def homographic_drift(m, r=0.5, t_max=50.0, scale_floor=0.05, config=None):
    """Largest |x1/x2 - alpha| along the homographic-ray trajectory.

    Tracks the physical clock dt/ds = x1*x2 and integrates until t_max
    physical time units have elapsed or the configuration has contracted
    below scale_floor of its initial size (the homographic orbit ends in
    total collapse, which the regularized clock never reaches).
    """
    alpha = solve_alpha(m)
    y0 = lift(r, math.pi / 4.0, m, alpha)
    cfg = config or IntegratorConfig()

    def vf(z):
        out = np.empty(5)
        _kernels.rhs2(z[:4], m, SECTION_ENERGY, out[:4])
        out[4] = z[0] ** 2 * z[1] ** 2
        return out

    z = np.append(y0, 0.0)
    size0 = math.hypot(y0[0], y0[1])
    drift = 0.0
    t_reached = 0.0
    for _ in range(100000):
        traj = integrate(vf, z, 2.0, cfg)
        ratios = traj.y[:, 0] ** 2 / traj.y[:, 1] ** 2
        drift = max(drift, float(np.max(np.abs(ratios - alpha))))
        z = traj.final
        t_reached = z[4]
        if t_reached >= t_max:
            break
        if math.hypot(z[0], z[1]) < scale_floor * size0:
            break
    return drift, t_reached


# ----------------------------------------------------------------------------
# CSV emission
# ----------------------------------------------------------------------------

CSV_HEADER = "seed_r,seed_theta,crossing_index,r,theta,escaped_flag"


def _fmt(x):
    return format(float(x), ".17g")


def write_section_csv(path, series_list):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for ser in series_list:
            esc = "1" if ser.escaped else "0"
            for idx in range(ser.crossings_found):
                row = [_fmt(ser.seed[0]), _fmt(ser.seed[1]), str(idx),
                       _fmt(ser.crossings[idx, 0]),
                       _fmt(ser.crossings[idx, 1]), esc]
                fh.write(",".join(row) + "\n")
