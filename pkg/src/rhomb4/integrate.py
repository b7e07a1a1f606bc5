"""Adaptive Runge-Kutta-Fehlberg 4(5) integration with event location.

The generic driver works with arbitrary Python vector fields and is the
reference implementation used throughout the orbit/stability machinery by
way of thin closures over the jitted kernels.  The 5th-order solution is
propagated (local extrapolation); the embedded 4(5) difference drives the
step-size control, so conserved quantities drift well below the nominal
tolerance over a period.

Events are located by sign-change bisection on integrator substeps rather
than dense-output polynomials; near collisions the regularized flow is
smooth, so nothing fancier is needed.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .model import DomainError, J2, J4

_A = ((),
      (0.25,),
      (3.0 / 32.0, 9.0 / 32.0),
      (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0),
      (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0),
      (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0))
_B5 = (16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0,
       2.0 / 55.0)
_ERR = (1.0 / 360.0, 0.0, -128.0 / 4275.0, -2197.0 / 75240.0, 1.0 / 50.0,
        2.0 / 55.0)


class StepUnderflowError(RuntimeError):
    """Step size fell below h_min without meeting the error tolerance."""


class NoEventError(RuntimeError):
    """No event sign change before the integration horizon."""


class EscapeError(RuntimeError):
    """Escape guard triggered where an endpoint state was required."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-error tolerances, step bounds and the escape guard."""

    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = 0.1
    guard: float = 1000.0
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (0.0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class EventSpec:
    """Scalar event function with a crossing direction and refine tolerance."""

    g: Callable[[np.ndarray], float]
    direction: str = "both"   # rising | falling | both
    refine_tol: float = 1e-12

    def __post_init__(self):
        if self.direction not in ("rising", "falling", "both"):
            raise ValueError(f"bad direction {self.direction!r}")
        if self.refine_tol <= 0.0:
            raise ValueError("refine_tol must be positive")

    def triggers(self, g_prev, g_new):
        if g_prev * g_new >= 0.0:
            return False
        if self.direction == "rising":
            return g_prev < 0.0
        if self.direction == "falling":
            return g_prev > 0.0
        return True


@dataclass
class Trajectory:
    """Accepted integration steps plus termination bookkeeping."""

    s: np.ndarray
    y: np.ndarray
    escaped: bool = False
    n_steps: int = 0

    @property
    def final(self):
        return self.y[-1]


def _step(vf, y, h):
    """One RKF45 trial step: returns (y5, err_vec)."""
    k = [vf(y)]
    for row in _A[1:]:
        yi = y + h * sum(a * ki for a, ki in zip(row, k))
        k.append(vf(yi))
    y5 = y + h * sum(b * ki for b, ki in zip(_B5, k) if b != 0.0)
    err = h * sum(e * ki for e, ki in zip(_ERR, k) if e != 0.0)
    return y5, err


def _err_norm(y, ynew, err, cfg):
    sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(ynew))
    with np.errstate(invalid="ignore"):
        en = float(np.max(np.abs(err) / sc))
    return 1e308 if math.isnan(en) else en


def integrate(vf, state0, s_end, config=None, checkpoints=None, guard_dim=None):
    """Integrate y' = vf(y) from s = 0 to s_end with adaptive RKF45.

    Returns a Trajectory of accepted steps.  If checkpoints is given (a
    sorted array of s values), the integrator lands on each exactly and
    the trajectory contains exactly those points plus the endpoints.
    Escape past config.guard (checked on the first guard_dim components)
    terminates early with trajectory.escaped set; that is a tagged
    success, not an error.
    """
    cfg = config or IntegratorConfig()
    y = np.array(state0, dtype=float)
    if s_end < 0.0:
        raise ValueError("forward integration only: s_end must be >= 0")
    gdim = y.shape[0] if guard_dim is None else guard_dim

    targets = [] if checkpoints is None else [float(c) for c in checkpoints]
    if any(t < 0.0 or t > s_end for t in targets):
        raise ValueError("checkpoints must lie in [0, s_end]")
    targets.append(s_end)

    ss = [0.0]
    ys = [y.copy()]
    store_all = checkpoints is None
    s = 0.0
    h = cfg.h_init
    n_steps = 0
    escaped = False
    for target in targets:
        while s < target and not escaped:
            if n_steps >= cfg.max_steps:
                raise StepUnderflowError("max step count exceeded")
            h = min(h, cfg.h_max)
            at_target = s + h >= target
            h_try = target - s if at_target else h
            ynew, err = _step(vf, y, h_try)
            en = _err_norm(y, ynew, err, cfg)
            if en <= 1.0:
                s = target if at_target else s + h_try
                y = ynew
                n_steps += 1
                if np.max(np.abs(y[:gdim])) > cfg.guard:
                    escaped = True
                if store_all or s == target or escaped:
                    ss.append(s)
                    ys.append(y.copy())
                h = h_try * min(5.0, 0.9 * en ** -0.2 if en > 0.0 else 5.0)
                h = max(h, cfg.h_min)
            else:
                h = h_try * max(0.2, 0.9 * en ** -0.2)
                if h < cfg.h_min:
                    raise StepUnderflowError(
                        f"step underflow at s={s:.6g} (h={h:.3g})")
        if escaped:
            break
    return Trajectory(s=np.array(ss), y=np.array(ys), escaped=escaped,
                      n_steps=n_steps)


def integrate_until(vf, state0, event, config=None, horizon=1e4):
    """First s* > 0 with event.g = 0 in the requested direction.

    The sign change is bracketed on integrator steps then localized by
    bisection to |ds| < event.refine_tol; the returned state comes from a
    final short integration onto s*.  Raises NoEventError past horizon.
    """
    cfg = config or IntegratorConfig()
    y = np.array(state0, dtype=float)
    s = 0.0
    h = cfg.h_init
    g_prev = float(event.g(y))
    have_prev = abs(g_prev) > 1e-13
    n_steps = 0
    while s < horizon:
        if n_steps >= cfg.max_steps:
            raise NoEventError("max step count exceeded before event")
        h = min(h, cfg.h_max, horizon - s + cfg.h_min)
        ynew, err = _step(vf, y, h)
        en = _err_norm(y, ynew, err, cfg)
        if en <= 1.0:
            g_new = float(event.g(ynew))
            if have_prev and event.triggers(g_prev, g_new):
                s_lo, s_hi = 0.0, h
                g_lo = g_prev
                y_base = y
                while s_hi - s_lo > event.refine_tol:
                    mid = 0.5 * (s_lo + s_hi)
                    y_mid = _advance_exact(vf, y_base, mid, cfg)
                    g_mid = float(event.g(y_mid))
                    if g_mid == 0.0:
                        s_lo = s_hi = mid
                        break
                    if g_lo * g_mid < 0.0:
                        s_hi = mid
                    else:
                        s_lo = mid
                        g_lo = g_mid
                s_star = s + 0.5 * (s_lo + s_hi)
                y_star = _advance_exact(vf, y_base, 0.5 * (s_lo + s_hi), cfg)
                return s_star, y_star
            if abs(g_new) > 1e-13:
                g_prev = g_new
                have_prev = True
            s += h
            y = ynew
            n_steps += 1
            h = h * min(5.0, 0.9 * en ** -0.2 if en > 0.0 else 5.0)
            h = max(h, cfg.h_min)
        else:
            h = h * max(0.2, 0.9 * en ** -0.2)
            if h < cfg.h_min:
                raise StepUnderflowError(
                    f"step underflow at s={s:.6g} (h={h:.3g})")
    raise NoEventError(f"no event before horizon s={horizon}")


def _advance_exact(vf, y, ds, cfg):
    """Adaptive advance by exactly ds (short spans during event refinement)."""
    if ds <= 0.0:
        return y.copy()
    out = y.copy()
    s = 0.0
    h = min(ds, cfg.h_init)
    while s < ds:
        at_end = s + h >= ds
        h_try = ds - s if at_end else h
        ynew, err = _step(vf, out, h_try)
        en = _err_norm(out, ynew, err, cfg)
        if en <= 1.0:
            s = ds if at_end else s + h_try
            out = ynew
            h = h_try * min(5.0, 0.9 * en ** -0.2 if en > 0.0 else 5.0)
        else:
            h = h_try * max(0.2, 0.9 * en ** -0.2)
            if h < cfg.h_min:
                raise StepUnderflowError("step underflow during refinement")
    return out


@dataclass
class VariationalResult:
    """Endpoint of a coupled base+tangent integration."""

    base: np.ndarray
    tangent: np.ndarray
    symplectic_defect: float
    n_steps: int


def integrate_variational(state0, tangent0, s_end, m, E, config=None):
    """Integrate base flow and tangent matrix as one augmented system.

    The base dimension (4 or 8) selects the flow.  A single shared
    adaptive step drives both.  The symplectic defect
    ||Y^T J Y - Y0^T J Y0||_inf at the endpoint is reported alongside.
    """
    cfg = config or IntegratorConfig()
    y0 = np.asarray(state0, dtype=float)
    Y0seed = np.asarray(tangent0, dtype=float)
    d = y0.shape[0]
    if d not in (4, 8):
        raise ValueError("base state must have dimension 4 or 8")
    if Y0seed.shape != (d, d):
        raise ValueError(f"tangent seed must be {d}x{d}")
    if abs(np.linalg.det(Y0seed)) < 1e-300:
        raise ValueError("tangent seed must be invertible")
    kind = _kernels.KIND_VAR2 if d == 4 else _kernels.KIND_VAR4

    aug0 = np.concatenate([y0, Y0seed.ravel()])
    status, _, aug, n_steps, _ = _kernels.advance(
        kind, aug0, float(m), float(E), 0.0, float(s_end),
        cfg.rel_tol, cfg.abs_tol, cfg.h_init, cfg.h_min, cfg.h_max,
        cfg.guard, cfg.max_steps, d)
    raise_on_failure(status, "variational integration")
    base = aug[:d]
    Y = aug[d:].reshape(d, d)
    Jm = J2 if d == 4 else J4
    defect = float(np.max(np.abs(Y.T @ Jm @ Y - Y0seed.T @ Jm @ Y0seed)))
    return VariationalResult(base=base, tangent=Y,
                             symplectic_defect=defect, n_steps=n_steps)


def advance_state(y0, m, E, s_end, config=None, dof=2):
    """Fast endpoint-only integration of the 2DF/4DF flow via the kernels."""
    cfg = config or IntegratorConfig()
    kind = _kernels.KIND_FLOW2 if dof == 2 else _kernels.KIND_FLOW4
    y0 = np.asarray(y0, dtype=float)
    status, _, y, _, _ = _kernels.advance(
        kind, y0, float(m), float(E), 0.0, float(s_end),
        cfg.rel_tol, cfg.abs_tol, cfg.h_init, cfg.h_min, cfg.h_max,
        cfg.guard, cfg.max_steps, y0.shape[0])
    raise_on_failure(status, "flow integration")
    return y


def raise_on_failure(status, what):
    if status == _kernels.STATUS_UNDERFLOW:
        raise StepUnderflowError(f"{what}: step underflow")
    if status == _kernels.STATUS_COLLAPSE:
        raise DomainError(f"{what}: trajectory hit a collision denominator "
                          "below the admissible floor")
    if status == _kernels.STATUS_MAXSTEPS:
        raise StepUnderflowError(f"{what}: max step count exceeded")
    if status == _kernels.STATUS_ESCAPED:
        raise EscapeError(f"{what}: escape guard triggered")
