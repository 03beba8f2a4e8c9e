"""Deterministic Backlund flows on the iso-spectral manifold.

The rewritten evolution equations are ``u' = lam`` and ``x' = lam + b(x, u)``,
started on the critical-point curve ``u = u_lam(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import systems as sy
from .errors import DomainError, StepError
from .systems import Kind, PhasePoint, SystemSpec

LAMBDA_ZERO = 1e-14


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    spec: SystemSpec
    lam: float

    def __post_init__(self):
        if not (len(self.times) == len(self.xs) == len(self.us)):
            raise ValueError("times, xs and us must have equal length")
        for arr in (self.times, self.xs, self.us):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def states(self) -> list[PhasePoint]:
        return [PhasePoint(float(x), float(u)) for x, u in zip(self.xs, self.us)]


def _check_start(spec: SystemSpec, lam: float, x0: float):
    sy.check_x(spec, x0)
    if spec.kind is Kind.HYPERBOLIC_II:
        sy.check_lambda(spec, lam)


def flow_exact(spec: SystemSpec, lam: float, x0: float, t):
    """Explicit solution (x(t), u(t)) of the rewritten flow from x(0) = x0.

    ``t`` may be a scalar or an array of non-negative times.
    """
    _check_start(spec, lam, x0)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    k = spec.kind
    e, mu = spec.epsilon, spec.mu

    if abs(lam) < LAMBDA_ZERO:
        u = np.zeros_like(t)
        if k is Kind.TODA:
            x = np.log(math.exp(x0) + t)
        elif k is Kind.RATIONAL:
            x = np.sqrt(x0 * x0 + 2.0 * t)
        else:
            x = np.arccosh(math.cosh(e * x0) + e * e * mu * t) / e
    else:
        u = sy.critical_point(spec, lam, x0) + lam * t
        if k is Kind.TODA:
            x = np.log(np.sinh(u) / lam)
        elif k is Kind.RATIONAL:
            x = np.sqrt(u * u + 2.0 * u / lam)
        elif k is Kind.HYPERBOLIC_I:
            x = np.arccosh(e * mu / lam * np.sinh(e * u) + np.cosh(e * u)) / e
        else:
            x = np.arccosh(e * mu / lam * np.sinh(e * u) - np.cosh(e * u)) / e
    if x.ndim == 0:
        return PhasePoint(float(x), float(u))
    return PhasePoint(x, u)


def _rhs(spec, lam, x, u):
    if not sy.in_domain(spec, x, u):
        raise StepError(f"RK4 stage left the domain at x={x!r}, u={u!r}")
    return lam + float(sy._drift0(spec, x, u))


def flow_rk4(spec: SystemSpec, lam: float, x0: float, horizon: float, dt: float) -> Trajectory:
    """Classical RK4 integration of the rewritten flow from (x0, u_lam(x0))."""
    _check_start(spec, lam, x0)
    if not dt > 0 or not horizon >= dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    n = int(round(horizon / dt))
    times = np.arange(n + 1) * dt
    xs = np.empty(n + 1)
    us = np.empty(n + 1)
    x = float(x0)
    u0 = float(sy.critical_point(spec, lam, x0))
    xs[0], us[0] = x, u0
    for i in range(n):
        # u' = lam is integrated exactly; evaluate u at the stage times directly
        u_a = u0 + lam * times[i]
        u_m = u_a + 0.5 * lam * dt
        u_b = u0 + lam * times[i + 1]
        k1 = _rhs(spec, lam, x, u_a)
        k2 = _rhs(spec, lam, x + 0.5 * dt * k1, u_m)
        k3 = _rhs(spec, lam, x + 0.5 * dt * k2, u_m)
        k4 = _rhs(spec, lam, x + dt * k3, u_b)
        x += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        xs[i + 1], us[i + 1] = x, u_b
    return Trajectory(times, xs, us, spec, float(lam))


def _d1(f, h):
    return (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)


def _d2(f, h):
    return (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)


def conservation_report(traj: Trajectory) -> tuple[float, float, float]:
    """Max deviations (r_u, r_lax, r_eom) along a trajectory.

    Velocities and accelerations come from five-point central differences on
    the interior points, so the first and last two points are dropped.
    """
    if len(traj) < 5:
        raise ValueError("trajectory needs at least 5 points")
    h = traj.dt
    spec, lam = traj.spec, traj.lam
    x_mid = traj.xs[2:-2]
    r_u = np.max(np.abs(_d1(traj.us, h) - lam))
    p = _d1(traj.xs, h)
    r_lax = np.max(np.abs(p * p - sy.offdiag(spec, x_mid) ** 2 - lam * lam))
    r_eom = np.max(np.abs(_d2(traj.xs, h) - sy.force(spec, x_mid)))
    return float(r_u), float(r_lax), float(r_eom)


def constraint_residual(traj: Trajectory) -> float:
    """Max |d_u ln K_lam| along the trajectory (zero on the iso-spectral manifold)."""
    gu = sy._grad0(traj.spec, traj.xs, traj.us)[1] + traj.lam
    return float(np.max(np.abs(gu)))


def gradient_identity_residual(spec: SystemSpec, lam: float, x: float, h: float = 1e-4) -> float:
    """|d/dx ln K_lam(x, u_lam(x)) - (d_x ln K_lam)(x, u_lam(x))|.

    The total derivative is taken by central differences, re-solving the
    critical point at x +/- h.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    _check_start(spec, lam, x)
    if spec.positive_x and x - h <= 0:
        raise DomainError("x - h leaves the half-line")

    def along(xx):
        return sy.log_kernel(spec, lam, xx, sy.critical_point(spec, lam, xx))

    total = (along(x + h) - along(x - h)) / (2 * h)
    partial = sy.grad_log_kernel(spec, lam, x, sy.critical_point(spec, lam, x))[0]
    return abs(total - partial)
