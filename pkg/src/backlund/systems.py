"""Kernel functions of the four rank-one systems and their pointwise identities.

Every function here is vectorised over ``x`` and ``u`` (scalars or numpy
arrays); the spectral parameter ``lam`` is a scalar.  The kernel is always
handled through its logarithm, ``ln K_lam(x, u) = lam*u + ln K(x, u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DomainError, HypothesisError, RangeError

LN2 = math.log(2.0)


class Kind(str, Enum):
    TODA = "toda"
    RATIONAL = "rational"
    HYPERBOLIC_I = "hyperbolic1"
    HYPERBOLIC_II = "hyperbolic2"


_ALIASES = {
    "toda": Kind.TODA,
    "rational": Kind.RATIONAL,
    "rationalcm": Kind.RATIONAL,
    "hyperbolic1": Kind.HYPERBOLIC_I,
    "hyperbolici": Kind.HYPERBOLIC_I,
    "hyperbolic2": Kind.HYPERBOLIC_II,
    "hyperbolicii": Kind.HYPERBOLIC_II,
}


def parse_kind(name: str | Kind) -> Kind:
    if isinstance(name, Kind):
        return name
    try:
        return _ALIASES[name.lower().replace("_", "").replace("-", "")]
    except KeyError:
        raise ValueError(f"unknown system kind {name!r}") from None


@dataclass(frozen=True)
class SystemSpec:
    """One of the four systems together with its scale ``epsilon`` and coupling ``mu``.

    For Toda and the rational system both parameters are pinned to 1.
    The hyperbolic I kernel needs ``mu >= 1``, the hyperbolic II kernel
    ``mu >= 1/2``.
    """

    kind: Kind
    epsilon: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        if self.kind in (Kind.TODA, Kind.RATIONAL):
            object.__setattr__(self, "epsilon", 1.0)
            object.__setattr__(self, "mu", 1.0)
            return
        eps, mu = float(self.epsilon), float(self.mu)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "mu", mu)
        if not eps > 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        if self.kind is Kind.HYPERBOLIC_I and not mu >= 1.0:
            raise HypothesisError(f"hyperbolic I requires mu >= 1, got {mu}")
        if self.kind is Kind.HYPERBOLIC_II and not mu >= 0.5:
            raise HypothesisError(f"hyperbolic II requires mu >= 1/2, got {mu}")

    @property
    def cap(self) -> float:
        """Bound on ``|lam|`` for the critical point and eigenfunction to exist."""
        if self.kind is Kind.HYPERBOLIC_II:
            return self.epsilon * self.mu
        return math.inf

    @property
    def bounded_section(self) -> bool:
        """True when the u-section of the domain is the interval (-x, x)."""
        return self.kind in (Kind.RATIONAL, Kind.HYPERBOLIC_I)

    @property
    def positive_x(self) -> bool:
        return self.kind is not Kind.TODA


class PhasePoint(NamedTuple):
    x: float
    u: float


def toda() -> SystemSpec:
    return SystemSpec(Kind.TODA)


def rational() -> SystemSpec:
    return SystemSpec(Kind.RATIONAL)


def hyperbolic1(epsilon: float = 1.0, mu: float = 1.0) -> SystemSpec:
    return SystemSpec(Kind.HYPERBOLIC_I, epsilon, mu)


def hyperbolic2(epsilon: float = 1.0, mu: float = 1.0) -> SystemSpec:
    return SystemSpec(Kind.HYPERBOLIC_II, epsilon, mu)


# ---------------------------------------------------------------------------
# elementary helpers


def log_sinh(z):
    """ln sinh z for z > 0 without overflow."""
    z = np.asarray(z, dtype=float)
    return z + np.log(-np.expm1(-2.0 * z)) - LN2


def log_cosh(z):
    a = np.abs(np.asarray(z, dtype=float))
    return a + np.log1p(np.exp(-2.0 * a)) - LN2


def _coth(z):
    return 1.0 / np.tanh(z)


def _scalarise(v):
    return float(v) if np.ndim(v) == 0 else v


# ---------------------------------------------------------------------------
# domain


def in_domain(spec: SystemSpec, x, u):
    """True where (x, u) lies strictly inside the open domain D."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    finite = np.isfinite(x) & np.isfinite(u)
    if spec.kind is Kind.TODA:
        out = finite
    elif spec.kind is Kind.HYPERBOLIC_II:
        out = finite & (x > 0)
    else:
        out = finite & (np.abs(u) < x)
    return bool(out) if out.ndim == 0 else out


def check_domain(spec: SystemSpec, x, u):
    if not np.all(in_domain(spec, x, u)):
        raise DomainError(f"point(s) outside the domain of {spec.kind.value}")


def check_x(spec: SystemSpec, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("x must be finite")
    if spec.positive_x and not np.all(x > 0):
        raise DomainError(f"{spec.kind.value} requires x > 0")


def check_lambda(spec: SystemSpec, lam: float):
    if not abs(lam) < spec.cap:
        raise RangeError(
            f"|lambda| = {abs(lam)} must be < epsilon*mu = {spec.cap} for {spec.kind.value}"
        )


# ---------------------------------------------------------------------------
# kernel and its derivatives (unchecked versions are used in hot loops)


def _log_kernel0(spec: SystemSpec, x, u):
    k = spec.kind
    if k is Kind.TODA:
        return -np.exp(-x) * np.cosh(u)
    if k is Kind.RATIONAL:
        return np.log(x - u) + np.log(x + u) - np.log(x)
    e, mu = spec.epsilon, spec.mu
    s, d = 0.5 * e * (x + u), 0.5 * e * (x - u)
    if k is Kind.HYPERBOLIC_I:
        return mu * (log_sinh(s) + log_sinh(d) - log_sinh(e * x))
    return mu * (log_sinh(e * x) - log_cosh(s) - log_cosh(d))


def _grad0(spec: SystemSpec, x, u):
    k = spec.kind
    if k is Kind.TODA:
        ex = np.exp(-x)
        return ex * np.cosh(u), -ex * np.sinh(u)
    if k is Kind.RATIONAL:
        a, b = 1.0 / (x - u), 1.0 / (x + u)
        return a + b - 1.0 / x, b - a
    e, mu = spec.epsilon, spec.mu
    s, d = 0.5 * e * (x + u), 0.5 * e * (x - u)
    if k is Kind.HYPERBOLIC_I:
        cs, cd = _coth(s), _coth(d)
        return mu * e * (0.5 * (cs + cd) - _coth(e * x)), 0.5 * mu * e * (cs - cd)
    ts, td = np.tanh(s), np.tanh(d)
    return mu * e * (_coth(e * x) - 0.5 * (ts + td)), 0.5 * mu * e * (td - ts)


def _guu(spec: SystemSpec, x, u):
    """Second u-derivative of ln K (strictly negative on D)."""
    k = spec.kind
    if k is Kind.TODA:
        return -np.exp(-x) * np.cosh(u)
    if k is Kind.RATIONAL:
        return -1.0 / (x + u) ** 2 - 1.0 / (x - u) ** 2
    e, mu = spec.epsilon, spec.mu
    s, d = 0.5 * e * (x + u), 0.5 * e * (x - u)
    if k is Kind.HYPERBOLIC_I:
        return -0.25 * e * e * mu * (1.0 / np.sinh(s) ** 2 + 1.0 / np.sinh(d) ** 2)
    return -0.25 * e * e * mu * (1.0 / np.cosh(s) ** 2 + 1.0 / np.cosh(d) ** 2)


def _drift0(spec: SystemSpec, x, u):
    k = spec.kind
    if k is Kind.TODA:
        return np.exp(-u - x)
    if k is Kind.RATIONAL:
        return 2.0 / (x + u) - 1.0 / x
    e, mu = spec.epsilon, spec.mu
    s = 0.5 * e * (x + u)
    if k is Kind.HYPERBOLIC_I:
        return mu * e * (_coth(s) - _coth(e * x))
    return mu * e * (_coth(e * x) - np.tanh(s))


def log_kernel(spec: SystemSpec, lam: float, x, u):
    """ln K_lam(x, u) = lam*u + ln K(x, u)."""
    check_domain(spec, x, u)
    x, u = np.asarray(x, float), np.asarray(u, float)
    return _scalarise(lam * u + _log_kernel0(spec, x, u))


def grad_log_kernel(spec: SystemSpec, lam: float, x, u):
    """Closed-form (d/dx, d/du) of ln K_lam."""
    check_domain(spec, x, u)
    x, u = np.asarray(x, float), np.asarray(u, float)
    gx, gu = _grad0(spec, x, u)
    return _scalarise(gx), _scalarise(gu + lam)


def drift_b(spec: SystemSpec, x, u):
    """b(x, u) = (d/dx + d/du) ln K, the extra drift of the rewritten flow."""
    check_domain(spec, x, u)
    x, u = np.asarray(x, float), np.asarray(u, float)
    return _scalarise(_drift0(spec, x, u))


# ---------------------------------------------------------------------------
# right-hand sides of the paired identities and the classical mechanics


def grad_rhs(spec: SystemSpec, x):
    """(d_x ln K)^2 - (d_u ln K)^2 as a function of x alone."""
    x = np.asarray(x, float)
    k = spec.kind
    if k is Kind.TODA:
        return np.exp(-2.0 * x)
    if k is Kind.RATIONAL:
        return 1.0 / x**2
    e, mu = spec.epsilon, spec.mu
    return (e * mu / np.sinh(e * x)) ** 2


def lap_rhs(spec: SystemSpec, x):
    """d_x^2 ln K - d_u^2 ln K as a function of x alone."""
    x = np.asarray(x, float)
    k = spec.kind
    if k is Kind.TODA:
        return np.zeros_like(x)
    if k is Kind.RATIONAL:
        return 1.0 / x**2
    e, mu = spec.epsilon, spec.mu
    val = e * e * mu / np.sinh(e * x) ** 2
    return val if k is Kind.HYPERBOLIC_I else -val


def potential(spec: SystemSpec, x):
    """Quantum potential V with H = (1/2) d_x^2 - V.

    V = (grad_rhs + lap_rhs)/2 is exactly what makes the kernel intertwine;
    it gives e^{-2x}/2, 1/x^2, eps^2 mu(mu+1)/(2 sinh^2) and
    eps^2 mu(mu-1)/(2 sinh^2) for the four kinds.
    """
    return 0.5 * (grad_rhs(spec, x) + lap_rhs(spec, x))


def offdiag(spec: SystemSpec, x):
    """Off-diagonal entry of the 2x2 Lax matrix."""
    x = np.asarray(x, float)
    k = spec.kind
    if k is Kind.TODA:
        return np.exp(-x)
    if k is Kind.RATIONAL:
        return 1.0 / x
    e, mu = spec.epsilon, spec.mu
    return e * mu / np.sinh(e * x)


def force(spec: SystemSpec, x):
    """Classical force, so that the equation of motion reads x'' = force(x)."""
    x = np.asarray(x, float)
    k = spec.kind
    if k is Kind.TODA:
        return -np.exp(-2.0 * x)
    if k is Kind.RATIONAL:
        return -1.0 / x**3
    e, mu = spec.epsilon, spec.mu
    return -(e**3) * mu * mu * np.cosh(e * x) / np.sinh(e * x) ** 3


# ---------------------------------------------------------------------------
# critical point u_lam(x)


def _seed(spec: SystemSpec, lam: float, x):
    k = spec.kind
    if k is Kind.TODA:
        return np.arcsinh(lam * np.exp(x))
    if k is Kind.RATIONAL:
        return lam * x * x / (1.0 + np.sqrt(1.0 + (lam * x) ** 2))
    # Both hyperbolic critical-point equations reduce to a quadratic in
    # w = exp(eps*u); the root is taken in log form to avoid overflow.
    e = spec.epsilon
    c = abs(lam) / (e * spec.mu)
    if c == 0.0:
        return np.zeros_like(x)
    cosh_x = np.cosh(e * x)
    root = np.log(c + np.sqrt(c * c + (1.0 - c * c) / cosh_x**2))
    den = 1.0 + c if k is Kind.HYPERBOLIC_I else 1.0 - c
    return math.copysign(1.0, lam) * (log_cosh(e * x) + root - math.log(den)) / e


def critical_point(spec: SystemSpec, lam: float, x, tol: float = 1e-12, maxiter: int = 100):
    """The unique u with d_u ln K_lam(x, u) = 0 in the u-section of D.

    A closed-form seed is polished by Newton's method safeguarded with
    bisection on the bracket given by monotonicity of d_u ln K_lam.
    """
    check_x(spec, x)
    if spec.kind is Kind.HYPERBOLIC_II:
        check_lambda(spec, lam)
    x = np.asarray(x, dtype=float)
    u = np.array(_seed(spec, lam, x), dtype=float, copy=True)
    if lam == 0.0:
        return _scalarise(np.zeros_like(x) + 0.0)

    if spec.bounded_section:
        lo, hi = -x.copy(), x.copy()
        u = np.clip(u, np.nextafter(lo, 0), np.nextafter(hi, 0))
    else:
        lo = np.full_like(x, -np.inf)
        hi = np.full_like(x, np.inf)

    for _ in range(maxiter):
        f = lam + _grad0(spec, x, u)[1]
        if np.all(np.abs(f) <= tol):
            break
        # f decreases in u
        lo = np.where(f > 0, u, lo)
        hi = np.where(f < 0, u, hi)
        step = u - f / _guu(spec, x, u)
        bad = ~((step > lo) & (step < hi))
        mid = 0.5 * (lo + hi)
        step = np.where(bad & np.isfinite(mid), mid, step)
        u = np.where(np.abs(f) <= tol, u, step)
    return _scalarise(u)


# ---------------------------------------------------------------------------
# pointwise residuals


def backlund_residuals(spec: SystemSpec, x, u, h: float = 1e-4):
    """Residuals of the two kernel identities at (x, u).

    ``r_grad`` uses the closed-form gradient, ``r_lap`` central second
    differences of ln K with step ``h``.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    check_domain(spec, x, u)
    x, u = np.asarray(x, float), np.asarray(u, float)
    check_domain(spec, x - h, u)
    check_domain(spec, x + h, u)
    check_domain(spec, x, u - h)
    check_domain(spec, x, u + h)
    gx, gu = _grad0(spec, x, u)
    r_grad = np.abs(gx * gx - gu * gu - grad_rhs(spec, x))

    f0 = _log_kernel0(spec, x, u)
    dxx = (_log_kernel0(spec, x + h, u) - 2 * f0 + _log_kernel0(spec, x - h, u)) / h**2
    duu = (_log_kernel0(spec, x, u + h) - 2 * f0 + _log_kernel0(spec, x, u - h)) / h**2
    r_lap = np.abs(dxx - duu - lap_rhs(spec, x))
    return _scalarise(r_grad), _scalarise(r_lap)


def lax_residual(spec: SystemSpec, lam: float, x):
    """|p^2 - offdiag^2 - lam^2| at the critical point, p = d_x ln K."""
    u = critical_point(spec, lam, x)
    x = np.asarray(x, float)
    p = _grad0(spec, x, np.asarray(u, float))[0]
    return _scalarise(np.abs(p * p - offdiag(spec, x) ** 2 - lam * lam))
