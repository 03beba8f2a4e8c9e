"""Eigenfunctions psi_lam(x) = int K_lam(x, u)^w du and the conditional law nu_x.

The canonical eigenfunction is the composite Gauss-Legendre quadrature of
the defining integral.  Closed forms (Macdonald, Bessel, Legendre) are kept
only as diagnostics and are compared against the quadrature through
``closed_form_ratio``.

Bounded u-sections (-x, x) are integrated after the substitution
u = x sin(pi t / 2), which keeps the integrand analytic at the endpoints.
Unbounded sections are cut where the integrand has dropped
``truncation_margin`` decades below its peak at the critical point.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.interpolate import PchipInterpolator

from . import systems as sy
from .errors import ConvergenceError, DomainError
from .systems import Kind, SystemSpec

LN10 = math.log(10.0)


@dataclass(frozen=True)
class QuadratureSpec:
    n_panels: int = 16
    rel_tol: float = 1e-10
    truncation_margin: float = 17.0
    kernel_power: float = 1.0
    order: int = 16
    max_panels: int = 4096

    def __post_init__(self):
        if self.n_panels < 8:
            raise ValueError("n_panels must be at least 8")
        if not self.rel_tol > 0 or not self.truncation_margin > 0 or not self.kernel_power > 0:
            raise ValueError("rel_tol, truncation_margin and kernel_power must be positive")


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=64)
def _rule(n_panels: int, order: int):
    """Composite Gauss-Legendre nodes and weights on [-1, 1]."""
    t, wt = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t).ravel()
    weights = (half[:, None] * wt).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _prepare(spec: SystemSpec, lam: float, x, quad: QuadratureSpec):
    sy.check_x(spec, x)
    if spec.kind is Kind.HYPERBOLIC_II:
        sy.check_lambda(spec, lam)
    return np.atleast_1d(np.asarray(x, dtype=float))


def u_interval(spec: SystemSpec, lam: float, x, quad: QuadratureSpec = DEFAULT_QUAD):
    """Integration range (lo, hi) of the u-section for each x."""
    x = _prepare(spec, lam, x, quad)
    if spec.bounded_section:
        return -x, x.copy()
    w = quad.kernel_power
    ustar = np.atleast_1d(sy.critical_point(spec, lam, x))

    def f(u):
        with np.errstate(over="ignore", invalid="ignore"):
            return w * (lam * u + sy._log_kernel0(spec, x, u))

    target = f(ustar) - quad.truncation_margin * LN10

    def edge(sign):
        step = np.ones_like(x)
        for _ in range(80):
            above = f(ustar + sign * step) > target
            if not above.any():
                break
            step = np.where(above, 2.0 * step, step)
        a, b = np.zeros_like(x), step
        for _ in range(60):
            mid = 0.5 * (a + b)
            above = f(ustar + sign * mid) > target
            a = np.where(above, mid, a)
            b = np.where(above, b, mid)
        return ustar + sign * b

    return edge(-1.0), edge(1.0)


def _nodes(spec, x, interval, n_panels, order):
    t, wt = _rule(n_panels, order)
    X = x[:, None]
    if spec.bounded_section:
        th = 0.5 * math.pi * t
        u = X * np.sin(th)
        jw = X * (0.5 * math.pi) * np.cos(th) * wt
    else:
        lo, hi = interval
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        u = mid + half * t
        jw = half * wt
    return u, jw


def _moments(spec, lam, x, quad, n_panels, interval, g=None, drift=False):
    """log int K^w, plus optional normalised moments int g K^w / int K^w and drift."""
    w = quad.kernel_power
    u, jw = _nodes(spec, x, interval, n_panels, quad.order)
    X = np.broadcast_to(x[:, None], u.shape)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        L = w * (lam * u + sy._log_kernel0(spec, X, u))
    L = np.where(np.isfinite(L), L, -np.inf)
    m = L.max(axis=1, keepdims=True)
    E = np.exp(L - m) * jw
    s0 = E.sum(axis=1)
    out = {"log": m[:, 0] + np.log(s0)}
    live = E > 0
    if drift:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            gx = sy._grad0(spec, X, u)[0]
        out["drift"] = np.where(live, E * w * gx, 0.0).sum(axis=1) / s0
    if g is not None:
        gv = np.broadcast_to(np.asarray(g(u), dtype=float), u.shape)
        out["mean"] = np.where(live, E * gv, 0.0).sum(axis=1) / s0
    return out


def _refine(spec, lam, x, quad, interval=None, g=None, drift=False):
    """Double panels until every requested quantity is stable to rel_tol."""
    if interval is None and not spec.bounded_section:
        interval = u_interval(spec, lam, x, quad)
    n = quad.n_panels
    prev = _moments(spec, lam, x, quad, n, interval, g, drift)
    while n < quad.max_panels:
        n *= 2
        cur = _moments(spec, lam, x, quad, n, interval, g, drift)
        ok = np.all(np.abs(cur["log"] - prev["log"]) <= quad.rel_tol)
        for key in ("drift", "mean"):
            if key in cur:
                scale = np.maximum(1.0, np.abs(cur[key]))
                ok = ok and np.all(np.abs(cur[key] - prev[key]) <= quad.rel_tol * scale)
        if ok:
            return n, cur
        prev = cur
    raise ConvergenceError(f"quadrature did not stabilise within {quad.max_panels} panels")


def _out(v, like):
    return float(v[0]) if np.ndim(like) == 0 else v


def log_psi(spec: SystemSpec, lam: float, x, quad: QuadratureSpec = DEFAULT_QUAD):
    xa = _prepare(spec, lam, x, quad)
    return _out(_refine(spec, lam, xa, quad)[1]["log"], x)


def psi(spec: SystemSpec, lam: float, x, quad: QuadratureSpec = DEFAULT_QUAD):
    """psi_lam(x) = int K_lam(x, u)^w du by adaptive composite Gauss-Legendre."""
    xa = _prepare(spec, lam, x, quad)
    return _out(np.exp(_refine(spec, lam, xa, quad)[1]["log"]), x)


def log_psi_drift(spec: SystemSpec, lam: float, x, quad: QuadratureSpec = DEFAULT_QUAD):
    """b_lam(x) = d/dx ln psi_lam(x) as a ratio of two quadratures.

    Uses int d_x K^w du / int K^w du; the boundary terms of the Leibniz
    rule vanish because K is zero at u = +/- x on bounded sections.
    """
    xa = _prepare(spec, lam, x, quad)
    return _out(_refine(spec, lam, xa, quad, drift=True)[1]["drift"], x)


def nu_expectation(spec: SystemSpec, lam: float, x, g, quad: QuadratureSpec = DEFAULT_QUAD):
    """int g(u) nu_x(du) with nu_x = K_lam(x, u)^w du / psi_lam(x).  ``g`` must be vectorised."""
    xa = _prepare(spec, lam, x, quad)
    return _out(_refine(spec, lam, xa, quad, g=g)[1]["mean"], x)


def eigen_residual(spec: SystemSpec, lam: float, x: float, quad: QuadratureSpec = DEFAULT_QUAD,
                   h: float = 1e-3) -> float:
    """|(H - lam^2/2) psi_lam(x)| / psi_lam(x), second derivative by central differences.

    The three stencil points share one node set so the quadrature error
    varies smoothly with x and cancels in the difference.
    """
    if quad.kernel_power != 1.0:
        raise ValueError("eigen_residual is defined for kernel_power = 1")
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    if spec.positive_x and x - h <= 0:
        raise DomainError("x - h must stay positive")
    xs = _prepare(spec, lam, np.array([x - h, x, x + h]), quad)
    interval = None
    if not spec.bounded_section:
        lo, hi = u_interval(spec, lam, xs, quad)
        interval = (np.full(3, lo.min()), np.full(3, hi.max()))
    n, _ = _refine(spec, lam, xs, quad, interval)
    lp = _moments(spec, lam, xs, quad, 2 * n, interval)["log"]
    r_minus, r_plus = math.exp(lp[0] - lp[1]), math.exp(lp[2] - lp[1])
    second = (r_plus - 2.0 + r_minus) / (h * h)
    return abs(0.5 * second - float(sy.potential(spec, x)) - 0.5 * lam * lam)


# ---------------------------------------------------------------------------
# closed forms used as diagnostics


def _gl_integrate(f, a: float, b: float, rel_tol: float = 1e-14, n: int = 8) -> float:
    prev = None
    while n <= 4096:
        t, wt = _rule(n, 16)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        val = float(np.sum(f(mid + half * t) * wt) * half)
        if prev is not None and abs(val - prev) <= rel_tol * abs(val):
            return val
        prev, n = val, 2 * n
    raise ConvergenceError("integral did not stabilise")


def macdonald_k(nu: float, z: float) -> float:
    """K_nu(z) from int_0^inf exp(-z cosh t) cosh(nu t) dt, for z > 0."""
    if not z > 0:
        raise ValueError("z must be positive")
    nu = abs(nu)
    # integrand log is -z cosh t + nu t (for large t); cut 40 units below its peak
    peak_t = math.asinh(nu / z) if nu > 0 else 0.0
    peak = -z * math.cosh(peak_t) + nu * peak_t
    top = peak_t + 1.0
    while -z * math.cosh(top) + nu * top > peak - 40.0:
        top = 2.0 * top
    return _gl_integrate(lambda t: np.exp(-z * np.cosh(t)) * np.cosh(nu * t), 0.0, top)


def bessel_i32(z: float) -> float:
    """I_{3/2}(z) from its elementary form, with a series near zero."""
    z = abs(z)
    if z < 0.5:
        q = 0.25 * z * z
        term, total = 1.0, 1.0
        for k in range(1, 20):
            term *= q / (k * (k + 1.5))
            total += term
        return (0.5 * z) ** 1.5 / math.gamma(2.5) * total
    return math.sqrt(2.0 / (math.pi * z)) * (math.cosh(z) - math.sinh(z) / z)


def psi_closed_form(spec: SystemSpec, lam: float, x: float) -> float | None:
    """Value of the classical closed form for psi_lam, or None when none applies.

    Toda: 2 K_lam(e^-x).  Rational: lam^{-3/2} sqrt(2 pi x) I_{3/2}(lam x),
    2x^2/3 at lam = 0.  Hyperbolic I at mu = 1: the elementary formula.
    Hyperbolic II: the associated Legendre representation.
    These agree with the quadrature only up to a constant factor in some
    cases; see ``closed_form_ratio``.
    """
    sy.check_x(spec, x)
    k = spec.kind
    if k is Kind.TODA:
        return 2.0 * macdonald_k(lam, math.exp(-x))
    if k is Kind.RATIONAL:
        a = abs(lam)
        if a == 0.0:
            return 2.0 * x * x / 3.0
        return a**-1.5 * math.sqrt(2 * math.pi * x) * bessel_i32(a * x)
    e, mu = spec.epsilon, spec.mu
    if k is Kind.HYPERBOLIC_I:
        if mu != 1.0:
            return None
        if lam == 0.0:
            return x / math.tanh(e * x) - 1.0 / e
        if abs(abs(lam) - e) < 1e-8:
            return None
        return e / (e * e - lam * lam) * (
            e / lam / math.tanh(e * x) * math.sinh(lam * x) - math.cosh(lam * x)
        )
    sy.check_lambda(spec, lam)
    with mpmath.workdps(30):
        val = (
            2 ** (2 * mu + 1.5) / (mpmath.sqrt(mpmath.pi) * e)
            * mpmath.sqrt(mpmath.sinh(e * x))
            * mpmath.gamma(mu + lam / e) * mpmath.gamma(mu - lam / e) / mpmath.gamma(mu)
            * mpmath.legenp(lam / e - 0.5, 0.5 - mu, mpmath.cosh(e * x), type=3)
        )
    return float(mpmath.re(val))


def hyperbolic2_psi0_sinh_form(spec: SystemSpec, x):
    """The (sinh eps x)^mu candidate 2 sqrt(pi) Gamma(mu) (sinh eps x)^mu / (eps Gamma(mu + 1/2)).

    Kept so its disagreement with the quadrature can be reported; it solves
    the eigenvalue equation for lam = eps*mu, not lam = 0.
    """
    e, mu = spec.epsilon, spec.mu
    c = 2 * math.sqrt(math.pi) * math.gamma(mu) / (e * math.gamma(mu + 0.5))
    return c * np.sinh(e * np.asarray(x, float)) ** mu


def closed_form_ratio(spec: SystemSpec, lam: float, x: float,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> float | None:
    """psi (quadrature) divided by psi_closed_form; None when no closed form applies."""
    cf = psi_closed_form(spec, lam, x)
    if cf is None:
        return None
    return psi(spec, lam, x, quad) / cf


def toda_drift_macdonald(lam: float, x: float) -> float:
    """d/dx ln(2 K_lam(e^-x)) = e^-x K_{lam+1}(e^-x)/K_lam(e^-x) - lam."""
    z = math.exp(-x)
    return z * macdonald_k(lam + 1.0, z) / macdonald_k(lam, z) - lam


# ---------------------------------------------------------------------------
# sampling from nu_x


class NuTable:
    """Tabulated CDF of nu_x on a fixed grid with monotone-cubic inverse."""

    def __init__(self, spec: SystemSpec, lam: float, x: float, quad: QuadratureSpec,
                 n_grid: int = 4096):
        xa = _prepare(spec, lam, x, quad)
        lo, hi = u_interval(spec, lam, xa, quad)
        lo, hi = float(lo[0]), float(hi[0])
        grid = np.linspace(lo, hi, n_grid)
        t, wt = np.polynomial.legendre.leggauss(8)
        a, b = grid[:-1, None], grid[1:, None]
        u = 0.5 * (a + b) + 0.5 * (b - a) * t
        w = quad.kernel_power
        with np.errstate(divide="ignore"):
            L = w * (lam * u + sy._log_kernel0(spec, np.full_like(u, xa[0]), u))
        m = np.max(L)
        cell = (np.exp(L - m) * wt).sum(axis=1) * 0.5 * (b - a)[:, 0]
        cdf = np.concatenate([[0.0], np.cumsum(cell)])
        cdf /= cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 1e-15])
        keep[-1] = True
        self.spec, self.lam, self.x, self.quad = spec, lam, float(xa[0]), quad
        self.grid, self.cdf_values = grid, cdf
        self._ppf = PchipInterpolator(cdf[keep], grid[keep])
        self._cdf = PchipInterpolator(grid, cdf)

    def ppf(self, p):
        return self._ppf(np.clip(p, 0.0, 1.0))

    def cdf(self, u):
        return np.clip(self._cdf(np.clip(u, self.grid[0], self.grid[-1])), 0.0, 1.0)


_TABLES: dict = {}
_TABLE_LOCK = threading.Lock()


def nu_table(spec: SystemSpec, lam: float, x: float, quad: QuadratureSpec = DEFAULT_QUAD) -> NuTable:
    key = (spec, float(lam), float(x), quad)
    with _TABLE_LOCK:
        table = _TABLES.get(key)
        if table is None:
            table = NuTable(spec, lam, x, quad)
            if len(_TABLES) > 256:
                _TABLES.clear()
            _TABLES[key] = table
    return table


def sample_nu(spec: SystemSpec, lam: float, x: float, quad: QuadratureSpec, rng, size=None):
    """Draw from nu_x by inverse CDF.  ``rng`` needs a ``random(size)`` method."""
    table = nu_table(spec, lam, x, quad)
    p = rng.random(1 if size is None else size)
    draws = table.ppf(p)
    return float(draws[0]) if size is None else draws
