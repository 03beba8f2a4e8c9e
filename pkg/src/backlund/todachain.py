"""Noise-free tau-functions built from the heat kernel and the Toda chain they solve.

With u(t, x, y) the Gaussian heat kernel, the tau-functions are
tau_n = t^{-n(n-1)/2} (prod_{j<n} j!) u^n, so that a_n = tau_{n-1} tau_{n+1} / tau_n^2
equals n/t.  Everything is kept in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_MAX = 12


@dataclass(frozen=True)
class TauChainPoint:
    n: int
    t: float
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and 1 <= self.n <= N_MAX):
            raise ValueError(f"n must be an integer in [1, {N_MAX}]")
        if not self.t > 0:
            raise ValueError("t must be positive")


def _check_t(t):
    if not np.all(np.asarray(t) > 0):
        raise ValueError("t must be positive")


def log_heat_kernel(t, x, y):
    _check_t(t)
    return -((x - y) ** 2) / (2 * t) - 0.5 * np.log(2 * np.pi * t)


def heat_kernel(t, x, y):
    """Gaussian kernel exp(-(x - y)^2 / 2t) / sqrt(2 pi t)."""
    return np.exp(log_heat_kernel(t, x, y))


def _log_fact_sum(n: int) -> float:
    return sum(math.lgamma(j + 1) for j in range(1, n))


def log_tau_n(n: int, t, x, y):
    """ln tau_n for 0 <= n <= N_MAX + 1 (tau_0 = 1)."""
    if not 0 <= n <= N_MAX + 1:
        raise ValueError(f"n must lie in [0, {N_MAX + 1}]")
    if n == 0:
        _check_t(t)
        return np.zeros(np.broadcast(t, x, y).shape)[()]
    return -0.5 * n * (n - 1) * np.log(t) + _log_fact_sum(n) + n * log_heat_kernel(t, x, y)


def log_tau(p: TauChainPoint) -> float:
    return float(log_tau_n(p.n, p.t, p.x, p.y))


def a_n(n: int, t, x=0.0, y=0.0):
    """tau_{n-1} tau_{n+1} / tau_n^2 evaluated from the log tau-functions."""
    if not 1 <= n <= N_MAX:
        raise ValueError(f"n must lie in [1, {N_MAX}]")
    return np.exp(log_tau_n(n - 1, t, x, y) + log_tau_n(n + 1, t, x, y) - 2 * log_tau_n(n, t, x, y))


def h_n(n: int, t, x, y):
    """h_n = ln tau_n - ln tau_{n-1} for n >= 1."""
    return log_tau_n(n, t, x, y) - log_tau_n(n - 1, t, x, y)


def h_closed_form(n_plus_1: int, t, x, y):
    """Closed form h_{n+1} = -(x-y)^2/2t - ln[sqrt(2 pi t) t^n / n!]."""
    n = n_plus_1 - 1
    if n < 0:
        raise ValueError("index must be at least 1")
    _check_t(t)
    return -((x - y) ** 2) / (2 * t) - (0.5 * np.log(2 * np.pi * t) + n * np.log(t) - math.lgamma(n + 1))


def toda2d_residuals(p: TauChainPoint, h: float = 1e-3) -> tuple[float, float]:
    """(|D_xy ln tau_n - n/t|, |D_xx ln tau_n + n/t|) with central differences at step h."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    n, t, x, y = p.n, p.t, p.x, p.y

    def f(a, b):
        return float(log_tau_n(n, t, a, b))

    dxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h * h)
    dxx = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h)
    return abs(dxy - n / t), abs(dxx + n / t)


def chain_sides(n: int, t: float, x: float, y: float, h: float = 1e-3) -> tuple[float, float]:
    """(D_xx h_n, e^{h_n - h_{n-1}} - e^{h_{n+1} - h_n}) with e^{h_1 - h_0} = 0."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    if not 1 <= n <= N_MAX:
        raise ValueError(f"n must lie in [1, {N_MAX}]")
    _check_t(t)

    def hn(k, a):
        return float(h_n(k, t, a, y))

    lhs = (hn(n, x + h) - 2 * hn(n, x) + hn(n, x - h)) / (h * h)
    up = 0.0 if n == 1 else math.exp(hn(n, x) - hn(n - 1, x))
    down = math.exp(hn(n + 1, x) - hn(n, x))
    return lhs, up - down


def chain_residual(n: int, t: float, x: float, y: float, h: float = 1e-3) -> float:
    """|D_xx h_n - (e^{h_n - h_{n-1}} - e^{h_{n+1} - h_n})|; both sides equal -1/t."""
    lhs, rhs = chain_sides(n, t, x, y, h)
    return abs(lhs - rhs)


def residual_table(nmax: int, ts, xs=(0.3,), ys=(-0.2,), h: float = 1e-3) -> list[dict]:
    """Rows of all residuals over an (n, t, x, y) grid."""
    rows = []
    for n in range(1, nmax + 1):
        for t in ts:
            for x in xs:
                for y in ys:
                    p = TauChainPoint(n, float(t), float(x), float(y))
                    r_xy, r_xx = toda2d_residuals(p, h)
                    a_err = abs(float(a_n(n, t, x, y)) - n / t)
                    rows.append(dict(n=n, t=float(t), x=float(x), y=float(y), r_xy=r_xy, r_xx=r_xx,
                                     r_chain=chain_residual(n, float(t), float(x), float(y), h),
                                     a_n_error=a_err))
    return rows
