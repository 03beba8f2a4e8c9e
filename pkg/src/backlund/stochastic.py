"""Euler-Maruyama engine for the stochastic Backlund systems and their targets.

All Gaussian increments come from :mod:`backlund.rng`, keyed by
(seed, path index, step), so an ensemble does not depend on how paths are
split across workers.  Initial draws U_0 ~ nu_x use a reserved counter
block, which lets the EM scheme and the exact Toda solution share both
U_0 and the Brownian increments when run with the same seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import eigen
from . import rng as rn
from . import systems as sy
from .eigen import DEFAULT_QUAD, QuadratureSpec
from .errors import BoundaryBreach, DomainError, HypothesisError
from .systems import Kind, SystemSpec

MAX_STEPS = 10**7
MAX_PATHS = 10**6
MAX_RETRIES = 10
_BLOCK = 128  # steps of noise generated per RNG call


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.  ``save_every`` thins the stored time grid."""

    n_paths: int
    dt: float
    horizon: float
    seed: int
    noise_scale: float = 1.0
    lam: float = 0.0
    save_every: int = 1

    def __post_init__(self):
        if not (isinstance(self.n_paths, (int, np.integer)) and 0 < self.n_paths <= MAX_PATHS):
            raise ValueError(f"n_paths must be an integer in [1, {MAX_PATHS}]")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if self.horizon / self.dt > MAX_STEPS * (1 + 1e-12):
            raise ValueError(f"horizon/dt must not exceed {MAX_STEPS}")
        if abs(self.n_steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError("horizon must be an integer multiple of dt")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be non-negative")
        if not (isinstance(self.save_every, (int, np.integer)) and self.save_every >= 1):
            raise ValueError("save_every must be a positive integer")
        if self.n_steps % self.save_every:
            raise ValueError("save_every must divide the number of steps")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def times(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.save_every) * self.dt


@dataclass
class PathEnsemble:
    """Simulated paths, one row per path, columns at ``times``.

    ``us`` is None for scalar (target) diffusions.  ``violations`` counts
    steps that still left the domain after all substep retries;
    ``gap_drops`` counts steps where X - U decreased (Toda and rational only).
    """

    config: McConfig
    spec: SystemSpec | None
    times: np.ndarray
    xs: np.ndarray
    us: np.ndarray | None
    violations: int = 0
    gap_drops: int = 0
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.xs.shape[0]

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the stored grid")
        return i

    def x_at(self, t: float) -> np.ndarray:
        return self.xs[:, self.index(t)]

    def u_at(self, t: float) -> np.ndarray:
        if self.us is None:
            raise ValueError("ensemble carries no U component")
        return self.us[:, self.index(t)]


# ---------------------------------------------------------------------------
# Brownian increments


def brownian_increments(mc: McConfig, paths=None) -> np.ndarray:
    """Standard Brownian increments (variance dt) of shape (n_paths, n_steps)."""
    paths = np.arange(mc.n_paths) if paths is None else np.asarray(paths)
    return math.sqrt(mc.dt) * rn.path_normals(mc.seed, paths, 0, mc.n_steps)


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments (same Brownian path, coarser grid)."""
    n = increments.shape[1]
    if factor < 1 or n % factor:
        raise ValueError("factor must divide the number of steps")
    return increments.reshape(increments.shape[0], n // factor, factor).sum(axis=2)


def _noise(mc: McConfig, paths, increments):
    """Return f(start, n) giving unscaled Brownian increments for these paths."""
    if increments is not None:
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (mc.n_paths, mc.n_steps):
            raise ValueError(f"increments must have shape {(mc.n_paths, mc.n_steps)}")
        inc = inc[paths]
        return lambda s, n: inc[:, s:s + n]
    sq = math.sqrt(mc.dt)
    return lambda s, n: sq * rn.path_normals(mc.seed, paths, s, n)


def _chunks(n_paths: int, workers: int):
    workers = max(1, int(workers))
    size = -(-n_paths // workers)
    return [np.arange(a, min(a + size, n_paths)) for a in range(0, n_paths, size)]


def _map_paths(fn, n_paths: int, workers: int):
    parts = _chunks(n_paths, workers)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))


def _merge(parts, keys):
    return {k: (np.concatenate([p[k] for p in parts]) if parts[0][k] is not None else None)
            for k in keys}


# ---------------------------------------------------------------------------
# generic stepping with the boundary policy


def _step_loop(mc, paths, state, advance, inside, increments, on_step=None):
    """Run EM over all steps for one chunk of paths.

    ``state`` is a tuple of arrays; ``advance(state, dB, dt)`` returns the
    proposed next state and ``inside(state)`` a boolean mask.  Steps that
    leave the domain are retried with 2, 4, ... 2^10 equal substeps splitting
    the same Brownian increment; if all fail the path is held at its
    pre-step state and a violation is counted.
    """
    dt, steps, every = mc.dt, mc.n_steps, mc.save_every
    noise = _noise(mc, paths, increments)
    n = len(paths)
    n_save = steps // every + 1
    saved = [np.empty((n, n_save)) for _ in state]
    for arr, s in zip(saved, state):
        arr[:, 0] = s
    violations = 0
    for s0 in range(0, steps, _BLOCK):
        block = mc.noise_scale * noise(s0, min(_BLOCK, steps - s0))
        for j in range(block.shape[1]):
            dB = block[:, j]
            with np.errstate(all="ignore"):
                new = advance(state, dB, dt)
            ok = inside(new)
            if not np.all(ok):
                new = tuple(np.array(a) for a in new)
                for i in np.flatnonzero(~ok):
                    sub = _retry(tuple(a[i:i + 1] for a in state), dB[i:i + 1], dt, advance, inside)
                    if sub is None:
                        violations += 1
                        sub = tuple(a[i:i + 1] for a in state)
                    for a, v in zip(new, sub):
                        a[i] = v[0]
            if on_step is not None:
                on_step(state, new)
            state = new
            k = s0 + j + 1
            if k % every == 0:
                for arr, s in zip(saved, state):
                    arr[:, k // every] = s
    return saved, violations


def _retry(state, dB, dt, advance, inside):
    for r in range(1, MAX_RETRIES + 1):
        m = 1 << r
        cur = state
        for _ in range(m):
            with np.errstate(all="ignore"):
                cur = advance(cur, dB / m, dt / m)
            if not np.all(inside(cur)):
                break
        else:
            return cur
    return None


def _finish(label, mc, spec, saved_parts, violations, strict, gap_drops=0, with_u=True):
    xs = np.concatenate([p[0] for p in saved_parts])
    us = np.concatenate([p[1] for p in saved_parts]) if with_u else None
    if strict and violations:
        raise BoundaryBreach(f"{violations} step(s) left the domain after {MAX_RETRIES} retries")
    return PathEnsemble(mc, spec, mc.times, xs, us, violations, gap_drops, label)


# ---------------------------------------------------------------------------
# initial conditions


def _initial_u(spec, lam, x0, u0, mc, quad):
    paths = np.arange(mc.n_paths)
    if u0 is None:
        if spec.kind is Kind.HYPERBOLIC_II:
            sy.check_lambda(spec, lam)
        table = eigen.nu_table(spec, lam, x0, quad)
        return table.ppf(rn.path_uniforms(mc.seed, paths))
    u = np.broadcast_to(np.asarray(u0, dtype=float), (mc.n_paths,)).copy()
    sy.check_domain(spec, np.full_like(u, x0), u)
    return u


# ---------------------------------------------------------------------------
# public simulators


def _gap_drift(spec, S, G):
    """b and db/dS written in S = X + U, G = X - U (bounded-section kinds)."""
    if spec.kind is Kind.RATIONAL:
        T = S + G
        return 2.0 * G / (S * T), -2.0 / (S * S) + 2.0 / (T * T)
    e, mu = spec.epsilon, spec.mu
    a, c = 0.5 * e * S, 0.5 * e * (S + G)
    b = mu * e * (1.0 / np.tanh(a) - 1.0 / np.tanh(c))
    db = -0.5 * mu * e * e * (1.0 / np.sinh(a) ** 2 - 1.0 / np.sinh(c) ** 2)
    return b, db


def _implicit_step(spec, X, U, dU, dt, iters: int = 40):
    """Drift-implicit step in S = X + U with G = X - U frozen at its old value.

    Solves S' = S + 2 dU + b(S', G) dt.  The map S' -> S' - b(S', G) dt is
    increasing and concave on S' > 0, so Newton started right of the root
    (from the bound b <= 2 mu / S) converges monotonically.  Then
    G' = G + b(S', G) dt, which keeps both S and G positive.
    """
    S, G = X + U, X - U
    c = S + 2.0 * dU
    a = 2.0 * spec.mu * dt
    s_new = 0.5 * (c + np.sqrt(c * c + 4.0 * a))
    for _ in range(iters):
        b, db = _gap_drift(spec, s_new, G)
        step = (s_new - c - b * dt) / (1.0 - db * dt)
        s_new = np.where(s_new - step > 0, s_new - step, 0.5 * s_new)
        if np.all(np.abs(step) <= 1e-13 * s_new):
            break
    b = _gap_drift(spec, s_new, G)[0]
    g_new = G + b * dt
    return 0.5 * (s_new + g_new), 0.5 * (s_new - g_new)


SCHEMES = ("auto", "euler", "implicit")


def simulate_backlund(spec: SystemSpec, mc: McConfig, x0: float, u0=None,
                      quad: QuadratureSpec = DEFAULT_QUAD, strict: bool = False,
                      workers: int = 1, increments=None, scheme: str = "auto") -> PathEnsemble:
    """Simulate dU = s dB + lam dt, dX = dU + b(X, U) dt.

    With ``u0=None`` each path starts from U_0 ~ nu_{x0} (with the quadrature's
    kernel power); otherwise ``u0`` fixes the start (scalar or per path).
    ``increments`` optionally supplies the unscaled Brownian increments.

    ``scheme="euler"`` is plain Euler-Maruyama.  ``"implicit"`` (the default
    for the rational and hyperbolic I kinds under ``"auto"``) treats the
    drift implicitly in X + U, whose singular 1/(X + U) repulsion makes
    explicit steps overshoot badly near the boundary.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    sy.check_x(spec, x0)
    lam = float(mc.lam)
    U0 = _initial_u(spec, lam, float(x0), u0, mc, quad)
    track_gap = spec.kind in (Kind.TODA, Kind.RATIONAL)
    implicit = scheme == "implicit" or (scheme == "auto" and spec.bounded_section)
    if implicit and not spec.bounded_section:
        raise ValueError("the implicit scheme applies to the rational and hyperbolic I kinds")

    def advance(state, dB, dt):
        X, U = state
        dU = dB + lam * dt
        if implicit:
            return _implicit_step(spec, X, U, dU, dt)
        return X + dU + sy._drift0(spec, X, U) * dt, U + dU

    def inside(state):
        return sy.in_domain(spec, state[0], state[1])

    def run(paths):
        drops = [0]

        def watch(old, new):
            tol = 4 * np.finfo(float).eps * (np.abs(old[0]) + np.abs(old[1]) + 1.0)
            drops[0] += int(np.count_nonzero((new[0] - new[1]) < (old[0] - old[1]) - tol))

        state = (np.full(len(paths), float(x0)), U0[paths])
        saved, v = _step_loop(mc, paths, state, advance, inside, increments,
                              watch if track_gap else None)
        return saved, v, drops[0]

    parts = _map_paths(run, mc.n_paths, workers)
    return _finish("backlund", mc, spec, [p[0] for p in parts], sum(p[1] for p in parts),
                   strict, gap_drops=sum(p[2] for p in parts))


def toda_exact_paths(spec: SystemSpec, mc: McConfig, x0: float, u0=None,
                     quad: QuadratureSpec = DEFAULT_QUAD, workers: int = 1,
                     increments=None) -> PathEnsemble:
    """Pathwise Toda solution X = U + ln(e^{X0-U0} + int_0^t e^{-2U} ds).

    U is exact on the grid; the time integral uses the trapezoid rule on
    the same increments that :func:`simulate_backlund` would draw.
    """
    if spec.kind is not Kind.TODA:
        raise DomainError("toda_exact_paths applies to the Toda system only")
    lam = float(mc.lam)
    U0 = _initial_u(spec, lam, float(x0), u0, mc, quad)
    dt, steps, every = mc.dt, mc.n_steps, mc.save_every

    def run(paths):
        noise = _noise(mc, paths, increments)
        U = U0[paths].copy()
        c = np.exp(x0 - U)
        integral = np.zeros(len(paths))
        n_save = steps // every + 1
        xs, us = np.empty((len(paths), n_save)), np.empty((len(paths), n_save))
        xs[:, 0], us[:, 0] = x0, U
        for s0 in range(0, steps, _BLOCK):
            block = mc.noise_scale * noise(s0, min(_BLOCK, steps - s0))
            for j in range(block.shape[1]):
                Un = U + block[:, j] + lam * dt
                integral += 0.5 * dt * (np.exp(-2 * U) + np.exp(-2 * Un))
                U = Un
                k = s0 + j + 1
                if k % every == 0:
                    xs[:, k // every] = U + np.log(c + integral)
                    us[:, k // every] = U
        return xs, us

    parts = _map_paths(run, mc.n_paths, workers)
    return _finish("toda-exact", mc, spec, parts, 0, False)


def simulate_diffusion(drift, x0: float, mc: McConfig, lower: float | None = None,
                       strict: bool = False, workers: int = 1, increments=None,
                       label: str = "diffusion", spec: SystemSpec | None = None) -> PathEnsemble:
    """EM for dX = s dB + drift(X) dt, optionally confined to X > lower."""
    if lower is not None and not x0 > lower:
        raise DomainError(f"x0 = {x0} must exceed the lower boundary {lower}")

    def advance(state, dB, dt):
        X = state[0]
        return (X + dB + drift(X) * dt,)

    if lower is None:
        def inside(state):
            return np.isfinite(state[0])
    else:
        def inside(state):
            return np.isfinite(state[0]) & (state[0] > lower)

    def run(paths):
        saved, v = _step_loop(mc, paths, (np.full(len(paths), float(x0)),), advance, inside,
                              increments)
        return saved, v

    parts = _map_paths(run, mc.n_paths, workers)
    return _finish(label, mc, spec, [p[0] for p in parts], sum(p[1] for p in parts), strict,
                   with_u=False)


class DriftTable:
    """Cubic-spline table of b_lam(x) = d/dx ln psi_lam(x) over an x-range.

    For the Calogero-Moser kinds the smooth function x*b(x) is splined in
    log x on a geometric grid, so the 1/x singularity at the origin is
    carried exactly; below the grid x*b is held at its first value.  Toda
    splines b / (1 + e^{-x}) on a uniform grid.  Points beyond the upper end (and, for Toda, below
    the lower end) are evaluated directly by quadrature.
    """

    def __init__(self, spec: SystemSpec, lam: float, lo: float, hi: float,
                 quad: QuadratureSpec = DEFAULT_QUAD, n_grid: int = 600):
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.spec, self.lam, self.quad = spec, float(lam), quad
        self.lo, self.hi = float(lo), float(hi)
        self.log_space = spec.positive_x
        if self.log_space:
            if not lo > 0:
                raise DomainError("drift table for this system needs lo > 0")
            grid = np.geomspace(lo, hi, n_grid)
            vals = grid * eigen.log_psi_drift(spec, lam, grid, quad)
            self._spline = CubicSpline(np.log(grid), vals)
        else:
            # b grows like e^{-x} to the left; spline b / (1 + e^{-x}) instead
            grid = np.linspace(lo, hi, n_grid)
            vals = eigen.log_psi_drift(spec, lam, grid, quad) / (1.0 + np.exp(-grid))
            self._spline = CubicSpline(grid, vals)
        self.grid = grid

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        if self.log_space:
            low = x < self.lo
            mid = ~low & (x <= self.hi)
            out[low] = self._spline(math.log(self.lo)) / x[low]
            out[mid] = self._spline(np.log(x[mid])) / x[mid]
            far = x > self.hi
        else:
            mid = (x >= self.lo) & (x <= self.hi)
            out[mid] = self._spline(x[mid]) * (1.0 + np.exp(-x[mid]))
            far = ~mid
        if np.any(far):
            bad = far & ~np.isfinite(x)
            ok = far & np.isfinite(x)
            if self.log_space:
                ok &= x > 0
            out[bad] = np.nan
            if np.any(ok):
                out[ok] = eigen.log_psi_drift(self.spec, self.lam, x[ok], self.quad)
        return out


def target_drift_table(spec: SystemSpec, lam: float, x0: float, mc: McConfig,
                       quad: QuadratureSpec = DEFAULT_QUAD) -> DriftTable:
    """Drift table covering the range a target path from x0 plausibly explores."""
    spread = 8.0 * max(mc.noise_scale, 1e-3) * math.sqrt(mc.horizon) + 2.0
    hi = x0 + (abs(lam) + 2.0) * mc.horizon + spread
    if spec.positive_x:
        lo = min(1e-3, 0.1 * x0)
    else:
        lo = x0 - spread
    return DriftTable(spec, lam, lo, hi, quad)


def simulate_target(spec: SystemSpec, lam: float, x0: float, mc: McConfig,
                    quad: QuadratureSpec = DEFAULT_QUAD, strict: bool = False,
                    workers: int = 1, increments=None) -> PathEnsemble:
    """EM for dX = s dB + b_lam(X) dt with b_lam = d/dx ln psi_lam."""
    sy.check_x(spec, x0)
    if spec.kind is Kind.HYPERBOLIC_II:
        sy.check_lambda(spec, lam)
    table = target_drift_table(spec, lam, x0, mc, quad)
    ens = simulate_diffusion(table, x0, mc, lower=0.0 if spec.positive_x else None,
                             strict=strict, workers=workers, increments=increments,
                             label="target", spec=spec)
    ens.extra["lam"] = float(lam)
    return ens


# ---------------------------------------------------------------------------
# Pitman construction


def pitman_initial(lam: float, x: float, p):
    """Inverse CDF of the law on [-x, x] with density proportional to e^{lam u}."""
    p = np.asarray(p, dtype=float)
    if x == 0:
        return np.zeros_like(p)
    if abs(lam) * x < 1e-12:
        return -x + 2.0 * x * p
    if lam > 0:
        return x + np.log(p + (1.0 - p) * np.exp(-2.0 * lam * x)) / lam
    a = -lam
    return -x - np.log(1.0 - p + p * np.exp(-2.0 * a * x)) / a


def pitman_transform(u_path_min, u, u0, x):
    """X = U - min(2 inf U, U_0 - x) given the running infimum of U."""
    return u - np.minimum(2.0 * u_path_min, u0 - x)


def pitman_paths(lam: float, x: float, mc: McConfig, workers: int = 1) -> PathEnsemble:
    """(X, U) with U a Brownian motion with drift lam and X = U - min(2 inf U, U_0 - x).

    The running infimum includes the exact minimum of the Brownian bridge
    within each step, sampled as (a + b - sqrt((b-a)^2 - 2 s^2 dt ln V)) / 2,
    so X has no discretisation bias at the grid times.
    """
    if not x >= 0:
        raise DomainError("pitman_paths needs x >= 0")
    lam = float(lam)
    dt, steps, every = mc.dt, mc.n_steps, mc.save_every
    s2dt = mc.noise_scale**2 * dt
    paths_all = np.arange(mc.n_paths)
    U0_all = pitman_initial(lam, x, rn.path_uniforms(mc.seed, paths_all))

    def run(paths):
        noise = _noise(mc, paths, None)
        U0 = U0_all[paths]
        U = U0.copy()
        m = U0.copy()
        n_save = steps // every + 1
        xs, us = np.empty((len(paths), n_save)), np.empty((len(paths), n_save))
        xs[:, 0] = pitman_transform(m, U, U0, x)
        us[:, 0] = U
        for s0 in range(0, steps, _BLOCK):
            nb = min(_BLOCK, steps - s0)
            block = mc.noise_scale * noise(s0, nb)
            V = rn.path_bridge_uniforms(mc.seed, paths, s0, nb)
            for j in range(nb):
                Un = U + block[:, j] + lam * dt
                bridge_min = 0.5 * (U + Un - np.sqrt((Un - U) ** 2 - 2.0 * s2dt * np.log(V[:, j])))
                m = np.minimum(m, bridge_min)
                U = Un
                k = s0 + j + 1
                if k % every == 0:
                    xs[:, k // every] = pitman_transform(m, U, U0, x)
                    us[:, k // every] = U
        return xs, us

    parts = _map_paths(run, mc.n_paths, workers)
    ens = _finish("pitman", mc, None, parts, 0, False)
    ens.extra.update(lam=lam, x=float(x))
    return ens


def coth_drift(lam: float):
    """x -> lam coth(lam x), continuously extended to 1/x at lam = 0."""
    lam = float(lam)
    if lam == 0.0:
        return lambda X: 1.0 / X
    return lambda X: lam / np.tanh(lam * X)


def simulate_pitman_target(lam: float, x: float, mc: McConfig, scale: float = 1.0,
                           strict: bool = False, workers: int = 1) -> PathEnsemble:
    """EM for dX = s dB + scale * lam coth(lam X) dt on X > 0 from X_0 = x."""
    if not x > 0:
        raise DomainError("the coth diffusion needs x > 0")
    base = coth_drift(lam)
    return simulate_diffusion(lambda X: scale * base(X), x, mc, lower=0.0, strict=strict,
                              workers=workers, label="pitman-target")


def semiclassical_initial(spec: SystemSpec, lam: float, x: float, weight: float, n: int,
                          seed: int, quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """n draws of U_0 from nu_x computed with kernel power ``weight`` (K^w)."""
    if not weight > 0:
        raise HypothesisError("kernel power must be positive")
    q = QuadratureSpec(quad.n_panels, quad.rel_tol, quad.truncation_margin, float(weight),
                       quad.order, quad.max_panels)
    mc = McConfig(n_paths=n, dt=1.0, horizon=1.0, seed=seed, noise_scale=weight**-0.5, lam=lam)
    return _initial_u(spec, float(lam), float(x), None, mc, q)
