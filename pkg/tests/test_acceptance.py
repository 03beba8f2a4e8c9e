"""Acceptance criteria 1 to 10.

Each test records a one-line verdict in ``conftest.ACCEPTANCE``; the
terminal summary prints one PASS/FAIL line per criterion.  Run directly with
``python3 tests/test_acceptance.py`` or as part of ``pytest``.
"""

import math
import time

import numpy as np
import pytest

from backlund import classical as cl
from backlund import eigen as eg
from backlund import stochastic as st
from backlund import systems as sy
from backlund import todachain as tc
from backlund import verify as vf

from conftest import ACCEPTANCE, all_specs

WORKERS = 4
SEED = 11


def _record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, detail


def _signed_cap(spec, frac):
    return frac * (spec.cap if math.isfinite(spec.cap) else 1.0)


def _law_grid():
    h2 = sy.hyperbolic2(1.0, 1.0)
    return [(sy.toda(), 0.0, 0.0), (sy.toda(), 0.5, 0.0), (sy.rational(), 0.0, 1.0),
            (sy.rational(), 1.0, 1.0), (h2, 0.0, 1.0), (h2, 0.5, 1.0)]


def _control_lam(spec, lam):
    return min(0.5, 0.5 * spec.cap) if lam == 0 else 0.0


def test_criterion_01_identity_suite():
    t0 = time.perf_counter()
    worst_grad, worst_kernel = 0.0, 0.0
    for spec in all_specs():
        grid = vf.random_grid(spec, 50, seed=0)
        worst_grad = max(worst_grad, vf.backlund_identity_report(spec, grid).max_abs)
        for lam in (0.0, 0.5, _signed_cap(spec, -0.9)):
            rep = vf.intertwining_kernel_residual(spec, lam, grid, h=1e-3)
            worst_kernel = max(worst_kernel, rep.max_abs)
    dt = time.perf_counter() - t0
    ok = worst_grad <= 1e-10 and worst_kernel <= 1e-5 and dt < 10
    _record(1, ok, f"r_grad {worst_grad:.2e}, kernel {worst_kernel:.2e}, {dt:.1f}s")


def test_criterion_02_operator_intertwining():
    t0 = time.perf_counter()
    worst, ratios = 0.0, []
    for spec in all_specs():
        for bump, x in vf.default_bumps(spec):
            a = vf.intertwining_operator_residual(spec, 0.5, bump, x, h=1e-3)
            b = vf.intertwining_operator_residual(spec, 0.5, bump, x, h=2.5e-4)
            worst = max(worst, a)
            ratios.append(a / b)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and all(8 <= r <= 32 for r in ratios) and dt < 60
    _record(2, ok, f"max {worst:.2e}, ratio {min(ratios):.1f}..{max(ratios):.1f}, {dt:.1f}s")


def test_criterion_03_eigen_suite():
    t0 = time.perf_counter()
    worst, sym = 0.0, 0.0
    for spec in all_specs():
        for lam in (0.0, 0.3, -0.3, _signed_cap(spec, 0.9), _signed_cap(spec, -0.9)):
            for x in (0.3, 1.0, 2.5):
                worst = max(worst, eg.eigen_residual(spec, lam, x, h=1e-3))
                a, b = eg.psi(spec, lam, x), eg.psi(spec, -lam, x)
                sym = max(sym, abs(a - b) / a)
    psi0 = eg.psi(sy.rational(), 0.0, 1.0)
    ratio = eg.closed_form_ratio(sy.rational(), 0.0, 1.0)
    dt = time.perf_counter() - t0
    ok = (worst <= 1e-5 and sym <= 1e-8 and abs(psi0 - 4 / 3) <= 1e-10
          and abs(ratio - 2) <= 1e-8 and dt < 30)
    _record(3, ok, f"eigen {worst:.2e}, symmetry {sym:.1e}, psi0(1) {psi0:.12f}, "
                   f"ratio {ratio:.10f}, {dt:.1f}s")


def test_criterion_04_classical_flow():
    t0 = time.perf_counter()
    # the three lambda = 0 closed-form cases: (spec, x0, horizon, exact endpoint)
    cases = [(sy.toda(), 0.0, 1.0, math.log(2)), (sy.rational(), 1.0, 4.0, 3.0),
             (sy.hyperbolic1(1.0, 1.0), math.acosh(1.5), 0.5, math.acosh(2))]
    lams = {sy.Kind.TODA: (0.7, -0.4), sy.Kind.RATIONAL: (1.0, -0.5),
            sy.Kind.HYPERBOLIC_I: (0.5, -1.2), sy.Kind.HYPERBOLIC_II: (1.0, -1.5)}
    x0s = {sy.Kind.TODA: 0.0, sy.Kind.RATIONAL: 1.0, sy.Kind.HYPERBOLIC_I: 1.0,
           sy.Kind.HYPERBOLIC_II: 1.0}
    worst_end, worst_u, worst_lax = 0.0, 0.0, 0.0
    runs = [(s, 0.0, x0, T) for s, x0, T, _ in cases]
    runs += [(s, lam, x0s[s.kind], 1.0) for s in all_specs() for lam in lams[s.kind]]
    for spec, lam, x0, T in runs:
        tr = cl.flow_rk4(spec, lam, x0, T, 1e-3)
        worst_end = max(worst_end, abs(tr.xs[-1] - cl.flow_exact(spec, lam, x0, T).x))
        r_u, r_lax, _ = cl.conservation_report(tr)
        worst_u, worst_lax = max(worst_u, r_u), max(worst_lax, r_lax)
    closed = [cl.flow_exact(s, 0.0, x0, T).x - ref for s, x0, T, ref in cases]
    dt = time.perf_counter() - t0
    ok = (worst_end <= 1e-9 and worst_u <= 1e-8 and worst_lax <= 1e-6
          and max(map(abs, closed)) <= 1e-12 and dt < 10)
    _record(4, ok, f"endpoint {worst_end:.2e}, r_u {worst_u:.1e}, r_lax {worst_lax:.1e}, "
                   f"{len(runs)} runs, {dt:.1f}s")


def test_criterion_05_toda_strong_coupling():
    t0 = time.perf_counter()
    fine = st.McConfig(256, 1.25e-3, 1.0, SEED, lam=0.5)
    inc = st.brownian_increments(fine)
    errs = []
    for f in (8, 4, 2, 1):
        mc = st.McConfig(256, 1.25e-3 * f, 1.0, SEED, lam=0.5)
        dB = st.coarsen(inc, f)
        em = st.simulate_backlund(sy.toda(), mc, 0.0, increments=dB)
        ex = st.toda_exact_paths(sy.toda(), mc, 0.0, increments=dB)
        errs.append(float(np.mean(np.abs(em.xs[:, -1] - ex.xs[:, -1]))))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    dt = time.perf_counter() - t0
    ok = all(1.5 <= r <= 2.5 for r in ratios) and dt < 30
    _record(5, ok, "ratios " + ", ".join(f"{r:.2f}" for r in ratios) + f", {dt:.1f}s")


def test_criterion_06_marginal_laws():
    t0 = time.perf_counter()
    worst_p, worst_ctrl, lines = 1.0, 0.0, []
    for spec, lam, x0 in _law_grid():
        mc = st.McConfig(20000, 1e-3, 1.0, SEED)
        res = vf.marginal_law_tests(spec, lam, x0, [0.25, 1.0], mc,
                                    control_lam=_control_lam(spec, lam), workers=WORKERS)
        for (kind, t), rep in res.items():
            if kind == "marginal":
                worst_p = min(worst_p, rep.p_value)
            else:
                worst_ctrl = max(worst_ctrl, rep.p_value)
            lines.append(rep.passed)
    dt = time.perf_counter() - t0
    ok = worst_p > 0.01 and worst_ctrl < 1e-3 and all(lines) and dt < 600
    _record(6, ok, f"min marginal p {worst_p:.3f}, max control p {worst_ctrl:.1e}, {dt:.0f}s")


def test_criterion_07_conditional_laws():
    t0 = time.perf_counter()
    worst = 0.0
    for spec, lam, x0 in _law_grid():
        mc = st.McConfig(40000, 1e-3, 1.0, SEED + 1, lam=lam)
        ens = st.simulate_backlund(spec, vf._law_config(mc, [0.25, 1.0], lam), x0, workers=WORKERS)
        for t in (0.25, 1.0):
            for name, g in (("u", lambda u: u), ("tanh", np.tanh)):
                rep = vf.conditional_law_test(spec, lam, x0, t, g, mc, g_name=name, ensemble=ens)
                worst = max(worst, rep.max_abs)
    dt = time.perf_counter() - t0
    _record(7, worst <= vf.CONDITIONAL_CAP, f"max standardized discrepancy {worst:.2f}, {dt:.0f}s")


def test_criterion_08_pitman():
    t0 = time.perf_counter()
    ps = []
    for lam, x in ((0.0, 1.0), (1.0, 1.0)):
        mc = st.McConfig(20000, 1e-3, 1.0, SEED)
        ps.append(vf.pitman_law_test(lam, x, 1.0, mc, workers=WORKERS).p_value)
    dt = time.perf_counter() - t0
    _record(8, min(ps) > 0.01, "p " + ", ".join(f"{p:.3f}" for p in ps) + f", {dt:.0f}s")


def test_criterion_09_semiclassical_and_gradient_identity():
    uc = float(sy.critical_point(sy.rational(), 1.0, 1.0))
    draws = [st.semiclassical_initial(sy.rational(), 1.0, 1.0, w, 20000, SEED) for w in (1, 10, 100)]
    stds = [d.std() for d in draws]
    offset = abs(draws[-1].mean() - uc)
    worst = 0.0
    for spec in all_specs():
        for lam in (0.0, 0.5, _signed_cap(spec, -0.9)):
            for x in (0.5, 1.0, 2.0):
                worst = max(worst, cl.gradient_identity_residual(spec, lam, x, 1e-4))
    ok = offset <= 0.05 and stds[0] > stds[1] > stds[2] and worst <= 1e-7
    _record(9, ok, f"offset {offset:.4f}, std " + " > ".join(f"{s:.3f}" for s in stds)
            + f", gradient identity {worst:.2e}")


def test_criterion_10_toda_chain():
    t0 = time.perf_counter()
    rows = tc.residual_table(5, [0.5, 1.0, 2.0], h=1e-3)
    worst = max(max(r["r_xy"], r["r_xx"], r["r_chain"]) for r in rows)
    a_err = max(abs(tc.a_n(n, t, 0.3, -0.2) - n / t) / max(1.0, n / t)
                for n in range(1, 6) for t in (0.5, 1.0, 2.0))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and a_err <= 1e-12 and dt < 5
    _record(10, ok, f"residual {worst:.1e}, a_n {a_err:.1e}, {dt:.2f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
