import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from scipy import special, stats
from scipy.integrate import quad as sciquad

from backlund import eigen as eg
from backlund import systems as sy
from backlund.errors import RangeError
from backlund.rng import RngStream

from conftest import all_specs


def _lam_grid(spec):
    cap = spec.cap if math.isfinite(spec.cap) else 1.0
    return [0.0, 0.3, -0.3, 0.9 * cap, -0.9 * cap]


def test_quadrature_spec_invariants():
    with pytest.raises(ValueError):
        eg.QuadratureSpec(n_panels=4)
    with pytest.raises(ValueError):
        eg.QuadratureSpec(kernel_power=0.0)
    assert eg.DEFAULT_QUAD.rel_tol <= 1e-8


# ---------------------------------------------------------------------------
# psi


def test_psi_rational_symbolic_oracle():
    u, x, lam = sp.symbols("u x lam", positive=True)
    k0 = (x**2 - u**2) / x
    ref0 = sp.integrate(k0, (u, -x, x)).subs(x, 1)
    assert ref0 == sp.Rational(4, 3)
    assert eg.psi(sy.rational(), 0.0, 1.0) == pytest.approx(4 / 3, abs=1e-10)
    ref1 = float(sp.integrate(sp.exp(u) * (1 - u**2), (u, -1, 1)))
    assert ref1 == pytest.approx(4 * (math.cosh(1) - math.sinh(1)), abs=1e-14)
    assert eg.psi(sy.rational(), 1.0, 1.0) == pytest.approx(ref1, rel=1e-10)


def test_psi_hyperbolic1_mu1():
    assert eg.psi(sy.hyperbolic1(1.0, 1.0), 0.0, 1.0) == pytest.approx(1 / math.tanh(1) - 1, rel=1e-10)


def test_psi_hyperbolic2_mu1_partial_fraction_oracle():
    ref, _ = sciquad(lambda v: 1 / (math.cosh(v) + math.cosh(2.0)), 0, 60, epsabs=1e-14)
    assert ref == pytest.approx(2.0 / math.sinh(2.0), rel=1e-10)
    # K = 2 sinh x / (cosh x + cosh u) at mu = 1
    assert eg.psi(sy.hyperbolic2(1.0, 1.0), 0.0, 2.0) == pytest.approx(8.0, rel=1e-10)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.kind.value)
def test_psi_matches_mpmath_quadrature(spec):
    for lam in (0.0, 0.7 * (spec.cap if math.isfinite(spec.cap) else 1.0)):
        for x in (0.4, 1.3):
            lo, hi = (-x, x) if spec.bounded_section else (-mpmath.inf, mpmath.inf)
            f = lambda v: mpmath.exp(sy.log_kernel(spec, lam, x, float(v))) if sy.in_domain(
                spec, x, float(v)) else 0
            ref = float(mpmath.quad(f, [lo, 0, hi]))
            assert eg.psi(spec, lam, x) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("spec", [sy.toda(), sy.rational(), sy.hyperbolic2(1.0, 2.0)],
                         ids=lambda s: s.kind.value)
def test_psi_symmetric_in_lambda(spec):
    for lam in (0.3, 0.9 * (spec.cap if math.isfinite(spec.cap) else 1.0)):
        for x in (0.3, 1.0, 2.5):
            a, b = eg.psi(spec, lam, x), eg.psi(spec, -lam, x)
            assert abs(a - b) / a <= 1e-8


def test_psi_vectorised_and_range_error():
    xs = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(eg.psi(sy.rational(), 0.0, xs), 4 * xs**2 / 3, rtol=1e-10)
    with pytest.raises(RangeError):
        eg.psi(sy.hyperbolic2(1.0, 1.0), 1.0, 1.0)


# ---------------------------------------------------------------------------
# drift


def test_drift_rational_lambda_zero():
    assert eg.log_psi_drift(sy.rational(), 0.0, 1.0) == pytest.approx(2.0, abs=1e-10)


def test_drift_toda_two_quadrature_oracle():
    num, _ = sciquad(lambda v: math.exp(-math.cosh(v)) * math.cosh(v), -40, 40, epsabs=1e-15)
    den, _ = sciquad(lambda v: math.exp(-math.cosh(v)), -40, 40, epsabs=1e-15)
    assert num / den == pytest.approx(special.kv(1, 1.0) / special.kv(0, 1.0), rel=1e-10)
    assert eg.log_psi_drift(sy.toda(), 0.0, 0.0) == pytest.approx(num / den, rel=1e-9)
    for lam, x in ((0.0, 0.0), (0.5, 0.3), (-1.2, -0.5)):
        assert eg.log_psi_drift(sy.toda(), lam, x) == pytest.approx(eg.toda_drift_macdonald(lam, x),
                                                                     rel=1e-9, abs=1e-12)


def test_drift_rational_large_lambda_tends_to_lambda():
    for lam in (10.0, 25.0):
        assert eg.log_psi_drift(sy.rational(), lam, 2.0) == pytest.approx(lam, rel=0.02)


def test_drift_rational_bessel_form():
    # psi up to a constant is lam^{-3/2} sqrt(x) I_{3/2}(lam x)
    for lam, x in ((1.0, 1.0), (0.4, 2.0), (2.0, 0.5)):
        h = 1e-5
        f = lambda v: math.log(math.sqrt(v) * special.iv(1.5, lam * v))
        ref = (f(x + h) - f(x - h)) / (2 * h)
        assert eg.log_psi_drift(sy.rational(), lam, x) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.kind.value)
def test_drift_matches_difference_of_log_psi(spec):
    h = 1e-4
    for lam in (0.0, 0.5 * (spec.cap if math.isfinite(spec.cap) else 1.0)):
        for x in (0.5, 1.0, 2.0):
            fd = (eg.log_psi(spec, lam, x + h) - eg.log_psi(spec, lam, x - h)) / (2 * h)
            assert abs(eg.log_psi_drift(spec, lam, x) - fd) <= 1e-6


def test_drift_rational_lower_bound():
    xs = np.geomspace(0.01, 5.0, 30)
    for lam in (0.0, 1.0, -2.0):
        assert np.all(eg.log_psi_drift(sy.rational(), lam, xs) >= 1 / (2 * xs))


# ---------------------------------------------------------------------------
# eigen residual


def test_eigen_residual_examples():
    assert eg.eigen_residual(sy.rational(), 1.0, 1.0, h=1e-3) < 1e-5
    assert eg.eigen_residual(sy.hyperbolic2(1.0, 1.0), 0.0, 1.3, h=1e-3) < 1e-5
    assert eg.eigen_residual(sy.toda(), 0.5, 0.4, h=1e-3) < 1e-5


@pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.kind.value)
def test_eigen_residual_grid(spec):
    h = 1e-3
    tol = max(10 * h * h, 100 * eg.DEFAULT_QUAD.rel_tol)
    for lam in _lam_grid(spec):
        for x in (0.3, 1.0, 2.5):
            assert eg.eigen_residual(spec, lam, x, h=h) <= tol


def test_eigen_residual_detects_wrong_eigenvalue():
    # the (sinh eps x)^mu candidate for hyperbolic II solves the equation at lam = eps*mu
    spec = sy.hyperbolic2(1.0, 2.0)
    h = 1e-3
    for x in (0.7, 1.5):
        f = lambda v: math.log(eg.hyperbolic2_psi0_sinh_form(spec, v))
        second = (math.exp(f(x + h) - f(x)) - 2 + math.exp(f(x - h) - f(x))) / h**2
        res0 = abs(0.5 * second - float(sy.potential(spec, x)))
        res_cap = abs(0.5 * second - float(sy.potential(spec, x)) - 0.5 * spec.cap**2)
        assert res_cap < 1e-5 < res0


# ---------------------------------------------------------------------------
# closed forms


def test_macdonald_and_bessel_against_scipy():
    for nu, z in ((0.0, 1.0), (1.0, 1.0), (0.5, 0.3), (2.7, 4.0)):
        assert eg.macdonald_k(nu, z) == pytest.approx(special.kv(nu, z), rel=1e-12)
    for z in (0.01, 0.3, 0.5, 1.0, 7.0):
        assert eg.bessel_i32(z) == pytest.approx(special.iv(1.5, z), rel=1e-12)


def test_closed_form_examples():
    ref, _ = sciquad(lambda t: math.exp(-math.cosh(t)), 0, 40, epsabs=1e-15)
    assert eg.psi_closed_form(sy.toda(), 0.0, 0.0) == pytest.approx(2 * ref, rel=1e-12)
    assert eg.psi(sy.toda(), 0.0, 0.0) == pytest.approx(2 * ref, rel=1e-10)
    cf = eg.psi_closed_form(sy.rational(), 1.0, 1.0)
    assert cf == pytest.approx(2 * (math.cosh(1) - math.sinh(1)), rel=1e-12)
    assert eg.psi(sy.rational(), 1.0, 1.0) / cf == pytest.approx(2.0, abs=1e-8)
    assert eg.closed_form_ratio(sy.hyperbolic1(1.0, 1.0), 0.0, 1.0) == pytest.approx(1.0, abs=1e-10)
    assert eg.psi_closed_form(sy.hyperbolic1(1.0, 2.0), 0.0, 1.0) is None


def test_rational_ratio_two_at_lambda_zero():
    assert eg.closed_form_ratio(sy.rational(), 0.0, 1.0) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("spec,expected", [
    (sy.toda(), 1.0), (sy.rational(), 2.0), (sy.hyperbolic1(1.0, 1.0), 1.0),
    (sy.hyperbolic2(1.0, 1.0), math.pi / 4), (sy.hyperbolic2(1.0, 2.0), math.pi / 8),
    (sy.hyperbolic2(1.0, 1.5), math.pi / 2**2.5)], ids=lambda v: getattr(getattr(v, "kind", None),
                                                                         "value", str(v)))
def test_closed_form_ratio_constant_in_x(spec, expected):
    cap = spec.cap if math.isfinite(spec.cap) else 1.0
    for lam in (0.0, 0.5 * cap):
        r = np.array([eg.closed_form_ratio(spec, lam, x) for x in (0.3, 0.7, 1.0, 1.5, 2.5)])
        assert r.std() / r.mean() < 1e-6
        assert r.mean() == pytest.approx(expected, rel=1e-8)


# ---------------------------------------------------------------------------
# nu_x


def test_nu_expectation_examples():
    assert eg.nu_expectation(sy.toda(), 0.7, 0.3, lambda u: np.ones_like(u)) == pytest.approx(1.0, abs=1e-12)
    assert eg.nu_expectation(sy.rational(), 0.0, 1.0, lambda u: u * u) == pytest.approx(0.2, abs=1e-12)
    assert eg.nu_expectation(sy.toda(), 0.0, 0.0, lambda u: u) == pytest.approx(0.0, abs=1e-12)


def test_nu_expectation_matches_scipy_quadrature():
    spec = sy.hyperbolic1(1.0, 2.0)
    x, lam = 1.2, 0.8
    k = lambda v: math.exp(sy.log_kernel(spec, lam, x, v))
    num, _ = sciquad(lambda v: math.tanh(v) * k(v), -x, x, epsabs=1e-14)
    den, _ = sciquad(k, -x, x, epsabs=1e-14)
    assert eg.nu_expectation(spec, lam, x, np.tanh) == pytest.approx(num / den, rel=1e-9)


def test_sample_nu_rational_moments():
    draws = eg.sample_nu(sy.rational(), 0.0, 1.0, eg.DEFAULT_QUAD, RngStream(3), 40000)
    assert np.all(np.abs(draws) < 1)
    se = math.sqrt(0.2 / 40000)
    assert abs(draws.mean()) < 5 * se
    assert draws.var() == pytest.approx(0.2, abs=0.01)


@pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.kind.value)
def test_sample_nu_ks_against_table(spec):
    lam = 0.5 * (spec.cap if math.isfinite(spec.cap) else 1.0)
    table = eg.nu_table(spec, lam, 1.0)
    draws = eg.sample_nu(spec, lam, 1.0, eg.DEFAULT_QUAD, RngStream(11, 4), 10000)
    assert stats.kstest(draws, table.cdf).pvalue > 0.01


def test_sample_nu_table_cdf_against_quadrature():
    spec, lam, x = sy.hyperbolic2(1.0, 2.0), 1.0, 0.8
    table = eg.nu_table(spec, lam, x)
    k = lambda v: math.exp(sy.log_kernel(spec, lam, x, v))
    total = sum(sciquad(k, a, b, epsabs=1e-14)[0] for a, b in ((-80, 0), (0, 80)))
    for v in (-1.0, 0.0, 1.5):
        ref = sciquad(k, -80, v, epsabs=1e-14, limit=200)[0] / total
        assert float(table.cdf(v)) == pytest.approx(ref, abs=1e-6)


def test_sample_nu_semiclassical_concentration():
    quad = eg.QuadratureSpec(kernel_power=100.0)
    draws = eg.sample_nu(sy.rational(), 1.0, 1.0, quad, RngStream(5), 5000)
    assert draws.std() < 0.1
    assert abs(draws.mean() - sy.critical_point(sy.rational(), 1.0, 1.0)) < 0.05


def test_sample_nu_scalar_draw():
    v = eg.sample_nu(sy.toda(), 0.0, 0.0, eg.DEFAULT_QUAD, RngStream(1))
    assert isinstance(v, float)
