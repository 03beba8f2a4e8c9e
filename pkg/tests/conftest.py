import numpy as np
import pytest

from backlund import systems as sy

ACCEPTANCE = {}


def all_specs():
    return [sy.toda(), sy.rational(), sy.hyperbolic1(1.0, 1.0), sy.hyperbolic2(1.0, 2.0)]


@pytest.fixture(params=all_specs(), ids=lambda s: f"{s.kind.value}-mu{s.mu:g}")
def spec(request):
    return request.param


def interior_points(spec, n, seed=0):
    """Random points well inside the domain, away from the boundary by a margin."""
    rng = np.random.default_rng(seed)
    if spec.kind is sy.Kind.TODA:
        return rng.uniform(-1.5, 2.0, n), rng.uniform(-2.0, 2.0, n)
    if spec.bounded_section:
        x = rng.uniform(0.5, 3.0, n)
        return x, rng.uniform(-0.8, 0.8, n) * x
    return rng.uniform(0.3, 3.0, n), rng.uniform(-3.0, 3.0, n)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
