import numpy as np
import pytest
from scipy.interpolate import BSpline

from funmix.design import CovariateSpec, build_design, from_simulated
from funmix.simulate import ScenarioConfig, generate


def cox_de_boor(knots, k, t, degree=3):
    """Textbook recursion for ``B_{k,degree}(t)``; right-continuous, with the
    last non-degenerate interval closed so ``t = knots[-1]`` is covered."""
    knots = np.asarray(knots, dtype=float)
    if degree == 0:
        lo, hi = knots[k], knots[k + 1]
        if lo <= t < hi:
            return 1.0
        last = np.max(np.nonzero(knots < knots[-1])[0])
        return 1.0 if (t == knots[-1] and k == last) else 0.0
    out = 0.0
    d1 = knots[k + degree] - knots[k]
    if d1 > 0:
        out += (t - knots[k]) / d1 * cox_de_boor(knots, k, t, degree - 1)
    d2 = knots[k + degree + 1] - knots[k + 1]
    if d2 > 0:
        out += (knots[k + degree + 1] - t) / d2 * cox_de_boor(knots, k + 1, t, degree - 1)
    return out


def basis_element(spec, k):
    """Single basis function as a scipy spline, for vectorized oracles."""
    c = np.zeros(spec.num_basis)
    c[k] = 1.0
    return BSpline(spec.knots, c, 3, extrapolate=False)


def riemann(f, lo, hi, m=10**6):
    """Midpoint sum with ``m`` cells."""
    h = (hi - lo) / m
    t = lo + h * (np.arange(m) + 0.5)
    return h * np.sum(f(t), axis=-1)


@pytest.fixture(scope="session")
def study1_normal():
    sim = generate(ScenarioConfig(model="normal", n=100), np.random.default_rng(11))
    design = build_design(from_simulated(sim), default=CovariateSpec(K=6))
    return sim, design


@pytest.fixture(scope="session")
def study1_zimp():
    sim = generate(ScenarioConfig(model="zimp", n=150), np.random.default_rng(5))
    design = build_design(from_simulated(sim), default=CovariateSpec(K=5))
    return sim, design


ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""
    def _report(criterion: int, passed: bool, detail: str):
        line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[criterion] = line
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
