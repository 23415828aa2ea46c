import pytest

from mfglift.coefficients import CoefficientSet, MFGModel, certify_set, parse_coefficient
from mfglift.measures import GridMeasure
from mfglift.ncn_solver import LQSpec, lq_model, solve_lq_riccati, solve_ncn_fixed_point


def make_model(b, sigma, f, g, mean=0.0, var=0.25, x_min=-4.0, dx=0.02, n=401, T=1.0, a=(-3.0, 3.0), b0="0", sigma0="0"):
    """Certified model from coefficient strings and a normal initial law."""
    cs = CoefficientSet(*(parse_coefficient(s, k) for s, k in zip((b, sigma, f, g, b0, sigma0), ("b", "sigma", "f", "g", "b0", "sigma0"))))
    cs, _ = certify_set(cs, T=T)
    init = GridMeasure.normal(mean, var, x_min, dx, n)
    return MFGModel(cs, T, a[0], a[1], init, initial_law=f"normal({mean!r}, {var!r})")


@pytest.fixture(scope="session")
def lq_initial():
    return GridMeasure.normal(0.0, 0.25, -4.0, 0.02, 401)


@pytest.fixture(scope="session")
def lq_base(lq_initial):
    """Grid equilibrium of the LQ game at a moderate time step."""
    return solve_ncn_fixed_point(lq_model(LQSpec(), lq_initial), 2e-3)


@pytest.fixture(scope="session")
def lq_riccati(lq_initial):
    return solve_lq_riccati(LQSpec(), lq_initial, 1.0, 2e-3)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
