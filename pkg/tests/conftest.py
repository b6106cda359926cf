import numpy as np
import pytest

from bloch_beam.bands import BandSampler
from bloch_beam.config import OrbitBlock
from bloch_beam.lattice import LatticeSpec
from bloch_beam.pipeline import run_slice

TWO_PI_EYE = 2 * np.pi * np.eye(3)
WEAK_TERMS = {(1, 0, 0): 0.05, (0, 1, 0): 0.05}
# inversion-breaking variant used where nonzero geometric data are needed
CHIRAL_TERMS = {
    (1, 0, 0): 0.05, (0, 1, 0): 0.05, (0, 0, 1): 0.05,
    (1, 1, 0): 0.03j, (0, 1, 1): 0.03j, (1, 0, 1): 0.02j,
}


def lattice(terms=None) -> LatticeSpec:
    return LatticeSpec.from_cosines(*TWO_PI_EYE, terms or {})


@pytest.fixture(scope="session")
def free_sampler():
    return BandSampler.build(lattice(), 2.0)


@pytest.fixture(scope="session")
def weak_sampler():
    return BandSampler.build(lattice(WEAK_TERMS), 3.0)


@pytest.fixture(scope="session")
def chiral_sampler():
    return BandSampler.build(lattice(CHIRAL_TERMS), 3.0)


@pytest.fixture(scope="session")
def free_slice(free_sampler):
    return run_slice(free_sampler, 0.09, 0.0, orbit=OrbitBlock(E0=0.09))


@pytest.fixture(scope="session")
def weak_slice(weak_sampler):
    E0 = weak_sampler.energy([0, 0, 0]) + 0.09
    return run_slice(weak_sampler, E0, 0.0, orbit=OrbitBlock(E0=E0))


@pytest.fixture(scope="session")
def chiral_slice(chiral_sampler):
    E0 = chiral_sampler.energy([0, 0, 0]) + 0.09
    return run_slice(chiral_sampler, E0, 0.15, orbit=OrbitBlock(E0=E0, k3=0.15))


# --- acceptance report: one pass/fail line per criterion ---------------------

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    if hasattr(item, "callspec"):
        detail = f"{item.callspec.id}: {detail}"
    _, status, details = _CRITERIA.get(number, (title, "PASS", []))
    if not rep.passed:
        status = "FAIL"
    _CRITERIA[number] = (title, status, details + [detail] if detail else details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, details = _CRITERIA[number]
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(line + (f" [{'; '.join(details)}]" if details else ""))
