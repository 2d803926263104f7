from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_density(n_sites: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    d = 2 ** n_sites
    a = rng.standard_normal((d, rank or d)) + 1j * rng.standard_normal((d, rank or d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_state(n_sites: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.standard_normal(2 ** n_sites) + 1j * rng.standard_normal(2 ** n_sites)
    return psi / np.linalg.norm(psi)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# acceptance reporting ---------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})
    if report.when == "call":
        entry["ran"] = True
        entry["details"] = [v for k, v in item.user_properties if k == "detail"]
    if report.failed:
        entry["passed"] = False
        if report.when == "call":
            entry["details"] = [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = ("PASS" if entry["passed"] else "FAIL") if entry["ran"] else "NOT RUN"
        details = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number:2d} {status}: {entry['title']}"
                                    + (f" [{details}]" if details else ""))
