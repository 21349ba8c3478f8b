from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import MINI_CORPUS  # noqa: E402

from dualinf.corpus import load_corpus  # noqa: E402


@pytest.fixture
def mini_corpus():
    return load_corpus(MINI_CORPUS)


@pytest.fixture(autouse=True)
def _no_api_key(monkeypatch):
    monkeypatch.delenv("DUALINF_API_KEY", raising=False)


# --- acceptance summary ------------------------------------------------------

_ACCEPTANCE: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        notes = "; ".join(v for k, v in item.user_properties if k == "notice")
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE.append((number, title, status, notes))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, notes in sorted(_ACCEPTANCE):
        line = f"criterion {number}: {status}  {title}"
        if notes:
            line += f"  [{notes}]"
        terminalreporter.write_line(line)
