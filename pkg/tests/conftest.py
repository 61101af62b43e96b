import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = Path(__file__).parent / "golden"

_acceptance_lines: list[str] = []


def golden(name: str) -> dict:
    return json.loads((GOLDEN / name).read_text())


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""
    def _report(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
