from __future__ import annotations

from pathlib import Path

import pytest

from lorawan_qos.model import GroupSpec, LoadVector, Scenario
from lorawan_qos.phy import build_mcs_table

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"


def single_mcs_scenario(n_motes: int = 1000, total_rate: float = 0.5, mcs: int = 5, **kwargs):
    """Scenario with every mote of one group on ``mcs``; returns (scenario, group, loads)."""
    payload = kwargs.pop("payload_bytes", 51)
    group = GroupSpec(n_motes, total_rate / n_motes, 0.01)
    scenario = Scenario((group,), build_mcs_table(payload_bytes=payload), **kwargs)
    loads = LoadVector.single(mcs, total_rate, scenario.m_count)
    return scenario, group, loads


@pytest.fixture(scope="session")
def sec6():
    return single_mcs_scenario()


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
