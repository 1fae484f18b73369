import json
from pathlib import Path

import pytest

from dagsearch.plan import parse_plan

FIXTURES = Path(__file__).parent / "fixtures"

COKE_QUERY = (
    "In early October 2024, among coal products, what is the price increase "
    "of coke (quasi-first-grade metallurgical coke)?"
)


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture
def coke_plan_text():
    return fixture_text("coke_plan.txt")


@pytest.fixture
def coke_plan(coke_plan_text):
    return parse_plan(coke_plan_text)


@pytest.fixture
def coke_trace():
    return fixture_text("coke_trace.txt")


@pytest.fixture
def coke_script_path():
    return FIXTURES / "coke_script.json"


@pytest.fixture
def group_script():
    return json.loads(fixture_text("group_script.json"))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
