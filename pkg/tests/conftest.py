from pathlib import Path

import pytest

from streamsafe.frontend import parse_execution, parse_program

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []

CORPUS = Path(__file__).resolve().parents[1] / "src" / "streamsafe" / "corpus"

LIST3 = """vars loc: x, y, NIL
fields loc: next
@reach list: start={x} pointers={next} stop={NIL}
begin skip end"""

LIST_Z = """vars loc: x, y, NIL, z1, z2, z3
fields loc: next
@reach list: start={x} pointers={next} stop={NIL}
begin skip end"""


def header(text):
    """(signature, spec) of a program text whose body is irrelevant."""
    p = parse_program(text)
    return p.signature, p.spec


def word(text, sig):
    return parse_execution(text, sig)


@pytest.fixture
def list3():
    return header(LIST3)


@pytest.fixture
def listz():
    return header(LIST_Z)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
