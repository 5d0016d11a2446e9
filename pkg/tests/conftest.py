import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spnlearn.graph import Node, SpnGraph  # noqa: E402
from spnlearn.io import parse_spn  # noqa: E402

FIXTURE_TEXT = """\
spn 2 7
node 0 leaf 0 1
node 1 leaf 1 1
node 2 leaf 0 0
node 3 leaf 1 0
node 4 prod 0 1
node 5 prod 2 3
node 6 sum 4:0.3 5:0.7
root 6
"""


@pytest.fixture
def fixture_text() -> str:
    return FIXTURE_TEXT


@pytest.fixture
def two_products():
    """Root sum over P1 = I(x1) I(x2) and P2 = I(~x1) I(~x2), weights (0.3, 0.7)."""
    return parse_spn(FIXTURE_TEXT)


def bernoulli_spn() -> SpnGraph:
    """A single sum node over the two indicators of one variable."""
    nodes = [Node.indicator(0, True), Node.indicator(0, False), Node.sum([0, 1])]
    return SpnGraph(nodes, 2, 1)


@pytest.fixture
def bernoulli():
    return bernoulli_spn()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
