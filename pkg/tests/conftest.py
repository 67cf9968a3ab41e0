import sys

import numpy as np
import pytest

from mtvf.mdp import TabularMDP, build_four_rooms, make_task


def chain_mdp(discount=0.95):
    """s0 -> s1 -> s2 with actions (right, left); s2 is the goal."""
    transition = [[1, 0], [2, 0], [2, 2]]
    return TabularMDP(3, 2, np.array(transition), np.zeros(3, dtype=bool), discount)


@pytest.fixture(scope="session")
def four_rooms():
    return build_four_rooms()


@pytest.fixture
def chain():
    mdp = chain_mdp()
    return mdp, make_task(mdp, 2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
