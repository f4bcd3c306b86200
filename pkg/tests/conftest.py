import numpy as np
import pytest

from relchoice.event_graph import Event, GraphState, replay


def random_log(n_nodes: int, n_events: int, seed: int, ties: bool = False) -> list[Event]:
    """Events between random distinct nodes at non-decreasing times."""
    rng = np.random.default_rng(seed)
    out, t = [], 0
    for _ in range(n_events):
        t += int(rng.integers(0, 2)) if ties else 1
        i = int(rng.integers(n_nodes))
        j = int(rng.integers(n_nodes - 1))
        j += j >= i
        out.append(Event(t, i, j))
    return out


@pytest.fixture
def small_log():
    return random_log(12, 60, seed=3)


@pytest.fixture
def small_state(small_log):
    return replay(GraphState(12), small_log)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines after the run, one per criterion."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
