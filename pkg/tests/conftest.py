import random
import sys

import pytest
from hypothesis import HealthCheck, settings

from dbmlab.lattice import Cluster

settings.register_profile(
    "dbm", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dbm")


def random_cluster(d: int, n: int, seed: int) -> Cluster:
    """Uniformly random boundary attachments from the origin (an Eden-like shape)."""
    rnd = random.Random(seed)
    c = Cluster(d)
    for _ in range(n):
        c.attach(rnd.choice(c.sorted_boundary()))
    return c


@pytest.fixture
def domino():
    return Cluster.from_sites({(0, 0), (1, 0)})


@pytest.fixture
def domino3():
    return Cluster.from_sites({(0, 0, 0), (1, 0, 0)})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
