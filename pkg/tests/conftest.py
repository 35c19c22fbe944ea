import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fbsde_tree import TreeTopology  # noqa: E402


@pytest.fixture(scope="session")
def rademacher3():
    return TreeTopology(3)


@pytest.fixture(scope="session")
def skewed4():
    return TreeTopology.two_point(4, a=2.0)


@pytest.fixture(scope="session")
def trinomial3():
    # zero mean, unit variance three-point law
    return TreeTopology(3, (-1.5, 0.0, 1.5), (2 / 9, 5 / 9, 2 / 9))
