"""End-to-end acceptance criteria, one test per criterion.

All criteria run once per session (about half a minute); each test then
prints its one-line verdict and asserts it.  Run directly with
``python tests/test_acceptance.py`` for the plain listing.
"""

import sys

import pytest

from fbsde_tree.acceptance import CRITERIA, format_result, run_acceptance


@pytest.fixture(scope="module")
def results():
    return {r.number: r for r in run_acceptance(seed=0)}


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(results, number, capsys):
    result = results[number]
    with capsys.disabled():
        print("\n" + format_result(result))
    assert result.passed, format_result(result)


def test_every_criterion_reported(results):
    assert sorted(results) == sorted(CRITERIA)


if __name__ == "__main__":
    outcome = run_acceptance(seed=0, progress=lambda r, dt: print(format_result(r), flush=True))
    sys.exit(0 if all(r.passed for r in outcome) else 1)
