"""The acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import os

import pytest

from polyak_lsa.acceptance import CRITERIA, run_criterion

THREADS = int(os.environ.get("POLYAK_LSA_TEST_THREADS", "0")) or None


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(number, capsys):
    res = run_criterion(number, threads=THREADS)
    with capsys.disabled():
        print(f"\n{res.line()}")
    assert res.passed, f"criterion {number} failed: {res.metrics}"
    assert res.within_budget, f"criterion {number} took {res.seconds:.1f}s > {res.budget:g}s"
