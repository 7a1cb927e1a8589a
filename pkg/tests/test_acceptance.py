"""Numbered acceptance criteria, one test each, at their stated tolerances.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary so they survive output capture.
"""
import pytest

from kinklab.acceptance import CRITERIA, run

pytestmark = pytest.mark.slow

NUMBERED = list(enumerate(CRITERIA, start=1))


@pytest.mark.parametrize("number,name", NUMBERED, ids=[f"{i}-{n}" for i, n in NUMBERED])
def test_criterion(number, name, acceptance_log):
    res = run(name)
    line = f"criterion {number}: {res.line()}"
    print(line)
    acceptance_log.append(line)
    details = ", ".join(f"{k}={v:.4g}" for k, v in res.values.items() if isinstance(v, float))
    assert res.passed, f"{line}\n{details}"

