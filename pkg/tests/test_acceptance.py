"""Full-scale acceptance experiments, one test per criterion.

Each test prints a single ``[PASS]`` or ``[FAIL]`` line and asserts the
criterion at its stated tolerance.  Select them with ``-m acceptance`` or
skip them with ``-m "not acceptance"``.
"""

import pytest

from dimerlab.recipes import CRITERIA, run_criterion


@pytest.mark.acceptance
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys):
    res = run_criterion(k)
    with capsys.disabled():
        print("\n" + res.line() + f"  ({res.seconds:.0f} s)")
    assert res.passed, res.line()
