"""Every acceptance criterion at its stated tolerance and runtime budget.

Each test records one ``[PASS]``/``[FAIL]`` line, printed in the terminal summary
under "acceptance criteria", and asserts the result.  The seed is fixed at 1;
override with ``RDBOUNDS_ACCEPTANCE_SEED``.
"""

import os

import pytest

from conftest import ACCEPTANCE_LINES
from rdbounds.acceptance import CRITERIA

SEED = int(os.environ.get("RDBOUNDS_ACCEPTANCE_SEED", "1"))
THREADS = os.cpu_count() or 1


# budgets above a minute are marked slow so `-m "not slow"` gives a quick pass
PARAMS = [pytest.param(c, id=f"criterion_{c.cid:02d}", marks=[pytest.mark.slow] if c.budget > 60 else [])
          for c in CRITERIA]


@pytest.mark.parametrize("crit", PARAMS)
def test_criterion(crit, request):
    result = crit.run(SEED, THREADS)
    request.config.stash.setdefault(ACCEPTANCE_LINES, []).append(result.line())
    print(result.line())
    assert result.passed, result.line()


def test_all_criteria_registered():
    assert [c.cid for c in CRITERIA] == list(range(1, 13))
