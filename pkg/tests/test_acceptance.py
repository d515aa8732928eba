"""Acceptance suite: every primary criterion at its stated tolerance, one verdict line each."""

import pytest

from hypoflow import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    result = acceptance.CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.details
