import pytest

from pnp.core.checks import SUITES, run_suites


@pytest.mark.parametrize("suite", list(SUITES))
def test_suite_passes(suite):
    results = run_suites([suite], seed=3)
    assert results
    failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
    assert not failed


def test_suites_are_reproducible():
    first = run_suites(["gamma", "limiter"], seed=11)
    second = run_suites(["gamma", "limiter"], seed=11)
    assert [r.value for r in first] == [r.value for r in second]
