import json

import numpy as np
import pytest

from sheafdiff import dynamics, verify
from sheafdiff.verify import SUITES, CaseResult, Report, run_all, run_suite


@pytest.mark.parametrize("name", sorted(SUITES))
def test_quick_suites_pass(name):
    results = run_suite(name, "quick", seed=1)
    assert results
    bad = [r for r in results if not r.passed]
    assert not bad, bad[:3]
    for r in results:
        assert r.suite == name
        assert np.isfinite(r.tolerance)


def test_fault_injection_breaks_energy_descent(monkeypatch):
    real = dynamics._JointKernel.laplacian

    def flipped(self, maps, xe, shape):
        return -real(self, maps, xe, shape)

    monkeypatch.setattr(dynamics._JointKernel, "laplacian", flipped)
    results = run_suite("energy_descent", "quick", seed=0)
    failed = [r for r in results if not r.passed]
    assert failed
    assert any("increase" in r.detail or r.measured > 0 for r in failed)
    desc = [r for r in failed if r.case.endswith(":descent")]
    assert desc and all(r.measured > r.tolerance for r in desc)


def test_report_format():
    report = run_all(["oversmoothing", "rotation"], "quick", seed=2)
    data = json.loads(report.to_json())
    assert data["passed"] is True
    assert set(data["suites"]) == {"oversmoothing", "rotation"}
    assert set(data["elapsed_s"]) == {"oversmoothing", "rotation"}
    row = data["results"][0]
    assert set(row) == {"suite", "case", "status", "measured", "tolerance", "detail"}
    assert all(isinstance(r["measured"], float) for r in data["results"])
    mixed = Report([CaseResult("a", "x", "pass", 0.0, 1.0), CaseResult("a", "y", "fail", 2.0, 1.0)], {})
    assert not mixed.passed and [r.case for r in mixed.failures()] == ["y"]
    assert mixed.to_dict()["suites"] == {"a": {"cases": 2, "failed": 1}}


def test_unknown_suite_and_scale():
    with pytest.raises(KeyError):
        run_suite("nope")
    with pytest.raises(KeyError):
        run_suite("oversmoothing", "huge")


def test_limit_lower_bound_matches_p2_instance():
    s, x = verify.p2_instance()
    # the certified P2 instance at k=1: the invariant bound is positive
    assert verify.limit_lower_bound(s, x, 1.0, 1.0) > 0
