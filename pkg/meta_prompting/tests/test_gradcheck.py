import numpy as np
import pytest

from meta_prompting.gradcheck import (
    ANALYTIC_TOLERANCE,
    PRIMITIVES,
    GradcheckReport,
    OracleResult,
    analytic_quadratic_errors,
    check_analytic,
    check_primitives,
    check_second_order,
    primitive_error,
    run_gradcheck,
)


def test_worked_example_is_exact():
    errors = analytic_quadratic_errors()
    assert set(errors) == {"maml", "maml-hvp", "fomaml", "reptile", "mslb"}
    assert max(errors.values()) < ANALYTIC_TOLERANCE


@pytest.mark.parametrize("primitive", PRIMITIVES, ids=lambda p: p.name)
def test_each_primitive_matches_finite_differences(primitive, rng):
    assert primitive_error(primitive, rng) < 1e-6


def test_oracle_suites_pass(rng):
    for result in (check_primitives(rng, 2), check_second_order(rng, 2), check_analytic(rng, 3)):
        assert result.passed, result.name


def test_report_lines_and_verdict():
    report = GradcheckReport([OracleResult("ok suite", 3, 1e-9, 1e-6), OracleResult("bad suite", 3, 1e-3, 1e-6)])
    assert not report.passed
    assert report.max_error == 1e-3
    lines = report.lines()
    assert len(lines) == 4
    assert lines[1].endswith("ok") and lines[2].endswith("FAIL")


def test_small_full_run():
    report = run_gradcheck(instances=2, seed=0, maml_instances=1)
    assert len(report.results) == 5
    assert report.passed, "\n".join(report.lines())
    assert np.isfinite(report.max_error)
