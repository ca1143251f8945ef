"""Property-check module tests, including a sabotage control that the
rank-consistency check actually detects a corrupted index."""

import numpy as np

from rpaf.properties import (
    CheckResult,
    check_budget_strictness,
    check_gradients,
    check_jensen,
    check_monotonicity,
    check_oracle_equivalence,
    check_rank_consistency,
    exhaustive_best,
    run_property_checks,
    scan_minimizer,
)


def test_check_result_line_format():
    assert CheckResult("foo", True, "ok").line() == "PASS foo: ok"
    assert CheckResult("foo", False, "bad").line() == "FAIL foo: bad"


def test_exhaustive_best_small_cases():
    assert exhaustive_best([3.0, 1.0, 2.0], 2) == 5.0
    assert exhaustive_best([-1.0, -2.0], 1) == -1.0
    assert exhaustive_best([1.0], 0) == 0.0


def test_scan_minimizer_tracks_closed_form_for_mse():
    # stationary point of -dq*a + alpha*(a-m)^2 is m + dq/(2*alpha)
    for dq, alpha, m in ((0.4, 1.0, 0.5), (-0.6, 2.0, 0.7), (0.0, 0.5, 0.3)):
        got = scan_minimizer(dq, alpha, "mse", m)
        want = min(1.0, max(0.0, m + dq / (2 * alpha)))
        assert abs(got - want) <= 2e-3


def test_individual_checks_pass_quickly():
    rng = np.random.default_rng(0)
    assert check_oracle_equivalence(rng, n_max=6, vectors=5).passed
    assert check_monotonicity(alphas=(1.0,), steps=21).passed
    assert check_jensen(rng, batches=10).passed
    assert check_gradients(rng, trials=2).passed
    assert check_budget_strictness(seeds=1, hours=12).passed
    assert check_rank_consistency(rng).passed


def test_rank_consistency_detects_corruption():
    rng = np.random.default_rng(1)
    assert not check_rank_consistency(rng, corrupt=True).passed


def test_run_property_checks_all_green():
    results = run_property_checks(seed=0)
    assert len(results) == 6
    assert all(r.passed for r in results)


def test_run_property_checks_corruption_flagged():
    results = run_property_checks(seed=0, corrupt_rank_index=True)
    assert any(not r.passed for r in results)
