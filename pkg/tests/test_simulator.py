import numpy as np
import pytest

from eor.consistency import em_grader, rwr
from eor.domain import GoldAnswerSet, IndicatorMatrix
from eor.simulator import (
    CATEGORIES,
    SimOutcome,
    WorldParameters,
    analytic_failure,
    category_rates,
    generate_world,
    random_world_parameters,
    simulate,
    verify_decomposition,
)

POINT = WorldParameters(
    wrong_doc=0.5,
    halluc_correct_doc=0.2,
    extraction_error=0.1,
    halluc_wrong_doc=0.2,
    lucky_guess=0.3,
)


class TestWorldParameters:
    def test_branch_constraint_enforced(self):
        with pytest.raises(ValueError, match="exceed 1"):
            WorldParameters(0.1, 0.7, 0.5, 0.1, 0.1)

    def test_range_enforced(self):
        with pytest.raises(ValueError):
            WorldParameters(1.2, 0.1, 0.1, 0.1, 0.1)


class TestAnalyticFailure:
    def test_error_free_system(self):
        assert analytic_failure(WorldParameters(0.0, 0.0, 0.0, 0.0, 0.0)) == 0.0

    def test_always_lucky_system_never_fails(self):
        assert analytic_failure(WorldParameters(1.0, 0.0, 0.0, 1.0, 1.0)) == 0.0

    def test_reference_point(self):
        # 0.5*0.3 + 0.5*(1 - 0.06) = 0.62
        assert analytic_failure(POINT) == pytest.approx(0.62)

    def test_boundary_extraction_saturates(self):
        params = WorldParameters(0.0, 0.4, 0.6, 0.0, 0.0)
        assert analytic_failure(params) == pytest.approx(1.0)

    def test_category_rates_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            params = random_world_parameters(rng)
            rates = category_rates(params)
            assert sum(rates.values()) == pytest.approx(1.0)
            failure = rates["hallucination_wrong"] + rates["extraction_wrong"] + rates["grounded_wrong_doc"]
            assert failure == pytest.approx(analytic_failure(params))


class TestSimulate:
    def test_forced_grounded_failure_path(self):
        params = WorldParameters(1.0, 0.0, 0.0, 0.0, 0.0)
        outcome = simulate(params, 5000, seed=1)
        assert outcome.failure_count == 5000
        assert outcome.category_counts["grounded_wrong_doc"] == 5000

    def test_same_seed_reproduces(self):
        a = simulate(POINT, 10_000, seed=7)
        b = simulate(POINT, 10_000, seed=7)
        assert a == b

    def test_different_seed_differs(self):
        a = simulate(POINT, 10_000, seed=7)
        b = simulate(POINT, 10_000, seed=8)
        assert a.category_counts != b.category_counts

    def test_counts_sum_to_trials(self):
        outcome = simulate(POINT, 12_345, seed=2)
        assert sum(outcome.category_counts.values()) == 12_345
        assert set(outcome.category_counts) == set(CATEGORIES)

    def test_reference_point_within_three_sigma(self):
        n = 100_000
        outcome = simulate(POINT, n, seed=11)
        sigma = np.sqrt(0.62 * 0.38 / n)
        assert abs(outcome.failure_count / n - 0.62) <= 3 * sigma

    def test_outcome_invariant_enforced(self):
        with pytest.raises(ValueError, match="sum"):
            SimOutcome(10, 3, {k: 0 for k in CATEGORIES}, 0)


class TestVerifyDecomposition:
    def test_degenerate_zero_world_is_exact(self):
        params = WorldParameters(0.0, 0.0, 0.0, 0.0, 0.0)
        report = verify_decomposition(params, 1000, seed=3)
        assert report["passed"]
        assert report["failure"]["empirical"] == 0.0 == report["failure"]["expected"]

    def test_randomized_sweep_passes(self):
        rng = np.random.default_rng(123)
        passed = 0
        for i in range(20):
            params = random_world_parameters(rng)
            report = verify_decomposition(params, 20_000, seed=100 + i)
            passed += int(report["passed"])
        assert passed >= 19

    def test_report_structure(self):
        report = verify_decomposition(POINT, 10_000, seed=5)
        assert set(report["categories"]) == set(CATEGORIES)
        for check in report["categories"].values():
            assert {"empirical", "expected", "stderr", "passed"} <= set(check)


class TestGenerateWorld:
    def test_reproducible(self):
        d1, r1 = generate_world(3, 50, POINT, seed=9)
        d2, r2 = generate_world(3, 50, POINT, seed=9)
        assert d1 == d2 and r1 == r2

    def test_indicator_identities_hold_on_every_record(self):
        _, records = generate_world(4, 200, POINT, seed=21)
        for r in records:
            i = r.indicators
            lhs = i["answer_correct"]
            rhs = (1 - i["retriever_error"]) * (1 - i["hallucination_error"]) * \
                (1 - i["extraction_error"]) + i["lucky_guess"]
            assert lhs == rhs

    def test_indicators_recompute_from_documents(self):
        dataset, records = generate_world(3, 100, POINT, seed=33)
        gold = {row["id"]: GoldAnswerSet(tuple(row["answers"])) for row in dataset}
        for r in records:
            recomputed = em_grader(r.answer, gold[r.sample_id])
            assert recomputed == r.indicators["answer_correct"]

    def test_all_correct_world_has_zero_mrlr(self):
        from eor.consistency import mrlr

        params = WorldParameters(0.0, 0.0, 0.0, 0.0, 0.0)
        _, records = generate_world(3, 40, params, seed=4)
        matrix = IndicatorMatrix.from_records(records, "answer_correct")
        assert mrlr(matrix) == [0.0, 0.0, 0.0]

    def test_independent_retrievers_match_rwr_prediction(self):
        # With independent errors, RWR(i, j) estimates P(i correct) on j's
        # failures, which is just P(i correct).
        accuracy = 0.6
        params = WorldParameters(1.0 - accuracy, 0.0, 0.0, 0.0, 0.0)
        _, records = generate_world(2, 2000, params, seed=17)
        matrix = IndicatorMatrix.from_records(records, "answer_correct")
        value = rwr(matrix.values[:, 0], matrix.values[:, 1])
        n_fail = int((1 - matrix.values[:, 1]).sum())
        sigma = np.sqrt(accuracy * (1 - accuracy) / n_fail)
        assert abs(value - accuracy) <= 3 * sigma

    def test_distinct_distractors_by_default(self):
        _, records = generate_world(5, 100, WorldParameters(1.0, 0.0, 0.0, 0.0, 0.0), seed=2)
        by_sample: dict[str, list[str]] = {}
        for r in records:
            by_sample.setdefault(r.sample_id, []).append(r.answer)
        for answers in by_sample.values():
            assert len(set(answers)) == len(answers)

    def test_correlation_knob_lets_distractors_collide(self):
        params = WorldParameters(1.0, 0.0, 0.0, 0.0, 0.0)
        _, records = generate_world(5, 100, params, seed=2, distractor_correlation=1.0)
        by_sample: dict[str, list[str]] = {}
        for r in records:
            by_sample.setdefault(r.sample_id, []).append(r.answer)
        assert any(len(set(a)) < len(a) for a in by_sample.values())

    def test_per_retriever_parameters(self):
        perfect = WorldParameters(0.0, 0.0, 0.0, 0.0, 0.0)
        broken = WorldParameters(1.0, 0.0, 0.0, 0.0, 0.0)
        _, records = generate_world(2, 300, [perfect, broken], seed=5)
        matrix = IndicatorMatrix.from_records(records, "answer_correct")
        assert matrix.values[:, 0].mean() == 1.0
        assert matrix.values[:, 1].mean() == 0.0
