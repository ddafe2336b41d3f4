import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffadapt.core import Difficulty, FinishReason, GenerationRecord, TokenStep
from diffadapt.entropy import (
    TailMode,
    correctness_rate,
    difficulty_curve,
    entropy_from_topk,
    generation_entropy,
    token_entropy,
)
from diffadapt.errors import DomainError

# Independent high-precision oracle (mpmath, 50 digits): -sum p ln p over
# [0.5, 0.25, 0.25] = 1.0397207708399179641.
H_HALF_QUARTER_QUARTER = 1.0397207708399179641


def steps_from_entropies(entropies):
    return [
        TokenStep("t", -abs(h), (("t", -abs(h)),), h) for h in entropies
    ]


class TestTokenEntropy:
    def test_one_hot_is_zero(self):
        assert token_entropy([1.0, 0.0, 0.0, 0.0]) == 0.0

    def test_uniform_is_ln_m(self):
        assert token_entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)

    def test_derived_value(self):
        assert token_entropy([0.5, 0.25, 0.25]) == pytest.approx(
            H_HALF_QUARTER_QUARTER, abs=1e-12
        )

    def test_rejects_unnormalized(self):
        with pytest.raises(DomainError):
            token_entropy([0.5, 0.4])

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            token_entropy([1.1, -0.1])

    def test_rejects_empty(self):
        with pytest.raises(DomainError):
            token_entropy([])

    @given(st.lists(st.floats(1e-9, 1.0), min_size=1, max_size=20))
    def test_bounds_and_permutation_invariance(self, weights):
        total = sum(weights)
        probs = [w / total for w in weights]
        h = token_entropy(probs)
        assert 0.0 <= h <= math.log(len(probs)) + 1e-12
        assert token_entropy(list(reversed(probs))) == pytest.approx(h, abs=1e-12)


class TestEntropyFromTopk:
    def test_single_token_full_mass(self):
        assert entropy_from_topk([("a", 0.0)], TailMode.RENORMALIZE) == 0.0
        assert entropy_from_topk([("a", 0.0)], TailMode.TAIL_BUCKET) == 0.0

    def test_exact_coverage_two_tokens(self):
        alts = [("a", math.log(0.5)), ("b", math.log(0.5))]
        assert entropy_from_topk(alts, TailMode.RENORMALIZE) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_tail_bucket_derived(self):
        alts = [("a", math.log(0.5)), ("b", math.log(0.25))]
        assert entropy_from_topk(alts, TailMode.TAIL_BUCKET) == pytest.approx(
            H_HALF_QUARTER_QUARTER, abs=1e-9
        )

    def test_overfull_mass_rejected(self):
        with pytest.raises(DomainError):
            entropy_from_topk([("a", -0.01), ("b", -0.01)])

    @given(
        st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=10),
        st.sampled_from(list(TailMode)),
    )
    def test_exact_coverage_matches_token_entropy(self, weights, mode):
        total = sum(weights)
        probs = sorted((w / total for w in weights), reverse=True)
        alts = [(f"t{i}", math.log(p)) for i, p in enumerate(probs)]
        expected = token_entropy(probs)
        assert entropy_from_topk(alts, mode) == pytest.approx(expected, abs=1e-6)


class TestGenerationEntropy:
    def test_singleton(self):
        assert generation_entropy(steps_from_entropies([0.7])) == 0.7

    def test_two_point_mean(self):
        got = generation_entropy(steps_from_entropies([0.0, math.log(2)]))
        assert got == pytest.approx(math.log(2) / 2, abs=1e-12)

    def test_constant_sequence(self):
        assert generation_entropy(steps_from_entropies([1.2] * 100)) == pytest.approx(
            1.2, abs=1e-12
        )

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            generation_entropy([])

    @given(
        st.lists(st.floats(0.0, 5.0), min_size=1, max_size=30),
        st.lists(st.floats(0.0, 5.0), min_size=1, max_size=30),
    )
    def test_concat_additivity(self, a, b):
        lhs = generation_entropy(a + b) * (len(a) + len(b))
        rhs = generation_entropy(a) * len(a) + generation_entropy(b) * len(b)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestCorrectnessRate:
    def test_seven_of_ten(self):
        assert correctness_rate([True] * 7 + [False] * 3) == 0.7

    def test_unanimous(self):
        assert correctness_rate([True] * 5) == 1.0
        assert correctness_rate([False] * 5) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            correctness_rate([])

    @given(st.lists(st.booleans(), min_size=1, max_size=50))
    def test_flip_false_to_true_increases_by_one_over_n(self, verdicts):
        if all(verdicts):
            verdicts[0] = False
        base = correctness_rate(verdicts)
        i = verdicts.index(False)
        flipped = list(verdicts)
        flipped[i] = True
        assert correctness_rate(flipped) == pytest.approx(
            base + 1.0 / len(verdicts), abs=1e-12
        )


def record_for(problem_id, entropies, verdict):
    steps = tuple(steps_from_entropies(entropies))
    return GenerationRecord(
        problem_id=problem_id,
        strategy_id=Difficulty.NORMAL,
        sample_index=0,
        completion_text="",
        steps=steps,
        completion_tokens=len(steps),
        finish_reason=FinishReason.STOP,
        generation_entropy=sum(entropies) / len(entropies),
        verdict=verdict,
    )


class TestDifficultyCurve:
    def test_two_point_bucket(self):
        records = [
            record_for("a", [0.2], True),
            record_for("b", [0.4], False),
        ]
        curve = difficulty_curve(records, {"a": 3, "b": 3})
        row = curve.row(3)
        assert (row.mean_correctness, row.count) == (0.5, 2)
        assert row.mean_entropy == pytest.approx(0.3, abs=1e-12)

    def test_empty_input(self):
        curve = difficulty_curve([], {})
        assert curve.rows == () and curve.skipped == 0

    def test_missing_rating_skipped(self):
        records = [record_for("a", [0.2], True)]
        curve = difficulty_curve(records, {})
        assert curve.rows == () and curve.skipped == 1

    def test_sim_curve_matches_profile_within_3se(self, profile, sim):
        # DERIVED: the simulator's closed-form bucket means are the profile
        # entries; the empirical bucket means must sit within 3 standard
        # errors of them.
        from diffadapt.backend import GenRequest
        from diffadapt.simulator import make_problems
        from diffadapt.verify import verdict as compute_verdict

        problems = make_problems({2: 40, 5: 40, 9: 40})
        rating_by_problem = {p.id: p.difficulty_rating for p in problems}
        records = []
        per_record_entropy = {2: [], 5: [], 9: []}
        for p in problems:
            for j in range(5):
                rec = sim.complete(
                    p,
                    GenRequest(
                        strategy_id=Difficulty.NORMAL,
                        temperature=0.6,
                        top_p=None,
                        max_tokens=32768,
                        sample_index=j,
                        seed=7,
                    ),
                )
                rec = rec.with_verdict(compute_verdict(rec, p))
                records.append(rec)
                per_record_entropy[p.difficulty_rating].append(rec.generation_entropy)
        curve = difficulty_curve(records, rating_by_problem)
        for rating in (2, 5, 9):
            row = curve.row(rating)
            xs = per_record_entropy[rating]
            n = len(xs)
            mean = sum(xs) / n
            var = sum((x - mean) ** 2 for x in xs) / (n - 1)
            se = math.sqrt(var / n)
            expected = profile.rating(rating).mean_entropy
            assert abs(row.mean_entropy - expected) <= 3 * se + 1e-9
            # correctness within 3 binomial SEs of the profile accuracy
            acc = profile.rating(rating).accuracy_by_strategy[Difficulty.NORMAL]
            acc_se = math.sqrt(acc * (1 - acc) / n)
            assert abs(row.mean_correctness - acc) <= 3 * acc_se + 1e-9
