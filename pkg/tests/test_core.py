import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffadapt.core import (
    CLASS_ORDER,
    Difficulty,
    FeatureVector,
    FinishReason,
    GenerationRecord,
    Problem,
    ProbeParameters,
    StrategyConfig,
    StrategyOutcome,
    Thresholds,
    TokenStep,
    default_strategy_registry,
    validate_dataset,
)
from diffadapt.errors import InvariantError


def make_step(entropy=0.5, lp=-0.7, token="x"):
    return TokenStep(
        token_text=token,
        chosen_logprob=lp,
        alternatives=((token, lp),),
        entropy_nats=entropy,
    )


class TestProblem:
    def test_valid(self):
        p = Problem(id="a", question="q", gold_answer="1", difficulty_rating=5)
        assert p.difficulty_rating == 5

    def test_empty_id_rejected(self):
        with pytest.raises(InvariantError):
            Problem(id="", question="q", gold_answer="1")

    @pytest.mark.parametrize("rating", [0, 11, -3])
    def test_rating_out_of_range_rejected(self, rating):
        with pytest.raises(InvariantError):
            Problem(id="a", question="q", gold_answer="1", difficulty_rating=rating)

    def test_roundtrip(self):
        p = Problem(id="a", question="q", gold_answer="1", difficulty_rating=None,
                    benchmark="aime24", split="train")
        assert Problem.from_dict(p.to_dict()) == p


class TestTokenStep:
    def test_valid(self):
        s = TokenStep("a", -0.5, (("a", -0.5), ("b", -1.2)), 0.3)
        assert s.entropy_nats == 0.3

    def test_positive_logprob_rejected(self):
        with pytest.raises(InvariantError):
            TokenStep("a", 0.1, (("a", 0.1),), 0.0)

    def test_unsorted_alternatives_rejected(self):
        with pytest.raises(InvariantError):
            TokenStep("a", -0.5, (("b", -1.2), ("a", -0.5)), 0.3)

    def test_chosen_must_be_listed(self):
        with pytest.raises(InvariantError):
            TokenStep("a", -0.5, (("b", -0.5),), 0.3)

    def test_negative_entropy_rejected(self):
        with pytest.raises(InvariantError):
            TokenStep("a", -0.5, (("a", -0.5),), -0.1)

    def test_roundtrip(self):
        s = TokenStep("a", -0.5, (("a", -0.5), ("b", -1.2)), 0.3)
        assert TokenStep.from_dict(s.to_dict()) == s


class TestGenerationRecord:
    def _record(self, steps, **kwargs):
        defaults = dict(
            problem_id="p",
            strategy_id=Difficulty.NORMAL,
            sample_index=0,
            completion_text="text",
            steps=tuple(steps),
            completion_tokens=len(steps),
            finish_reason=FinishReason.STOP,
            generation_entropy=(
                sum(s.entropy_nats for s in steps) / len(steps) if steps else None
            ),
        )
        defaults.update(kwargs)
        return GenerationRecord(**defaults)

    def test_token_count_must_match_steps(self):
        with pytest.raises(InvariantError):
            self._record([make_step(), make_step()], completion_tokens=3)

    def test_entropy_must_be_mean_of_steps(self):
        with pytest.raises(InvariantError):
            self._record([make_step(0.2), make_step(0.4)], generation_entropy=0.5)

    def test_absent_steps_forbid_entropy(self):
        with pytest.raises(InvariantError):
            self._record([], completion_tokens=5, generation_entropy=0.3)

    def test_absent_steps_allowed(self):
        rec = self._record([], completion_tokens=5)
        assert not rec.has_steps

    def test_roundtrip(self):
        rec = self._record([make_step(0.2), make_step(0.4)], verdict=True)
        assert GenerationRecord.from_dict(rec.to_dict()) == rec

    def test_with_verdict_preserves_rest(self):
        rec = self._record([make_step()])
        updated = rec.with_verdict(True)
        assert updated.verdict is True and updated.steps == rec.steps


class TestThresholds:
    def test_paper_rows_valid(self):
        Thresholds(0.85, 0.35, 0.60)
        Thresholds(0.88, 0.32, 0.65)

    @pytest.mark.parametrize(
        "alpha,beta,gamma",
        [(0.0, 0.35, 0.0), (1.1, 0.35, 0.5), (0.85, 0.0, 0.5), (0.85, 0.35, 1.0)],
    )
    def test_range_violations(self, alpha, beta, gamma):
        with pytest.raises(InvariantError):
            Thresholds(alpha, beta, gamma)

    def test_alpha_below_gamma_rejected(self):
        with pytest.raises(InvariantError):
            Thresholds(alpha=0.5, beta=0.35, gamma=0.6)

    def test_roundtrip(self):
        t = Thresholds(0.88, 0.32, 0.65)
        assert Thresholds.from_dict(t.to_dict()) == t


class TestStrategyConfig:
    def test_default_registry_constants(self):
        reg = default_strategy_registry()
        easy, normal, hard = reg[Difficulty.EASY], reg[Difficulty.NORMAL], reg[Difficulty.HARD]
        assert (easy.temperature, easy.top_p, easy.max_token_fraction) == (0.5, None, 0.4)
        assert (normal.temperature, normal.top_p, normal.max_token_fraction) == (0.8, 0.95, 1.0)
        assert (hard.temperature, hard.top_p, hard.max_token_fraction) == (0.4, None, 0.5)

    def test_bad_fraction_rejected(self):
        with pytest.raises(InvariantError):
            StrategyConfig(Difficulty.EASY, 0.5, None, 0.0, "p")

    def test_roundtrip(self):
        cfg = default_strategy_registry()[Difficulty.NORMAL]
        assert StrategyConfig.from_dict(cfg.to_dict()) == cfg


class TestFeatureVector:
    def test_nan_rejected(self):
        with pytest.raises(InvariantError):
            FeatureVector.from_values([1.0, float("nan")])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(InvariantError):
            FeatureVector(dim=3, values=(1.0, 2.0))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=16))
    def test_roundtrip(self, values):
        fv = FeatureVector.from_values(values)
        assert FeatureVector.from_dict(fv.to_dict()) == fv


class TestProbeParameters:
    def test_shape_validation(self):
        with pytest.raises(InvariantError):
            ProbeParameters(
                W1=np.zeros((4, 2)), b1=np.zeros(3), W2=np.zeros((3, 4)), b2=np.zeros(3)
            )

    def test_nonfinite_rejected(self):
        W1 = np.zeros((4, 2))
        W1[0, 0] = np.inf
        with pytest.raises(InvariantError):
            ProbeParameters(W1=W1, b1=np.zeros(4), W2=np.zeros((3, 4)), b2=np.zeros(3))

    def test_immutable(self):
        p = ProbeParameters.zeros(2, 4)
        with pytest.raises(ValueError):
            p.W1[0, 0] = 1.0
        with pytest.raises(AttributeError):
            p.W1 = np.zeros((4, 2))

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(3)
        p = ProbeParameters(
            W1=rng.normal(size=(4, 2)),
            b1=rng.normal(size=4),
            W2=rng.normal(size=(3, 4)),
            b2=rng.normal(size=3),
        )
        assert ProbeParameters.from_dict(p.to_dict()) == p


class TestStrategyOutcome:
    def test_negative_tokens_rejected(self):
        with pytest.raises(InvariantError):
            StrategyOutcome("p", Difficulty.EASY, True, -1)

    def test_roundtrip(self):
        o = StrategyOutcome("p", Difficulty.HARD, False, 120)
        assert StrategyOutcome.from_dict(o.to_dict()) == o


class TestValidateDataset:
    def test_duplicate_id(self):
        problems = [
            Problem(id="q1", question="a", gold_answer="1"),
            Problem(id="q1", question="b", gold_answer="2"),
        ]
        report = validate_dataset(problems)
        assert len(report) == 1 and report[0].kind == "duplicate_id"

    def test_empty_list(self):
        assert validate_dataset([]) == []

    def test_rating_out_of_range_on_raw_row(self):
        rows = [{"id": "q1", "gold_answer": "1", "difficulty_rating": 11}]
        report = validate_dataset(rows)
        assert len(report) == 1 and report[0].kind == "rating_out_of_range"

    def test_missing_gold(self):
        report = validate_dataset([{"id": "q1", "gold_answer": ""}])
        assert [v.kind for v in report] == ["missing_gold_answer"]


def test_class_order_is_fixed():
    assert [c.value for c in CLASS_ORDER] == ["Easy", "Normal", "Hard"]
    assert Difficulty.EASY.class_index == 0
    assert Difficulty.NORMAL.class_index == 1
    assert Difficulty.HARD.class_index == 2
