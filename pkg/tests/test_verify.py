import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffadapt.core import Difficulty, FinishReason, GenerationRecord, Problem
from diffadapt.errors import DomainError
from diffadapt.verify import answers_equivalent, extract_answer, verdict


def record_with(text, finish=FinishReason.STOP):
    return GenerationRecord(
        problem_id="p",
        strategy_id=Difficulty.NORMAL,
        sample_index=0,
        completion_text=text,
        steps=(),
        completion_tokens=0,
        finish_reason=finish,
        generation_entropy=None,
    )


class TestExtractAnswer:
    def test_single_boxed(self):
        assert extract_answer("work work so \\boxed{42}.") == "42"

    def test_last_boxed_wins(self):
        assert extract_answer("\\boxed{1} ... later \\boxed{7}") == "7"

    def test_no_conclusion(self):
        assert extract_answer("no conclusion reached") is None

    def test_nested_braces(self):
        assert extract_answer("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"

    def test_malformed_boxed_falls_back_to_earlier(self):
        assert extract_answer("\\boxed{3} and \\boxed{unclosed") == "3"

    def test_answer_is_cue(self):
        assert extract_answer("The answer is A") == "A"

    def test_answer_colon_cue(self):
        assert extract_answer("Answer: 17\nmore text after") == "17"

    def test_last_cue_wins(self):
        assert extract_answer("The answer is 3. No wait, the answer is 5.") == "5"

    def test_empty_text(self):
        assert extract_answer("") is None


class TestAnswersEquivalent:
    def test_fraction_vs_decimal(self):
        assert answers_equivalent("1/2", "0.5")

    def test_no_symbolic_solving(self):
        assert not answers_equivalent("X = 3", "3")

    def test_trimming(self):
        assert answers_equivalent(" 42. ", "42")

    def test_case_fold(self):
        assert answers_equivalent("A", "a")

    def test_dollar_wrappers(self):
        assert answers_equivalent("$\\pi$", "\\pi")

    def test_brace_wrappers(self):
        assert answers_equivalent("{42}", "42")

    def test_whitespace_collapse(self):
        assert answers_equivalent("x  +  1", "x + 1")

    def test_numeric_tolerance(self):
        assert answers_equivalent("0.3333333333333333", "1/3")

    def test_distinct_numbers(self):
        assert not answers_equivalent("42", "43")

    @given(st.text(min_size=1, max_size=30).filter(lambda s: s.strip()))
    def test_reflexive(self, s):
        # Reflexive whenever the normalized form is non-empty.
        from diffadapt.verify import _normalize

        if _normalize(s):
            assert answers_equivalent(s, s)

    @given(
        st.text(min_size=1, max_size=20).filter(lambda s: s.strip()),
        st.text(min_size=1, max_size=20).filter(lambda s: s.strip()),
    )
    def test_symmetric(self, a, b):
        assert answers_equivalent(a, b) == answers_equivalent(b, a)


class TestVerdict:
    def test_boxed_fraction_matches_decimal_gold(self):
        rec = record_with("therefore \\boxed{0.5}")
        assert verdict(rec, Problem(id="p", question="q", gold_answer="1/2"))

    def test_truncated_completion_is_false(self):
        rec = record_with("partial reasoning with no marker", FinishReason.LENGTH)
        assert not verdict(rec, Problem(id="p", question="q", gold_answer="3"))

    def test_cue_answer(self):
        rec = record_with("The answer is A")
        assert verdict(rec, Problem(id="p", question="q", gold_answer="A"))

    def test_empty_gold_rejected(self):
        rec = record_with("\\boxed{1}")
        with pytest.raises(DomainError):
            verdict(rec, Problem(id="p", question="q", gold_answer=""))

    def test_deterministic(self):
        rec = record_with("\\boxed{9}")
        p = Problem(id="p", question="q", gold_answer="9")
        assert verdict(rec, p) == verdict(rec, p) is True
