import pytest

from diffadapt.core import Difficulty, FeatureVector, Problem
from diffadapt.simulator import SimulatorBackend, default_profile


@pytest.fixture(scope="session")
def profile():
    return default_profile()


@pytest.fixture()
def sim(profile):
    return SimulatorBackend(profile, seed=7)


@pytest.fixture()
def problem():
    return Problem(
        id="q1",
        question="What is 6 * 7?",
        gold_answer="42",
        difficulty_rating=3,
        benchmark="gsm8k",
        split="eval",
    )


def feature(*values: float) -> FeatureVector:
    return FeatureVector.from_values(values)
