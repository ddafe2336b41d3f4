"""Difficulty-adaptive inference routing.

Three stages: sample-and-label training data from a proxy backend, train
a small difficulty probe on question representations, then dispatch each
question to an Easy/Normal/Hard inference strategy. A deterministic
simulator backend makes the whole pipeline reproducible without GPUs.
"""

__version__ = "0.1.0"

from .core import (
    CLASS_ORDER,
    Difficulty,
    DifficultyLabel,
    FeatureVector,
    FinishReason,
    GenerationRecord,
    Problem,
    ProbeParameters,
    StrategyConfig,
    StrategyId,
    StrategyOutcome,
    Thresholds,
    TokenStep,
    default_strategy_registry,
    validate_dataset,
)
from .entropy import (
    TailMode,
    correctness_rate,
    difficulty_curve,
    entropy_from_topk,
    generation_entropy,
    token_entropy,
)
from .verify import answers_equivalent, extract_answer, verdict
from .labeling import (
    LabeledExample,
    ProblemStats,
    SamplingConfig,
    assign_label,
    generate_dataset,
    thresholds_for_model,
)
from .probe import TrainConfig, forward, gradient, load_probe, loss, predict, save_probe, train
from .dispatch import BudgetTable, ResolvedStrategy, RoutedResult, default_budget_table, resolve_strategy, route
from .backend import Backend, GenRequest, OpenAIBackend, FeatureFileProvider
from .simulator import SimProfile, SimulatorBackend, default_profile, make_problems
from .evaluation import oracle_select, oracle_report, token_savings, evaluate_fixed
