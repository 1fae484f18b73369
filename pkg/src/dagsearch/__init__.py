"""Search-plan orchestration and reward environment for search-augmented LLMs."""

__version__ = "0.1.0"

from .backends import BackendRegistry, Passage, fetch
from .executor import ExecutionTrace, NodeResult, assemble_results, execute_plan
from .grpo import BetaSchedule, TrajectoryStats, beta_at, group_advantages, grpo_loss, loss_mask
from .plan import (
    PlanEdge,
    PlanNode,
    SearchPlan,
    ToolKind,
    ValidationReport,
    parse_plan,
    serialize_plan,
    topo_levels,
    validate_plan,
)
from .reward import (
    GoldAnswer,
    RewardBreakdown,
    RewardWeights,
    composite_reward,
    score_answer_judge,
    score_answer_mcq,
    score_dag,
    score_format,
    score_output,
)
from .rollout import GroupRecord, RolloutRecord, run_group, run_rollout
from .template import Segments, check_format, inject_result, segment_output

__all__ = [
    "BackendRegistry", "BetaSchedule", "ExecutionTrace", "GoldAnswer", "GroupRecord",
    "NodeResult", "Passage", "PlanEdge", "PlanNode", "RewardBreakdown", "RewardWeights",
    "RolloutRecord", "SearchPlan", "Segments", "ToolKind", "TrajectoryStats",
    "ValidationReport", "assemble_results", "beta_at", "check_format", "composite_reward",
    "execute_plan", "fetch", "group_advantages", "grpo_loss", "inject_result", "loss_mask",
    "parse_plan", "run_group", "run_rollout", "score_answer_judge", "score_answer_mcq",
    "score_dag", "score_format", "score_output", "segment_output", "serialize_plan",
    "topo_levels", "validate_plan",
]
