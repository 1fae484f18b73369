"""Composite reward: format compliance, plan validity and answer accuracy."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .errors import (
    DagSearchError,
    JudgeUnavailable,
    ParseError,
    UnparsableVerdict,
    WeightSumInvalid,
)
from .plan import ALL_TOOLS, DEFAULT_MAX_NODES, ToolKind, parse_plan, validate_plan
from .template import check_format, extract_block

JUDGE_ATTEMPTS = 2

JUDGE_PROMPT = """\
You are grading a candidate answer against a reference answer.
Judge only whether the candidate conveys the same facts and conclusion as the
reference. Ignore wording, style and length. Give 1 for full agreement, 0 for
no agreement or contradiction, and a value in between for partial agreement.
Reply with a single number between 0 and 1 and nothing else.

Reference answer:
{gold}

Candidate answer:
{answer}

Score:"""

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")
_OPTION = re.compile(r"\b[A-F]\b")
_ANSWER_IS = re.compile(r"answer is", re.IGNORECASE)


@dataclass(frozen=True)
class RewardWeights:
    w_fmt: float = 0.25
    w_dag: float = 0.25
    w_ans: float = 0.5

    def normalized(self) -> RewardWeights:
        total = self.w_fmt + self.w_dag + self.w_ans
        if total <= 0:
            raise WeightSumInvalid("weights must have a positive sum")
        return RewardWeights(self.w_fmt / total, self.w_dag / total, self.w_ans / total)

    def check(self) -> None:
        ws = (self.w_fmt, self.w_dag, self.w_ans)
        if any(not 0.0 <= w <= 1.0 for w in ws) or abs(math.fsum(ws) - 1.0) > 1e-9:
            raise WeightSumInvalid(f"weights {ws} must lie in [0,1] and sum to 1")

    def to_dict(self) -> dict:
        return {"w_fmt": self.w_fmt, "w_dag": self.w_dag, "w_ans": self.w_ans}

    @classmethod
    def from_dict(cls, d: dict) -> RewardWeights:
        return cls(d["w_fmt"], d["w_dag"], d["w_ans"])


@dataclass(frozen=True)
class GoldAnswer:
    kind: str  # "free_text" | "choice_set"
    text: str = ""
    options: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in ("free_text", "choice_set"):
            raise ValueError(f"unknown gold kind {self.kind!r}")
        if self.kind == "choice_set" and not self.options:
            raise ValueError("choice_set gold needs at least one option")
        object.__setattr__(self, "options", frozenset(_norm(o) for o in self.options))

    @classmethod
    def free_text(cls, text: str) -> GoldAnswer:
        return cls("free_text", text=text)

    @classmethod
    def choices(cls, options: Iterable[str]) -> GoldAnswer:
        return cls("choice_set", options=frozenset(options))

    def to_dict(self) -> dict:
        if self.kind == "choice_set":
            return {"kind": self.kind, "options": sorted(self.options)}
        return {"kind": self.kind, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> GoldAnswer:
        return cls(d["kind"], text=d.get("text", ""), options=frozenset(d.get("options", ())))


@dataclass(frozen=True)
class RewardBreakdown:
    f_fmt: int
    f_dag: int
    f_ans: float
    composite: float
    weights: RewardWeights = RewardWeights()

    def to_dict(self) -> dict:
        return {
            "f_fmt": self.f_fmt,
            "f_dag": self.f_dag,
            "f_ans": self.f_ans,
            "composite": self.composite,
            "weights": self.weights.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RewardBreakdown:
        return cls(d["f_fmt"], d["f_dag"], d["f_ans"], d["composite"],
                   RewardWeights.from_dict(d["weights"]))


class Judge(Protocol):
    def complete(self, prompt: str) -> str: ...


class StubJudge:
    """Replays canned replies in order, repeating the last one."""

    def __init__(self, *replies: str):
        if not replies:
            raise ValueError("StubJudge needs at least one reply")
        self.replies = list(replies)
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        idx = min(len(self.prompts) - 1, len(self.replies) - 1)
        return self.replies[idx]


def _norm(label: str) -> str:
    return label.strip().upper()


def score_format(text: str) -> int:
    return check_format(text)


def score_dag(
    search_body: str | None,
    tools: Iterable[ToolKind] = ALL_TOOLS,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> int:
    if search_body is None:
        return 0
    try:
        plan = parse_plan(search_body)
    except ParseError:
        return 0
    return int(validate_plan(plan, tools, max_nodes).reward_valid)


def extract_options(answer_body: str) -> set[str]:
    """Option letters A-F named after the last "answer is", else anywhere."""
    hits = list(_ANSWER_IS.finditer(answer_body))
    tail = answer_body[hits[-1].end():] if hits else answer_body
    return set(_OPTION.findall(tail))


def score_answer_mcq(predicted: Iterable[str], gold: Iterable[str]) -> float:
    pred = {_norm(p) for p in predicted}
    ref = {_norm(g) for g in gold}
    if not ref:
        raise ValueError("gold option set must be nonempty")
    hit = len(pred & ref)
    if not pred or not hit:
        return 0.0
    precision, recall = hit / len(pred), hit / len(ref)
    return 2 * precision * recall / (precision + recall)


def parse_verdict(reply: str) -> float | None:
    m = _NUMBER.search(reply)
    if m is None:
        return None
    return min(1.0, max(0.0, float(m.group())))


def score_answer_judge(answer_body: str, gold: GoldAnswer, judge: Judge | None) -> float:
    if judge is None:
        raise JudgeUnavailable("no judge endpoint configured")
    prompt = JUDGE_PROMPT.format(gold=gold.text.strip(), answer=answer_body.strip())
    for _ in range(JUDGE_ATTEMPTS):
        try:
            reply = judge.complete(prompt)
        except DagSearchError as exc:
            raise JudgeUnavailable(str(exc)) from exc
        verdict = parse_verdict(reply)
        if verdict is not None:
            return verdict
    raise UnparsableVerdict(f"no number in judge reply after {JUDGE_ATTEMPTS} attempts")


def composite_reward(f_fmt: float, f_dag: float, f_ans: float,
                     weights: RewardWeights = RewardWeights()) -> float:
    weights.check()
    return weights.w_fmt * f_fmt + weights.w_dag * f_dag + weights.w_ans * f_ans


def score_answer(answer_body: str | None, gold: GoldAnswer, judge: Judge | None = None) -> float:
    if answer_body is None:
        return 0.0
    if gold.kind == "choice_set":
        return score_answer_mcq(extract_options(answer_body), gold.options)
    return score_answer_judge(answer_body, gold, judge)


def score_output(
    text: str,
    gold: GoldAnswer,
    judge: Judge | None = None,
    weights: RewardWeights = RewardWeights(),
    tools: Iterable[ToolKind] = ALL_TOOLS,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> RewardBreakdown:
    """Score a complete output text. Judge failures propagate."""
    f_fmt = score_format(text)
    f_dag = score_dag(extract_block(text, "search"), tools, max_nodes)
    f_ans = score_answer(extract_block(text, "answer", last=True), gold, judge)
    return RewardBreakdown(f_fmt, f_dag, f_ans,
                           composite_reward(f_fmt, f_dag, f_ans, weights), weights)
