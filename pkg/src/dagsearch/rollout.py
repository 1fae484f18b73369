"""Pause/resume generation against a policy endpoint, scored into records."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .backends import BackendRegistry
from .errors import DagSearchError, ParseError, PolicyUnreachable
from .executor import DEFAULT_K, ExecutionTrace, execute_plan
from .grpo import group_advantages
from .llm import ChatClient, ChatReply
from .plan import (
    ALL_TOOLS,
    DEFAULT_MAX_NODES,
    SearchPlan,
    ToolKind,
    ValidationReport,
    parse_plan,
    validate_plan,
)
from .reward import GoldAnswer, Judge, RewardBreakdown, RewardWeights, composite_reward, score_answer
from .template import Segments, check_format, extract_block, inject_result, segment_output

log = logging.getLogger(__name__)

PHASE1_STOP = ["</search>", "</answer>"]
PHASE2_STOP = ["</answer>"]
MAX_COMPLETION_TOKENS = 2048
PLAN_INVALID = "[plan invalid]"

SYSTEM_PROMPT = """\
Answer the user's question using the search tools news, academic and web.
Write your output in exactly this order:
<think> your reasoning about what information is needed </think>
<search>
Nodes:
A: first sub-query (News)
B: second sub-query (Academic)
Edges: A -> B
</search>
After </search> the search results are inserted between <result> and </result>.
Then write <answer> your final answer </answer>.
Each node line is "ID: query (Tool)". Edges list dependencies separated by ";".
Omit the Edges line when the queries are independent."""


class PolicyClient(Protocol):
    def generate(self, query: str, prefix: str, stop: list[str], sample: int = 0) -> ChatReply: ...


class ChatPolicy:
    """Policy served behind a chat-completions endpoint.

    Resumption sends the partial output as a trailing assistant message and
    asks the server to continue it rather than open a new turn.
    """

    def __init__(self, client: ChatClient, system_prompt: str = SYSTEM_PROMPT):
        self.client = client
        self.system_prompt = system_prompt

    def generate(self, query: str, prefix: str, stop: list[str], sample: int = 0) -> ChatReply:
        messages = [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": query},
        ]
        extra = {}
        if prefix:
            messages.append({"role": "assistant", "content": prefix})
            extra = {"continue_final_message": True, "add_generation_prompt": False}
        try:
            return self.client.chat(messages, stop=stop, **extra)
        except DagSearchError as exc:
            raise PolicyUnreachable(str(exc)) from exc


class ScriptedPolicy:
    """Replays canned completions keyed by (query, phase).

    Script layout: ``{query: {"1": text-or-list, "2": text-or-list}}``. A list
    is indexed by the rollout's sample number, so members of a group can
    differ deterministically. Stop sequences are honoured like a real server:
    output ends before the first stop string.
    """

    def __init__(self, script: dict, max_tokens: int = MAX_COMPLETION_TOKENS):
        self.script = script
        self.max_tokens = max_tokens

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> ScriptedPolicy:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), **kwargs)

    def generate(self, query: str, prefix: str, stop: list[str], sample: int = 0) -> ChatReply:
        phase = "2" if prefix else "1"
        try:
            entry = self.script[query][phase]
        except KeyError:
            raise PolicyUnreachable(f"no scripted completion for phase {phase}") from None
        text = entry[sample % len(entry)] if isinstance(entry, list) else entry

        finish = "stop"
        cut = min((i for s in stop if (i := text.find(s)) >= 0), default=-1)
        if cut >= 0:
            text = text[:cut]
        words = text.split()
        if len(words) > self.max_tokens:
            finish = "length"
            text = " ".join(words[: self.max_tokens])
        return ChatReply(text, finish, len((prefix or query).split()), len(text.split()))


@dataclass(frozen=True)
class RolloutRecord:
    query: str
    gold: GoldAnswer
    output_text: str
    segments: Segments | None
    plan: SearchPlan | None
    validation: ValidationReport | None
    trace: ExecutionTrace | None
    reward: RewardBreakdown
    format_error: str = ""
    plan_error: str = ""
    generation_limit: bool = False
    sample: int = 0
    timing: dict = field(default_factory=dict, compare=False)
    token_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "gold": self.gold.to_dict(),
            "output_text": self.output_text,
            "segments": self.segments.to_dict() if self.segments else None,
            "format_error": self.format_error,
            "plan": self.plan.to_dict() if self.plan else None,
            "plan_error": self.plan_error,
            "validation": self.validation.to_dict() if self.validation else None,
            "trace": self.trace.to_dict() if self.trace else None,
            "reward": self.reward.to_dict(),
            "generation_limit": self.generation_limit,
            "sample": self.sample,
            "timing": self.timing,
            "token_counts": self.token_counts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RolloutRecord:
        return cls(
            query=d["query"],
            gold=GoldAnswer.from_dict(d["gold"]),
            output_text=d["output_text"],
            segments=Segments.from_dict(d["segments"]) if d.get("segments") else None,
            plan=SearchPlan.from_dict(d["plan"]) if d.get("plan") else None,
            validation=ValidationReport.from_dict(d["validation"]) if d.get("validation") else None,
            trace=ExecutionTrace.from_dict(d["trace"]) if d.get("trace") else None,
            reward=RewardBreakdown.from_dict(d["reward"]),
            format_error=d.get("format_error", ""),
            plan_error=d.get("plan_error", ""),
            generation_limit=d.get("generation_limit", False),
            sample=d.get("sample", 0),
            timing=d.get("timing", {}),
            token_counts=d.get("token_counts", {}),
        )


@dataclass(frozen=True)
class GroupRecord:
    query: str
    records: tuple[RolloutRecord, ...]
    advantages: tuple[float, ...]
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "records": [r.to_dict() for r in self.records],
            "advantages": list(self.advantages),
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GroupRecord:
        return cls(
            query=d["query"],
            records=tuple(RolloutRecord.from_dict(r) for r in d["records"]),
            advantages=tuple(d["advantages"]),
            failures=d.get("failures", 0),
        )


def _close_stopped_tag(text: str) -> str:
    """Servers drop the matched stop string; put the closing tag back."""
    for tag in ("search", "answer"):
        opened = text.rfind(f"<{tag}>")
        if opened >= 0 and text.find(f"</{tag}>", opened) < 0:
            return text + f"</{tag}>"
    return text


def _generate(policy: PolicyClient, query: str, prefix: str, stop: list[str],
              sample: int) -> tuple[str, ChatReply]:
    reply = policy.generate(query, prefix, stop, sample)
    text = reply.text
    if reply.finish_reason == "stop":
        text = _close_stopped_tag(text)
    return text, reply


def run_rollout(
    query: str,
    gold: GoldAnswer,
    policy: PolicyClient,
    registry: BackendRegistry,
    judge: Judge | None = None,
    weights: RewardWeights = RewardWeights(),
    tools: Iterable[ToolKind] = ALL_TOOLS,
    max_nodes: int = DEFAULT_MAX_NODES,
    k: int = DEFAULT_K,
    sample: int = 0,
) -> RolloutRecord:
    """One trajectory: generate to ``</search>``, execute, inject, resume, score.

    Invalid plans and search failures lower the reward but never abort the
    rollout; an unreachable policy or judge does.
    """
    tools = frozenset(tools)
    timing: dict[str, float] = {}
    tokens: dict[str, dict] = {}
    limit_hit = False

    t0 = time.perf_counter()
    text1, reply1 = _generate(policy, query, "", PHASE1_STOP, sample)
    timing["phase1"] = time.perf_counter() - t0
    tokens["phase1"] = {"prompt": reply1.prompt_tokens, "completion": reply1.completion_tokens}
    limit_hit |= reply1.finish_reason == "length"

    plan = validation = trace = None
    plan_error = ""
    output = text1
    paused = text1.rstrip().endswith("</search>") and "</answer>" not in text1
    if paused and not limit_hit:
        t1 = time.perf_counter()
        try:
            plan = parse_plan(extract_block(text1, "search", last=True) or "")
        except ParseError as exc:
            plan_error = f"{exc.reason}: {exc}"
        if plan is not None:
            validation = validate_plan(plan, tools, max_nodes)
            if validation.executable:
                trace = execute_plan(plan, validation, registry, k)
            else:
                plan_error = "plan not executable"
        block = trace.result_block if trace else PLAN_INVALID
        timing["execute"] = time.perf_counter() - t1

        prompt2 = inject_result(text1, block)
        t2 = time.perf_counter()
        text2, reply2 = _generate(policy, query, prompt2, PHASE2_STOP, sample)
        timing["phase2"] = time.perf_counter() - t2
        tokens["phase2"] = {"prompt": reply2.prompt_tokens, "completion": reply2.completion_tokens}
        limit_hit |= reply2.finish_reason == "length"
        output = prompt2 + text2

    segments, format_error = None, ""
    try:
        segments = segment_output(output)
    except DagSearchError as exc:
        format_error = f"{exc.reason}: {exc}"

    t3 = time.perf_counter()
    f_fmt = 0 if limit_hit else check_format(output)
    f_dag = int(validation.reward_valid) if validation is not None else 0
    f_ans = score_answer(extract_block(output, "answer", last=True), gold, judge)
    timing["score"] = time.perf_counter() - t3
    reward = RewardBreakdown(f_fmt, f_dag, f_ans,
                             composite_reward(f_fmt, f_dag, f_ans, weights), weights)

    return RolloutRecord(
        query=query,
        gold=gold,
        output_text=output,
        segments=segments,
        plan=plan,
        validation=validation,
        trace=trace,
        reward=reward,
        format_error=format_error,
        plan_error=plan_error,
        generation_limit=limit_hit,
        sample=sample,
        timing=timing,
        token_counts=tokens,
    )


def run_group(query: str, gold: GoldAnswer, m: int, policy: PolicyClient,
              registry: BackendRegistry, **kwargs) -> GroupRecord:
    """``m`` independent rollouts for one query, run concurrently."""
    if m < 1:
        raise ValueError("group size must be >= 1")

    def one(i: int):
        try:
            return run_rollout(query, gold, policy, registry, sample=i, **kwargs)
        except PolicyUnreachable as exc:
            log.warning("rollout %d failed: %s", i, exc)
            return exc

    with ThreadPoolExecutor(max_workers=m) as pool:
        outcomes = list(pool.map(one, range(m)))
    records = tuple(o for o in outcomes if isinstance(o, RolloutRecord))
    if not records:
        raise PolicyUnreachable(f"all {m} rollouts failed: {outcomes[0]}")
    advantages = group_advantages([r.reward.composite for r in records])
    return GroupRecord(query, records, tuple(advantages), failures=m - len(records))
