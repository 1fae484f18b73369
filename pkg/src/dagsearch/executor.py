"""Level-by-level plan execution and assembly of the ``<result>`` block."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import BackendRegistry, Passage, fetch
from .errors import CycleDetected, FetchError
from .plan import PlanNode, SearchPlan, ToolKind, ValidationReport, topo_levels

DEFAULT_K = 2

OK, EMPTY, FAILED, EXCLUDED = "ok", "empty", "failed", "excluded"


@dataclass(frozen=True)
class NodeResult:
    node_id: str
    tool: str
    query: str
    passages: tuple[Passage, ...] = ()
    status: str = OK
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "tool": self.tool,
            "query": self.query,
            "passages": [p.to_dict() for p in self.passages],
            "status": self.status,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NodeResult:
        return cls(
            node_id=d["node_id"],
            tool=d["tool"],
            query=d["query"],
            passages=tuple(Passage.from_dict(p) for p in d.get("passages", ())),
            status=d["status"],
            reason=d.get("reason", ""),
        )


@dataclass(frozen=True)
class ExecutionTrace:
    levels: tuple[tuple[str, ...], ...]
    node_results: tuple[NodeResult, ...]
    wall_time: float
    result_block: str

    @property
    def passage_count(self) -> int:
        return sum(len(r.passages) for r in self.node_results)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "levels": [list(level) for level in self.levels],
            "node_results": [r.to_dict() for r in self.node_results],
            "result_block": self.result_block,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExecutionTrace:
        return cls(
            levels=tuple(tuple(level) for level in d["levels"]),
            node_results=tuple(NodeResult.from_dict(r) for r in d["node_results"]),
            wall_time=d.get("wall_time", 0.0),
            result_block=d["result_block"],
        )


def assemble_results(plan: SearchPlan, node_results: list[NodeResult]) -> str:
    """Concatenate node results in execution order, each under its node id."""
    blocks = []
    for res in node_results:
        lines = [f"Node {res.node_id} ({res.tool}) Search results:"]
        if res.status == OK:
            for p in res.passages:
                lines += [f"Result {p.rank}:", f"Title: {p.title}", f"Abstract: {p.snippet}"]
        elif res.status == EMPTY:
            lines.append("[no results]")
        elif res.status == FAILED:
            lines.append(f"[search failed: {res.reason}]")
        else:
            lines.append(f"[excluded: {res.reason}]")
        blocks.append("\n\n".join(lines))
    return "\n\n".join(blocks)


def _run_node(node: PlanNode, registry: BackendRegistry, k: int) -> NodeResult:
    try:
        passages = fetch(ToolKind(node.tool), node.query, k, registry)
    except (FetchError, ValueError) as exc:
        return NodeResult(node.id, node.tool, node.query, status=FAILED,
                          reason=f"{type(exc).__name__}: {exc}")
    status = OK if passages else EMPTY
    return NodeResult(node.id, node.tool, node.query, tuple(passages), status)


def execute_plan(
    plan: SearchPlan,
    report: ValidationReport,
    registry: BackendRegistry,
    k: int = DEFAULT_K,
) -> ExecutionTrace:
    """Run every level in sequence, dispatching a level's nodes concurrently.

    Excluded nodes keep their place in the ordering but are never fetched;
    a failing node is recorded as failed and does not abort the trace.
    """
    if not report.acyclic:
        raise CycleDetected("refusing to execute a cyclic plan")
    levels = topo_levels(plan)
    excluded = set(report.excluded_nodes)
    nodes = {n.id: n for n in plan.nodes}

    start = time.perf_counter()
    results: list[NodeResult] = []
    with ThreadPoolExecutor(max_workers=registry.parallelism) as pool:
        for level in levels:
            futures = {
                node_id: pool.submit(_run_node, nodes[node_id], registry, k)
                for node_id in level
                if node_id not in excluded
            }
            for node_id in level:
                if node_id in excluded:
                    node = nodes[node_id]
                    why = ("unknown tool" if node.kind is None else "tool unavailable")
                    results.append(NodeResult(node_id, node.tool, node.query,
                                              status=EXCLUDED, reason=f"{why} '{node.tool}'"))
                else:
                    results.append(futures[node_id].result())
    wall = time.perf_counter() - start

    return ExecutionTrace(
        levels=tuple(tuple(level) for level in levels),
        node_results=tuple(results),
        wall_time=wall,
        result_block=assemble_results(plan, results),
    )
