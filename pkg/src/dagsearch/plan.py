"""Natural-language search plans: parsing, canonical text, validation, ordering.

A plan is written one node per line as ``ID: query (Tool)`` followed by an
optional edge clause ``Edges: A -> C; B -> C``::

    Nodes:
    A: Price fluctuation of coke in early October 2024 (News)
    B: Impact of global energy market on coke prices (News)
    C: International coke market dynamics (News)
    Edges: A -> C; B -> C
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    CycleDetected,
    DuplicateNodeId,
    EmptyPlan,
    MalformedEdge,
    MalformedNodeLine,
)

DEFAULT_MAX_NODES = 8

NODE_ID_PATTERN = re.compile(r"[A-Z][A-Z0-9]{0,2}")

_NODE_LINE = re.compile(r"^(?P<id>[A-Za-z0-9_]+)\s*:\s*(?P<rest>.*)$")
_TRAILING_TOOL = re.compile(r"\(\s*(?P<tool>[^()]*?)\s*\)\s*$")
_HEADER = re.compile(r"^nodes\s*:\s*$", re.IGNORECASE)
_EDGES = re.compile(r"^edges\s*:(?P<body>.*)$", re.IGNORECASE)
_ARROW = re.compile(r"->|→")


class ToolKind(str, enum.Enum):
    NEWS = "news"
    ACADEMIC = "academic"
    WEB = "web"

    @classmethod
    def parse(cls, label: str) -> ToolKind | None:
        """Case-insensitive lookup; ``None`` marks an unknown tool."""
        try:
            return cls(label.strip().lower())
        except ValueError:
            return None


ALL_TOOLS = frozenset(ToolKind)


@dataclass(frozen=True)
class PlanNode:
    id: str
    query: str
    # canonical lowercase label; may name a tool outside ToolKind
    tool: str

    @property
    def kind(self) -> ToolKind | None:
        return ToolKind.parse(self.tool)

    def to_dict(self) -> dict:
        return {"id": self.id, "query": self.query, "tool": self.tool}

    @classmethod
    def from_dict(cls, d: dict) -> PlanNode:
        return cls(id=d["id"], query=d["query"], tool=d["tool"].strip().lower())


@dataclass(frozen=True)
class PlanEdge:
    src: str
    dst: str

    def to_dict(self) -> dict:
        return {"from": self.src, "to": self.dst}

    @classmethod
    def from_dict(cls, d: dict) -> PlanEdge:
        return cls(src=d["from"], dst=d["to"])


@dataclass(frozen=True)
class SearchPlan:
    nodes: tuple[PlanNode, ...]
    edges: tuple[PlanEdge, ...] = ()

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node(self, node_id: str) -> PlanNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def to_dict(self) -> dict:
        return {
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SearchPlan:
        return cls(
            nodes=tuple(PlanNode.from_dict(n) for n in d["nodes"]),
            edges=tuple(PlanEdge.from_dict(e) for e in d.get("edges", ())),
        )


@dataclass(frozen=True)
class ValidationReport:
    acyclic: bool
    node_format_ok: bool
    tools_ok: bool
    node_count_ok: bool
    edge_refs_ok: bool
    excluded_nodes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def reward_valid(self) -> bool:
        return (
            self.acyclic
            and self.node_format_ok
            and self.tools_ok
            and self.node_count_ok
            and self.edge_refs_ok
            and not self.excluded_nodes
        )

    @property
    def executable(self) -> bool:
        """Whether the plan can be run at all (unknown-tool nodes are skipped)."""
        return self.acyclic and self.edge_refs_ok and self.node_count_ok

    def to_dict(self) -> dict:
        return {
            "acyclic": self.acyclic,
            "node_format_ok": self.node_format_ok,
            "tools_ok": self.tools_ok,
            "node_count_ok": self.node_count_ok,
            "edge_refs_ok": self.edge_refs_ok,
            "excluded_nodes": list(self.excluded_nodes),
            "reward_valid": self.reward_valid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ValidationReport:
        return cls(
            acyclic=d["acyclic"],
            node_format_ok=d["node_format_ok"],
            tools_ok=d["tools_ok"],
            node_count_ok=d["node_count_ok"],
            edge_refs_ok=d["edge_refs_ok"],
            excluded_nodes=tuple(d.get("excluded_nodes", ())),
        )


def _parse_edges(text: str) -> list[PlanEdge]:
    edges = []
    for entry in re.split(r"[;\n]", text):
        entry = entry.strip()
        if not entry:
            continue
        parts = [p.strip() for p in _ARROW.split(entry)]
        if len(parts) < 2:
            raise MalformedEdge(f"edge without arrow: {entry!r}")
        if any(not p for p in parts):
            raise MalformedEdge(f"edge with empty endpoint: {entry!r}")
        # "A -> B -> C" is read as a chain
        for src, dst in zip(parts, parts[1:]):
            if src == dst:
                raise MalformedEdge(f"self-loop on {src!r}")
            edges.append(PlanEdge(src, dst))
    return edges


def parse_plan(text: str) -> SearchPlan:
    """Parse the body of a ``<search>`` block into a :class:`SearchPlan`.

    The tool is always the last parenthetical on a node line, so queries may
    contain parentheses of their own.
    """
    nodes: list[PlanNode] = []
    edge_text: list[str] = []
    seen: set[str] = set()
    in_edges = False
    first = True

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if first and _HEADER.match(line):
            first = False
            continue
        first = False
        if in_edges:
            edge_text.append(line)
            continue
        m = _EDGES.match(line)
        if m:
            in_edges = True
            edge_text.append(m.group("body"))
            continue
        m = _NODE_LINE.match(line)
        if not m:
            raise MalformedNodeLine(f"no 'ID:' prefix: {line!r}")
        tool = _TRAILING_TOOL.search(m.group("rest"))
        if not tool:
            raise MalformedNodeLine(f"no trailing (Tool): {line!r}")
        node_id = m.group("id")
        if node_id in seen:
            raise DuplicateNodeId(f"node {node_id!r} declared twice")
        seen.add(node_id)
        query = m.group("rest")[: tool.start()].strip()
        nodes.append(PlanNode(node_id, query, tool.group("tool").lower()))

    if not nodes:
        raise EmptyPlan("plan declares no nodes")
    edges = list(dict.fromkeys(_parse_edges("\n".join(edge_text))))
    return SearchPlan(tuple(nodes), tuple(edges))


def serialize_plan(plan: SearchPlan) -> str:
    lines = ["Nodes:"]
    lines += [f"{n.id}: {n.query} ({n.tool.capitalize()})" for n in plan.nodes]
    if plan.edges:
        lines.append("Edges: " + "; ".join(f"{e.src} -> {e.dst}" for e in plan.edges))
    return "\n".join(lines)


def render_structured(plan: SearchPlan) -> str:
    """Explicit key/value rendering of a plan, for token-cost comparison."""
    return json.dumps(
        {
            "nodes": [
                {"id": n.id, "query": n.query, "tool": n.tool.capitalize()}
                for n in plan.nodes
            ],
            "edges": [{"from": e.src, "to": e.dst} for e in plan.edges],
        }
    )


def _adjacency(ids: Iterable[str], edges: Iterable[PlanEdge]) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {i: [] for i in ids}
    for e in edges:
        if e.src in adj and e.dst in adj:
            adj[e.src].append(e.dst)
    return adj


def _depths(ids: list[str], edges: Iterable[PlanEdge]) -> dict[str, int] | None:
    """Longest-path depth of every node, or None if the graph has a cycle."""
    adj = _adjacency(ids, edges)
    indeg = {i: 0 for i in ids}
    for succs in adj.values():
        for d in succs:
            indeg[d] += 1
    depth = {i: 0 for i in ids}
    ready = [i for i in ids if indeg[i] == 0]
    done = 0
    while ready:
        cur = ready.pop()
        done += 1
        for nxt in adj[cur]:
            depth[nxt] = max(depth[nxt], depth[cur] + 1)
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return depth if done == len(ids) else None


def validate_plan(
    plan: SearchPlan,
    tools: Iterable[ToolKind] = ALL_TOOLS,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> ValidationReport:
    tools = frozenset(tools)
    ids = plan.ids
    declared = set(ids)
    excluded = tuple(n.id for n in plan.nodes if n.kind not in tools)
    return ValidationReport(
        acyclic=_depths(ids, plan.edges) is not None,
        node_format_ok=all(
            NODE_ID_PATTERN.fullmatch(n.id) and n.query.strip() for n in plan.nodes
        ),
        tools_ok=not excluded,
        node_count_ok=1 <= len(ids) <= max_nodes,
        edge_refs_ok=all(e.src in declared and e.dst in declared for e in plan.edges),
        excluded_nodes=excluded,
    )


def topo_levels(plan: SearchPlan) -> list[list[str]]:
    """Group nodes by longest dependency chain; ids sorted within a level."""
    depth = _depths(plan.ids, plan.edges)
    if depth is None:
        raise CycleDetected("plan contains a dependency cycle")
    if not depth:
        return []
    levels: list[list[str]] = [[] for _ in range(max(depth.values()) + 1)]
    for node_id, d in depth.items():
        levels[d].append(node_id)
    return [sorted(level) for level in levels]
