"""Reports: delimited summaries plus matplotlib figures written to a directory."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .grpo import BetaSchedule, beta_at  # noqa: E402
from .logstore import RolloutLogRecord  # noqa: E402
from .plan import SearchPlan, render_structured, serialize_plan  # noqa: E402

ROLLOUT_COLUMNS = ("query", "sample", "f_fmt", "f_dag", "f_ans", "composite",
                   "passages", "generation_limit", "config_hash")
ECONOMY_COLUMNS = ("plan", "nodes", "edges", "nl_bytes", "structured_bytes",
                   "nl_tokens", "structured_tokens", "byte_ratio", "token_ratio")


def token_economy(plan: SearchPlan) -> dict:
    nl, structured = serialize_plan(plan), render_structured(plan)
    row = {
        "nodes": len(plan.nodes),
        "edges": len(plan.edges),
        "nl_bytes": len(nl.encode()),
        "structured_bytes": len(structured.encode()),
        "nl_tokens": len(nl.split()),
        "structured_tokens": len(structured.split()),
    }
    row["byte_ratio"] = row["nl_bytes"] / row["structured_bytes"]
    row["token_ratio"] = row["nl_tokens"] / row["structured_tokens"]
    return row


def _write_csv(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def rollout_rows(entries: Sequence[RolloutLogRecord]) -> list[dict]:
    rows = []
    for e in entries:
        r = e.record
        rows.append({
            "query": r.query,
            "sample": r.sample,
            "f_fmt": r.reward.f_fmt,
            "f_dag": r.reward.f_dag,
            "f_ans": r.reward.f_ans,
            "composite": r.reward.composite,
            "passages": r.trace.passage_count if r.trace else 0,
            "generation_limit": int(r.generation_limit),
            "config_hash": e.config_hash,
        })
    return rows


def rollout_report(entries: Sequence[RolloutLogRecord], out_dir: str | Path) -> list[Path]:
    """CSV of per-rollout rewards, a composite histogram and component means."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = rollout_rows(entries)
    written = [out / "rollouts.csv"]
    _write_csv(written[0], ROLLOUT_COLUMNS, rows)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist([row["composite"] for row in rows], bins=[i / 8 for i in range(9)],
            edgecolor="black")
    ax.set_xlabel("composite reward")
    ax.set_ylabel("rollouts")
    fig.tight_layout()
    written.append(out / "composite_hist.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    n = max(len(rows), 1)
    means = [sum(row[c] for row in rows) / n for c in ("f_fmt", "f_dag", "f_ans", "composite")]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(["format", "plan", "answer", "composite"], means, color="0.5")
    ax.set_ylim(0, 1)
    ax.set_ylabel("mean over rollouts")
    fig.tight_layout()
    written.append(out / "components.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)
    return written


def economy_report(plans: dict[str, SearchPlan], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"plan": name, **token_economy(p)} for name, p in plans.items()]
    written = [out / "token_economy.csv"]
    _write_csv(written[0], ECONOMY_COLUMNS, rows)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.scatter([r["nodes"] for r in rows], [r["token_ratio"] for r in rows],
               label="tokens", marker="o")
    ax.scatter([r["nodes"] for r in rows], [r["byte_ratio"] for r in rows],
               label="bytes", marker="x")
    ax.axhline(1.0, color="black", linewidth=0.8)
    ax.set_xlabel("plan nodes")
    ax.set_ylabel("plan text / structured rendering")
    ax.legend()
    fig.tight_layout()
    written.append(out / "token_economy.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)
    return written


def beta_figure(schedule: BetaSchedule, path: str | Path) -> Path:
    steps = range(0, schedule.total_steps + 1, max(1, schedule.total_steps // 200))
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(list(steps), [beta_at(s, schedule) for s in steps])
    ax.set_xlabel("training step")
    ax.set_ylabel("KL coefficient")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
