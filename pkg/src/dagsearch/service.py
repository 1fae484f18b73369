"""HTTP surface for trainers: plan, execution, reward and rollout endpoints."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .config import EngineConfig
from .errors import (
    BindFailure,
    DagSearchError,
    JudgeUnavailable,
    PolicyUnreachable,
    UnparsableVerdict,
)
from .executor import execute_plan
from .grpo import group_advantages
from .logstore import append_rollout_log
from .plan import ToolKind, parse_plan, serialize_plan, validate_plan
from .reward import GoldAnswer, score_output
from .rollout import run_group, run_rollout

log = logging.getLogger(__name__)

_UPSTREAM = (JudgeUnavailable, PolicyUnreachable, UnparsableVerdict)


class PlanRequest(BaseModel):
    text: str
    tools: Optional[list[str]] = None
    max_nodes: Optional[int] = Field(default=None, ge=1)


class ExecuteRequest(PlanRequest):
    k: Optional[int] = Field(default=None, ge=1)


class GoldModel(BaseModel):
    kind: str
    text: str = ""
    options: list[str] = []

    def to_gold(self) -> GoldAnswer:
        return GoldAnswer(self.kind, text=self.text, options=frozenset(self.options))


class ScoreRequest(BaseModel):
    gold: GoldModel
    text: Optional[str] = None
    texts: Optional[list[str]] = None


class RolloutRequest(BaseModel):
    query: str
    gold: GoldModel
    group: Optional[int] = Field(default=None, ge=1)


def create_app(config: EngineConfig, log_path: str | Path | None = None) -> FastAPI:
    """Build the app; engine state is fixed here and read-only afterwards."""
    registry = config.registry()
    judge = config.judge_client()
    config_hash = config.config_hash()
    policy = None
    if config.policy.script or config.policy.base_url:
        policy = config.policy_client()

    app = FastAPI(title="dagsearch", version=config_hash)

    def tools_of(req: PlanRequest) -> frozenset[ToolKind]:
        if req.tools is None:
            return config.tools
        parsed = {ToolKind.parse(t) for t in req.tools}
        if None in parsed:
            raise ValueError("unknown tool in 'tools'")
        return frozenset(parsed)

    @app.exception_handler(DagSearchError)
    def domain_error(request: Request, exc: DagSearchError):
        status = 424 if isinstance(exc, _UPSTREAM) else 422
        return JSONResponse({"error": exc.reason, "detail": str(exc)}, status_code=status)

    @app.exception_handler(ValueError)
    def value_error(request: Request, exc: ValueError):
        return JSONResponse({"error": "BadRequest", "detail": str(exc)}, status_code=400)

    @app.exception_handler(RequestValidationError)
    def bad_request(request: Request, exc: RequestValidationError):
        fields = sorted({".".join(str(p) for p in e["loc"][1:]) for e in exc.errors()})
        return JSONResponse({"error": "BadRequest", "detail": f"invalid fields: {fields}"},
                            status_code=400)

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz():
        return "ok"

    @app.post("/v1/plan/parse")
    def plan_parse(req: PlanRequest):
        plan = parse_plan(req.text)
        return {"plan": plan.to_dict(), "canonical": serialize_plan(plan)}

    @app.post("/v1/plan/validate")
    def plan_validate(req: PlanRequest):
        plan = parse_plan(req.text)
        report = validate_plan(plan, tools_of(req), req.max_nodes or config.reward.max_nodes)
        return {"plan": plan.to_dict(), "validation": report.to_dict()}

    @app.post("/v1/plan/execute")
    def plan_execute(req: ExecuteRequest):
        plan = parse_plan(req.text)
        report = validate_plan(plan, tools_of(req), req.max_nodes or config.reward.max_nodes)
        trace = execute_plan(plan, report, registry, req.k or config.search.k)
        return {
            "plan": plan.to_dict(),
            "validation": report.to_dict(),
            "trace": trace.to_dict(timing=False),
        }

    @app.post("/v1/reward/score")
    def reward_score(req: ScoreRequest):
        if (req.text is None) == (req.texts is None):
            raise ValueError("give exactly one of 'text' or 'texts'")
        gold = req.gold.to_gold()

        def score(text: str):
            return score_output(text, gold, judge, config.weights, config.tools,
                                config.reward.max_nodes)

        if req.text is not None:
            return {"reward": score(req.text).to_dict()}
        rewards = [score(t) for t in req.texts]
        return {
            "rewards": [r.to_dict() for r in rewards],
            "advantages": group_advantages([r.composite for r in rewards]),
        }

    @app.post("/v1/rollout")
    def rollout(req: RolloutRequest):
        if policy is None:
            raise PolicyUnreachable("no policy endpoint or script configured")
        kwargs = dict(judge=judge, weights=config.weights, tools=config.tools,
                      max_nodes=config.reward.max_nodes, k=config.search.k)
        gold = req.gold.to_gold()
        if req.group is not None:
            group = run_group(req.query, gold, req.group, policy, registry, **kwargs)
            records = group.records
            body = {"group": group.to_dict()}
        else:
            record = run_rollout(req.query, gold, policy, registry, **kwargs)
            records = (record,)
            body = {"record": record.to_dict()}
        if log_path is not None:
            for r in records:
                append_rollout_log(r, log_path, config_hash)
        return body

    return app


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8000,
          log_path: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(config, log_path)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except (OSError, SystemExit) as exc:
        raise BindFailure(f"cannot serve on {host}:{port}") from exc
