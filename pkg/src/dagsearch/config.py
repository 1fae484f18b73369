"""Engine configuration: one YAML/JSON document with nested sections.

Secrets (API keys) may be given in the file but environment variables
always win, and secrets never enter the config hash or ``public_dict``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .backends import (
    ARXIV_URL,
    GNEWS_URL,
    SERPER_URL,
    ArxivBackend,
    BackendRegistry,
    GNewsBackend,
    MockBackend,
    SerperBackend,
)
from .errors import ConfigInvalid, WeightSumInvalid
from .grpo import BetaSchedule
from .llm import ChatClient
from .plan import DEFAULT_MAX_NODES, ToolKind
from .reward import RewardWeights, StubJudge
from .rollout import ChatPolicy, ScriptedPolicy

SECRET_ENV = {
    ("search", "gnews_api_key"): "GNEWS_API_KEY",
    ("search", "serper_api_key"): "SERPER_API_KEY",
    ("policy", "api_key"): "LLM_API_KEY",
    ("judge", "api_key"): "JUDGE_API_KEY",
}
BASE_ENV = {("policy", "base_url"): "LLM_API_BASE", ("judge", "base_url"): "JUDGE_API_BASE"}


@dataclass
class SearchSection:
    mock: bool = False
    timeout: float = 10.0
    retries: int = 1
    parallelism: int = 4
    k: int = 2
    arxiv_url: str = ARXIV_URL
    gnews_url: str = GNEWS_URL
    serper_url: str = SERPER_URL
    gnews_api_key: str | None = field(default=None, repr=False)
    serper_api_key: str | None = field(default=None, repr=False)


@dataclass
class RewardSection:
    w_fmt: float = 0.25
    w_dag: float = 0.25
    w_ans: float = 0.5
    max_nodes: int = DEFAULT_MAX_NODES
    tools: list[str] = field(default_factory=lambda: [t.value for t in ToolKind])


@dataclass
class GrpoSection:
    group_size: int = 4
    beta_start: float = 0.1
    beta_end: float = 0.01
    total_steps: int = 1000


@dataclass
class PolicySection:
    base_url: str | None = None
    model: str = "default"
    temperature: float = 1.0
    max_tokens: int = 2048
    script: str | None = None
    api_key: str | None = field(default=None, repr=False)


@dataclass
class JudgeSection:
    base_url: str | None = None
    model: str = "default"
    stub_reply: str | None = None
    api_key: str | None = field(default=None, repr=False)


@dataclass
class EngineConfig:
    search: SearchSection = field(default_factory=SearchSection)
    reward: RewardSection = field(default_factory=RewardSection)
    grpo: GrpoSection = field(default_factory=GrpoSection)
    policy: PolicySection = field(default_factory=PolicySection)
    judge: JudgeSection = field(default_factory=JudgeSection)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict | None) -> EngineConfig:
        data = dict(data or {})
        sections = {f.name: f.type for f in fields(cls) if f.name != "seed"}
        kwargs = {}
        for name, cls_name in sections.items():
            section_cls = globals()[cls_name] if isinstance(cls_name, str) else cls_name
            raw = data.pop(name, None) or {}
            known = {f.name for f in fields(section_cls)}
            unknown = set(raw) - known
            if unknown:
                raise ConfigInvalid(f"unknown keys in [{name}]: {sorted(unknown)}")
            kwargs[name] = section_cls(**raw)
        seed = data.pop("seed", 0)
        if data:
            raise ConfigInvalid(f"unknown top-level keys: {sorted(data)}")
        cfg = cls(**kwargs, seed=seed)
        cfg.apply_env()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> EngineConfig:
        if path is None:
            return cls.from_dict({})
        try:
            text = Path(path).read_text(encoding="utf-8")
            data = yaml.safe_load(text)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigInvalid("config must be a mapping")
        return cls.from_dict(data)

    def apply_env(self) -> None:
        for (section, key), var in SECRET_ENV.items():
            if os.environ.get(var):
                setattr(getattr(self, section), key, os.environ[var])
        for (section, key), var in BASE_ENV.items():
            if getattr(getattr(self, section), key) is None and os.environ.get(var):
                setattr(getattr(self, section), key, os.environ[var])

    def validate(self) -> None:
        try:
            self.weights.check()
        except WeightSumInvalid as exc:
            raise ConfigInvalid(str(exc)) from exc
        if self.search.k < 1:
            raise ConfigInvalid("search.k must be >= 1")
        if self.search.parallelism < 1:
            raise ConfigInvalid("search.parallelism must be >= 1")
        if self.grpo.group_size < 1:
            raise ConfigInvalid("grpo.group_size must be >= 1")
        for tool in self.reward.tools:
            if ToolKind.parse(tool) is None:
                raise ConfigInvalid(f"unknown tool {tool!r}")
        try:
            self.beta_schedule
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @property
    def weights(self) -> RewardWeights:
        return RewardWeights(self.reward.w_fmt, self.reward.w_dag, self.reward.w_ans)

    @property
    def tools(self) -> frozenset[ToolKind]:
        return frozenset(ToolKind.parse(t) for t in self.reward.tools)

    @property
    def beta_schedule(self) -> BetaSchedule:
        g = self.grpo
        return BetaSchedule(g.beta_start, g.beta_end, g.total_steps)

    def public_dict(self) -> dict:
        d = asdict(self)
        for section, key in SECRET_ENV:
            d[section].pop(key, None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.public_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def registry(self) -> BackendRegistry:
        s = self.search
        opts = dict(timeout=s.timeout, retries=s.retries, parallelism=s.parallelism)
        if s.mock:
            return BackendRegistry({t: (MockBackend(t.value),) for t in ToolKind}, **opts)
        return BackendRegistry(
            {
                ToolKind.NEWS: (GNewsBackend(s.gnews_api_key, s.gnews_url),
                                SerperBackend("news", s.serper_api_key, s.serper_url)),
                ToolKind.ACADEMIC: (ArxivBackend(s.arxiv_url),),
                ToolKind.WEB: (SerperBackend("search", s.serper_api_key, s.serper_url),),
            },
            **opts,
        )

    def policy_client(self):
        p = self.policy
        if p.script:
            return ScriptedPolicy.from_file(p.script, max_tokens=p.max_tokens)
        if not p.base_url:
            raise ConfigInvalid("policy needs either a script or base_url (LLM_API_BASE)")
        return ChatPolicy(ChatClient(p.base_url, p.api_key, p.model, p.temperature, p.max_tokens))

    def judge_client(self):
        j = self.judge
        if j.stub_reply is not None:
            return StubJudge(j.stub_reply)
        if not j.base_url:
            return None
        return ChatClient(j.base_url, j.api_key, j.model, temperature=0.0, max_tokens=16)
