"""Command-line entry point.

Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import EngineConfig
from .errors import ConfigInvalid, DagSearchError
from .executor import execute_plan
from .plan import ToolKind, parse_plan, serialize_plan, validate_plan
from .reward import GoldAnswer, StubJudge, score_output

log = logging.getLogger("dagsearch")


def _read(path: str | None) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _gold(args) -> GoldAnswer:
    if args.gold_options:
        return GoldAnswer.choices(o for o in args.gold_options.split(",") if o.strip())
    if args.gold_text is not None:
        return GoldAnswer.free_text(args.gold_text)
    raise ConfigInvalid("give --gold-text or --gold-options")


def _tools(args, config: EngineConfig) -> frozenset[ToolKind]:
    if not getattr(args, "tools", None):
        return config.tools
    parsed = {ToolKind.parse(t) for t in args.tools.split(",")}
    if None in parsed:
        raise ConfigInvalid(f"unknown tool in {args.tools!r}")
    return frozenset(parsed)


def _judge(args, config: EngineConfig):
    if getattr(args, "judge_reply", None) is not None:
        return StubJudge(args.judge_reply)
    return config.judge_client()


def cmd_parse(args, config):
    plan = parse_plan(_read(args.file))
    if args.json:
        _emit(plan.to_dict())
    else:
        print(serialize_plan(plan))


def cmd_validate(args, config):
    plan = parse_plan(_read(args.file))
    report = validate_plan(plan, _tools(args, config), args.max_nodes or config.reward.max_nodes)
    if args.json:
        _emit(report.to_dict())
    else:
        for key, value in report.to_dict().items():
            if isinstance(value, list):
                value = ",".join(value) or "-"
            elif isinstance(value, bool):
                value = str(value).lower()
            print(f"{key}: {value}")


def cmd_exec(args, config):
    if args.mock:
        config.search.mock = True
    if args.parallelism:
        config.search.parallelism = args.parallelism
    plan = parse_plan(_read(args.file))
    report = validate_plan(plan, _tools(args, config), config.reward.max_nodes)
    trace = execute_plan(plan, report, config.registry(), args.k or config.search.k)
    if args.json:
        _emit(trace.to_dict(timing=False))
    else:
        print(trace.result_block)


def cmd_score(args, config):
    reward = score_output(_read(args.file), _gold(args), _judge(args, config), config.weights,
                          config.tools, config.reward.max_nodes)
    if args.json:
        _emit(reward.to_dict())
    else:
        for key in ("f_fmt", "f_dag", "f_ans", "composite"):
            print(f"{key}: {getattr(reward, key):g}")


def cmd_rollout(args, config):
    from .logstore import append_rollout_log
    from .rollout import run_group, run_rollout

    if args.mock:
        config.search.mock = True
    if args.script:
        config.policy.script = args.script
    kwargs = dict(judge=_judge(args, config), weights=config.weights, tools=config.tools,
                  max_nodes=config.reward.max_nodes, k=config.search.k)
    policy, registry, gold = config.policy_client(), config.registry(), _gold(args)
    if args.group:
        group = run_group(args.query, gold, args.group, policy, registry, **kwargs)
        records, out = group.records, group.to_dict()
    else:
        record = run_rollout(args.query, gold, policy, registry, **kwargs)
        records, out = (record,), record.to_dict()
    if args.log:
        for r in records:
            append_rollout_log(r, args.log, config.config_hash())
    if args.json:
        _emit(out)
    else:
        for r in records:
            rw = r.reward
            print(f"sample {r.sample}: f_fmt={rw.f_fmt} f_dag={rw.f_dag} "
                  f"f_ans={rw.f_ans:g} composite={rw.composite:g}")
        if args.group:
            print("advantages: " + " ".join(f"{a:+.4f}" for a in group.advantages))


def _text_model(config: EngineConfig):
    client = config.judge_client()
    if client is None:
        raise ConfigInvalid("dataset build needs a generator endpoint (JUDGE_API_BASE)")
    return client


def cmd_dataset_build(args, config):
    from .databuild import ClusterParams, build_dataset, load_corpus, write_dataset

    docs = load_corpus(args.corpus, args.embeddings)
    params = ClusterParams(distance_threshold=args.threshold, seed=config.seed,
                           reduce_to=args.reduce_to)
    model = _text_model(config)
    pairs, stats = build_dataset(docs, model, model, params, concurrency=args.concurrency)
    write_dataset(pairs, args.out)
    summary = {"documents": stats.documents, "unique": stats.unique, "bundles": stats.bundles,
               "candidates": stats.candidates, "accepted": stats.accepted,
               "rejected": stats.rejected, "out": str(args.out)}
    if args.json:
        _emit(summary)
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")


def cmd_serve(args, config):
    from .service import serve

    if args.mock:
        config.search.mock = True
    serve(config, args.host, args.port, args.log)


def cmd_report(args, config):
    from .logstore import read_rollout_log
    from .report import ROLLOUT_COLUMNS, beta_figure, economy_report, rollout_report, rollout_rows

    written = []
    if args.log:
        entries = read_rollout_log(args.log)
        written += rollout_report(entries, args.out)
        print(args.sep.join(ROLLOUT_COLUMNS))
        for row in rollout_rows(entries):
            print(args.sep.join(str(row[c]) for c in ROLLOUT_COLUMNS))
    if args.plans:
        plans = {Path(p).stem: parse_plan(_read(p)) for p in args.plans}
        written += economy_report(plans, args.out)
    if args.beta:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        written.append(beta_figure(config.beta_schedule, Path(args.out) / "beta_schedule.png"))
    if not written:
        raise ConfigInvalid("nothing to report: give --log, --plans or --beta")
    for path in written:
        print(f"wrote {path}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagsearch", description=__doc__)
    parser.add_argument("--config", help="YAML/JSON engine config")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, file_arg=True, **kw):
        p = sub.add_parser(name, help=help_, **kw)
        if file_arg:
            p.add_argument("file", nargs="?", help="input file (default stdin)")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(func=func)
        return p

    add("parse", cmd_parse, "parse a plan and print its canonical form")

    p = add("validate", cmd_validate, "validate a plan")
    p.add_argument("--tools", help="comma-separated tool set")
    p.add_argument("--max-nodes", type=int)

    p = add("exec", cmd_exec, "execute a plan and print the result block")
    p.add_argument("--mock", action="store_true", help="use offline mock backends")
    p.add_argument("--k", type=int, help="passages per query")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--tools", help="comma-separated tool set")

    gold_args = argparse.ArgumentParser(add_help=False)
    gold_args.add_argument("--gold-text")
    gold_args.add_argument("--gold-options", help="comma-separated option letters")
    gold_args.add_argument("--judge-reply", help="fixed judge reply (offline stub)")

    add("score", cmd_score, "score a full output text", parents=[gold_args])

    p = add("rollout", cmd_rollout, "run one rollout or a group", file_arg=False,
            parents=[gold_args])
    p.add_argument("--query", required=True)
    p.add_argument("--group", type=int, metavar="M")
    p.add_argument("--script", help="scripted policy fixture (JSON)")
    p.add_argument("--mock", action="store_true")
    p.add_argument("--log", help="append records to this JSONL file")

    ds = sub.add_parser("dataset", help="dataset construction")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    p = ds_sub.add_parser("build", help="build a QA dataset from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.35)
    p.add_argument("--reduce-to", type=int)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_dataset_build)

    p = add("serve", cmd_serve, "run the HTTP service", file_arg=False)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--log", help="rollout log path")

    p = add("report", cmd_report, "write CSV summaries and figures", file_arg=False)
    p.add_argument("--log", help="rollout log to summarize")
    p.add_argument("--plans", nargs="*", help="plan files for the token-economy report")
    p.add_argument("--beta", action="store_true", help="plot the KL coefficient schedule")
    p.add_argument("--out", default="report")
    p.add_argument("--sep", default="\t", help="column separator for stdout")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = EngineConfig.load(args.config)
        args.func(args, config)
    except DagSearchError as exc:
        print(f"error: {exc.reason}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
