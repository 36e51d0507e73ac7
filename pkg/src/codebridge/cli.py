"""Command-line entry points.

    codebridge corpus build --in DIR --out DIR --split SPEC --seed N
    codebridge pretrain [--config FILE] [--artifacts DIR] [--force]
    codebridge train-encoder ...
    codebridge train-decoder [--ablation] ...
    codebridge generate ...
    codebridge eval run --problems FILE --samples FILE --samples-per-problem N
                        --k 1,10,100 --timeout 5 --jobs J --out report.json
    codebridge pipeline all [--config FILE] [--artifacts DIR] [--force]
    codebridge compare [--artifacts DIR] [--out FILE]

The artifact root defaults to ./artifacts, overridable by the
CODEBRIDGE_ARTIFACTS environment variable and the --artifacts flag.
Exit codes: 0 ok, 2 usage/config, 3 missing stage dependency, 4 domain
error, 5 sandbox infrastructure failure, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .corpus import build_corpus, read_problem_dir
from .errors import DependencyError, DomainError, SandboxError
from .evalharness import evaluate_samples, load_problems
from .pipeline import (
    STAGES,
    compare_ablation,
    comparison_to_json,
    load_config,
    run_all,
    run_stage,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEPENDENCY = 3
EXIT_DOMAIN = 4
EXIT_SANDBOX = 5


def _artifact_root(args) -> Path:
    if getattr(args, "artifacts", None):
        return Path(args.artifacts)
    env = os.environ.get("CODEBRIDGE_ARTIFACTS")
    return Path(env) if env else Path("artifacts")


def _config(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON (defaults built in)")
    p.add_argument("--artifacts", help="artifact root directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--force", action="store_true",
                   help="rerun even when inputs are unchanged")


def _run_stage_command(stage: str, args) -> int:
    entry = run_stage(stage, _config(args), _artifact_root(args), force=args.force)
    print(f"{stage}: {entry['status']} "
          f"({len(entry['artifacts'])} artifacts, {entry.get('wall_time_s', 0)}s)")
    return EXIT_OK


def _cmd_corpus_build(args) -> int:
    in_dir = Path(args.in_dir)
    problem_dirs = sorted(p for p in in_dir.iterdir() if p.is_dir())
    if not problem_dirs:
        raise DomainError(f"no problem directories under {in_dir}")
    problems = [read_problem_dir(p) for p in problem_dirs]
    records = build_corpus(problems, Path(args.out_dir), args.split, seed=args.seed)
    print(f"corpus: wrote {len(records)} entries to {args.out_dir}")
    return EXIT_OK


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise DomainError(f"bad --k list {text!r}") from None
    if not ks:
        raise DomainError("empty --k list")
    return ks


def _cmd_eval_run(args) -> int:
    problems = load_problems(args.problems)
    samples: dict[str, list[str]] = {}
    with open(args.samples, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.setdefault(rec["problem_id"], []).append(rec["program"])
    counts = {len(v) for v in samples.values()}
    if counts != {args.samples_per_problem}:
        raise DomainError(
            f"--samples-per-problem={args.samples_per_problem} but found "
            f"counts {sorted(counts)} in {args.samples}")
    report = evaluate_samples(
        samples, problems, ks=_parse_ks(args.k), timeout=args.timeout,
        mem_limit=args.mem_limit_mb * 1024 * 1024, jobs=args.jobs)
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"eval: wrote {args.out}")
    else:
        print(payload, end="")
    return EXIT_OK


def _cmd_pipeline_all(args) -> int:
    results = run_all(_config(args), _artifact_root(args), force=args.force)
    for stage in STAGES:
        entry = results[stage]
        print(f"{stage}: {entry['status']} ({entry.get('wall_time_s', 0)}s)")
    print(f"comparison: wrote {_artifact_root(args) / 'comparison.json'}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    payload = comparison_to_json(compare_ablation(_artifact_root(args)))
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"compare: wrote {args.out}")
    else:
        print(payload, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codebridge",
        description="Latent bridge-planned code generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus preprocessing")
    corpus_sub = corpus.add_subparsers(dest="subcommand", required=True)
    cb = corpus_sub.add_parser("build", help="build five-section entries")
    cb.add_argument("--in", dest="in_dir", required=True,
                    help="directory of problem record directories")
    cb.add_argument("--out", dest="out_dir", required=True)
    cb.add_argument("--split", default="train=0.9,heldout=0.1")
    cb.add_argument("--seed", type=int, default=0)
    cb.set_defaults(fn=_cmd_corpus_build)

    for stage, command in (("pretrain", "pretrain"),
                           ("encoder", "train-encoder"),
                           ("generate", "generate")):
        p = sub.add_parser(command, help=f"run the {stage} stage")
        _add_pipeline_flags(p)
        p.set_defaults(fn=lambda args, _s=stage: _run_stage_command(_s, args))

    td = sub.add_parser("train-decoder", help="run the decoder stage")
    _add_pipeline_flags(td)
    td.add_argument("--ablation", action="store_true",
                    help="train the unconditioned ablation instead")
    td.set_defaults(fn=lambda args: _run_stage_command(
        "ablation" if args.ablation else "decoder", args))

    ev = sub.add_parser("eval", help="functional-correctness evaluation")
    ev_sub = ev.add_subparsers(dest="subcommand", required=True)
    er = ev_sub.add_parser("run", help="evaluate pregenerated samples")
    er.add_argument("--problems", required=True, help="problems JSONL")
    er.add_argument("--samples", required=True,
                    help="JSONL of {problem_id, program} records")
    er.add_argument("--samples-per-problem", type=int, required=True)
    er.add_argument("--k", default="1", help="comma-separated k values")
    er.add_argument("--timeout", type=float, default=5.0)
    er.add_argument("--mem-limit-mb", type=int, default=512)
    er.add_argument("--jobs", type=int, default=1)
    er.add_argument("--out", help="report path (stdout when omitted)")
    er.set_defaults(fn=_cmd_eval_run)

    pipe = sub.add_parser("pipeline", help="orchestrate all stages")
    pipe_sub = pipe.add_subparsers(dest="subcommand", required=True)
    pa = pipe_sub.add_parser("all", help="run every stage in order")
    _add_pipeline_flags(pa)
    pa.set_defaults(fn=_cmd_pipeline_all)

    cmp_p = sub.add_parser("compare", help="conditioned vs ablation report")
    cmp_p.add_argument("--artifacts", help="artifact root directory")
    cmp_p.add_argument("--out", help="report path (stdout when omitted)")
    cmp_p.set_defaults(fn=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DependencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except SandboxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SANDBOX
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
