"""Command-line entry points: ``ask``, ``bench`` and ``render-prompts``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import prompts
from .backends import BackendPool, OpenAIChatBackend, ScriptedBackend
from .harness import ManifestError, ManifestItem, load_manifest, run_benchmark, run_item, write_traces
from .model import MemoryBank, MemoryEntry, Plan, QAPair, Question, RunConfig

ENV_LLM_URL = "TRAVELER_LLM_URL"
ENV_LMM_URL = "TRAVELER_LMM_URL"
ENV_LLM_MODEL = "TRAVELER_LLM_MODEL"
ENV_LMM_MODEL = "TRAVELER_LMM_MODEL"


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    backend = p.add_argument_group("backends")
    backend.add_argument("--llm-url", default=os.environ.get(ENV_LLM_URL), help=f"chat-completions base URL (env {ENV_LLM_URL})")
    backend.add_argument("--lmm-url", default=os.environ.get(ENV_LMM_URL), help=f"defaults to --llm-url (env {ENV_LMM_URL})")
    backend.add_argument("--llm-model", default=os.environ.get(ENV_LLM_MODEL, "gpt-4-1106-preview"))
    backend.add_argument("--lmm-model", default=os.environ.get(ENV_LMM_MODEL, "llava-v1.6-vicuna-13b"))
    backend.add_argument("--scripted", metavar="FIXTURES", help="replay responses from a fixture JSON file instead of calling models")
    backend.add_argument("--queue-capacity", type=int, default=4, help="max in-flight requests across all runs")
    backend.add_argument("--single-image", action="store_true", help="the LMM accepts one image per request")
    backend.add_argument("--timeout", type=float, default=120.0)

    loop = p.add_argument_group("loop")
    loop.add_argument("--max-iterations", type=int, default=4)
    loop.add_argument("--window", type=int, default=2, help="frames taken on each side of the retrieved timestamp")
    loop.add_argument("--grid-step", type=float, default=1.0, help="seconds between window frames")
    loop.add_argument("--num-questions", type=int, default=3)
    loop.add_argument("--memory-init", type=int, default=5)
    loop.add_argument("--summarize-threshold", type=int, default=12000, help="memory size in characters that triggers summarization")
    loop.add_argument("--lmm-max-tokens", type=int, default=150)
    loop.add_argument("--temperature", type=float, default=0.0)
    loop.add_argument("--no-planner", action="store_true")
    loop.add_argument("--captions-only", action="store_true")
    loop.add_argument("--uniform-sampling", action="store_true")
    loop.add_argument("--templates", metavar="DIR", help="directory of replacement prompt templates")

    out = p.add_argument_group("output")
    out.add_argument("--deterministic", action="store_true", help="omit latency fields from traces")
    out.add_argument("--out", metavar="TRACES", help="append JSONL traces to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traveler", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", help="answer one question about one video")
    src = ask.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames-dir")
    src.add_argument("--video")
    ask.add_argument("--duration", type=float, required=True)
    ask.add_argument("--question", required=True)
    ask.add_argument("--choices", nargs="+", required=True)
    ask.add_argument("--answer-index", type=int, help="ground truth, recorded in the trace")
    ask.add_argument("--id", default="ask", help="item id (also the fixture scenario key)")
    _add_run_flags(ask)

    bench = sub.add_parser("bench", help="run every item of a JSONL manifest")
    bench.add_argument("--manifest", required=True)
    bench.add_argument("--parallelism", type=int, default=1)
    bench.add_argument("--report", metavar="PATH", help="write the report JSON here")
    _add_run_flags(bench)

    render = sub.add_parser("render-prompts", help="print every stage prompt for a sample input")
    render.add_argument("--question", default="Why did the boy turn over in the middle of the video?")
    render.add_argument("--choices", nargs="+", default=["to look at the sky", "to sit down", "to wave",
                                                           "to rest on the yellow object", "to get down the slide"])
    render.add_argument("--templates", metavar="DIR")
    render.add_argument("--out-dir", help="write one <stage>.txt per prompt instead of printing")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        window_halfwidth=args.window,
        num_questions=args.num_questions,
        memory_init_count=args.memory_init,
        max_iterations=args.max_iterations,
        summarize_threshold_chars=args.summarize_threshold,
        lmm_max_tokens=args.lmm_max_tokens,
        grid_step_seconds=args.grid_step,
        temperature=args.temperature,
        no_planner=args.no_planner,
        captions_only=args.captions_only,
        uniform_sampling=args.uniform_sampling,
    )


def pool_from_args(args: argparse.Namespace) -> BackendPool:
    if args.scripted:
        scripted = ScriptedBackend.from_file(args.scripted, supports_multi_image=not args.single_image)
        return BackendPool(scripted, scripted, args.queue_capacity)
    if not args.llm_url:
        raise SystemExit(f"error: pass --llm-url (or set {ENV_LLM_URL}) or --scripted FIXTURES")
    llm = OpenAIChatBackend(args.llm_url, args.llm_model, timeout=args.timeout)
    lmm = OpenAIChatBackend(args.lmm_url or args.llm_url, args.lmm_model, timeout=args.timeout,
                            supports_multi_image=not args.single_image)
    return BackendPool(llm, lmm, args.queue_capacity)


def _templates(args: argparse.Namespace) -> prompts.TemplateSet | None:
    return prompts.TemplateSet.from_dir(args.templates) if args.templates else None


def cmd_ask(args: argparse.Namespace) -> int:
    choices = tuple(args.choices)
    truth = args.answer_index if args.answer_index is not None else 0
    item = ManifestItem(id=args.id, duration_seconds=args.duration, question=args.question, choices=choices,
                        answer_index=truth, frames_dir=args.frames_dir, video=args.video)
    outcome = run_item(item, pool_from_args(args), config_from_args(args), args.deterministic, _templates(args))
    record = dict(outcome.record)
    if args.answer_index is None:
        record["correct"] = None
    if args.out:
        write_traces([record], args.out)
    result = outcome.result
    if result is None or result.answer_index is None:
        print(f"no answer: {outcome.error}", file=sys.stderr)
        return 1
    print(f"answer {result.answer_index}: {choices[result.answer_index]}")
    print(f"iterations {len(result.iterations)}, forced {result.forced}, frames viewed {result.total_frames_viewed}")
    if result.error:
        print(f"warning: {result.error}", file=sys.stderr)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        items = load_manifest(args.manifest)
    except (ManifestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report, _ = run_benchmark(items, pool_from_args(args), config_from_args(args), args.parallelism,
                              trace_path=args.out, deterministic=args.deterministic, templates=_templates(args))
    print(report.summary())
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0 if report.trace_error is None else 1


def sample_renders(question: Question, templates: prompts.TemplateSet | None = None) -> dict[str, str]:
    memory = MemoryBank(44.0)
    memory.insert(0.0, MemoryEntry("A boy sits at the top of a slide."))
    memory.insert(22.0, MemoryEntry("A boy lies on a slide.", [QAPair("What is the boy doing?", "He is turning over.")]))
    plan = Plan(("Go to the middle of the video.", "Ask what the boy is doing."))
    text = memory.render()
    return {
        "planner": prompts.render_planner(question, text, None, templates),
        "retriever": prompts.render_retriever(question, plan, text, 22.0, 2.0, 44.0, templates),
        "extractor": prompts.render_extractor(question, plan, text, "A boy lies on a slide.", 22.0, 44.0, 3, templates),
        "evaluator": prompts.render_evaluator(question, plan, text, False, templates),
        "evaluator_forced": prompts.render_evaluator(question, plan, text, True, templates),
        "summarizer": prompts.render_summarizer(text, templates),
        "captioner": prompts.render_captioner(templates),
    }


def cmd_render(args: argparse.Namespace) -> int:
    renders = sample_renders(Question(args.question, tuple(args.choices)), _templates(args))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in renders.items():
            (out / f"{name}.txt").write_text(text + "\n", encoding="utf-8")
        return 0
    for name, text in renders.items():
        print(f"===== {name} =====\n{text}\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("ask", "bench"):
        try:
            config_from_args(args)
        except ValueError as exc:
            parser.error(str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "ask":
        return cmd_ask(args)
    if args.command == "bench":
        return cmd_bench(args)
    return cmd_render(args)


if __name__ == "__main__":
    sys.exit(main())
