"""Command-line entry point wiring the four-stage pipeline and the evaluation kit.

Subcommands: answer, explain (answer + SVG overlay), eval, ablate, kb lookup,
dataset stats, dataset validate. The default generator backend is the deterministic
fallback, so everything works offline; remote services are opt-in flags.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import warnings
from pathlib import Path

from . import dataset as dataset_mod
from . import evalkit, pipeline, report as report_mod
from .dsl import trace_to_dict
from .errors import (
    DataFormatError,
    DetectorTransportError,
    EngineError,
    GeneratorTransportError,
    MissingImageError,
)
from .explain import explanation_to_dict, render_overlay_svg
from .kb import DEFAULT_MATCH_THRESHOLD, load_bundled_kb, load_kb_file, match_entity
from .perception import DEFAULT_EVIDENCE_K

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING_IMAGE = 4
EXIT_GENERATOR_TRANSPORT = 5
EXIT_DETECTOR_TRANSPORT = 6
EXIT_INTERNAL = 1


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kb", help="knowledge base file (default: bundled starter KB)")
    parser.add_argument("--detections", help="detection fixture file (JSON lines)")
    parser.add_argument("--detector-url", help="remote detector endpoint")
    parser.add_argument(
        "--generator", choices=("remote", "fallback"), default="fallback",
        help="program generator backend (default: fallback)",
    )
    parser.add_argument("--generator-url", help="remote generator endpoint")
    parser.add_argument("--exemplars", help="exemplar bundle file (default: bundled)")
    parser.add_argument(
        "--threshold", type=float, default=DEFAULT_MATCH_THRESHOLD,
        help="entity match threshold in [0,1]",
    )
    parser.add_argument(
        "--k", type=int, default=DEFAULT_EVIDENCE_K, help="evidence regions to keep"
    )
    parser.add_argument(
        "--format", choices=("human", "json-lines"), default="human", dest="out_format"
    )
    parser.add_argument("--out", help="write output to this path instead of stdout")
    parser.add_argument("--seed", type=int, default=0, help="seed for any sampling")


def _pipeline_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig(
        kb_path=args.kb,
        detections_path=args.detections,
        detector_url=args.detector_url,
        generator=args.generator,
        generator_url=args.generator_url,
        exemplars_path=args.exemplars,
        threshold=args.threshold,
        evidence_k=args.k,
        output_format=args.out_format,
        seed=args.seed,
    )


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _answer_human(result: pipeline.AnswerResult) -> str:
    lines = [
        f"Trả lời: {result.explanation.answer}",
        "",
        f"Nhận diện: {result.explanation.sections.identification}",
    ]
    if result.explanation.sections.cultural_context:
        lines.append(f"Bối cảnh văn hóa: {result.explanation.sections.cultural_context}")
    if result.explanation.sections.elaboration:
        lines.append(f"Mở rộng: {result.explanation.sections.elaboration}")
    lines.append("")
    lines.append("Vùng ảnh dẫn chứng:")
    if result.explanation.evidence:
        for item in result.explanation.evidence:
            entity = f" -> {item.entity_id}" if item.entity_id else ""
            lines.append(
                f"  - {item.detection.label} (tin cậy {item.detection.confidence:.2f}, "
                f"trọng số {item.saliency:.2f}){entity}"
            )
    else:
        lines.append("  (không có)")
    status = "ĐẠT" if result.report.overall else "KHÔNG ĐẠT"
    lines.append(f"Kiểm tra nhất quán: {status}")
    for check in result.report.checks:
        mark = "+" if check.passed else "!"
        note = f" ({check.note})" if check.note else ""
        lines.append(f"  {mark} {check.check_id}{note}")
    lines.append(
        f"Nguồn chương trình: {result.outcome.source} (số lần gọi: {result.outcome.attempts})"
    )
    return "\n".join(lines) + "\n"


def _answer_json_lines(result: pipeline.AnswerResult) -> str:
    lines = [
        json.dumps(
            {
                "type": "generation",
                "source": result.outcome.source,
                "attempts": result.outcome.attempts,
            },
            ensure_ascii=False,
        ),
        json.dumps(
            {"type": "explanation", **explanation_to_dict(result.explanation, result.report)},
            ensure_ascii=False,
        ),
        json.dumps({"type": "trace", **trace_to_dict(result.trace)}, ensure_ascii=False),
    ]
    return "\n".join(lines) + "\n"


def _cmd_answer(args: argparse.Namespace, emit_svg: bool) -> int:
    config = _pipeline_config(args)
    result = pipeline.run_answer(config, args.image_id, args.question)
    if args.out_format == "json-lines":
        _emit(_answer_json_lines(result), args.out)
    else:
        _emit(_answer_human(result), args.out)
    if emit_svg:
        svg = render_overlay_svg(result.explanation, args.width, args.height)
        Path(args.svg).write_text(svg, encoding="utf-8")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, configs: list[str]) -> int:
    config = _pipeline_config(args)
    resources = pipeline.load_resources(config)
    records = dataset_mod.load_manifest_file(args.manifest, kb=None)
    items = evalkit.items_from_manifest(records)
    if args.sample is not None and args.sample < len(items):
        rng = random.Random(args.seed)
        items = sorted(rng.sample(items, args.sample), key=lambda it: it.item_id)
    reports = [
        evalkit.run_ablation(items, resources, config=c, threads=args.threads)
        for c in configs
    ]
    if args.out:
        paths = report_mod.write_report_files(reports, args.out)
        sys.stdout.write(
            "\n".join(f"wrote {path}" for path in paths.values()) + "\n"
        )
    if args.out_format == "json-lines":
        lines: list[str] = []
        for rep in reports:
            lines.extend(report_mod.report_to_lines(rep))
        payload = "\n".join(lines) + "\n"
        if not args.out:
            sys.stdout.write(payload)
    elif not args.out:
        sys.stdout.write(report_mod.format_report_table(reports))
    return EXIT_OK


def _cmd_kb_lookup(args: argparse.Namespace) -> int:
    kb = load_kb_file(args.kb) if args.kb else load_bundled_kb()
    candidates = match_entity(args.mention, kb, threshold=args.threshold)
    if args.out_format == "json-lines":
        lines = [
            json.dumps(
                {
                    "entity_id": c.entity_id,
                    "score": round(c.score, 9),
                    "matched_alias": c.matched_alias,
                    "method": c.method,
                },
                ensure_ascii=False,
            )
            for c in candidates
        ]
        _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
        return EXIT_OK
    if not candidates:
        _emit("(không tìm thấy kết quả nào đạt ngưỡng)\n", args.out)
        return EXIT_OK
    lines = []
    for c in candidates:
        entity = kb.get(c.entity_id)
        lines.append(
            f"{c.entity_id}  score={c.score:.3f}  method={c.method}  "
            f"alias={c.matched_alias!r}"
        )
        lines.append(f"  {entity.canonical_name} [{entity.category}]")
        lines.append(f"  {entity.description}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_dataset_stats(args: argparse.Namespace) -> int:
    path = args.manifest
    if dataset_mod.is_counts_manifest(path):
        with open(path, "r", encoding="utf-8") as f:
            stats = dataset_mod.stats_from_counts(dataset_mod.load_counts(f))
    else:
        stats = dataset_mod.compute_stats(dataset_mod.load_manifest_file(path))
    if args.out_format == "json-lines":
        lines = [
            json.dumps(
                {
                    "category": row.category,
                    "images": row.images,
                    "questions": row.questions,
                    "percent": row.percent,
                },
                ensure_ascii=False,
            )
            for row in stats.rows
        ]
        lines.append(
            json.dumps(
                {
                    "total_images": stats.total_images,
                    "total_questions": stats.total_questions,
                    "questions_per_image": stats.questions_per_image,
                    "mean_question_tokens": stats.mean_question_tokens,
                    "mean_answer_tokens": stats.mean_answer_tokens,
                },
                ensure_ascii=False,
            )
        )
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(dataset_mod.format_stats(stats), args.out)
    return EXIT_OK


def _cmd_dataset_validate(args: argparse.Namespace) -> int:
    kb = None
    if args.kb:
        kb = load_kb_file(args.kb)
    elif args.check_kb:
        kb = load_bundled_kb()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", dataset_mod.UnknownGoldEntityWarning)
        records = dataset_mod.load_manifest_file(args.manifest, kb=kb)
    gold_warnings = [
        w for w in caught if issubclass(w.category, dataset_mod.UnknownGoldEntityWarning)
    ]
    sys.stdout.write(f"OK: {len(records)} records\n")
    for w in gold_warnings:
        sys.stdout.write(f"warning: {w.message}\n")
    sys.stdout.write(f"warnings: {len(gold_warnings)}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vietvqa",
        description="Culturally grounded Vietnamese VQA over detections and a knowledge base",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_answer = sub.add_parser("answer", help="answer a question about one image")
    _add_pipeline_flags(p_answer)
    p_answer.add_argument("--image-id", required=True)
    p_answer.add_argument("--question", required=True)

    p_explain = sub.add_parser("explain", help="answer plus SVG overlay emission")
    _add_pipeline_flags(p_explain)
    p_explain.add_argument("--image-id", required=True)
    p_explain.add_argument("--question", required=True)
    p_explain.add_argument("--svg", default="overlay.svg", help="overlay output path")
    p_explain.add_argument("--width", type=int, default=1000, help="overlay width in px")
    p_explain.add_argument("--height", type=int, default=750, help="overlay height in px")

    for name, help_text in (
        ("eval", "score the pipeline on a manifest"),
        ("ablate", "run ablation configurations and compare"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_pipeline_flags(p)
        p.add_argument("--manifest", required=True)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--sample", type=int, help="score a seeded random sample of items")
        if name == "eval":
            p.add_argument(
                "--config", choices=evalkit.ABLATION_CONFIGS, default="full",
                help="pipeline configuration to score",
            )
        else:
            p.add_argument(
                "--config", choices=(*evalkit.ABLATION_CONFIGS, "all"), default="all",
                help="ablation configuration (default: all)",
            )

    p_kb = sub.add_parser("kb", help="knowledge base utilities")
    kb_sub = p_kb.add_subparsers(dest="kb_command", required=True)
    p_lookup = kb_sub.add_parser("lookup", help="resolve a mention against the KB")
    p_lookup.add_argument("mention")
    p_lookup.add_argument("--kb", help="knowledge base file (default: bundled)")
    p_lookup.add_argument("--threshold", type=float, default=DEFAULT_MATCH_THRESHOLD)
    p_lookup.add_argument(
        "--format", choices=("human", "json-lines"), default="human", dest="out_format"
    )
    p_lookup.add_argument("--out")

    p_dataset = sub.add_parser("dataset", help="manifest utilities")
    ds_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_stats = ds_sub.add_parser("stats", help="corpus statistics for a manifest")
    p_stats.add_argument("--manifest", required=True)
    p_stats.add_argument(
        "--format", choices=("human", "json-lines"), default="human", dest="out_format"
    )
    p_stats.add_argument("--out")
    p_validate = ds_sub.add_parser("validate", help="validate a manifest")
    p_validate.add_argument("--manifest", required=True)
    p_validate.add_argument("--kb", help="check gold entities against this KB")
    p_validate.add_argument(
        "--check-kb", action="store_true", help="check gold entities against the bundled KB"
    )
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        if args.command == "answer":
            return _cmd_answer(args, emit_svg=False)
        if args.command == "explain":
            return _cmd_answer(args, emit_svg=True)
        if args.command == "eval":
            return _cmd_eval(args, [args.config])
        if args.command == "ablate":
            configs = (
                list(evalkit.ABLATION_CONFIGS) if args.config == "all" else [args.config]
            )
            return _cmd_eval(args, configs)
        if args.command == "kb":
            return _cmd_kb_lookup(args)
        if args.command == "dataset":
            if args.dataset_command == "stats":
                return _cmd_dataset_stats(args)
            return _cmd_dataset_validate(args)
        parser.error(f"unknown command {args.command!r}")
    except MissingImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_IMAGE
    except GeneratorTransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATOR_TRANSPORT
    except DetectorTransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DETECTOR_TRANSPORT
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
