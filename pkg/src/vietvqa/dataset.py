"""Manifest loading, validation, and corpus statistics for the cultural VQA dataset.

Images are never downloaded or decoded; records reference detections by image_id.
Two manifest flavors exist: full records with questions, and counts-only records
({category, images, questions}) used for corpus statistics.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import IO, Iterable

from .categories import CATEGORY_SET
from .errors import DataFormatError
from .kb import KnowledgeBase

QTYPES = ("identification", "comparison", "description", "explanation")


class UnknownGoldEntityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuestionRecord:
    question: str
    answer: str
    qtype: str
    gold_entities: tuple[str, ...]


@dataclass(frozen=True)
class DatasetRecord:
    image_id: str
    image_ref: str
    category: str
    questions: tuple[QuestionRecord, ...]
    complexity: str = ""  # optional metadata, unused by any computation


@dataclass(frozen=True)
class CategoryCount:
    category: str
    images: int
    questions: int


@dataclass(frozen=True)
class CategoryStat:
    category: str
    images: int
    questions: int
    percent: float  # one decimal, apportioned so the column totals 100.0


@dataclass(frozen=True)
class DatasetStats:
    rows: tuple[CategoryStat, ...]
    total_images: int
    total_questions: int
    questions_per_image: float
    mean_question_tokens: float | None
    mean_answer_tokens: float | None


def _iter_json_lines(source: IO[str] | Iterable[str]):
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {line_no}: malformed record: {exc}") from exc
        if not isinstance(obj, dict):
            raise DataFormatError(f"line {line_no}: malformed record: not an object")
        yield line_no, obj


def load_manifest(
    source: IO[str] | Iterable[str], kb: KnowledgeBase | None = None
) -> list[DatasetRecord]:
    """Load and validate full manifest records.

    Duplicate image ids, unknown categories, and empty question lists are fatal.
    Gold entities missing from a supplied KB emit UnknownGoldEntityWarning but keep
    the record.
    """
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for line_no, obj in _iter_json_lines(source):
        image_id = obj.get("image_id")
        if not isinstance(image_id, str) or not image_id:
            raise DataFormatError(f"line {line_no}: non-empty text 'image_id' required")
        if image_id in seen:
            raise DataFormatError(f"line {line_no}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        category = obj.get("category")
        if category not in CATEGORY_SET:
            raise DataFormatError(
                f"line {line_no}: unknown category {category!r} for image {image_id!r}"
            )
        raw_questions = obj.get("questions")
        if not isinstance(raw_questions, list) or not raw_questions:
            raise DataFormatError(
                f"line {line_no}: image {image_id!r} has no questions"
            )
        questions = []
        for q in raw_questions:
            if not isinstance(q, dict) or not isinstance(q.get("question"), str):
                raise DataFormatError(
                    f"line {line_no}: malformed question record for image {image_id!r}"
                )
            qtype = q.get("qtype", "identification")
            if qtype not in QTYPES:
                raise DataFormatError(
                    f"line {line_no}: unknown qtype {qtype!r} for image {image_id!r}"
                )
            gold = tuple(q.get("gold_entities", []))
            if any(not isinstance(g, str) for g in gold):
                raise DataFormatError(
                    f"line {line_no}: gold_entities must be text ids for image {image_id!r}"
                )
            if kb is not None:
                for gold_id in gold:
                    if gold_id not in kb:
                        warnings.warn(
                            f"image {image_id!r}: gold entity {gold_id!r} not in knowledge base",
                            UnknownGoldEntityWarning,
                            stacklevel=2,
                        )
            questions.append(
                QuestionRecord(
                    question=q["question"],
                    answer=q.get("answer", ""),
                    qtype=qtype,
                    gold_entities=gold,
                )
            )
        records.append(
            DatasetRecord(
                image_id=image_id,
                image_ref=obj.get("image_ref", ""),
                category=category,
                questions=tuple(questions),
                complexity=obj.get("complexity", ""),
            )
        )
    return records


def load_manifest_file(path, kb: KnowledgeBase | None = None) -> list[DatasetRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return load_manifest(f, kb)


def dump_manifest(records: Iterable[DatasetRecord]) -> str:
    """Serialize records back to the line-delimited manifest format."""
    lines = []
    for record in records:
        obj = {
            "image_id": record.image_id,
            "image_ref": record.image_ref,
            "category": record.category,
            "questions": [
                {
                    "question": q.question,
                    "answer": q.answer,
                    "qtype": q.qtype,
                    "gold_entities": list(q.gold_entities),
                }
                for q in record.questions
            ],
        }
        if record.complexity:
            obj["complexity"] = record.complexity
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def load_counts(source: IO[str] | Iterable[str]) -> list[CategoryCount]:
    """Load a counts-only manifest: {category, images, questions} per line."""
    counts = []
    seen: set[str] = set()
    for line_no, obj in _iter_json_lines(source):
        category = obj.get("category")
        if category not in CATEGORY_SET:
            raise DataFormatError(f"line {line_no}: unknown category {category!r}")
        if category in seen:
            raise DataFormatError(f"line {line_no}: duplicate category {category!r}")
        seen.add(category)
        images, questions = obj.get("images"), obj.get("questions")
        if not isinstance(images, int) or not isinstance(questions, int) or images < 0:
            raise DataFormatError(f"line {line_no}: integer 'images' and 'questions' required")
        counts.append(CategoryCount(category=category, images=images, questions=questions))
    return counts


def is_counts_manifest(path) -> bool:
    """Sniff the manifest flavor from its first non-empty line."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                return False
            return isinstance(obj, dict) and "images" in obj and "image_id" not in obj
    return False


def bundled_manifest_path():
    return resources.files("vietvqa.data").joinpath("manifest_sample.jsonl")


def bundled_counts_path():
    return resources.files("vietvqa.data").joinpath("manifest_categories.jsonl")


def _apportion_percents(values: list[int], total: int) -> list[float]:
    """One-decimal percentages by largest remainder, summing to exactly 100.0."""
    if total <= 0:
        return [0.0 for _ in values]
    tenths = [value * 1000 / total for value in values]
    floors = [int(t) for t in tenths]
    remainders = [t - f for t, f in zip(tenths, floors)]
    shortfall = 1000 - sum(floors)
    order = sorted(
        range(len(values)), key=lambda i: (-remainders[i], -values[i], i)
    )
    for i in order[:shortfall]:
        floors[i] += 1
    return [f / 10.0 for f in floors]


def _stats_from_category_totals(
    per_category: dict[str, tuple[int, int]],
    mean_question_tokens: float | None,
    mean_answer_tokens: float | None,
) -> DatasetStats:
    ordered = sorted(per_category.items(), key=lambda kv: (-kv[1][0], kv[0]))
    images = [imgs for _, (imgs, _) in ordered]
    total_images = sum(images)
    total_questions = sum(qs for _, (_, qs) in ordered)
    percents = _apportion_percents(images, total_images)
    rows = tuple(
        CategoryStat(category=cat, images=imgs, questions=qs, percent=percent)
        for (cat, (imgs, qs)), percent in zip(ordered, percents)
    )
    questions_per_image = (
        round(total_questions / total_images, 1) if total_images else 0.0
    )
    return DatasetStats(
        rows=rows,
        total_images=total_images,
        total_questions=total_questions,
        questions_per_image=questions_per_image,
        mean_question_tokens=mean_question_tokens,
        mean_answer_tokens=mean_answer_tokens,
    )


def compute_stats(records: list[DatasetRecord]) -> DatasetStats:
    """Per-category counts/percentages plus corpus means; order-independent."""
    if not records:
        raise ValueError("compute_stats requires a non-empty record list")
    per_category: dict[str, tuple[int, int]] = {}
    question_tokens = 0
    answer_tokens = 0
    total_questions = 0
    for record in records:
        images, questions = per_category.get(record.category, (0, 0))
        per_category[record.category] = (images + 1, questions + len(record.questions))
        for q in record.questions:
            total_questions += 1
            question_tokens += len(q.question.split())
            answer_tokens += len(q.answer.split())
    mean_q = round(question_tokens / total_questions, 1) if total_questions else 0.0
    mean_a = round(answer_tokens / total_questions, 1) if total_questions else 0.0
    return _stats_from_category_totals(per_category, mean_q, mean_a)


def stats_from_counts(counts: list[CategoryCount]) -> DatasetStats:
    """Statistics for a counts-only manifest; token means are unavailable."""
    if not counts:
        raise ValueError("stats_from_counts requires a non-empty counts list")
    per_category = {c.category: (c.images, c.questions) for c in counts}
    return _stats_from_category_totals(per_category, None, None)


def format_stats(stats: DatasetStats) -> str:
    """Aligned plain-text statistics table."""
    width = max(len(row.category) for row in stats.rows)
    lines = [f"{'Category'.ljust(width)}  {'Images':>8}  {'Questions':>9}  {'Percent':>7}"]
    for row in stats.rows:
        lines.append(
            f"{row.category.ljust(width)}  {row.images:>8}  {row.questions:>9}  {row.percent:>6.1f}%"
        )
    lines.append(
        f"{'Total'.ljust(width)}  {stats.total_images:>8}  {stats.total_questions:>9}  {100.0:>6.1f}%"
    )
    lines.append(f"Questions per image: {stats.questions_per_image:.1f}")
    if stats.mean_question_tokens is not None:
        lines.append(f"Mean question length (tokens): {stats.mean_question_tokens:.1f}")
    if stats.mean_answer_tokens is not None:
        lines.append(f"Mean answer length (tokens): {stats.mean_answer_tokens:.1f}")
    return "\n".join(lines) + "\n"
