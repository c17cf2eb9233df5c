"""Evaluation metrics (BLEU-4, ROUGE-L, exact-match METEOR, cultural accuracy,
explanation quality), inter-annotator agreement, and the ablation runner."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from . import pipeline
from .dsl import AnswerValue, ExecutionTrace
from .errors import EngineError
from .explain import check_consistency, ConsistencyReport, Explanation
from .kb import KnowledgeBase, match_entity, normalize_text
from .perception import Detection, top_regions

ABLATION_CONFIGS = ("full", "no_kb", "no_visual", "no_program")

METRIC_COLUMNS = ("bleu4", "rouge_l", "meteor_lite", "cultural_accuracy", "explanation_quality")


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    image_id: str
    question: str
    reference_answer: str
    gold_entities: tuple[str, ...]


@dataclass(frozen=True)
class ItemScores:
    item_id: str
    bleu4: float
    rouge_l: float
    meteor_lite: float
    cultural_accuracy: float
    explanation_quality: float
    error: str = ""


@dataclass(frozen=True)
class MetricReport:
    config: str
    per_item: tuple[ItemScores, ...]
    aggregate: dict[str, float]
    n: int


def items_from_manifest(records) -> list[EvalItem]:
    """One evaluation item per (record, question) pair, in manifest order."""
    items = []
    for record in records:
        for number, question in enumerate(record.questions, start=1):
            items.append(
                EvalItem(
                    item_id=f"{record.image_id}#q{number}",
                    image_id=record.image_id,
                    question=question.question,
                    reference_answer=question.answer,
                    gold_entities=question.gold_entities,
                )
            )
    return items

# Explanation-quality mix: checks passing / evidence linked / sections complete.
EQ_WEIGHT_CHECKS = 0.5
EQ_WEIGHT_LINKED = 0.3
EQ_WEIGHT_COMPLETE = 0.2


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of the normalized (diacritics preserved) text."""
    return normalize_text(text).split()


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuDetails:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    warning: bool = False


def bleu4_details(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> BleuDetails:
    """BLEU-4 with add-one smoothing of zero numerators for n >= 2.

    Empty candidate or empty reference set scores 0 with the warning flag set.
    """
    references = [ref for ref in references if ref]
    if not candidate or not references:
        return BleuDetails(0.0, (0.0, 0.0, 0.0, 0.0), 0.0, warning=True)
    precisions = []
    for n in range(1, 5):
        cand_counts = _ngram_counts(candidate, n)
        total = sum(cand_counts.values())
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if n >= 2 and clipped == 0:
            clipped, total = clipped + 1, total + 1
        precisions.append(clipped / total if total else 0.0)
    cand_len = len(candidate)
    ref_len = min((len(ref) for ref in references), key=lambda L: (abs(L - cand_len), L))
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    if precisions[0] == 0.0:
        return BleuDetails(0.0, tuple(precisions), brevity)
    score = brevity * math.exp(sum(math.log(p) for p in precisions) / 4.0)
    return BleuDetails(score, tuple(precisions), brevity)


def bleu4(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    return bleu4_details(candidate, references).score


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = 1.0) -> float:
    """LCS F-measure; beta=1 gives the symmetric F1."""
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    beta2 = beta * beta
    return (1 + beta2) * precision * recall / (recall + beta2 * precision)


def _greedy_alignment(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Leftmost one-to-one exact alignment: each candidate token takes the earliest
    unused reference position holding the same token."""
    positions: dict[str, list[int]] = {}
    for j, token in enumerate(reference):
        positions.setdefault(token, []).append(j)
    used: dict[str, int] = {}
    pairs = []
    for i, token in enumerate(candidate):
        available = positions.get(token, [])
        cursor = used.get(token, 0)
        if cursor < len(available):
            pairs.append((i, available[cursor]))
            used[token] = cursor + 1
    return pairs


def meteor_lite(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Exact-match METEOR variant: recall-weighted harmonic mean with chunk penalty.

    No stemming or synonym matching; 0 when nothing matches.
    """
    if not candidate or not reference:
        return 0.0
    pairs = _greedy_alignment(candidate, reference)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(candidate)
    recall = matches / len(reference)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    chunks = 1
    for (prev_i, prev_j), (i, j) in zip(pairs, pairs[1:]):
        if i != prev_i + 1 or j != prev_j + 1:
            chunks += 1
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


def cultural_accuracy(predicted_entity: str | None, gold_entities: Sequence[str]) -> int:
    """Binary: 1 iff the predicted entity is one of the expert-validated gold ids."""
    if predicted_entity is None:
        return 0
    return 1 if predicted_entity in gold_entities else 0


def explanation_quality(explanation: Explanation, report: ConsistencyReport) -> float:
    """Composite grounding score in [0, 1] for a rationale and its consistency report."""
    checks_fraction = report.passed_fraction()
    if explanation.evidence:
        linked = sum(1 for item in explanation.evidence if item.entity_id is not None)
        linked_fraction = linked / len(explanation.evidence)
    else:
        linked_fraction = 0.0
    complete = 1.0 if report.check("section_complete").passed else 0.0
    score = (
        EQ_WEIGHT_CHECKS * checks_fraction
        + EQ_WEIGHT_LINKED * linked_fraction
        + EQ_WEIGHT_COMPLETE * complete
    )
    return min(1.0, max(0.0, score))


def cohen_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    """Chance-corrected agreement between two annotators over categorical labels."""
    if len(labels_a) != len(labels_b):
        raise ValueError("length mismatch between annotator label lists")
    if not labels_a:
        raise ValueError("label lists must be non-empty")
    n = len(labels_a)
    observed = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    expected = sum(
        (counts_a[label] / n) * (counts_b[label] / n) for label in counts_a if label in counts_b
    )
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


# --- ablation runner ---------------------------------------------------------


def aggregate_scores(per_item: Sequence[ItemScores]) -> dict[str, float]:
    """Arithmetic means of each metric column; zeros for an empty slice."""
    if not per_item:
        return {column: 0.0 for column in METRIC_COLUMNS}
    return {
        column: sum(getattr(item, column) for item in per_item) / len(per_item)
        for column in METRIC_COLUMNS
    }


def _empty_trace(answer_text: str, uncertain: bool) -> ExecutionTrace:
    return ExecutionTrace(records=(), final_value=AnswerValue(answer_text, uncertain))


def _score_no_program(
    item: EvalItem,
    kb: KnowledgeBase,
    detections: list[Detection],
    threshold: float,
    k: int,
) -> tuple[str, str | None, Explanation, ConsistencyReport]:
    """Answer from the top-1 detection label, bypassing program generation entirely."""
    from . import templates
    from .explain import Evidence, Explanation, Sections

    top = top_regions(detections, 1)
    if top:
        label = top[0].label
        candidates = match_entity(label, kb, threshold=threshold)
        predicted = candidates[0].entity_id if candidates else None
        identification = templates.render("identification_label_only", label=label)
        uncertain = False
        answer_text = label
    else:
        predicted = None
        identification = templates.render("identification_uncertain")
        uncertain = True
        answer_text = ""
    ranked = top_regions(detections, k)
    total = sum(d.confidence for d in ranked)
    evidence = tuple(
        Evidence(
            detection=det,
            entity_id=None,
            saliency=det.confidence / total if total > 0 else 1.0 / len(ranked),
        )
        for det in ranked
    )
    explanation = Explanation(
        answer=answer_text,
        sections=Sections(identification=identification, cultural_context="", elaboration=""),
        evidence=evidence,
        uncertain=uncertain,
    )
    report = check_consistency(explanation, detections, kb, _empty_trace(answer_text, uncertain))
    return answer_text, predicted, explanation, report


def score_item(
    item: EvalItem,
    resources: "pipeline.Resources",
    config: str = "full",
) -> ItemScores:
    """Run the pipeline for one item under an ablation configuration and score it."""
    if config not in ABLATION_CONFIGS:
        raise ValueError(f"unknown ablation config {config!r}")
    try:
        detections = resources.detections_for(item.image_id)
        kb = KnowledgeBase(()) if config == "no_kb" else resources.kb
        if config == "no_program":
            answer_text, predicted, explanation, report = _score_no_program(
                item, kb, detections, resources.threshold, resources.evidence_k
            )
        else:
            result = pipeline.answer_with_resources(
                resources, item.image_id, item.question, kb_override=kb
            )
            explanation, report = result.explanation, result.report
            if config == "no_visual":
                explanation = replace(explanation, evidence=())
                report = check_consistency(explanation, detections, kb, result.trace)
            answer_text = explanation.answer
            predicted = result.predicted_entity
    except EngineError as exc:
        return ItemScores(
            item_id=item.item_id,
            bleu4=0.0,
            rouge_l=0.0,
            meteor_lite=0.0,
            cultural_accuracy=0.0,
            explanation_quality=0.0,
            error=str(exc),
        )
    candidate = tokenize(answer_text)
    reference = tokenize(item.reference_answer)
    return ItemScores(
        item_id=item.item_id,
        bleu4=bleu4(candidate, [reference]),
        rouge_l=rouge_l(candidate, reference),
        meteor_lite=meteor_lite(candidate, reference),
        cultural_accuracy=float(cultural_accuracy(predicted, item.gold_entities)),
        explanation_quality=explanation_quality(explanation, report),
    )


def run_ablation(
    items: Sequence[EvalItem],
    resources: "pipeline.Resources",
    config: str = "full",
    threads: int = 1,
) -> MetricReport:
    """Score every item under one configuration and aggregate a tagged report.

    Item failures are recorded per item (zero scores plus an error note) and never
    abort the run. Per-item scoring is pure, so items may be scored concurrently;
    results keep the input order regardless of thread count.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            per_item = tuple(executor.map(lambda it: score_item(it, resources, config), items))
    else:
        per_item = tuple(score_item(item, resources, config) for item in items)
    return MetricReport(
        config=config,
        per_item=per_item,
        aggregate=aggregate_scores(per_item),
        n=len(per_item),
    )
