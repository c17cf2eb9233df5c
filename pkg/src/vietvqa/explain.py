"""Dual-channel explanations: structured Vietnamese sections, region evidence, and the
consistency checker that verifies text against detections and the knowledge base."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from xml.sax.saxutils import escape as xml_escape

from . import templates
from .dsl import ExecutionTrace
from .kb import KnowledgeBase, normalize_text
from .perception import DEFAULT_EVIDENCE_K, Detection, top_regions

CHECK_IDS = ("entity_grounded", "region_grounded", "claim_supported", "section_complete")

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class Sections:
    identification: str
    cultural_context: str
    elaboration: str


@dataclass(frozen=True)
class Evidence:
    detection: Detection
    entity_id: str | None
    saliency: float


@dataclass(frozen=True)
class Explanation:
    answer: str
    sections: Sections
    evidence: tuple[Evidence, ...]
    uncertain: bool


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    target: str
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class ConsistencyReport:
    checks: tuple[CheckResult, ...]

    @property
    def overall(self) -> bool:
        return all(check.passed for check in self.checks)

    def passed_fraction(self) -> float:
        return sum(1 for c in self.checks if c.passed) / len(self.checks)

    def check(self, check_id: str) -> CheckResult:
        for result in self.checks:
            if result.check_id == check_id:
                return result
        raise KeyError(check_id)


def split_sentences(text: str) -> list[str]:
    return [part.strip() for part in _SENTENCE_SPLIT.split(text) if part.strip()]


def _primary_entity(trace: ExecutionTrace) -> tuple[str | None, int | None]:
    """First resolved entity in the trace and the region it was resolved from."""
    for record in trace.records:
        if record.entity_ids:
            region = record.regions[0] if record.regions else None
            return record.entity_ids[0], region
    return None, None


def _evidence_regions(
    trace: ExecutionTrace, detections: list[Detection], k: int
) -> list[int]:
    """Indices of top-k regions plus any trace-touched regions not already included."""
    order = sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].confidence,
            -detections[i].area,
            detections[i].label,
            i,
        ),
    )
    chosen = order[:k]
    for record in trace.records:
        for region in record.regions:
            if region not in chosen:
                chosen.append(region)
    return chosen


def synthesize_explanation(
    trace: ExecutionTrace,
    kb: KnowledgeBase,
    detections: list[Detection],
    question: str,
    k: int = DEFAULT_EVIDENCE_K,
) -> Explanation:
    """Render the structured explanation for an execution trace.

    The identification section names the resolved entity and its detection label;
    cultural context comes from the entity's description plus ceremonial function;
    elaboration appears when the program consulted regional variants or history.
    Uncertain traces yield a "không xác định được" identification and empty context.
    """
    entity_id, region_index = _primary_entity(trace)
    uncertain = trace.uncertain or entity_id is None

    if uncertain:
        identification = templates.render("identification_uncertain")
        cultural_context = ""
        elaboration = ""
    else:
        entity = kb.get(entity_id)
        if region_index is not None:
            identification = templates.render(
                "identification_with_label",
                canonical_name=entity.canonical_name,
                label=detections[region_index].label,
            )
        else:
            identification = templates.render(
                "identification_no_label", canonical_name=entity.canonical_name
            )
        cultural_context = " ".join(templates.context_sentences(entity))
        elaboration_parts: list[str] = []
        if trace.invoked("compare_regional_variations"):
            elaboration_parts.extend(templates.variant_sentences(entity))
        if trace.invoked("describe_history"):
            elaboration_parts.extend(templates.history_sentences(entity))
        elaboration = " ".join(elaboration_parts)

    entity_links = trace.entity_regions()
    region_to_entity: dict[int, str] = {}
    for linked_entity, regions in entity_links.items():
        for region in regions:
            region_to_entity.setdefault(region, linked_entity)

    indices = _evidence_regions(trace, detections, k)
    confidences = [detections[i].confidence for i in indices]
    total = sum(confidences)
    evidence = []
    for i in indices:
        if total > 0:
            saliency = detections[i].confidence / total
        else:
            saliency = 1.0 / len(indices)
        evidence.append(
            Evidence(
                detection=detections[i],
                entity_id=region_to_entity.get(i),
                saliency=saliency,
            )
        )

    return Explanation(
        answer=trace.final_value.text,
        sections=Sections(
            identification=identification,
            cultural_context=cultural_context,
            elaboration=elaboration,
        ),
        evidence=tuple(evidence),
        uncertain=uncertain,
    )


def check_consistency(
    explanation: Explanation,
    detections: list[Detection],
    kb: KnowledgeBase,
    trace: ExecutionTrace,
) -> ConsistencyReport:
    """Verify text-evidence-knowledge consistency; overall passes iff every check does.

    The checker recomputes what the templates could have produced from the KB rather
    than trusting any annotation carried by the explanation itself.
    """
    touched = set(trace.touched_entities())
    entity_links = trace.entity_regions()
    checks: list[CheckResult] = []

    # entity_grounded: evidence entity ids exist in the KB and were touched in the trace
    bad_entity = ""
    entity_note = ""
    for item in explanation.evidence:
        if item.entity_id is None:
            continue
        if item.entity_id not in kb:
            bad_entity, entity_note = item.entity_id, "not in knowledge base"
            break
        if item.entity_id not in touched:
            bad_entity, entity_note = item.entity_id, "not touched in trace"
            break
    checks.append(
        CheckResult(
            check_id="entity_grounded",
            target=bad_entity or "evidence",
            passed=not bad_entity,
            note=entity_note,
        )
    )

    # region_grounded: canonical names mentioned in the identification section (the
    # section that asserts what was seen) must belong to trace-touched entities whose
    # linked detections (when any) exist. Entities resolved without a region (text
    # lookup) make no regional claim. Cross-references inside KB-sourced context text
    # are validated by claim_supported instead.
    normalized_identification = normalize_text(explanation.sections.identification)
    region_fail = ""
    region_note = ""
    for entity in kb.entities():
        if normalize_text(entity.canonical_name) not in normalized_identification:
            continue
        if entity.id not in touched:
            region_fail, region_note = entity.canonical_name, "entity not touched in trace"
            break
        linked = entity_links.get(entity.id, ())
        if any(region >= len(detections) for region in linked):
            region_fail, region_note = entity.canonical_name, "linked detection missing"
            break
    checks.append(
        CheckResult(
            check_id="region_grounded",
            target=region_fail or "sections",
            passed=not region_fail,
            note=region_note,
        )
    )

    # claim_supported: every context/elaboration sentence must be a substring of a
    # template render or of a raw KB field of some trace-touched entity
    renders: list[str] = []
    raw_fields: list[str] = []
    for entity_id in touched:
        if entity_id in kb:
            entity = kb.get(entity_id)
            renders.extend(templates.enumerate_renders(entity))
            raw_fields.extend(templates.entity_field_texts(entity))
    unsupported = ""
    for sentence in split_sentences(
        explanation.sections.cultural_context
    ) + split_sentences(explanation.sections.elaboration):
        if any(sentence in render for render in renders):
            continue
        if any(sentence in field_text for field_text in raw_fields):
            continue
        unsupported = sentence
        break
    checks.append(
        CheckResult(
            check_id="claim_supported",
            target=unsupported or "claims",
            passed=not unsupported,
            note="no KB provenance for sentence" if unsupported else "",
        )
    )

    # section_complete: non-uncertain explanations carry identification and context
    complete = explanation.uncertain or (
        bool(explanation.sections.identification.strip())
        and bool(explanation.sections.cultural_context.strip())
    )
    checks.append(
        CheckResult(
            check_id="section_complete",
            target="sections",
            passed=complete,
            note="" if complete else "identification or cultural_context empty",
        )
    )
    return ConsistencyReport(checks=tuple(checks))


def _fmt_px(value: float) -> str:
    return format(round(value, 3), "g")


def render_overlay_svg(explanation: Explanation, width_px: int, height_px: int) -> str:
    """Deterministic SVG overlay: one rectangle per evidence item, labels at top-left.

    Stroke opacity is proportional to the item's saliency.
    """
    if width_px < 1 or height_px < 1:
        raise ValueError("width_px and height_px must be >= 1")
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" '
        f'height="{height_px}" viewBox="0 0 {width_px} {height_px}">',
    ]
    for item in explanation.evidence:
        x1, y1, x2, y2 = item.detection.box
        x = _fmt_px(x1 * width_px)
        y = _fmt_px(y1 * height_px)
        w = _fmt_px((x2 - x1) * width_px)
        h = _fmt_px((y2 - y1) * height_px)
        opacity = _fmt_px(item.saliency)
        parts.append(
            f'<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="none" '
            f'stroke="#e63946" stroke-width="2" stroke-opacity="{opacity}"/>'
        )
        label = item.detection.label
        if item.entity_id:
            label = f"{label} [{item.entity_id}]"
        parts.append(
            f'<text x="{x}" y="{y}" dy="-4" font-size="14" '
            f'fill="#e63946">{xml_escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def explanation_to_dict(explanation: Explanation, report: ConsistencyReport) -> dict:
    """Serializable view with stable key order."""
    return {
        "answer": explanation.answer,
        "sections": {
            "identification": explanation.sections.identification,
            "cultural_context": explanation.sections.cultural_context,
            "elaboration": explanation.sections.elaboration,
        },
        "evidence": [
            {
                "label": item.detection.label,
                "confidence": item.detection.confidence,
                "box": list(item.detection.box),
                "entity_id": item.entity_id,
                "saliency": round(item.saliency, 9),
            }
            for item in explanation.evidence
        ],
        "uncertain": explanation.uncertain,
        "consistency": {
            "overall": report.overall,
            "checks": [
                {
                    "check_id": c.check_id,
                    "target": c.target,
                    "passed": c.passed,
                    "note": c.note,
                }
                for c in report.checks
            ],
        },
    }


def explanation_to_json(explanation: Explanation, report: ConsistencyReport) -> str:
    return json.dumps(explanation_to_dict(explanation, report), ensure_ascii=False)
