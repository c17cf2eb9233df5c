"""The four-stage pipeline: detection ingestion, program generation, execution,
and explanation, wired behind a single configuration object."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources as importlib_resources

from .dsl import ExecutionContext, ExecutionTrace, execute_program
from .errors import DataFormatError, MissingImageError
from .explain import (
    ConsistencyReport,
    Explanation,
    check_consistency,
    synthesize_explanation,
)
from .kb import DEFAULT_MATCH_THRESHOLD, KnowledgeBase, load_kb_file
from .perception import DEFAULT_EVIDENCE_K, Detection, fetch_detections, load_detection_fixture
from .progen import (
    Exemplar,
    GenerationOutcome,
    GeneratorBackend,
    RemoteGenerator,
    generate_program,
    load_exemplars,
)


@dataclass(frozen=True)
class PipelineConfig:
    kb_path: str | None = None  # None = bundled starter KB
    detections_path: str | None = None
    detector_url: str | None = None
    generator: str = "fallback"  # "fallback" | "remote"
    generator_url: str | None = None
    exemplars_path: str | None = None
    threshold: float = DEFAULT_MATCH_THRESHOLD
    evidence_k: int = DEFAULT_EVIDENCE_K
    ablation: str = "full"
    output_format: str = "human"  # "human" | "json-lines"
    max_repairs: int = 2
    seed: int = 0

    def validate(self) -> None:
        if (self.detections_path is None) == (self.detector_url is None):
            raise DataFormatError(
                "exactly one detection source required: a fixture path or a detector URL"
            )
        if not 0.0 <= self.threshold <= 1.0:
            raise DataFormatError("threshold must lie in [0, 1]")
        if self.generator not in ("fallback", "remote"):
            raise DataFormatError("generator must be 'fallback' or 'remote'")
        if self.generator == "remote" and not self.generator_url:
            raise DataFormatError("remote generator requires a generator URL")


@dataclass
class Resources:
    """Loaded, immutable inputs shared across answer calls (and across threads)."""

    kb: KnowledgeBase
    fixture: dict[str, list[Detection]] | None
    detector_url: str | None
    backend: GeneratorBackend | None
    exemplars: tuple[Exemplar, ...]
    threshold: float = DEFAULT_MATCH_THRESHOLD
    evidence_k: int = DEFAULT_EVIDENCE_K
    max_repairs: int = 2

    def detections_for(self, image_id: str) -> list[Detection]:
        if self.fixture is not None:
            detections = self.fixture.get(image_id)
            if detections is None:
                raise MissingImageError(f"no detections for image id {image_id!r}")
            return detections
        return fetch_detections(image_id, self.detector_url)


@dataclass(frozen=True)
class AnswerResult:
    explanation: Explanation
    report: ConsistencyReport
    trace: ExecutionTrace
    outcome: GenerationOutcome

    @property
    def predicted_entity(self) -> str | None:
        for record in self.trace.records:
            if record.entity_ids:
                return record.entity_ids[0]
        return None


def default_kb_path() -> str:
    return str(importlib_resources.files("vietvqa.data").joinpath("kb_starter.jsonl"))


def load_resources(config: PipelineConfig) -> Resources:
    config.validate()
    kb = load_kb_file(config.kb_path if config.kb_path else default_kb_path())
    fixture = (
        load_detection_fixture(config.detections_path)
        if config.detections_path is not None
        else None
    )
    backend = (
        RemoteGenerator(config.generator_url) if config.generator == "remote" else None
    )
    exemplars = load_exemplars(config.exemplars_path)
    return Resources(
        kb=kb,
        fixture=fixture,
        detector_url=config.detector_url,
        backend=backend,
        exemplars=exemplars,
        threshold=config.threshold,
        evidence_k=config.evidence_k,
        max_repairs=config.max_repairs,
    )


def answer_with_resources(
    resources: Resources,
    image_id: str,
    question: str,
    kb_override: KnowledgeBase | None = None,
) -> AnswerResult:
    """Detection ingestion -> program generation -> execution -> explanation."""
    detections = resources.detections_for(image_id)
    kb = kb_override if kb_override is not None else resources.kb
    labels = [d.label for d in detections]
    outcome = generate_program(
        question,
        labels,
        resources.backend,
        max_repairs=resources.max_repairs,
        exemplars=resources.exemplars,
    )
    ctx = ExecutionContext(
        detections=tuple(detections),
        kb=kb,
        question=question,
        threshold=resources.threshold,
    )
    trace = execute_program(outcome.program, ctx)
    explanation = synthesize_explanation(
        trace, kb, detections, question, k=resources.evidence_k
    )
    report = check_consistency(explanation, detections, kb, trace)
    return AnswerResult(
        explanation=explanation, report=report, trace=trace, outcome=outcome
    )


def run_answer(config: PipelineConfig, image_id: str, question: str) -> AnswerResult:
    """One-shot convenience wrapper: load resources, then answer."""
    return answer_with_resources(load_resources(config), image_id, question)
