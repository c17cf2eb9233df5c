"""Vietnamese sentence templates with slots, loaded from a data file.

Every sentence that can appear in an explanation section is rendered here, so the
consistency checker can re-enumerate the full set of renderable sentences for an
entity and verify provenance without trusting the synthesizer.
"""

from __future__ import annotations

import json
from importlib import resources

from .kb import CulturalEntity


def _load_templates() -> dict[str, str]:
    with resources.files("vietvqa.data").joinpath("sentence_templates.json").open(
        "r", encoding="utf-8"
    ) as f:
        return json.load(f)


TEMPLATES = _load_templates()


def render(name: str, **slots: str) -> str:
    return TEMPLATES[name].format(**slots)


def context_sentences(entity: CulturalEntity) -> list[str]:
    """Cultural-context section: description plus ceremonial function when present."""
    sentences = [render("context_description", description=entity.description)]
    if entity.ceremonial_function:
        sentences.append(
            render("context_ceremonial", ceremonial_function=entity.ceremonial_function)
        )
    return sentences


def history_sentences(entity: CulturalEntity) -> list[str]:
    if not entity.historical_context:
        return []
    return [render("history", historical_context=entity.historical_context)]


def variant_sentences(entity: CulturalEntity) -> list[str]:
    return [
        render("regional_variant", region=v.region, note=v.note)
        for v in entity.regional_variants
    ]


def enumerate_renders(entity: CulturalEntity) -> list[str]:
    """All section sentences the templates can produce from this entity's fields."""
    renders = [
        render("identification_no_label", canonical_name=entity.canonical_name),
        render("architecture", description=entity.description),
    ]
    renders.extend(context_sentences(entity))
    renders.extend(history_sentences(entity))
    renders.extend(variant_sentences(entity))
    return renders


def entity_field_texts(entity: CulturalEntity) -> list[str]:
    """Raw KB text fields usable as provenance for a claim."""
    texts = [entity.description]
    if entity.historical_context:
        texts.append(entity.historical_context)
    if entity.ceremonial_function:
        texts.append(entity.ceremonial_function)
    texts.extend(v.note for v in entity.regional_variants)
    return texts
