"""Vietnamese cultural knowledge base: loading, normalization, and fuzzy entity matching.

Free-text mentions are resolved against an alias index built from normalized and
diacritic-folded alias forms; anything that misses the index falls back to a lexical
score mixing edit distance and token overlap over the folded forms.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable

from .categories import CATEGORY_SET
from .errors import DataFormatError

DEFAULT_MATCH_THRESHOLD = 0.75

# Lexical similarity mix: s = W_EDIT*(1 - normalized edit distance) + W_JACCARD*(token Jaccard).
W_EDIT = 0.6
W_JACCARD = 0.4


def _load_fold_table() -> dict[str, str]:
    with resources.files("vietvqa.data").joinpath("diacritic_fold.json").open(
        "r", encoding="utf-8"
    ) as f:
        return json.load(f)


_FOLD_TABLE = _load_fold_table()


@dataclass(frozen=True)
class RegionalVariant:
    region: str
    note: str


@dataclass(frozen=True)
class CulturalEntity:
    id: str
    canonical_name: str
    aliases: tuple[str, ...]
    category: str
    description: str
    historical_context: str = ""
    ceremonial_function: str = ""
    regional_variants: tuple[RegionalVariant, ...] = ()
    source: str = ""

    def all_aliases(self) -> tuple[str, ...]:
        """Canonical name is implicitly an alias of itself."""
        return (self.canonical_name, *self.aliases)


@dataclass(frozen=True)
class MatchCandidate:
    entity_id: str
    score: float
    matched_alias: str
    method: str  # "exact" | "fuzzy"


class KnowledgeBase:
    """Immutable indexed entity store; safe to share across concurrent readers."""

    def __init__(self, entities: Iterable[CulturalEntity]):
        self._entities: dict[str, CulturalEntity] = {}
        # normalized alias -> [(entity_id, original alias)], for plain and folded forms
        self._alias_plain: dict[str, list[tuple[str, str]]] = {}
        self._alias_folded: dict[str, list[tuple[str, str]]] = {}
        for entity in entities:
            if entity.id in self._entities:
                raise DataFormatError(f"duplicate entity id {entity.id!r}")
            self._entities[entity.id] = entity
            for alias in entity.all_aliases():
                self._alias_plain.setdefault(normalize_text(alias), []).append(
                    (entity.id, alias)
                )
                self._alias_folded.setdefault(
                    normalize_text(alias, fold_diacritics=True), []
                ).append((entity.id, alias))

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def ids(self) -> tuple[str, ...]:
        return tuple(self._entities)

    def entities(self) -> tuple[CulturalEntity, ...]:
        return tuple(self._entities.values())

    def get(self, entity_id: str) -> CulturalEntity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise KeyError(f"entity not found: {entity_id!r}") from None

    def exact_hits(self, mention: str) -> dict[str, str]:
        """Entity ids whose alias equals the mention after normalization (plain or folded)."""
        hits: dict[str, str] = {}
        for entity_id, alias in self._alias_plain.get(normalize_text(mention), []):
            hits.setdefault(entity_id, alias)
        folded = normalize_text(mention, fold_diacritics=True)
        for entity_id, alias in self._alias_folded.get(folded, []):
            hits.setdefault(entity_id, alias)
        return hits


def normalize_text(text: str, fold_diacritics: bool = False) -> str:
    """Canonical composed form, lowercased, whitespace collapsed; optionally ASCII-folded."""
    normalized = unicodedata.normalize("NFC", text).lower()
    normalized = " ".join(normalized.split())
    if fold_diacritics:
        normalized = "".join(_FOLD_TABLE.get(ch, ch) for ch in normalized)
    return normalized


def fold_text(text: str) -> str:
    return normalize_text(text, fold_diacritics=True)


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def fuzzy_score(a: str, b: str) -> float:
    """Similarity of two diacritic-folded strings in [0, 1]; symmetric; 1.0 iff equal."""
    if a == b:
        return 1.0
    longest = max(len(a), len(b))
    edit_sim = 1.0 - levenshtein(a, b) / longest if longest else 1.0
    tokens_a, tokens_b = set(a.split()), set(b.split())
    union = tokens_a | tokens_b
    jaccard = len(tokens_a & tokens_b) / len(union) if union else 1.0
    return W_EDIT * edit_sim + W_JACCARD * jaccard


def _parse_record(obj: dict, line_no: int) -> CulturalEntity:
    def text_field(name: str, required: bool = False) -> str:
        value = obj.get(name, "")
        if not isinstance(value, str):
            raise DataFormatError(f"line {line_no}: field {name!r} must be text")
        if required and not value.strip():
            raise DataFormatError(f"line {line_no}: field {name!r} must be non-empty")
        return value

    entity_id = text_field("id", required=True)
    canonical = text_field("canonical_name", required=True)
    category = text_field("category", required=True)
    if category not in CATEGORY_SET:
        raise DataFormatError(
            f"line {line_no}: unknown category {category!r} for entity {entity_id!r}"
        )
    aliases = obj.get("aliases", [])
    if not isinstance(aliases, list) or any(not isinstance(a, str) for a in aliases):
        raise DataFormatError(f"line {line_no}: 'aliases' must be a list of text")
    raw_variants = obj.get("regional_variants", [])
    if not isinstance(raw_variants, list):
        raise DataFormatError(f"line {line_no}: 'regional_variants' must be a list")
    variants = []
    for variant in raw_variants:
        if (
            not isinstance(variant, dict)
            or not isinstance(variant.get("region"), str)
            or not isinstance(variant.get("note"), str)
        ):
            raise DataFormatError(
                f"line {line_no}: regional variant needs text 'region' and 'note'"
            )
        variants.append(RegionalVariant(region=variant["region"], note=variant["note"]))
    return CulturalEntity(
        id=entity_id,
        canonical_name=canonical,
        aliases=tuple(aliases),
        category=category,
        # description backs the explanation's cultural-context section, so it may not be empty
        description=text_field("description", required=True),
        historical_context=text_field("historical_context"),
        ceremonial_function=text_field("ceremonial_function"),
        regional_variants=tuple(variants),
        source=text_field("source"),
    )


def load_kb(source: IO[str] | Iterable[str]) -> KnowledgeBase:
    """Load a knowledge base from line-delimited JSON records.

    Raises DataFormatError (with the offending line number) on malformed records,
    duplicate ids, or categories outside the closed set.
    """
    entities: list[CulturalEntity] = []
    seen: set[str] = set()
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
        entity = _parse_record(obj, line_no)
        if entity.id in seen:
            raise DataFormatError(f"line {line_no}: duplicate entity id {entity.id!r}")
        seen.add(entity.id)
        entities.append(entity)
    return KnowledgeBase(entities)


def load_kb_file(path) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as f:
        return load_kb(f)


def load_bundled_kb() -> KnowledgeBase:
    """The starter knowledge base shipped with the package."""
    with resources.files("vietvqa.data").joinpath("kb_starter.jsonl").open(
        "r", encoding="utf-8"
    ) as f:
        return load_kb(f)


def get_entity(entity_id: str, kb: KnowledgeBase) -> CulturalEntity:
    """Return the full record for an id; ids are case-sensitive opaque strings."""
    return kb.get(entity_id)


def match_entity(
    mention: str,
    kb: KnowledgeBase,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    categories: frozenset[str] | None = None,
) -> list[MatchCandidate]:
    """Rank KB entities against a free-text mention.

    Exact normalized-alias hits (with or without diacritics) score 1.0; other entities
    get the lexical fuzzy score of their best alias. Only candidates at or above the
    threshold are returned, sorted by score descending then entity id ascending.
    An empty result is a valid "no match" outcome.
    """
    exact = kb.exact_hits(mention)
    folded_mention = normalize_text(mention, fold_diacritics=True)
    candidates: list[MatchCandidate] = []
    for entity in kb.entities():
        if categories is not None and entity.category not in categories:
            continue
        if entity.id in exact:
            candidates.append(
                MatchCandidate(
                    entity_id=entity.id,
                    score=1.0,
                    matched_alias=exact[entity.id],
                    method="exact",
                )
            )
            continue
        best_score = 0.0
        best_alias = entity.canonical_name
        for alias in entity.all_aliases():
            score = fuzzy_score(folded_mention, normalize_text(alias, fold_diacritics=True))
            if score > best_score:
                best_score, best_alias = score, alias
        if best_score >= threshold:
            candidates.append(
                MatchCandidate(
                    entity_id=entity.id,
                    score=best_score,
                    matched_alias=best_alias,
                    method="fuzzy",
                )
            )
    candidates.sort(key=lambda c: (-c.score, c.entity_id))
    return candidates
