from __future__ import annotations

import io
import json
import unicodedata

import pytest
from hypothesis import given, strategies as st

from vietvqa.errors import DataFormatError
from vietvqa.kb import (
    KnowledgeBase,
    fuzzy_score,
    get_entity,
    load_bundled_kb,
    load_kb,
    match_entity,
    normalize_text,
)

# --- independent diacritic-fold oracle (built before the implementation) ----
# Decompose via NFD and drop combining marks; the stroked d does not decompose
# and is mapped explicitly.


def oracle_fold(text: str) -> str:
    out = []
    for ch in unicodedata.normalize("NFD", text):
        if unicodedata.combining(ch):
            continue
        out.append({"đ": "d", "Đ": "D"}.get(ch, ch))
    return unicodedata.normalize("NFC", "".join(out))


VIETNAMESE_SAMPLES = [
    "Phở",
    "đàn bầu",
    "bánh xèo",
    "Nguyễn Văn Hưởng",
    "Tết Nguyên Đán",
    "ruộng bậc thang Mù Cang Chải",
    "ễ ỷ ự ợ ặ ẫ póp",
]


def record(**overrides) -> str:
    base = {
        "id": "banh_xeo",
        "canonical_name": "bánh xèo",
        "aliases": ["banh xeo"],
        "category": "Cuisine",
        "description": "Bánh mặn chiên giòn.",
        "historical_context": "",
        "ceremonial_function": "",
        "regional_variants": [],
        "source": "test",
    }
    base.update(overrides)
    return json.dumps(base, ensure_ascii=False)


def make_kb(*lines: str) -> KnowledgeBase:
    return load_kb(io.StringIO("\n".join(lines) + "\n"))


# --- normalize_text ----------------------------------------------------------


def test_normalize_case_and_whitespace():
    assert normalize_text("  Bánh   Xèo ") == "bánh xèo"


def test_normalize_fold_pho():
    # expected value computed with the decomposition oracle
    assert oracle_fold("Phở").lower() == "pho"
    assert normalize_text("Phở", fold_diacritics=True) == "pho"


def test_normalize_fold_dan_bau():
    assert oracle_fold("đàn bầu") == "dan bau"
    assert normalize_text("đàn bầu", fold_diacritics=True) == "dan bau"


@pytest.mark.parametrize("sample", VIETNAMESE_SAMPLES)
def test_fold_table_matches_decomposition_oracle(sample):
    expected = oracle_fold(unicodedata.normalize("NFC", sample).lower())
    expected = " ".join(expected.split())
    assert normalize_text(sample, fold_diacritics=True) == expected


def test_fold_handles_decomposed_input():
    decomposed = unicodedata.normalize("NFD", "Phở")
    assert normalize_text(decomposed, fold_diacritics=True) == "pho"


@given(st.text(max_size=40))
def test_normalize_is_idempotent_and_total(text):
    once = normalize_text(text)
    assert normalize_text(once) == once
    folded = normalize_text(text, fold_diacritics=True)
    assert normalize_text(folded, fold_diacritics=True) == folded


# --- load_kb -----------------------------------------------------------------


def test_load_three_records_indexes_by_id():
    kb = make_kb(
        record(),
        record(id="pho_bo", canonical_name="phở bò"),
        record(id="ao_dai", canonical_name="áo dài", category="Traditional Clothing"),
    )
    assert len(kb) == 3
    for entity_id in ("banh_xeo", "pho_bo", "ao_dai"):
        assert get_entity(entity_id, kb).id == entity_id


def test_load_unknown_category_is_fatal_and_names_id():
    with pytest.raises(DataFormatError, match="unknown category.*banh_xeo"):
        make_kb(record(category="Spacecraft"))


def test_load_duplicate_id_is_fatal():
    with pytest.raises(DataFormatError, match="duplicate"):
        make_kb(record(), record(canonical_name="khác"))


def test_load_malformed_record_reports_line_number():
    with pytest.raises(DataFormatError, match="line 2"):
        load_kb(io.StringIO(record() + "\n{not json}\n"))


def test_load_round_trips_every_field():
    kb = make_kb(
        record(
            historical_context="có từ lâu đời",
            ceremonial_function="dâng cúng",
            regional_variants=[{"region": "Huế", "note": "nhỏ hơn"}],
            source="điền dã",
        )
    )
    entity = get_entity("banh_xeo", kb)
    assert entity.canonical_name == "bánh xèo"
    assert entity.aliases == ("banh xeo",)
    assert entity.category == "Cuisine"
    assert entity.description == "Bánh mặn chiên giòn."
    assert entity.historical_context == "có từ lâu đời"
    assert entity.ceremonial_function == "dâng cúng"
    assert entity.regional_variants[0].region == "Huế"
    assert entity.regional_variants[0].note == "nhỏ hơn"
    assert entity.source == "điền dã"


def test_bundled_kb_covers_all_categories_with_30_plus_entities():
    kb = load_bundled_kb()
    assert len(kb) >= 30
    assert len({e.category for e in kb.entities()}) == 12


# --- get_entity --------------------------------------------------------------


def test_get_entity_unknown_id_names_it():
    kb = make_kb(record())
    with pytest.raises(KeyError, match="'x'"):
        get_entity("x", kb)


def test_get_entity_ids_are_case_sensitive():
    kb = make_kb(record())
    with pytest.raises(KeyError):
        get_entity("BANH_XEO", kb)


# --- match_entity ------------------------------------------------------------


def test_exact_canonical_match_scores_one():
    kb = make_kb(record())
    candidates = match_entity("bánh xèo", kb)
    assert candidates[0].entity_id == "banh_xeo"
    assert candidates[0].score == 1.0
    assert candidates[0].method == "exact"


def test_diacritic_free_mention_scores_one_via_folded_index():
    kb = make_kb(record(aliases=[]))
    candidates = match_entity("banh xeo", kb)
    assert candidates and candidates[0].score == 1.0
    assert candidates[0].method == "exact"


def test_no_overlap_mention_returns_empty():
    assert match_entity("zzzz", make_kb(record())) == []


def test_single_character_typo_in_three_word_name_passes_default_threshold():
    kb = make_kb(
        record(id="tet", canonical_name="Tết Nguyên Đán", category="Cultural Festivals")
    )
    candidates = match_entity("tet nguyen dann", kb)
    assert candidates and candidates[0].entity_id == "tet"
    assert candidates[0].method == "fuzzy"
    assert candidates[0].score >= 0.75


def test_typo_in_short_name_found_at_lower_threshold():
    kb = make_kb(record(aliases=[]))
    assert match_entity("banh xeoo", kb) == []  # 0.6*(8/9)+0.4*(1/3) < 0.75
    candidates = match_entity("banh xeoo", kb, threshold=0.6)
    assert candidates and candidates[0].entity_id == "banh_xeo"
    assert candidates[0].method == "fuzzy"


def test_score_one_only_for_exact_method():
    kb = make_kb(record(), record(id="pho_bo", canonical_name="phở bò"))
    for mention in ("bánh xèo", "banh xeo", "banh xeoo", "pho bo"):
        for candidate in match_entity(mention, kb, threshold=0.1):
            assert (candidate.score == 1.0) == (candidate.method == "exact")


def test_candidates_sorted_by_score_then_id():
    kb = make_kb(
        record(id="b_entity", canonical_name="cầu tre"),
        record(id="a_entity", canonical_name="cầu tre"),
    )
    candidates = match_entity("cầu tre", kb)
    assert [c.entity_id for c in candidates] == ["a_entity", "b_entity"]
    assert all(c.score == 1.0 for c in candidates)


def test_category_restriction_filters_out_other_categories():
    kb = make_kb(record())
    assert match_entity("bánh xèo", kb, categories=frozenset({"Architecture"})) == []


def test_match_invariant_under_whitespace_and_case():
    kb = load_bundled_kb()
    baseline = match_entity("bánh xèo", kb)
    for mention in ("  BÁNH XÈO ", "Bánh   Xèo"):
        assert match_entity(mention, kb) == baseline


def test_alias_of_every_bundled_entity_matches_itself_first():
    kb = load_bundled_kb()
    for entity in kb.entities():
        for alias in entity.all_aliases():
            candidates = match_entity(alias, kb)
            assert candidates, (entity.id, alias)
            top_score = candidates[0].score
            assert top_score == 1.0
            exact_ids = {c.entity_id for c in candidates if c.score == 1.0}
            assert entity.id in exact_ids


@given(st.text(max_size=20), st.text(max_size=20))
def test_fuzzy_score_symmetric_and_bounded(a, b):
    score = fuzzy_score(a, b)
    assert 0.0 <= score <= 1.0
    assert score == fuzzy_score(b, a)


@given(st.text(max_size=20))
def test_fuzzy_score_self_is_one(a):
    assert fuzzy_score(a, a) == 1.0
