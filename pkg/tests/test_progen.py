from __future__ import annotations

import random
import string

import pytest

from vietvqa.dsl import format_program, parse_program, registry, typecheck_program
from vietvqa.errors import GeneratorError, GeneratorTransportError
from vietvqa.progen import (
    build_prompt,
    classify_question,
    fallback_generate,
    generate_program,
    load_exemplars,
    _PROMPT_DIVIDER,
)


class ScriptedBackend:
    """Returns canned texts in order; repeats the last one when exhausted."""

    def __init__(self, *texts: str):
        self.texts = list(texts)
        self.calls = 0
        self.prompts: list[str] = []

    def generate(self, prompt: str) -> str:
        self.prompts.append(prompt)
        index = min(self.calls, len(self.texts) - 1)
        self.calls += 1
        return self.texts[index]


class FailingBackend:
    def generate(self, prompt: str) -> str:
        raise GeneratorTransportError("generator unreachable")


class EchoExemplarBackend:
    """Mock contract: echoes the exemplar program for a known question."""

    def __init__(self, exemplars):
        self.by_question = {e.question: e.program for e in exemplars}
        self.question = ""

    def generate(self, prompt: str) -> str:
        return self.by_question.get(self.question, "?? not a program ??")


VALID = (
    "r = detect_objects()\n"
    's = select_region(r, "largest")\n'
    "e = identify_food(s)\n"
    "t = explain_cultural_significance(e)\n"
    "a = compose_answer(t)\n"
)


# --- exemplar bundle ------------------------------------------------------------


def test_bundle_has_sixteen_exemplars_three_plus_per_qtype():
    exemplars = load_exemplars()
    assert len(exemplars) == 16
    by_qtype: dict[str, int] = {}
    for e in exemplars:
        by_qtype[e.qtype] = by_qtype.get(e.qtype, 0) + 1
    assert set(by_qtype) == {"identification", "comparison", "description", "explanation"}
    assert all(count >= 3 for count in by_qtype.values())


def test_all_bundled_exemplars_parse_and_typecheck():
    for exemplar in load_exemplars():
        program = parse_program(exemplar.program)
        assert typecheck_program(program) == []


def test_bundle_covers_every_registry_function():
    used = set()
    for exemplar in load_exemplars():
        for step in parse_program(exemplar.program).steps:
            used.add(step.func)
    assert used == {sig.name for sig in registry()}


# --- build_prompt ----------------------------------------------------------------


def test_prompt_is_byte_deterministic():
    exemplars = load_exemplars()
    first = build_prompt("Đây là món gì?", exemplars, ["bánh xèo"])
    second = build_prompt("Đây là món gì?", exemplars, ["bánh xèo"])
    assert first.encode("utf-8") == second.encode("utf-8")


def test_prompt_header_lists_each_function_exactly_once():
    prompt = build_prompt("q", load_exemplars(), [])
    header = prompt.split(_PROMPT_DIVIDER)[0]
    for sig in registry():
        assert header.count(sig.name) == 1, sig.name


def test_prompt_context_section_lists_labels():
    prompt = build_prompt("q", load_exemplars(), ["bánh xèo"])
    assert "Nhãn vùng ảnh đã phát hiện: bánh xèo" in prompt


def test_prompt_contains_all_exemplars_in_order():
    exemplars = load_exemplars()
    prompt = build_prompt("q", exemplars, [])
    positions = [prompt.index(e.question) for e in exemplars]
    assert positions == sorted(positions)


# --- fallback_generate -------------------------------------------------------------


def test_fallback_identification_for_food_question():
    # oracle: the bundled keyword table routes "món gì" -> identification, "món" -> food
    program = fallback_generate("Đây là món gì?", ["bánh xèo"])
    funcs = [step.func for step in program.steps]
    assert funcs == [
        "detect_objects",
        "select_region",
        "identify_food",
        "explain_cultural_significance",
        "compose_answer",
    ]
    assert typecheck_program(program) == []


def test_fallback_explanation_ends_in_explain_cultural_significance():
    program = fallback_generate("Ý nghĩa văn hóa của áo dài là gì?", [])
    assert program.steps[-2].func == "explain_cultural_significance"
    assert program.steps[2].func == "identify_clothing"


def test_fallback_empty_question_defaults_to_identification():
    program = fallback_generate("", [])
    assert program.steps[-2].func == "explain_cultural_significance"
    assert program.steps[2].func == "identify_object"


def test_fallback_comparison_and_description_templates():
    comparison = fallback_generate("So sánh món này giữa các vùng.", [])
    assert any(s.func == "compare_regional_variations" for s in comparison.steps)
    description = fallback_generate("Mô tả công trình này.", [])
    assert any(s.func == "describe_architecture" for s in description.steps)
    history = fallback_generate("Phương tiện này có lịch sử như thế nào?", [])
    assert any(s.func == "describe_history" for s in history.steps)


def test_fallback_uses_labels_for_identify_choice():
    program = fallback_generate("Đây là gì vậy?", ["áo bà ba"])
    assert program.steps[2].func == "identify_clothing"


def test_classify_question_is_diacritic_robust():
    assert classify_question("y nghia van hoa cua ao dai la gi?") == "explanation"
    assert classify_question("so sanh hai mon nay") == "comparison"


def test_fallback_is_deterministic():
    a = fallback_generate("Đây là món gì?", ["bánh xèo"])
    b = fallback_generate("Đây là món gì?", ["bánh xèo"])
    assert a == b


# --- generate_program -----------------------------------------------------------


def test_backend_valid_first_try():
    backend = ScriptedBackend(VALID)
    outcome = generate_program("q", [], backend, max_repairs=2)
    assert outcome.source == "backend"
    assert outcome.attempts == 1
    assert format_program(outcome.program) == VALID


def test_backend_repaired_after_one_garbage_reply():
    backend = ScriptedBackend("this is not a program", VALID)
    outcome = generate_program("q", [], backend, max_repairs=2)
    assert outcome.source == "backend_repaired"
    assert outcome.attempts == 2
    # the retry prompt carries the diagnostics verbatim
    assert "không hợp lệ" in backend.prompts[1]


def test_backend_garbage_exhausts_into_fallback():
    backend = ScriptedBackend("garbage")
    outcome = generate_program("Đây là món gì?", [], backend, max_repairs=1)
    assert outcome.source == "fallback"
    assert outcome.attempts == 2
    assert typecheck_program(outcome.program) == []


def test_backend_none_uses_fallback():
    outcome = generate_program("Đây là món gì?", [], None)
    assert outcome.source == "fallback"
    assert outcome.attempts == 0


def test_transport_error_falls_back_when_allowed():
    outcome = generate_program("q", [], FailingBackend())
    assert outcome.source == "fallback"


def test_transport_error_propagates_when_fallback_disabled():
    with pytest.raises(GeneratorTransportError):
        generate_program("q", [], FailingBackend(), allow_fallback=False)


def test_repair_exhaustion_raises_when_fallback_disabled():
    backend = ScriptedBackend("junk")
    with pytest.raises(GeneratorError):
        generate_program("q", [], backend, max_repairs=1, allow_fallback=False)


def test_echo_backend_returns_exemplar_program():
    exemplars = load_exemplars()
    backend = EchoExemplarBackend(exemplars)
    backend.question = exemplars[0].question
    outcome = generate_program(exemplars[0].question, [], backend)
    assert outcome.source == "backend"
    assert format_program(outcome.program) == format_program(parse_program(exemplars[0].program))


def test_adversarial_random_backend_always_yields_typechecked_program():
    rng = random.Random(99)
    alphabet = string.ascii_letters + string.digits + " ()=\",\n#_"
    for _ in range(40):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 120)))
        backend = ScriptedBackend(text)
        outcome = generate_program("Đây là món gì?", [], backend, max_repairs=1)
        assert typecheck_program(outcome.program) == []
        assert outcome.attempts <= 2
