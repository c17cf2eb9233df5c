"""Program generation: few-shot prompting with parse-repair retries and a rule-based fallback.

The remote generator is an opaque text-completion service; its output is parsed and
typechecked, retried with appended diagnostics on failure, and replaced by the
deterministic keyword fallback when retries are exhausted. Every outcome typechecks.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from typing import Protocol

from .dsl import (
    Program,
    parse_program,
    registry,
    typecheck_program,
)
from .errors import DataFormatError, GeneratorError, GeneratorTransportError
from .kb import fold_text

QTYPES = ("identification", "comparison", "description", "explanation")
DEFAULT_MAX_REPAIRS = 2
API_KEY_ENV = "VIETVQA_GENERATOR_API_KEY"

_PROMPT_DIVIDER = "=== VÍ DỤ ==="


@dataclass(frozen=True)
class Exemplar:
    question: str
    qtype: str
    program: str


@dataclass(frozen=True)
class GenerationOutcome:
    program: Program
    source: str  # "backend" | "backend_repaired" | "fallback"
    attempts: int


class GeneratorBackend(Protocol):
    def generate(self, prompt: str) -> str: ...


class RemoteGenerator:
    """HTTP client for a text-generation service: request {prompt}, response {text}.

    Credentials come from the environment only; when VIETVQA_GENERATOR_API_KEY is
    set it is sent as a bearer token.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, prompt: str) -> str:
        payload = json.dumps({"prompt": prompt}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        request = urllib.request.Request(self.endpoint, data=payload, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                body = response.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raise GeneratorTransportError(
                f"generator at {self.endpoint} returned status {exc.code}"
            ) from exc
        except (urllib.error.URLError, OSError) as exc:
            raise GeneratorTransportError(
                f"generator at {self.endpoint} unreachable: {exc}"
            ) from exc
        try:
            obj = json.loads(body)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"malformed generator response: {exc}") from exc
        if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
            raise DataFormatError("generator response must be an object with text 'text'")
        return obj["text"]


def load_exemplars(path=None) -> tuple[Exemplar, ...]:
    """Load an exemplar bundle; every program must parse and typecheck."""
    if path is None:
        f = resources.files("vietvqa.data").joinpath("exemplars.jsonl").open(
            "r", encoding="utf-8"
        )
    else:
        f = open(path, "r", encoding="utf-8")
    exemplars: list[Exemplar] = []
    with f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: malformed exemplar: {exc}") from exc
            question, qtype, program = (
                obj.get("question"),
                obj.get("qtype"),
                obj.get("program"),
            )
            if not all(isinstance(v, str) and v for v in (question, qtype, program)):
                raise DataFormatError(f"line {line_no}: exemplar needs question/qtype/program")
            if qtype not in QTYPES:
                raise DataFormatError(f"line {line_no}: unknown qtype {qtype!r}")
            diagnostics = typecheck_program(parse_program(program))
            if diagnostics:
                raise DataFormatError(
                    f"line {line_no}: exemplar program does not typecheck: {diagnostics[0]}"
                )
            exemplars.append(Exemplar(question=question, qtype=qtype, program=program))
    return tuple(exemplars)


def _load_keyword_table() -> dict:
    with resources.files("vietvqa.data").joinpath("keyword_qtypes.json").open(
        "r", encoding="utf-8"
    ) as f:
        return json.load(f)


_KEYWORDS = _load_keyword_table()


def build_prompt(question: str, exemplars: tuple[Exemplar, ...], labels: list[str]) -> str:
    """Byte-deterministic prompt: instruction header, exemplars in order, labels, question.

    The header lists each registry function signature exactly once.
    """
    lines = [
        "Bạn là bộ sinh chương trình suy luận văn hóa. Hãy chuyển câu hỏi tiếng Việt",
        "thành một chương trình, tuân thủ đúng cú pháp và các hàm cho phép dưới đây.",
        "",
        "Các hàm cho phép:",
    ]
    for sig in registry():
        params = ", ".join(sig.param_types) + ("..." if sig.variadic else "")
        lines.append(f"  {sig.name}({params}) -> {sig.return_type}")
    lines.extend(
        [
            "",
            "Quy tắc cú pháp: mỗi dòng một lệnh dạng `bien = ham(doi_so, ...)`;",
            "đối số là biến hoặc chuỗi trong ngoặc kép; không lồng lời gọi hàm;",
            "bước cuối cùng phải trả về giá trị loại Answer.",
            "Nếu câu hỏi có nhiều cách hiểu, hãy chọn cách hiểu sát nghĩa đen nhất",
            "và chỉ sinh đúng một chương trình.",
            "",
            _PROMPT_DIVIDER,
        ]
    )
    for exemplar in exemplars:
        lines.append(f"Câu hỏi: {exemplar.question}")
        lines.append("Chương trình:")
        lines.append(exemplar.program.rstrip("\n"))
        lines.append("---")
    lines.append("Nhãn vùng ảnh đã phát hiện: " + (", ".join(labels) if labels else "(không có)"))
    lines.append(f"Câu hỏi: {question}")
    lines.append("Chương trình:")
    return "\n".join(lines) + "\n"


def _match_pattern(question_tokens: tuple[str, ...], pattern: str) -> bool:
    """Contiguous token-subsequence match over diacritic-folded tokens."""
    pattern_tokens = tuple(fold_text(pattern).split())
    if not pattern_tokens:
        return False
    n = len(pattern_tokens)
    for start in range(len(question_tokens) - n + 1):
        if question_tokens[start : start + n] == pattern_tokens:
            return True
    return False


def _tokenize_for_matching(text: str) -> tuple[str, ...]:
    tokens = []
    for token in fold_text(text).split():
        cleaned = "".join(ch for ch in token if ch.isalnum())
        if cleaned:
            tokens.append(cleaned)
    return tuple(tokens)


def classify_question(question: str) -> str:
    """Map a question to a qtype via the bundled keyword table; defaults to identification."""
    tokens = _tokenize_for_matching(question)
    for entry in _KEYWORDS["qtype_patterns"]:
        if _match_pattern(tokens, entry["pattern"]):
            return entry["qtype"]
    return "identification"


def _pick_identify_function(question: str, labels: list[str]) -> str:
    tokens = _tokenize_for_matching(question)
    for entry in _KEYWORDS["identify_patterns"]:
        if _match_pattern(tokens, entry["pattern"]):
            return entry["function"]
    for label in labels:
        label_tokens = _tokenize_for_matching(label)
        for entry in _KEYWORDS["identify_patterns"]:
            if _match_pattern(label_tokens, entry["pattern"]):
                return entry["function"]
    return "identify_object"


def fallback_generate(question: str, labels: list[str]) -> Program:
    """Deterministic template program chosen by Vietnamese keyword patterns."""
    qtype = classify_question(question)
    identify = _pick_identify_function(question, labels)
    header = [
        "r = detect_objects()",
        's = select_region(r, "largest")',
        f"e = {identify}(s)",
    ]
    if qtype == "comparison":
        body = header + [
            "t = compare_regional_variations(e)",
            "a = compose_answer(t)",
        ]
    elif qtype == "description":
        describe = "describe_architecture" if identify == "identify_landmark" else "describe_history"
        body = header + [
            f"t = {describe}(e)",
            "a = compose_answer(t)",
        ]
    else:
        # identification and explanation both end in explain_cultural_significance
        body = header + [
            "t = explain_cultural_significance(e)",
            "a = compose_answer(t)",
        ]
    return parse_program("\n".join(body) + "\n")


def generate_program(
    question: str,
    labels: list[str],
    backend: GeneratorBackend | None,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
    exemplars: tuple[Exemplar, ...] | None = None,
    allow_fallback: bool = True,
) -> GenerationOutcome:
    """Obtain a well-typed program for a question.

    The backend gets 1 + max_repairs tries; failed tries append the parse or type
    diagnostics verbatim to the retry prompt. When tries are exhausted (or the
    backend is None, or transport fails with the fallback enabled) the keyword
    fallback supplies the program. The result always typechecks.
    """
    if backend is None:
        return GenerationOutcome(
            program=fallback_generate(question, labels), source="fallback", attempts=0
        )
    if exemplars is None:
        exemplars = load_exemplars()
    prompt = build_prompt(question, exemplars, labels)
    attempts = 0
    last_failure = "no attempts made"
    while attempts < 1 + max_repairs:
        attempts += 1
        try:
            text = backend.generate(prompt)
        except GeneratorTransportError:
            if allow_fallback:
                return GenerationOutcome(
                    program=fallback_generate(question, labels),
                    source="fallback",
                    attempts=attempts,
                )
            raise
        try:
            program = parse_program(text)
        except DataFormatError as exc:
            last_failure = str(exc)
            prompt = f"{prompt}\n# Chương trình trước không hợp lệ: {exc}\nChương trình:\n"
            continue
        diagnostics = typecheck_program(program)
        if diagnostics:
            last_failure = "; ".join(str(d) for d in diagnostics)
            prompt = f"{prompt}\n# Lỗi kiểu: {last_failure}\nChương trình:\n"
            continue
        return GenerationOutcome(
            program=program,
            source="backend" if attempts == 1 else "backend_repaired",
            attempts=attempts,
        )
    if allow_fallback:
        return GenerationOutcome(
            program=fallback_generate(question, labels), source="fallback", attempts=attempts
        )
    raise GeneratorError(f"backend produced no valid program: {last_failure}")
