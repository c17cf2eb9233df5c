"""The cultural-reasoning program language: grammar, types, registry, and interpreter.

Programs are flat single-assignment pipelines, one statement per line:

    r = detect_objects()
    s = select_region(r, "largest")
    e = identify_food(s)
    t = explain_cultural_significance(e)
    a = compose_answer(t)

Arguments are variables or literals only; there is no nesting and no control flow,
so execution traces line up one-to-one with program steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

from . import templates
from .categories import IDENTIFY_FAMILIES
from .errors import DataFormatError
from .kb import DEFAULT_MATCH_THRESHOLD, KnowledgeBase, match_entity
from .perception import Detection

# Value types of the language. Integer exists only for literals and never typechecks
# against the registry, which has no integer parameter.
REGION_LIST = "RegionList"
REGION = "Region"
ENTITY = "Entity"
TEXT = "Text"
ANSWER = "Answer"
INTEGER = "Integer"

SELECTORS = ("largest", "most_confident", "leftmost", "rightmost")


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class StringLit:
    value: str


@dataclass(frozen=True)
class IntLit:
    value: int


Arg = Union[VarRef, StringLit, IntLit]


@dataclass(frozen=True)
class Step:
    var: str
    func: str
    args: tuple[Arg, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Program:
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class FunctionSignature:
    name: str
    param_types: tuple[str, ...]
    return_type: str
    variadic: bool = False  # variadic: one or more arguments of param_types[0]


_REGISTRY: tuple[FunctionSignature, ...] = (
    FunctionSignature("detect_objects", (), REGION_LIST),
    FunctionSignature("select_region", (REGION_LIST, TEXT), REGION),
    FunctionSignature("identify_food", (REGION,), ENTITY),
    FunctionSignature("identify_landmark", (REGION,), ENTITY),
    FunctionSignature("identify_clothing", (REGION,), ENTITY),
    FunctionSignature("identify_object", (REGION,), ENTITY),
    FunctionSignature("lookup_entity", (TEXT,), ENTITY),
    FunctionSignature("describe_architecture", (ENTITY,), TEXT),
    FunctionSignature("explain_cultural_significance", (ENTITY,), TEXT),
    FunctionSignature("compare_regional_variations", (ENTITY,), TEXT),
    FunctionSignature("describe_history", (ENTITY,), TEXT),
    FunctionSignature("compose_answer", (TEXT,), ANSWER, variadic=True),
)

_REGISTRY_BY_NAME = {sig.name: sig for sig in _REGISTRY}


def registry() -> tuple[FunctionSignature, ...]:
    """The closed function registry; fixed at build time."""
    return _REGISTRY


class ProgramSyntaxError(DataFormatError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _is_ident_start(ch: str) -> bool:
    return "a" <= ch <= "z"


def _is_ident_char(ch: str) -> bool:
    return "a" <= ch <= "z" or "0" <= ch <= "9" or ch == "_"


class _LineParser:
    """Hand-rolled scanner for one statement; keeps precise column info."""

    def __init__(self, text: str, line_no: int):
        self.text = text
        self.line_no = line_no
        self.pos = 0

    def error(self, message: str) -> ProgramSyntaxError:
        return ProgramSyntaxError(message, self.line_no, self.pos + 1)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            found = self.peek() or "end of line"
            raise self.error(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def identifier(self, what: str) -> str:
        start = self.pos
        if not _is_ident_start(self.peek()):
            raise self.error(f"expected {what}")
        self.pos += 1
        while _is_ident_char(self.peek()):
            self.pos += 1
        return self.text[start : self.pos]

    def string_literal(self) -> str:
        self.expect('"')
        chars: list[str] = []
        while True:
            if self.pos >= len(self.text):
                raise self.error("unterminated string literal")
            ch = self.text[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(chars)
            if ch == "\\":
                self.pos += 1
                if self.pos >= len(self.text):
                    raise self.error("dangling escape in string literal")
                esc = self.text[self.pos]
                mapped = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}.get(esc)
                if mapped is None:
                    raise self.error(f"unknown escape '\\{esc}'")
                chars.append(mapped)
            else:
                chars.append(ch)
            self.pos += 1

    def argument(self) -> Arg:
        ch = self.peek()
        if ch == '"':
            return StringLit(self.string_literal())
        if ch == "-" or ch.isdigit():
            start = self.pos
            if ch == "-":
                self.pos += 1
            if not self.peek().isdigit():
                raise self.error("expected digits after '-'")
            while self.peek().isdigit():
                self.pos += 1
            return IntLit(int(self.text[start : self.pos]))
        if _is_ident_start(ch):
            name = self.identifier("argument")
            self.skip_ws()
            if self.peek() == "(":
                raise self.error(
                    "nested calls are not allowed; arguments are variables or literals"
                )
            return VarRef(name)
        found = ch or "end of line"
        raise self.error(f"expected argument, found {found!r}")

    def statement(self) -> tuple[str, str, tuple[Arg, ...]]:
        self.skip_ws()
        var = self.identifier("variable name")
        self.skip_ws()
        self.expect("=")
        self.skip_ws()
        func = self.identifier("function name")
        self.skip_ws()
        self.expect("(")
        args: list[Arg] = []
        self.skip_ws()
        if self.peek() != ")":
            while True:
                args.append(self.argument())
                self.skip_ws()
                if self.peek() == ",":
                    self.pos += 1
                    self.skip_ws()
                    continue
                break
        self.expect(")")
        self.skip_ws()
        if self.pos < len(self.text):
            raise self.error(f"unexpected trailing text {self.text[self.pos:]!r}")
        return var, func, tuple(args)


def parse_program(source: str) -> Program:
    """Parse program text into an AST, preserving line numbers for diagnostics.

    Blank lines and '#' comments are ignored. Duplicate variables and references
    to unbound variables are reported as syntax errors.
    """
    steps: list[Step] = []
    bound: dict[str, int] = {}
    for line_no, raw in enumerate(source.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parser = _LineParser(raw.rstrip("\n"), line_no)
        var, func, args = parser.statement()
        if var in bound:
            raise ProgramSyntaxError(f"duplicate variable {var!r}", line_no, 1)
        for arg in args:
            if isinstance(arg, VarRef) and arg.name not in bound:
                raise ProgramSyntaxError(
                    f"reference to unbound variable {arg.name!r}", line_no, 1
                )
        bound[var] = line_no
        steps.append(Step(var=var, func=func, args=args, line=line_no))
    return Program(steps=tuple(steps))


def _escape(value: str) -> str:
    out = value.replace("\\", "\\\\").replace('"', '\\"')
    return out.replace("\n", "\\n").replace("\t", "\\t")


def _format_arg(arg: Arg) -> str:
    if isinstance(arg, VarRef):
        return arg.name
    if isinstance(arg, StringLit):
        return f'"{_escape(arg.value)}"'
    return str(arg.value)


def format_program(program: Program) -> str:
    """Canonical text; comments and blank lines are not preserved."""
    lines = [
        f"{step.var} = {step.func}({', '.join(_format_arg(a) for a in step.args)})"
        for step in program.steps
    ]
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _arg_type(arg: Arg, bindings: dict[str, str]) -> str:
    if isinstance(arg, VarRef):
        return bindings[arg.name]
    if isinstance(arg, StringLit):
        return TEXT
    return INTEGER


def typecheck_program(program: Program) -> list[Diagnostic]:
    """Check function existence, arity, argument types, and the Answer-valued ending.

    Diagnostics are the return value; an empty list means the program is well typed.
    """
    diagnostics: list[Diagnostic] = []
    bindings: dict[str, str] = {}
    for step in program.steps:
        sig = _REGISTRY_BY_NAME.get(step.func)
        if sig is None:
            diagnostics.append(Diagnostic(step.line, f"unknown function {step.func!r}"))
            bindings[step.var] = ANSWER  # assume something; later checks stay meaningful
            continue
        if sig.variadic:
            if len(step.args) < 1:
                diagnostics.append(
                    Diagnostic(step.line, f"{step.func} expects at least 1 argument")
                )
            expected_types = [sig.param_types[0]] * len(step.args)
        else:
            if len(step.args) != len(sig.param_types):
                diagnostics.append(
                    Diagnostic(
                        step.line,
                        f"{step.func} expects {len(sig.param_types)} argument(s), "
                        f"found {len(step.args)}",
                    )
                )
            expected_types = list(sig.param_types)
        for i, arg in enumerate(step.args):
            if i >= len(expected_types):
                break
            actual = _arg_type(arg, bindings)
            if actual != expected_types[i]:
                diagnostics.append(
                    Diagnostic(
                        step.line,
                        f"{step.func} argument {i + 1}: expected {expected_types[i]}, "
                        f"found {actual}",
                    )
                )
        bindings[step.var] = sig.return_type
    if not program.steps:
        diagnostics.append(Diagnostic(0, "program is empty"))
    elif bindings.get(program.steps[-1].var) != ANSWER:
        diagnostics.append(
            Diagnostic(program.steps[-1].line, "program must end in Answer")
        )
    return diagnostics


# --- execution -------------------------------------------------------------


@dataclass(frozen=True)
class Sentence:
    text: str
    entity_id: str | None = None
    field: str | None = None


@dataclass(frozen=True)
class RegionListValue:
    indices: tuple[int, ...]


@dataclass(frozen=True)
class RegionValue:
    index: int | None  # None means unresolved


@dataclass(frozen=True)
class EntityValue:
    entity_id: str | None
    region_index: int | None
    mention: str


@dataclass(frozen=True)
class TextValue:
    sentences: tuple[Sentence, ...]

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)


@dataclass(frozen=True)
class AnswerValue:
    text: str
    uncertain: bool


Value = Union[RegionListValue, RegionValue, EntityValue, TextValue, AnswerValue]


@dataclass(frozen=True)
class TraceRecord:
    index: int
    func: str
    inputs: tuple[str, ...]
    output: str
    entity_ids: tuple[str, ...]
    regions: tuple[int, ...]
    resolved: bool


@dataclass(frozen=True)
class ExecutionTrace:
    records: tuple[TraceRecord, ...]
    final_value: AnswerValue

    @property
    def uncertain(self) -> bool:
        return self.final_value.uncertain

    def touched_entities(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for record in self.records:
            for entity_id in record.entity_ids:
                seen.setdefault(entity_id)
        return tuple(seen)

    def entity_regions(self) -> dict[str, tuple[int, ...]]:
        """Entity id -> region indices it was resolved from, in trace order."""
        links: dict[str, list[int]] = {}
        for record in self.records:
            for entity_id in record.entity_ids:
                bucket = links.setdefault(entity_id, [])
                for region in record.regions:
                    if region not in bucket:
                        bucket.append(region)
        return {entity_id: tuple(regions) for entity_id, regions in links.items()}

    def invoked(self, func: str) -> bool:
        return any(record.func == func for record in self.records)


@dataclass(frozen=True)
class ExecutionContext:
    detections: tuple[Detection, ...]
    kb: KnowledgeBase
    question: str = ""
    threshold: float = DEFAULT_MATCH_THRESHOLD


def _render_value(value: Value) -> str:
    if isinstance(value, RegionListValue):
        return "regions[" + ",".join(str(i) for i in value.indices) + "]"
    if isinstance(value, RegionValue):
        return f"region[{value.index if value.index is not None else 'none'}]"
    if isinstance(value, EntityValue):
        return f"entity[{value.entity_id if value.entity_id else 'unresolved'}]"
    if isinstance(value, TextValue):
        return value.text
    return value.text


def _select_region(ctx: ExecutionContext, indices: tuple[int, ...], selector: str) -> int | None:
    if not indices:
        return None
    dets = [(i, ctx.detections[i]) for i in indices]
    if selector == "largest":
        return min(dets, key=lambda p: (-p[1].area, p[0]))[0]
    if selector == "most_confident":
        return min(dets, key=lambda p: (-p[1].confidence, p[0]))[0]
    if selector == "leftmost":
        return min(dets, key=lambda p: (p[1].box[0], p[0]))[0]
    if selector == "rightmost":
        return min(dets, key=lambda p: (-p[1].box[2], p[0]))[0]
    return None  # unknown selector degrades instead of aborting


def _identify(ctx: ExecutionContext, func: str, region: RegionValue) -> EntityValue:
    if region.index is None:
        return EntityValue(entity_id=None, region_index=None, mention="")
    label = ctx.detections[region.index].label
    candidates = match_entity(
        label, ctx.kb, threshold=ctx.threshold, categories=IDENTIFY_FAMILIES[func]
    )
    if not candidates:
        return EntityValue(entity_id=None, region_index=region.index, mention=label)
    return EntityValue(
        entity_id=candidates[0].entity_id, region_index=region.index, mention=label
    )


def _render_text(ctx: ExecutionContext, func: str, entity: EntityValue) -> TextValue:
    if entity.entity_id is None:
        return TextValue((Sentence(templates.render("unresolved")),))
    record = ctx.kb.get(entity.entity_id)
    sentences: list[Sentence] = []
    if func == "describe_architecture":
        sentences.append(
            Sentence(
                templates.render("architecture", description=record.description),
                record.id,
                "description",
            )
        )
    elif func == "explain_cultural_significance":
        sentences.append(
            Sentence(
                templates.render("context_description", description=record.description),
                record.id,
                "description",
            )
        )
        if record.ceremonial_function:
            sentences.append(
                Sentence(
                    templates.render(
                        "context_ceremonial",
                        ceremonial_function=record.ceremonial_function,
                    ),
                    record.id,
                    "ceremonial_function",
                )
            )
    elif func == "describe_history":
        if record.historical_context:
            sentences.append(
                Sentence(
                    templates.render(
                        "history", historical_context=record.historical_context
                    ),
                    record.id,
                    "historical_context",
                )
            )
        else:
            sentences.append(
                Sentence(
                    templates.render("no_history", canonical_name=record.canonical_name)
                )
            )
    elif func == "compare_regional_variations":
        for variant in record.regional_variants:
            sentences.append(
                Sentence(
                    templates.render(
                        "regional_variant", region=variant.region, note=variant.note
                    ),
                    record.id,
                    "regional_variants",
                )
            )
        if not record.regional_variants:
            sentences.append(
                Sentence(
                    templates.render("no_variants", canonical_name=record.canonical_name)
                )
            )
    return TextValue(tuple(sentences))


def execute_program(program: Program, ctx: ExecutionContext) -> ExecutionTrace:
    """Evaluate steps in order against the detections and knowledge base.

    Unresolved regions or entities degrade the final Answer to uncertain instead of
    aborting, so the explanation layer can report "not found" transparently.
    Typecheck must have passed; a residual type mismatch is an internal error.
    """
    env: dict[str, Value] = {}
    records: list[TraceRecord] = []
    uncertain = False
    final: Value | None = None
    for index, step in enumerate(program.steps):
        args: list[Value] = []
        for arg in step.args:
            if isinstance(arg, VarRef):
                args.append(env[arg.name])
            elif isinstance(arg, StringLit):
                args.append(TextValue((Sentence(arg.value),)))
            else:
                raise RuntimeError(
                    f"internal error: integer argument survived typecheck at step {index}"
                )
        entity_ids: tuple[str, ...] = ()
        regions: tuple[int, ...] = ()
        resolved = True

        if step.func == "detect_objects":
            # Enumerates all regions without singling one out; the trace links
            # individual regions only at select/identify steps.
            value: Value = RegionListValue(tuple(range(len(ctx.detections))))
        elif step.func == "select_region":
            region_list, selector = args
            _check_value(region_list, RegionListValue, step)
            chosen = _select_region(ctx, region_list.indices, selector.text)
            value = RegionValue(chosen)
            if chosen is None:
                resolved = False
                uncertain = True
            else:
                regions = (chosen,)
        elif step.func in IDENTIFY_FAMILIES:
            (region,) = args
            _check_value(region, RegionValue, step)
            value = _identify(ctx, step.func, region)
            if value.entity_id is None:
                resolved = False
                uncertain = True
            else:
                entity_ids = (value.entity_id,)
            if value.region_index is not None:
                regions = (value.region_index,)
        elif step.func == "lookup_entity":
            (mention,) = args
            _check_value(mention, TextValue, step)
            candidates = match_entity(mention.text, ctx.kb, threshold=ctx.threshold)
            if candidates:
                value = EntityValue(candidates[0].entity_id, None, mention.text)
                entity_ids = (value.entity_id,)
            else:
                value = EntityValue(None, None, mention.text)
                resolved = False
                uncertain = True
        elif step.func in (
            "describe_architecture",
            "explain_cultural_significance",
            "compare_regional_variations",
            "describe_history",
        ):
            (entity,) = args
            _check_value(entity, EntityValue, step)
            value = _render_text(ctx, step.func, entity)
            if entity.entity_id is None:
                resolved = False
            else:
                entity_ids = (entity.entity_id,)
        elif step.func == "compose_answer":
            texts = []
            for text_value in args:
                _check_value(text_value, TextValue, step)
                texts.append(text_value.text)
            value = AnswerValue(text=" ".join(t for t in texts if t), uncertain=uncertain)
        else:
            raise RuntimeError(f"internal error: unknown function {step.func!r}")

        env[step.var] = value
        final = value
        records.append(
            TraceRecord(
                index=index,
                func=step.func,
                inputs=tuple(_render_value(a) for a in args),
                output=_render_value(value),
                entity_ids=entity_ids,
                regions=regions,
                resolved=resolved,
            )
        )
    if not isinstance(final, AnswerValue):
        raise RuntimeError("internal error: program did not produce an Answer")
    return ExecutionTrace(records=tuple(records), final_value=final)


def _check_value(value: Value, expected: type, step: Step) -> None:
    if not isinstance(value, expected):
        raise RuntimeError(
            f"internal error: {step.func} at line {step.line} received "
            f"{type(value).__name__}, expected {expected.__name__}"
        )


def trace_to_dict(trace: ExecutionTrace) -> dict:
    """Serializable view with stable key order (golden-file testable)."""
    return {
        "records": [
            {
                "index": r.index,
                "func": r.func,
                "inputs": list(r.inputs),
                "output": r.output,
                "entity_ids": list(r.entity_ids),
                "regions": list(r.regions),
                "resolved": r.resolved,
            }
            for r in trace.records
        ],
        "final": {
            "text": trace.final_value.text,
            "uncertain": trace.final_value.uncertain,
        },
    }


def trace_to_json(trace: ExecutionTrace) -> str:
    return json.dumps(trace_to_dict(trace), ensure_ascii=False)
