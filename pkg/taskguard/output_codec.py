"""Structured linguistic outputs: `<task_prompt> {results} </task_prompt>`.

Canonical emission separates every token by one space:

    <s_feasibility> 1 </s_feasibility>
    <s_completeness> 0 </s_completeness>
    <locate_element> <x_min> 10 </x_min> <y_min> 20 </y_min> <x_max> 110 </x_max> <y_max> 50 </y_max> </locate_element>

Parsing accepts any whitespace (including none) between tokens and nothing
else. Unknown task tags fail loudly; a new task prompt must be added to
TASK_TAGS before models may emit it.
"""

import re
from enum import Enum
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, model_validator

from .errors import (
    CodecError,
    DegenerateBBoxError,
    DuplicateSubtagError,
    MalformedSequenceError,
    MismatchedTagError,
    MissingSubtagError,
    PayloadDomainError,
    SubtagOrderError,
    UnknownTagError,
)

BBox = Tuple[int, int, int, int]


class ResultKind(str, Enum):
    FEASIBILITY = "feasibility"
    COMPLETENESS = "completeness"
    LOCATE = "locate"


TASK_TAGS = {
    ResultKind.FEASIBILITY: "s_feasibility",
    ResultKind.COMPLETENESS: "s_completeness",
    ResultKind.LOCATE: "locate_element",
}
_KIND_BY_TAG = {tag: kind for kind, tag in TASK_TAGS.items()}
BBOX_SUBTAGS = ("x_min", "y_min", "x_max", "y_max")


class StructuredResult(BaseModel):
    """Typed decoding of one structured output sequence."""

    model_config = ConfigDict(frozen=True)

    kind: ResultKind
    payload: Union[int, BBox]

    @model_validator(mode="after")
    def _check_payload(self) -> "StructuredResult":
        if self.kind == ResultKind.LOCATE:
            if not isinstance(self.payload, tuple):
                raise ValueError("locate payload must be a bbox")
            x_min, y_min, x_max, y_max = self.payload
            if x_min >= x_max or y_min >= y_max:
                raise ValueError(f"degenerate bbox {list(self.payload)}")
        elif isinstance(self.payload, tuple) or self.payload not in (0, 1):
            raise ValueError(f"{self.kind.value} payload must be 0 or 1")
        return self


def feasibility(bit: int) -> StructuredResult:
    return StructuredResult(kind=ResultKind.FEASIBILITY, payload=bit)


def completeness(bit: int) -> StructuredResult:
    return StructuredResult(kind=ResultKind.COMPLETENESS, payload=bit)


def locate(bbox: BBox) -> StructuredResult:
    return StructuredResult(kind=ResultKind.LOCATE, payload=tuple(bbox))


def emit(result: StructuredResult) -> str:
    tag = TASK_TAGS[result.kind]
    if result.kind == ResultKind.LOCATE:
        inner = " ".join(f"<{name}> {value} </{name}>" for name, value in zip(BBOX_SUBTAGS, result.payload))
    else:
        inner = str(result.payload)
    return f"<{tag}> {inner} </{tag}>"


_TOKEN = re.compile(r"</?[A-Za-z_][A-Za-z0-9_]*>|[^\s<]+|<")
_OPEN = re.compile(r"<([A-Za-z_][A-Za-z0-9_]*)>\Z")
_CLOSE = re.compile(r"</([A-Za-z_][A-Za-z0-9_]*)>\Z")
_NUMBER = re.compile(r"[0-9]{1,9}\Z")


def _tokenize(text: Union[str, bytes]) -> List[str]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedSequenceError(f"input is not UTF-8: {exc.reason}") from exc
    if not isinstance(text, str):
        raise MalformedSequenceError(f"expected text, got {type(text).__name__}")
    return _TOKEN.findall(text)


def _open_name(token: str) -> Optional[str]:
    match = _OPEN.match(token)
    return match.group(1) if match else None


def _close_name(token: str) -> Optional[str]:
    match = _CLOSE.match(token)
    return match.group(1) if match else None


def _parse_bit(tokens: List[str], tag: str) -> int:
    if len(tokens) != 1:
        raise MalformedSequenceError(f"<{tag}> expects exactly one payload token, got {len(tokens)}")
    token = tokens[0]
    if not _NUMBER.match(token) or int(token) not in (0, 1):
        raise PayloadDomainError(f"<{tag}> payload {token!r} is not 0 or 1")
    return int(token)


def _parse_bbox(tokens: List[str]) -> BBox:
    if len(tokens) % 3 != 0:
        raise MalformedSequenceError("bbox sub-tags must each wrap exactly one number")
    names: List[str] = []
    values = {}
    for start in range(0, len(tokens), 3):
        opening, value, closing = tokens[start : start + 3]
        name = _open_name(opening)
        if name is None:
            raise MalformedSequenceError(f"expected a bbox sub-tag, got {opening!r}")
        if name not in BBOX_SUBTAGS:
            raise UnknownTagError(f"unknown bbox sub-tag <{name}>")
        closed = _close_name(closing)
        if closed is None:
            raise MalformedSequenceError(f"<{name}> is not closed")
        if closed != name:
            raise MismatchedTagError(f"<{name}> closed by </{closed}>")
        if not _NUMBER.match(value):
            raise MalformedSequenceError(f"<{name}> value {value!r} is not a non-negative integer")
        if name in values:
            raise DuplicateSubtagError(f"<{name}> appears more than once")
        names.append(name)
        values[name] = int(value)
    missing = [name for name in BBOX_SUBTAGS if name not in values]
    if missing:
        raise MissingSubtagError(f"missing bbox sub-tags: {', '.join(missing)}")
    if tuple(names) != BBOX_SUBTAGS:
        raise SubtagOrderError(f"bbox sub-tags out of order: {', '.join(names)}")
    bbox = tuple(values[name] for name in BBOX_SUBTAGS)
    if bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
        raise DegenerateBBoxError(f"degenerate bbox {list(bbox)}")
    return bbox


def parse(text: Union[str, bytes]) -> StructuredResult:
    """Decode one structured sequence; every failure is a CodecError subclass."""
    tokens = _tokenize(text)
    if len(tokens) < 2:
        raise MalformedSequenceError("structured output needs an opening and a closing tag")
    tag = _open_name(tokens[0])
    if tag is None:
        raise MalformedSequenceError(f"sequence must start with an opening tag, got {tokens[0][:32]!r}")
    if tag not in _KIND_BY_TAG:
        raise UnknownTagError(f"unknown task tag <{tag}>")
    closed = _close_name(tokens[-1])
    if closed is None:
        raise MalformedSequenceError(f"<{tag}> is never closed")
    if closed != tag:
        raise MismatchedTagError(f"<{tag}> closed by </{closed}>")
    kind = _KIND_BY_TAG[tag]
    inner = tokens[1:-1]
    if kind == ResultKind.LOCATE:
        return StructuredResult(kind=kind, payload=_parse_bbox(inner))
    return StructuredResult(kind=kind, payload=_parse_bit(inner, tag))


_EMBEDDED = re.compile(r"<(s_[a-z_]+|locate_element)>.*?</\1>", re.DOTALL)


def extract_result(text: str, kind: Optional[ResultKind] = None) -> Optional[StructuredResult]:
    """First well-formed structured sequence inside a longer reply, optionally of one kind."""
    for match in _EMBEDDED.finditer(text or ""):
        try:
            result = parse(match.group(0))
        except CodecError:
            continue
        if kind is None or result.kind == kind:
            return result
    return None
