"""Security protector: sensitive-span detection, placeholder redaction and restoration.

Secrets found in a user instruction are swapped for `{name}` placeholders
before anything reaches the coordinator. The real values stay in a
`PlaceholderMemory` on the local device and are substituted back only into
the command handed to the local executor.
"""

import json
import logging
import os
import re
import tempfile
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import MemoryFileError, PlaceholderCollisionError, PrivacyViolationError

logger = logging.getLogger(__name__)

# Secrets shorter than this are exempt from masking and the outbound filter.
MIN_FILTERED_LENGTH = 4

PLACEHOLDER = re.compile(r"\{([a-z0-9_]+)\}")
_NAME = re.compile(r"[a-z0-9_]+\Z")


class SpanCategory(str, Enum):
    USERNAME = "username"
    PASSWORD = "password"
    CARD_NUMBER = "card_number"
    ADDRESS = "address"
    URL_CREDENTIAL = "url_credential"
    CUSTOM = "custom"


class SensitiveSpan(BaseModel):
    """A detected secret. Offsets are character offsets into the instruction."""

    model_config = ConfigDict(frozen=True)

    start: int = Field(..., ge=0)
    end: int
    category: SpanCategory
    suggested_name: str
    value: str
    markup: bool = Field(False, description="Span covers a `{{name:value}}` marker")

    @model_validator(mode="after")
    def _ordered(self) -> "SensitiveSpan":
        if self.end <= self.start:
            raise ValueError("span end must exceed start")
        if not _NAME.match(self.suggested_name):
            raise ValueError(f"invalid placeholder name {self.suggested_name!r}")
        return self


class Detector(Protocol):
    def detect(self, instruction: str) -> List[SensitiveSpan]: ...


def luhn_valid(digits: str) -> bool:
    if not digits.isdigit():
        return False
    total = 0
    for position, char in enumerate(reversed(digits)):
        value = int(char)
        if position % 2 == 1:
            value *= 2
            if value > 9:
                value -= 9
        total += value
    return total % 10 == 0


def infer_category(name: str, value: str = "") -> SpanCategory:
    """Category from a placeholder name, falling back to the shape of the value."""
    if name == "username" or name.startswith("username_"):
        return SpanCategory.USERNAME
    if name == "password" or name.startswith("password_"):
        return SpanCategory.PASSWORD
    if name.startswith("card"):
        return SpanCategory.CARD_NUMBER
    if "address" in name:
        return SpanCategory.ADDRESS
    if "url" in name:
        return SpanCategory.URL_CREDENTIAL
    digits = re.sub(r"[ -]", "", value)
    if 13 <= len(digits) <= 19 and luhn_valid(digits):
        return SpanCategory.CARD_NUMBER
    if _URL_CREDENTIAL.fullmatch(value):
        return SpanCategory.URL_CREDENTIAL
    return SpanCategory.CUSTOM


_MARKUP = re.compile(r"\{\{([a-z0-9_]+):([^{}]+?)\}\}")
_COLLOCATION = re.compile(r"\b(username|password)\s+(?:is\s+)?(\S+)", re.IGNORECASE)
_CARD = re.compile(r"(?<![\d-])\d(?:[ -]?\d){12,18}(?![\d])")
_URL_CREDENTIAL = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*://[^\s:/@]+:[^\s/@]+@[^\s/]+[^\s]*")
_TRAILING_PUNCTUATION = ".,;:!?)]}\"'"
_STOPWORDS = frozenset(
    {"a", "an", "and", "as", "at", "box", "field", "for", "from", "in", "into", "is", "of", "on", "or", "the", "to", "with"}
)
_SUGGESTED_NAMES = {
    SpanCategory.USERNAME: "username",
    SpanCategory.PASSWORD: "password",
    SpanCategory.CARD_NUMBER: "card_num",
    SpanCategory.URL_CREDENTIAL: "url_credential",
}


class RuleBasedDetector:
    """Markup plus pattern rules: collocations, Luhn-checked cards and credential URLs."""

    def detect(self, instruction: str) -> List[SensitiveSpan]:
        markup = list(self._markup_spans(instruction))
        candidates = (
            list(self._collocation_spans(instruction))
            + list(self._card_spans(instruction))
            + list(self._url_spans(instruction))
        )
        # Markup always wins; pattern spans touching a marker are dropped.
        candidates = [c for c in candidates if not any(_overlaps(c, m) for m in markup)]
        return sorted(markup + resolve_overlaps(candidates), key=lambda s: s.start)

    def _markup_spans(self, text: str) -> Iterable[SensitiveSpan]:
        for match in _MARKUP.finditer(text):
            name, value = match.group(1), match.group(2)
            yield SensitiveSpan(
                start=match.start(),
                end=match.end(),
                category=infer_category(name, value),
                suggested_name=name,
                value=value,
                markup=True,
            )

    def _collocation_spans(self, text: str) -> Iterable[SensitiveSpan]:
        for match in _COLLOCATION.finditer(text):
            raw = match.group(2)
            value = raw.rstrip(_TRAILING_PUNCTUATION)
            if not value or value.lower() in _STOPWORDS or PLACEHOLDER.fullmatch(value) or "{" in value:
                continue
            category = SpanCategory(match.group(1).lower())
            start = match.start(2)
            yield SensitiveSpan(
                start=start,
                end=start + len(value),
                category=category,
                suggested_name=_SUGGESTED_NAMES[category],
                value=value,
            )

    def _card_spans(self, text: str) -> Iterable[SensitiveSpan]:
        for match in _CARD.finditer(text):
            digits = re.sub(r"[ -]", "", match.group(0))
            if 13 <= len(digits) <= 19 and luhn_valid(digits):
                yield SensitiveSpan(
                    start=match.start(),
                    end=match.end(),
                    category=SpanCategory.CARD_NUMBER,
                    suggested_name=_SUGGESTED_NAMES[SpanCategory.CARD_NUMBER],
                    value=match.group(0),
                )

    def _url_spans(self, text: str) -> Iterable[SensitiveSpan]:
        for match in _URL_CREDENTIAL.finditer(text):
            value = match.group(0).rstrip(_TRAILING_PUNCTUATION)
            yield SensitiveSpan(
                start=match.start(),
                end=match.start() + len(value),
                category=SpanCategory.URL_CREDENTIAL,
                suggested_name=_SUGGESTED_NAMES[SpanCategory.URL_CREDENTIAL],
                value=value,
            )


def _overlaps(a: SensitiveSpan, b: SensitiveSpan) -> bool:
    return a.start < b.end and b.start < a.end


def resolve_overlaps(spans: List[SensitiveSpan]) -> List[SensitiveSpan]:
    """Keep non-overlapping spans, preferring longer then leftmost."""
    kept: List[SensitiveSpan] = []
    for span in sorted(spans, key=lambda s: (-(s.end - s.start), s.start)):
        if not any(_overlaps(span, other) for other in kept):
            kept.append(span)
    return sorted(kept, key=lambda s: s.start)


DEFAULT_DETECTOR = RuleBasedDetector()


def detect(instruction: str, detector: Optional[Detector] = None) -> List[SensitiveSpan]:
    return (detector or DEFAULT_DETECTOR).detect(instruction)


class CollisionPolicy(str, Enum):
    ERROR = "error"
    SUFFIX = "suffix"


def _escaped(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)[1:-1]


class PlaceholderMemory:
    """Edge-local dictionary of placeholder name to secret value.

    When `storage_path` is set every change is persisted atomically (temp file
    plus rename) with owner-only permissions. `encrypt_hook` / `decrypt_hook`
    transform the file bytes; both default to identity (plaintext at rest).
    """

    def __init__(
        self,
        entries: Optional[Dict[str, str]] = None,
        storage_path: Optional[Path] = None,
        encrypt_hook: Optional[Callable[[bytes], bytes]] = None,
        decrypt_hook: Optional[Callable[[bytes], bytes]] = None,
    ):
        self.entries: Dict[str, str] = {}
        self.storage_path = Path(storage_path) if storage_path else None
        self.encrypt_hook = encrypt_hook
        self.decrypt_hook = decrypt_hook
        for name, value in (entries or {}).items():
            self._check_entry(name, value)
            self.entries[name] = value

    @staticmethod
    def _check_entry(name: str, value: str) -> None:
        if not _NAME.match(name):
            raise ValueError(f"invalid placeholder name {name!r}")
        if not value:
            raise ValueError(f"placeholder {{{name}}} has an empty value")

    @classmethod
    def load(
        cls,
        path,
        encrypt_hook: Optional[Callable[[bytes], bytes]] = None,
        decrypt_hook: Optional[Callable[[bytes], bytes]] = None,
    ) -> "PlaceholderMemory":
        """Open a memory file; a missing file yields an empty memory bound to that path."""
        path = Path(path).expanduser()
        entries: Dict[str, str] = {}
        if path.exists():
            raw = path.read_bytes()
            if decrypt_hook:
                raw = decrypt_hook(raw)
            try:
                entries = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise MemoryFileError(f"cannot read memory file {path}: {exc}") from exc
            if not isinstance(entries, dict) or not all(
                isinstance(name, str) and isinstance(value, str) for name, value in entries.items()
            ):
                raise MemoryFileError(f"memory file {path} must hold an object of placeholder names to strings")
            logger.debug(f"Loaded {len(entries)} placeholders from {path}")
        try:
            return cls(entries, storage_path=path, encrypt_hook=encrypt_hook, decrypt_hook=decrypt_hook)
        except ValueError as exc:
            raise MemoryFileError(f"memory file {path}: {exc}") from exc

    def to_bytes(self) -> bytes:
        text = json.dumps(self.entries, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        data = text.encode("utf-8")
        return self.encrypt_hook(data) if self.encrypt_hook else data

    def save(self) -> None:
        if self.storage_path is None:
            return
        self.storage_path.parent.mkdir(parents=True, exist_ok=True)
        handle = tempfile.NamedTemporaryFile(
            dir=self.storage_path.parent, prefix=".memory-", suffix=".tmp", delete=False
        )
        try:
            with handle:
                handle.write(self.to_bytes())
                handle.flush()
                os.fsync(handle.fileno())
            try:
                os.chmod(handle.name, 0o600)
            except OSError:
                pass
            os.replace(handle.name, self.storage_path)
        except BaseException:
            Path(handle.name).unlink(missing_ok=True)
            raise

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, name: str) -> Optional[str]:
        return self.entries.get(name)

    def name_for_value(self, value: str) -> Optional[str]:
        for name, stored in sorted(self.entries.items()):
            if stored == value:
                return name
        return None

    def secrets(self) -> List[Tuple[str, str]]:
        """(name, value) pairs subject to masking, longest value first."""
        pairs = [(n, v) for n, v in self.entries.items() if len(v) >= MIN_FILTERED_LENGTH]
        return sorted(pairs, key=lambda p: (-len(p[1]), p[0]))

    def mask(self, text: str) -> str:
        """Replace every stored value (raw or JSON-escaped) with its placeholder."""
        forms = [(form, name) for name, value in self.secrets() for form in (value, _escaped(value))]
        return _substitute(text, forms)


def _substitute(text: str, forms: List[Tuple[str, str]]) -> str:
    """Single left-to-right pass replacing each form with `{name}`; longer forms win."""
    names: Dict[str, str] = {}
    for form, name in forms:
        names.setdefault(form, name)
    if not names:
        return text
    pattern = re.compile("|".join(re.escape(form) for form in sorted(names, key=len, reverse=True)))
    return pattern.sub(lambda m: f"{{{names[m.group(0)]}}}", text)


def _free_name(base: str, taken: Dict[str, str]) -> str:
    counter = 2
    while f"{base}_{counter}" in taken:
        counter += 1
    return f"{base}_{counter}"


def redact(
    instruction: str,
    memory: PlaceholderMemory,
    detector: Optional[Detector] = None,
    policy: CollisionPolicy = CollisionPolicy.ERROR,
) -> Tuple[str, PlaceholderMemory]:
    """Replace detected secrets with `{name}` and store them in memory.

    Assignments are staged first so a collision leaves the memory untouched.
    Further occurrences of a detected value elsewhere in the instruction are
    replaced too.
    """
    spans = detect(instruction, detector)
    if not spans:
        return instruction, memory

    staged = dict(memory.entries)
    pieces: List[str] = []
    used: Dict[str, str] = {}
    cursor = 0
    for span in spans:
        name = next((n for n, v in sorted(staged.items()) if v == span.value), None)
        if name is None:
            name = span.suggested_name
            if name in staged:
                if policy == CollisionPolicy.ERROR:
                    raise PlaceholderCollisionError(name)
                name = _free_name(name, staged)
            staged[name] = span.value
        used[name] = span.value
        pieces.append(instruction[cursor : span.start])
        pieces.append(f"{{{name}}}")
        cursor = span.end
    pieces.append(instruction[cursor:])

    repeats = [(value, name) for name, value in sorted(used.items()) if len(value) >= MIN_FILTERED_LENGTH]
    for i in range(0, len(pieces), 2):
        pieces[i] = _substitute(pieces[i], repeats)

    added = sorted(set(staged) - set(memory.entries))
    memory.entries = staged
    if added:
        memory.save()
        logger.info(f"🔒 Stored {len(added)} new placeholder(s): {', '.join(added)}")
    return "".join(pieces), memory


def restore(command: str, memory: PlaceholderMemory) -> str:
    """Substitute known placeholders in one pass; unknown ones stay as written."""
    return PLACEHOLDER.sub(lambda m: memory.entries.get(m.group(1), m.group(0)), command)


def unknown_placeholders(command: str, memory: PlaceholderMemory) -> List[str]:
    return [m.group(1) for m in PLACEHOLDER.finditer(command) if m.group(1) not in memory]


class OutboundFilter:
    """Hard stop for any payload that still carries a stored secret."""

    def __init__(self, memory: Optional[PlaceholderMemory]):
        self.memory = memory

    def check(self, *payloads: str) -> None:
        if self.memory is None:
            return
        for name, value in self.memory.secrets():
            forms = {value, _escaped(value)}
            for payload in payloads:
                if any(form in payload for form in forms):
                    logger.error(f"❌ Outbound payload blocked: contains {{{name}}}")
                    raise PrivacyViolationError(name)
