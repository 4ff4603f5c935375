"""Feasibility predictor and completeness verifier backends.

Three interchangeable backends implement each guard:

- oracle: exact ground truth read from the owning scenario
- llm: prompt-engineered chat model through `llm_client`
- adapter: an external domain-specific model answering in the structured
  output grammar

Local backends (`runs_locally = True`) receive the restored command; remote
backends receive the redacted command and masked screens.
"""

import logging
import re
from enum import Enum
from typing import Any, Callable, Dict, Optional, Protocol

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import output_codec
from .errors import (
    AmbiguousCaptionError,
    CodecError,
    GroundingError,
    GuardUnavailableError,
    ScenarioError,
    TransportError,
    UnparseableCommandError,
)
from .executor import CommandIntent, Verb, ground, parse_command
from .llm_client import LlmClient, build_completeness_prompt, build_feasibility_prompt
from .output_codec import ResultKind
from .screen_model import Screen, find_by_caption, normalize_caption, screen_to_json
from .sim_env import ActionKind, Scenario, page_captions

logger = logging.getLogger(__name__)

POSITIVE_SCORE = 0.98
NEGATIVE_SCORE = 0.02


class Label(int, Enum):
    NEGATIVE = 0
    POSITIVE = 1


class Backend(str, Enum):
    ORACLE = "oracle"
    LLM = "llm"
    ADAPTER = "adapter"


class GuardVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: Label
    score: float = Field(..., ge=0.0, le=1.0)
    backend: Backend
    rationale: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self) -> "GuardVerdict":
        if (self.score >= 0.5) != (self.label == Label.POSITIVE):
            raise ValueError(f"score {self.score} disagrees with label {self.label.name}")
        if self.backend == Backend.ORACLE and self.score not in (0.0, 1.0):
            raise ValueError("oracle scores are 0.0 or 1.0")
        return self

    @property
    def positive(self) -> bool:
        return self.label == Label.POSITIVE


def oracle_verdict(positive: bool, rationale: Optional[str] = None) -> GuardVerdict:
    return GuardVerdict(
        label=Label.POSITIVE if positive else Label.NEGATIVE,
        score=1.0 if positive else 0.0,
        backend=Backend.ORACLE,
        rationale=rationale,
    )


def hard_verdict(positive: bool, backend: Backend, rationale: Optional[str] = None) -> GuardVerdict:
    """Hard labels scored 0.98 / 0.02 so ranked metrics stay defined."""
    return GuardVerdict(
        label=Label.POSITIVE if positive else Label.NEGATIVE,
        score=POSITIVE_SCORE if positive else NEGATIVE_SCORE,
        backend=backend,
        rationale=rationale,
    )


class FeasibilityGuard(Protocol):
    backend: Backend
    runs_locally: bool

    def predict_feasibility(self, screen: Screen, command: str) -> GuardVerdict: ...


class CompletenessGuard(Protocol):
    backend: Backend
    runs_locally: bool

    def verify_completeness(self, before: Optional[Screen], command: str, after: Screen) -> GuardVerdict: ...


# --- oracle ------------------------------------------------------------------


def transition_realized(scenario: Scenario, before: Screen, intent: CommandIntent, after: Screen) -> bool:
    """Ground truth: did executing `intent` on `before` lead to `after`?"""
    if intent.verb == Verb.SCROLL_UNTIL:
        try:
            return after.screen_id == before.screen_id and find_by_caption(after, intent.caption) is not None
        except AmbiguousCaptionError:
            return False
    try:
        target = ground(intent, before)
    except (GroundingError, AmbiguousCaptionError):
        return False
    page = scenario.pages.get(before.screen_id)
    if page is None:
        return False
    if intent.verb == Verb.ENTER:
        destination = page.transitions.get((target.index, ActionKind.TYPE))
        if destination is not None:
            return after.screen_id == destination
        return after.screen_id == before.screen_id and after.typed_values.get(target.index) == intent.words
    destination = page.transitions.get((target.index, ActionKind.CLICK))
    return destination is not None and after.screen_id == destination


class OracleFeasibility:
    """Positive iff the command parses and grounds on the visible screen.

    `scroll until` only needs the caption somewhere on the page, hidden
    elements included, when the page is known to the scenario.
    """

    backend = Backend.ORACLE
    runs_locally = True

    def __init__(self, scenario: Optional[Scenario] = None):
        self.scenario = scenario

    def predict_feasibility(self, screen: Screen, command: str) -> GuardVerdict:
        try:
            intent = parse_command(command)
        except UnparseableCommandError as exc:
            return oracle_verdict(False, str(exc))
        if intent.verb == Verb.SCROLL_UNTIL:
            if self.scenario is not None and screen.screen_id in self.scenario.pages:
                captions = page_captions(self.scenario, screen.screen_id)
            else:
                captions = frozenset(normalize_caption(e.text) for e in screen.elements if e.text.strip())
            found = normalize_caption(intent.caption) in captions
            return oracle_verdict(found, None if found else f"{intent.caption!r} is not on this page")
        try:
            ground(intent, screen)
        except (GroundingError, AmbiguousCaptionError) as exc:
            return oracle_verdict(False, str(exc))
        return oracle_verdict(True)


class OracleCompleteness:
    backend = Backend.ORACLE
    runs_locally = True

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def verify_completeness(self, before: Optional[Screen], command: str, after: Screen) -> GuardVerdict:
        if before is None:
            raise GuardUnavailableError("the oracle verifier needs the before-screen")
        try:
            intent = parse_command(command)
        except UnparseableCommandError as exc:
            return oracle_verdict(False, str(exc))
        realized = transition_realized(self.scenario, before, intent, after)
        return oracle_verdict(realized, None if realized else "intent not realized")


# --- language model ----------------------------------------------------------

_KEYWORD = re.compile(r"(?<![A-Za-z0-9_])(infeasible|feasible|incomplete|complete|0|1)(?![A-Za-z0-9_])", re.I)
_POSITIVE_WORDS = {"feasible", "complete", "1"}


def verdict_from_reply(reply: str, kind: ResultKind, backend: Backend = Backend.LLM) -> GuardVerdict:
    """Structured tag first, then the first standalone keyword; otherwise a negative."""
    result = output_codec.extract_result(reply, kind)
    if result is not None:
        return hard_verdict(result.payload == 1, backend)
    match = _KEYWORD.search(reply or "")
    if match is not None:
        return hard_verdict(match.group(1).lower() in _POSITIVE_WORDS, backend, f"keyword {match.group(1)!r}")
    excerpt = " ".join((reply or "").split())[:80]
    logger.warning(f"⚠️ Unparseable {kind.value} reply: {excerpt!r}")
    return hard_verdict(False, backend, f"guard-parse: {excerpt!r}")


def _identity(text: str) -> str:
    return text


class LlmFeasibilityPredictor:
    backend = Backend.LLM
    runs_locally = False

    def __init__(self, client: LlmClient, mask: Callable[[str], str] = _identity):
        self.client = client
        self.mask = mask

    def predict_feasibility(self, screen: Screen, command: str) -> GuardVerdict:
        request = build_feasibility_prompt(screen, command, mask=self.mask)
        try:
            reply = self.client.complete(request)
        except TransportError as exc:
            raise GuardUnavailableError(f"feasibility model unavailable: {exc}") from exc
        return verdict_from_reply(reply, ResultKind.FEASIBILITY)


class LlmCompletenessVerifier:
    backend = Backend.LLM
    runs_locally = False

    def __init__(self, client: LlmClient, mask: Callable[[str], str] = _identity, after_only: bool = False):
        self.client = client
        self.mask = mask
        self.after_only = after_only

    def verify_completeness(self, before: Optional[Screen], command: str, after: Screen) -> GuardVerdict:
        request = build_completeness_prompt(None if self.after_only else before, command, after, mask=self.mask)
        try:
            reply = self.client.complete(request)
        except TransportError as exc:
            raise GuardUnavailableError(f"completeness model unavailable: {exc}") from exc
        return verdict_from_reply(reply, ResultKind.COMPLETENESS)


# --- external adapter --------------------------------------------------------


class AdapterGuard:
    """Forwards to an external endpoint and decodes its structured reply.

    Requests are JSON: `{"screen", "command"}` for feasibility and
    `{"before", "command", "after"}` for completeness, screens in canonical
    JSON. `poster` takes the payload and returns the reply body.
    """

    backend = Backend.ADAPTER
    runs_locally = False

    def __init__(
        self,
        poster: Callable[[Dict[str, Any]], str],
        mask: Callable[[str], str] = _identity,
        after_only: bool = False,
    ):
        self.poster = poster
        self.mask = mask
        self.after_only = after_only

    def _screen(self, screen: Screen) -> Dict[str, Any]:
        body = screen_to_json(screen)
        body["typed_values"] = {k: self.mask(v) for k, v in body["typed_values"].items()}
        return body

    def _ask(self, payload: Dict[str, Any], kind: ResultKind) -> GuardVerdict:
        try:
            reply = self.poster(payload)
        except TransportError as exc:
            raise GuardUnavailableError(f"adapter unavailable: {exc}") from exc
        try:
            result = output_codec.parse(reply)
        except CodecError as exc:
            return hard_verdict(False, Backend.ADAPTER, f"guard-parse: {exc}")
        if result.kind != kind:
            return hard_verdict(False, Backend.ADAPTER, f"guard-parse: expected {kind.value}, got {result.kind.value}")
        return hard_verdict(result.payload == 1, Backend.ADAPTER)

    def predict_feasibility(self, screen: Screen, command: str) -> GuardVerdict:
        payload = {"screen": self._screen(screen), "command": self.mask(command)}
        return self._ask(payload, ResultKind.FEASIBILITY)

    def verify_completeness(self, before: Optional[Screen], command: str, after: Screen) -> GuardVerdict:
        payload: Dict[str, Any] = {"command": self.mask(command), "after": self._screen(after)}
        if before is not None and not self.after_only:
            payload["before"] = self._screen(before)
        return self._ask(payload, ResultKind.COMPLETENESS)


GUARD_KINDS = ("oracle", "llm", "adapter", "off")


def build_guard(
    kind: str,
    role: str,
    scenario: Optional[Scenario] = None,
    client: Optional[LlmClient] = None,
    poster: Optional[Callable[[Dict[str, Any]], str]] = None,
    mask: Callable[[str], str] = _identity,
    after_only: bool = False,
):
    """Backend for `role` ("feasibility" or "completeness"); `off` returns None."""
    if role not in ("feasibility", "completeness"):
        raise ValueError(f"unknown guard role {role!r}")
    if kind == "off":
        return None
    if kind == "oracle":
        if role == "feasibility":
            return OracleFeasibility(scenario)
        if scenario is None:
            raise ScenarioError("the oracle completeness verifier needs a scenario")
        return OracleCompleteness(scenario)
    if kind == "llm":
        if client is None:
            raise ValueError("the llm backend needs an LlmClient")
        if role == "feasibility":
            return LlmFeasibilityPredictor(client, mask)
        return LlmCompletenessVerifier(client, mask, after_only)
    if kind == "adapter":
        if poster is None:
            raise ValueError("the adapter backend needs a poster")
        return AdapterGuard(poster, mask, after_only)
    raise ValueError(f"unknown guard backend {kind!r}; expected one of {', '.join(GUARD_KINDS)}")
