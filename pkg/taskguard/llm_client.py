"""Chat-completion client, transports and prompt assembly.

Every request passes the privacy `OutboundFilter` before any transport sees
it. Transports:

- `LiveTransport`: Gemini through google-genai (API key from GOOGLE_API_KEY).
- `FixtureTransport`: offline replay from `<sha256>.json` files, where the
  hash is taken over the canonical JSON of the request and each file holds
  `{"request": {...}, "response": "..."}`.
- `RecordingTransport`: wraps another transport and writes such fixtures.
"""

import hashlib
import json
import logging
import os
import threading
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Protocol, Sequence, Tuple

import requests
from google import genai
from google.genai import errors as genai_errors
from google.genai import types
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from . import config
from .errors import FixtureMissingError, TransientTransportError, TransportError
from .privacy import OutboundFilter
from .screen_model import Screen, serialize_screen
from .sub_agents.completeness_agent import COMPLETENESS_DEMONSTRATIONS, COMPLETENESS_PROMPT
from .sub_agents.feasibility_agent import FEASIBILITY_DEMONSTRATIONS, FEASIBILITY_PROMPT
from .sub_agents.planner_agent import PLANNER_DEMONSTRATIONS, PLANNER_PROMPT

logger = logging.getLogger(__name__)


class ChatTurn(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal["user", "assistant"]
    content: str


class ChatRequest(BaseModel):
    """One chat-completion request."""

    model_config = ConfigDict(frozen=True)

    system_prompt: str
    turns: Tuple[ChatTurn, ...]
    model_name: str = Field(default_factory=lambda: config.MODEL)
    max_tokens: int = Field(256, gt=0)
    temperature: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _alternating(self) -> "ChatRequest":
        if not self.turns:
            raise ValueError("a request needs at least one user turn")
        for position, turn in enumerate(self.turns):
            expected = "user" if position % 2 == 0 else "assistant"
            if turn.role != expected:
                raise ValueError(f"turn {position} must be {expected}, got {turn.role}")
        return self

    def texts(self) -> List[str]:
        return [self.system_prompt] + [turn.content for turn in self.turns]


def request_hash(request: ChatRequest) -> str:
    canonical = json.dumps(request.model_dump(mode="json"), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Transport(Protocol):
    throttled: bool

    def send(self, request: ChatRequest) -> str: ...


class LiveTransport:
    """Gemini chat completions through the google-genai client."""

    throttled = True

    def __init__(self, api_key: Optional[str] = None, base_url: Optional[str] = None):
        api_key = api_key or os.getenv(config.API_KEY_ENV)
        if not api_key:
            raise TransportError(f"{config.API_KEY_ENV} is not set")
        base_url = base_url or config.LLM_BASE_URL
        http_options = types.HttpOptions(base_url=base_url) if base_url else None
        self.client = genai.Client(api_key=api_key, http_options=http_options)

    def send(self, request: ChatRequest) -> str:
        contents = [
            types.Content(role="user" if t.role == "user" else "model", parts=[types.Part(text=t.content)])
            for t in request.turns
        ]
        try:
            response = self.client.models.generate_content(
                model=request.model_name,
                contents=contents,
                config=types.GenerateContentConfig(
                    system_instruction=request.system_prompt,
                    temperature=request.temperature,
                    max_output_tokens=request.max_tokens,
                ),
            )
        except genai_errors.ServerError as exc:
            raise TransientTransportError(f"server error {exc.code}: {exc.message}") from exc
        except genai_errors.ClientError as exc:
            if exc.code == 429:
                raise TransientTransportError("rate limited by the model endpoint") from exc
            raise TransportError(f"client error {exc.code}: {exc.message}") from exc
        except (ConnectionError, TimeoutError) as exc:
            raise TransientTransportError(str(exc)) from exc
        return response.text or ""


def _fixture_path(directory: Path, request: ChatRequest) -> Path:
    return Path(directory) / f"{request_hash(request)}.json"


def write_fixture(directory, request: ChatRequest, response: str) -> Path:
    path = _fixture_path(directory, request)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"request": request.model_dump(mode="json"), "response": response}
    path.write_text(json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


class FixtureTransport:
    """Replays recorded replies keyed by request hash."""

    throttled = False

    def __init__(self, directory):
        self.directory = Path(directory)

    def send(self, request: ChatRequest) -> str:
        path = _fixture_path(self.directory, request)
        if not path.exists():
            raise FixtureMissingError(f"no recorded reply {path.name} in {self.directory}")
        return json.loads(path.read_text(encoding="utf-8"))["response"]


class RecordingTransport:
    """Forwards to another transport and records each exchange as a fixture."""

    def __init__(self, inner: Transport, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.throttled = getattr(inner, "throttled", False)

    def send(self, request: ChatRequest) -> str:
        response = self.inner.send(request)
        write_fixture(self.directory, request, response)
        return response


def build_transport(spec: str) -> Transport:
    """`live` or `fixtures:DIR`."""
    if spec == "live":
        return LiveTransport()
    if spec.startswith("fixtures:") and len(spec) > len("fixtures:"):
        return FixtureTransport(spec[len("fixtures:") :])
    raise ValueError(f"unknown transport {spec!r}; expected live or fixtures:DIR")


class LlmClient:
    """Shareable client: outbound filter, in-flight cap, rate limit and retries."""

    def __init__(
        self,
        transport: Transport,
        outbound_filter: Optional[OutboundFilter] = None,
        max_in_flight: int = config.MAX_IN_FLIGHT,
        rate_limit_rps: float = config.RATE_LIMIT_RPS,
        retry_wait=None,
    ):
        self.transport = transport
        self.outbound_filter = outbound_filter or OutboundFilter(None)
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._min_interval = 1.0 / rate_limit_rps if rate_limit_rps > 0 else 0.0
        self._last_send = 0.0
        self._rate_lock = threading.Lock()
        self._retry_wait = retry_wait or wait_exponential(multiplier=1, min=1)

    def _throttle(self) -> None:
        if not getattr(self.transport, "throttled", False) or not self._min_interval:
            return
        with self._rate_lock:
            delay = self._last_send + self._min_interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self._last_send = time.monotonic()

    def complete(self, request: ChatRequest) -> str:
        self.outbound_filter.check(*request.texts())
        with self._slots:
            retrying = Retrying(
                stop=stop_after_attempt(3),
                wait=self._retry_wait,
                retry=retry_if_exception_type(TransientTransportError),
                reraise=True,
            )
            for attempt in retrying:
                with attempt:
                    self._throttle()
                    if attempt.retry_state.attempt_number > 1:
                        logger.warning(f"⚠️ Retrying model request (attempt {attempt.retry_state.attempt_number})")
                    return self.transport.send(request)
        raise TransportError("retry loop ended without a result")


def complete(request: ChatRequest, transport: Transport, outbound_filter: Optional[OutboundFilter] = None) -> str:
    return LlmClient(transport, outbound_filter).complete(request)


# --- prompt assembly ---------------------------------------------------------


def _with_demonstrations(demonstrations: Sequence[Tuple[str, str]], query: str) -> Tuple[ChatTurn, ...]:
    turns: List[ChatTurn] = []
    for user, assistant in demonstrations:
        turns.append(ChatTurn(role="user", content=user))
        turns.append(ChatTurn(role="assistant", content=assistant))
    turns.append(ChatTurn(role="user", content=query))
    return tuple(turns)


def _identity(text: str) -> str:
    return text


def build_feasibility_prompt(
    screen: Screen, command: str, mask: Callable[[str], str] = _identity, model_name: Optional[str] = None
) -> ChatRequest:
    query = f"Screen elements:\n{mask(serialize_screen(screen))}\nCommand: {command}"
    return ChatRequest(
        system_prompt=FEASIBILITY_PROMPT.strip(),
        turns=_with_demonstrations(FEASIBILITY_DEMONSTRATIONS, query),
        model_name=model_name or config.MODEL,
    )


def build_completeness_prompt(
    before: Optional[Screen],
    command: str,
    after: Screen,
    mask: Callable[[str], str] = _identity,
    model_name: Optional[str] = None,
) -> ChatRequest:
    """`before=None` selects the after-only form."""
    parts = []
    if before is not None:
        parts.append(f"Screen before execution:\n{mask(serialize_screen(before))}")
    parts.append(f"Executed command: {command}")
    parts.append(f"Screen after execution:\n{mask(serialize_screen(after))}")
    return ChatRequest(
        system_prompt=COMPLETENESS_PROMPT.strip(),
        turns=_with_demonstrations(COMPLETENESS_DEMONSTRATIONS, "\n".join(parts)),
        model_name=model_name or config.MODEL,
    )


class FeedbackKind(str, Enum):
    NONE = "none"
    INFEASIBLE = "infeasible"
    INCOMPLETE = "incomplete"


class Feedback(BaseModel):
    """What the coordinator is told about the last proposal."""

    model_config = ConfigDict(frozen=True)

    kind: FeedbackKind = FeedbackKind.NONE
    command: Optional[str] = None
    screen_text: Optional[str] = Field(None, description="Masked serialization of the current screen")

    @model_validator(mode="after")
    def _screen_iff_feedback(self) -> "Feedback":
        if (self.screen_text is not None) != (self.kind != FeedbackKind.NONE):
            raise ValueError("screen context is attached exactly when replanning")
        return self


NO_FEEDBACK = Feedback()


def build_planner_prompt(
    instruction: str, history: Sequence[str], feedback: Feedback = NO_FEEDBACK, model_name: Optional[str] = None
) -> ChatRequest:
    """Screen content goes out only when replanning."""
    lines = [f"Instruction: {instruction}"]
    if history:
        lines.append("Executed commands:")
        lines.extend(f"{position}. {command}" for position, command in enumerate(history, start=1))
    else:
        lines.append("Executed commands: none yet")
    if feedback.kind == FeedbackKind.NONE:
        lines.append("Feedback: none")
    else:
        lines.append(f'Feedback: the command "{feedback.command}" is {feedback.kind.value} on the current screen.')
        lines.append("Current screen:")
        lines.append(feedback.screen_text)
    lines.append("Next command:")
    return ChatRequest(
        system_prompt=PLANNER_PROMPT.strip(),
        turns=_with_demonstrations(PLANNER_DEMONSTRATIONS, "\n".join(lines)),
        model_name=model_name or config.MODEL,
    )


# --- external model endpoints ------------------------------------------------


def requests_poster(url: str, timeout: float = 30.0) -> Callable[[Dict[str, Any]], str]:
    """Default poster for adapter endpoints: JSON body in, response text out."""

    def post(payload: Dict[str, Any]) -> str:
        try:
            response = requests.post(url, json=payload, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientTransportError(f"{url}: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportError(f"{url} answered {response.status_code}")
        if response.status_code >= 400:
            raise TransportError(f"{url} answered {response.status_code}")
        return response.text

    return post


class AdapterEndpoint:
    """Filtered, retried access to an external model that speaks the structured output grammar."""

    def __init__(
        self,
        poster: Callable[[Dict[str, Any]], str],
        outbound_filter: Optional[OutboundFilter] = None,
        retry_wait=None,
    ):
        self.poster = poster
        self.outbound_filter = outbound_filter or OutboundFilter(None)
        self._retry_wait = retry_wait or wait_exponential(multiplier=1, min=1)

    def __call__(self, payload: Dict[str, Any]) -> str:
        self.outbound_filter.check(json.dumps(payload, ensure_ascii=False), *_strings(payload))
        retrying = Retrying(
            stop=stop_after_attempt(3),
            wait=self._retry_wait,
            retry=retry_if_exception_type(TransientTransportError),
            reraise=True,
        )
        for attempt in retrying:
            with attempt:
                return self.poster(payload)
        raise TransportError("retry loop ended without a result")


def _strings(value: Any) -> List[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, dict):
        return [s for item in value.values() for s in _strings(item)]
    if isinstance(value, (list, tuple)):
        return [s for item in value for s in _strings(item)]
    return []
