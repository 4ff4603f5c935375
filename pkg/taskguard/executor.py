"""Low-level command parsing, grounding and execution against the simulator."""

import logging
import re
from enum import Enum
from typing import Callable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from . import config, output_codec
from .errors import (
    AmbiguousCaptionError,
    CaptionNotFoundError,
    CodecError,
    GroundingError,
    NothingToTheRightError,
    TargetTypeError,
    TransportError,
    UnparseableCommandError,
)
from .screen_model import BBox, ElementType, Screen, UiElement, find_by_caption, iou, serialize_screen
from .sim_env import Action, EnvState, Scenario, apply, current_screen

logger = logging.getLogger(__name__)


class Verb(str, Enum):
    SELECT = "select"
    CLICK_RIGHT_OF = "click_right_of"
    ENTER = "enter"
    SCROLL_UNTIL = "scroll_until"


class CommandIntent(BaseModel):
    model_config = ConfigDict(frozen=True)

    verb: Verb
    caption: str
    words: Optional[str] = None

    @model_validator(mode="after")
    def _words_iff_enter(self) -> "CommandIntent":
        if (self.words is not None) != (self.verb == Verb.ENTER):
            raise ValueError("words must be given exactly when verb is enter")
        if not self.caption.strip():
            raise ValueError("caption must not be empty")
        return self


class ExecutionOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    executed: bool
    grounded_element: Optional[int] = None
    predicted_bbox: Optional[BBox] = None
    resulting_state: EnvState
    blind: bool = False
    scrolls: int = 0

    @model_validator(mode="after")
    def _grounded_iff_executed(self) -> "ExecutionOutcome":
        if (self.grounded_element is not None) != self.executed:
            raise ValueError("grounded_element must be set exactly when executed")
        return self


# Order matters: the right-of template must win over the generic click alias.
_TEMPLATES: List[Tuple[Verb, re.Pattern]] = [
    (Verb.CLICK_RIGHT_OF, re.compile(r"click the item to the right of (?P<caption>.+)", re.I)),
    (Verb.SELECT, re.compile(r"select the (?P<caption>.+) item", re.I)),
    (Verb.SELECT, re.compile(r"click (?:on )?the (?P<caption>.+?) (?:button|item|link|icon|tab)", re.I)),
    (Verb.ENTER, re.compile(r"enter (?P<words>.+?) into (?P<caption>.+)", re.I)),
    (Verb.SCROLL_UNTIL, re.compile(r"scroll until (?P<caption>.+)", re.I)),
]
_QUOTES = {'"': '"', "'": "'", "“": "”", "‘": "’"}


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and _QUOTES.get(text[0]) == text[-1]:
        return text[1:-1].strip()
    return text


def parse_command(text: str) -> CommandIntent:
    """Match a command against the templates; captures are kept verbatim."""
    normalized = " ".join((text or "").split()).rstrip(".")
    for verb, pattern in _TEMPLATES:
        match = pattern.fullmatch(normalized)
        if match is None:
            continue
        caption = _unquote(match.group("caption"))
        words = _unquote(match.group("words")) if verb == Verb.ENTER else None
        if caption:
            return CommandIntent(verb=verb, caption=caption, words=words)
    raise UnparseableCommandError(f"no command template matches {text!r}")


def render_command(intent: CommandIntent) -> str:
    if intent.verb == Verb.SELECT:
        return f"select the {intent.caption} item"
    if intent.verb == Verb.CLICK_RIGHT_OF:
        return f"click the item to the right of {intent.caption}"
    if intent.verb == Verb.ENTER:
        return f"enter {intent.words} into {intent.caption}"
    return f"scroll until {intent.caption}"


def _require(screen: Screen, caption: str) -> UiElement:
    element = find_by_caption(screen, caption)
    if element is None:
        raise CaptionNotFoundError(f"no element captioned {caption!r} on {screen.screen_id}")
    return element


def _vertical_overlap(a: UiElement, b: UiElement) -> int:
    return min(a.bbox[3], b.bbox[3]) - max(a.bbox[1], b.bbox[1])


def ground(intent: CommandIntent, screen: Screen) -> UiElement:
    """Resolve a command to one visible element."""
    anchor = _require(screen, intent.caption)
    if intent.verb == Verb.ENTER and anchor.etype != ElementType.INPUT:
        raise TargetTypeError(f"{intent.caption!r} is a {anchor.etype.value}, not an input")
    if intent.verb != Verb.CLICK_RIGHT_OF:
        return anchor
    anchor_x = anchor.center[0]
    candidates = []
    for element in screen.elements:
        offset = element.center[0] - anchor_x
        if element.index != anchor.index and offset > 0 and _vertical_overlap(anchor, element) >= 1:
            candidates.append((offset, element.index, element))
    if not candidates:
        raise NothingToTheRightError(f"nothing to the right of {intent.caption!r} on {screen.screen_id}")
    return min(candidates, key=lambda c: (c[0], c[1]))[2]


Grounder = Callable[[CommandIntent, Screen], UiElement]


def blind_click(state: EnvState, scenario: Scenario) -> ExecutionOutcome:
    """Click the lowest-index visible element, as an unguarded executor does on a miss."""
    screen = current_screen(state, scenario)
    target = min(screen.elements, key=lambda e: e.index, default=None)
    if target is None:
        return ExecutionOutcome(executed=False, resulting_state=state)
    logger.info(f"🙈 Blind click on {screen.screen_id}:{target.index} ({target.text!r})")
    new_state = apply(state, Action.click(target.index), scenario)
    return ExecutionOutcome(
        executed=True,
        grounded_element=target.index,
        predicted_bbox=target.bbox,
        resulting_state=new_state,
        blind=True,
    )


def _scroll_until(intent: CommandIntent, state: EnvState, scenario: Scenario) -> ExecutionOutcome:
    current = state
    for scrolls in range(config.SCROLL_CAP + 1):
        element = find_by_caption(current_screen(current, scenario), intent.caption)
        if element is not None:
            return ExecutionOutcome(
                executed=True,
                grounded_element=element.index,
                predicted_bbox=element.bbox,
                resulting_state=current,
                scrolls=scrolls,
            )
        if scrolls == config.SCROLL_CAP:
            break
        scrolled = apply(current, Action.scroll("down"), scenario)
        if scrolled == current:
            break
        current = scrolled
    raise CaptionNotFoundError(f"{intent.caption!r} not reached within {config.SCROLL_CAP} scrolls")


def execute(
    intent: CommandIntent,
    state: EnvState,
    scenario: Scenario,
    blind_mode: bool = False,
    grounder: Optional[Grounder] = None,
) -> ExecutionOutcome:
    """Ground the intent on the current screen and apply the matching action."""
    grounder = grounder or ground
    try:
        if intent.verb == Verb.SCROLL_UNTIL:
            return _scroll_until(intent, state, scenario)
        target = grounder(intent, current_screen(state, scenario))
    except (GroundingError, AmbiguousCaptionError) as exc:
        logger.info(f"⚠️ Grounding failed: {exc}")
        if blind_mode:
            return blind_click(state, scenario)
        return ExecutionOutcome(executed=False, resulting_state=state)

    if intent.verb == Verb.ENTER:
        action = Action.type_text(target.index, intent.words)
    else:
        action = Action.click(target.index)
    new_state = apply(state, action, scenario)
    return ExecutionOutcome(
        executed=True,
        grounded_element=target.index,
        predicted_bbox=target.bbox,
        resulting_state=new_state,
    )


class ExternalExecutorGrounder:
    """Grounds commands through an external locate model.

    The endpoint receives the serialized screen and the command and answers in
    the `<locate_element>` grammar; the returned box is mapped to the visible
    element with the largest IoU. Secrets are masked out of both fields.
    """

    def __init__(self, post: Callable[[dict], str], mask: Optional[Callable[[str], str]] = None):
        self.post = post
        self.mask = mask or (lambda text: text)

    def __call__(self, intent: CommandIntent, screen: Screen) -> UiElement:
        payload = {"screen": self.mask(serialize_screen(screen)), "command": self.mask(render_command(intent))}
        try:
            result = output_codec.parse(self.post(payload))
        except (CodecError, TransportError) as exc:
            raise GroundingError(f"external executor failed: {exc}") from exc
        if result.kind != output_codec.ResultKind.LOCATE:
            raise GroundingError(f"executor replied with {result.kind.value}, expected locate")
        best = max(screen.elements, key=lambda e: (iou(e.bbox, result.payload), -e.index), default=None)
        if best is None or iou(best.bbox, result.payload) == 0.0:
            raise CaptionNotFoundError(f"predicted box {list(result.payload)} overlaps no element")
        if intent.verb == Verb.ENTER and best.etype != ElementType.INPUT:
            raise TargetTypeError(f"predicted element {best.index} is not an input")
        return best
