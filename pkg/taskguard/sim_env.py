"""Deterministic simulated UI environment.

A scenario is a small graph of pages. Each page has the elements visible on
arrival, a list of elements revealed one per downward scroll, and a transition
table keyed by (element index, action kind). Clicking an element without a
transition is a dead click: the state is unchanged and the step is recorded as
executed but ineffective.
"""

import json
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import config
from .errors import ExecutionError, ScenarioError, ScreenValidationError
from .screen_model import ElementType, Screen, UiElement, element_from_json, normalize_caption, screen_to_json

logger = logging.getLogger(__name__)


class ActionKind(str, Enum):
    CLICK = "click"
    TYPE = "type"
    SCROLL = "scroll"


class ScrollDirection(str, Enum):
    UP = "up"
    DOWN = "down"


class Action(BaseModel):
    """click(target_index), type(target_index, text) or scroll(direction)."""

    model_config = ConfigDict(frozen=True)

    kind: ActionKind
    target_index: Optional[int] = None
    text: Optional[str] = None
    direction: Optional[ScrollDirection] = None

    @model_validator(mode="after")
    def _shape(self) -> "Action":
        if self.kind == ActionKind.SCROLL:
            if self.direction is None:
                raise ValueError("scroll needs a direction")
        else:
            if self.target_index is None:
                raise ValueError(f"{self.kind.value} needs a target index")
            if self.kind == ActionKind.TYPE and self.text is None:
                raise ValueError("type needs text")
        return self

    @classmethod
    def click(cls, index: int) -> "Action":
        return cls(kind=ActionKind.CLICK, target_index=index)

    @classmethod
    def type_text(cls, index: int, text: str) -> "Action":
        return cls(kind=ActionKind.TYPE, target_index=index, text=text)

    @classmethod
    def scroll(cls, direction: str = "down") -> "Action":
        return cls(kind=ActionKind.SCROLL, direction=ScrollDirection(direction))


class Transition(BaseModel):
    model_config = ConfigDict(frozen=True)

    element: int
    action: ActionKind = ActionKind.CLICK
    target: str


class SimPage(BaseModel):
    """A page definition: the arrival screen, scroll-revealed elements and transitions."""

    model_config = ConfigDict(frozen=True)

    screen: Screen
    transitions: Dict[Tuple[int, ActionKind], str] = Field(default_factory=dict)
    hidden_elements: Tuple[UiElement, ...] = ()
    scroll_offset: int = Field(0, ge=0, description="Hidden elements revealed on arrival")

    @property
    def all_elements(self) -> Tuple[UiElement, ...]:
        return self.screen.elements + self.hidden_elements

    def element(self, index: int) -> Optional[UiElement]:
        for element in self.all_elements:
            if element.index == index:
                return element
        return None


class GoalKind(str, Enum):
    SCREEN = "screen"
    TYPED_VALUE = "typed_value"


class Goal(BaseModel):
    """Declarative success condition."""

    model_config = ConfigDict(frozen=True)

    kind: GoalKind
    screen_id: str
    element: Optional[int] = None
    value: Optional[str] = None


class ExpectedProgress(BaseModel):
    """Reference progress for one configuration, checked by `replay --all`."""

    valid: int
    total: int
    success: bool
    reason: Optional[str] = None


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario_id: str
    instruction: str = ""
    notes: str = ""
    pages: Dict[str, SimPage]
    start: str
    goal: Goal
    expert_steps: int = Field(..., ge=1)
    scripted_plans: Dict[str, Any] = Field(default_factory=dict)
    expected: Dict[str, ExpectedProgress] = Field(default_factory=dict)

    def page(self, screen_id: str) -> SimPage:
        try:
            return self.pages[screen_id]
        except KeyError:
            raise ScenarioError(f"{self.scenario_id}: unknown screen {screen_id!r}") from None


class EnvState(BaseModel):
    """Position of one run inside a scenario. Never mutated; `apply` returns a new state."""

    model_config = ConfigDict(frozen=True)

    screen_id: str
    scroll_offsets: Dict[str, int] = Field(default_factory=dict)
    typed_values: Dict[str, Dict[int, str]] = Field(default_factory=dict)


def initial_state(scenario: Scenario) -> EnvState:
    return EnvState(
        screen_id=scenario.start,
        scroll_offsets={sid: page.scroll_offset for sid, page in sorted(scenario.pages.items())},
        typed_values={},
    )


def visible_elements(state: EnvState, scenario: Scenario, screen_id: Optional[str] = None) -> Tuple[UiElement, ...]:
    sid = screen_id or state.screen_id
    page = scenario.page(sid)
    offset = state.scroll_offsets.get(sid, page.scroll_offset)
    return page.screen.elements + page.hidden_elements[:offset]


def current_screen(state: EnvState, scenario: Scenario) -> Screen:
    """The visible projection of the current page as a Screen."""
    page = scenario.page(state.screen_id)
    return Screen(
        screen_id=state.screen_id,
        width=page.screen.width,
        height=page.screen.height,
        elements=visible_elements(state, scenario),
        typed_values=dict(state.typed_values.get(state.screen_id, {})),
    )


def page_captions(scenario: Scenario, screen_id: str) -> FrozenSet[str]:
    """Normalized captions of every element on a page, hidden ones included."""
    page = scenario.page(screen_id)
    return frozenset(normalize_caption(e.text) for e in page.all_elements if e.text.strip())


def _visible_target(state: EnvState, scenario: Scenario, index: Optional[int]) -> UiElement:
    page = scenario.page(state.screen_id)
    if index is None or page.element(index) is None:
        raise ExecutionError(f"element {index} does not exist on {state.screen_id}")
    for element in visible_elements(state, scenario):
        if element.index == index:
            return element
    raise ExecutionError(f"element {index} on {state.screen_id} is not visible")


def apply(state: EnvState, action: Action, scenario: Scenario) -> EnvState:
    """Apply one action and return the next state."""
    page = scenario.page(state.screen_id)
    if action.kind == ActionKind.SCROLL:
        if action.direction == ScrollDirection.UP:
            return state
        offset = state.scroll_offsets.get(state.screen_id, page.scroll_offset)
        revealed = min(offset + 1, len(page.hidden_elements))
        offsets = dict(state.scroll_offsets)
        offsets[state.screen_id] = revealed
        return state.model_copy(update={"scroll_offsets": offsets})

    target = _visible_target(state, scenario, action.target_index)
    if action.kind == ActionKind.TYPE:
        if target.etype != ElementType.INPUT:
            raise ExecutionError(f"cannot type into {target.etype.value} {target.index} on {state.screen_id}")
        typed = {sid: dict(values) for sid, values in state.typed_values.items()}
        typed.setdefault(state.screen_id, {})[target.index] = action.text
        state = state.model_copy(update={"typed_values": typed})

    destination = page.transitions.get((target.index, action.kind))
    if destination is None:
        if action.kind == ActionKind.CLICK:
            logger.debug(f"dead click on {state.screen_id}:{target.index}")
        return state
    logger.debug(f"{action.kind.value} {state.screen_id}:{target.index} -> {destination}")
    return state.model_copy(update={"screen_id": destination})


def goal_reached(state: EnvState, scenario: Scenario) -> bool:
    goal = scenario.goal
    if goal.kind == GoalKind.SCREEN:
        return state.screen_id == goal.screen_id
    return state.typed_values.get(goal.screen_id, {}).get(goal.element) == goal.value


# --- loading -----------------------------------------------------------------


def _page_from_json(screen_id: str, obj: Dict[str, Any]) -> SimPage:
    try:
        visible = tuple(element_from_json(e) for e in obj.get("elements", []))
        hidden = tuple(element_from_json(e) for e in obj.get("hidden", []))
        width, height = obj["width"], obj["height"]
        Screen(screen_id=screen_id, width=width, height=height, elements=visible + hidden)
        screen = Screen(screen_id=screen_id, width=width, height=height, elements=visible)
        transitions: Dict[Tuple[int, ActionKind], str] = {}
        for raw in obj.get("transitions", []):
            transition = Transition(**raw)
            key = (transition.element, transition.action)
            if key in transitions:
                raise ScenarioError(f"page {screen_id}: duplicate transition for {key}")
            transitions[key] = transition.target
        return SimPage(
            screen=screen,
            transitions=transitions,
            hidden_elements=hidden,
            scroll_offset=obj.get("scroll_offset", 0),
        )
    except (ScreenValidationError, ValidationError, KeyError, TypeError) as exc:
        raise ScenarioError(f"page {screen_id}: {exc}") from exc


def _goal_from_json(obj: Dict[str, Any]) -> Goal:
    if "screen" in obj:
        return Goal(kind=GoalKind.SCREEN, screen_id=obj["screen"])
    typed = obj["typed"]
    return Goal(kind=GoalKind.TYPED_VALUE, screen_id=typed["screen"], element=typed["element"], value=typed["value"])


def validate_scenario(scenario: Scenario) -> None:
    """Reject dangling screen ids and impossible transitions before any run."""
    if scenario.start not in scenario.pages:
        raise ScenarioError(f"{scenario.scenario_id}: start page {scenario.start!r} does not exist")
    goal_page = scenario.pages.get(scenario.goal.screen_id)
    if goal_page is None:
        raise ScenarioError(f"{scenario.scenario_id}: goal page {scenario.goal.screen_id!r} does not exist")
    if scenario.goal.kind == GoalKind.TYPED_VALUE:
        element = goal_page.element(scenario.goal.element)
        if element is None or element.etype != ElementType.INPUT:
            raise ScenarioError(f"{scenario.scenario_id}: goal element {scenario.goal.element} is not an input")
    for screen_id, page in scenario.pages.items():
        if page.scroll_offset > len(page.hidden_elements):
            raise ScenarioError(f"page {screen_id}: scroll_offset exceeds hidden elements")
        for (index, kind), target in page.transitions.items():
            element = page.element(index)
            if element is None:
                raise ScenarioError(f"page {screen_id}: transition from missing element {index}")
            if kind == ActionKind.TYPE and element.etype != ElementType.INPUT:
                raise ScenarioError(f"page {screen_id}: type transition on non-input element {index}")
            if kind == ActionKind.SCROLL:
                raise ScenarioError(f"page {screen_id}: scroll cannot trigger a transition")
            if target not in scenario.pages:
                raise ScenarioError(f"page {screen_id}: transition to unknown screen {target!r}")


def scenario_from_json(obj: Dict[str, Any]) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioError(f"scenario must be a JSON object, got {type(obj).__name__}")
    if not isinstance(obj.get("pages"), dict):
        raise ScenarioError(f"{obj.get('scenario_id', '?')}: pages must be an object keyed by screen id")
    try:
        scenario = Scenario(
            scenario_id=obj["scenario_id"],
            instruction=obj.get("instruction", ""),
            notes=obj.get("notes", ""),
            pages={sid: _page_from_json(sid, page) for sid, page in obj["pages"].items()},
            start=obj["start"],
            goal=_goal_from_json(obj["goal"]),
            expert_steps=obj["expert_steps"],
            scripted_plans=obj.get("scripted_plans", {}),
            expected=obj.get("expected", {}),
        )
    except ValidationError as exc:
        raise ScenarioError(f"{obj.get('scenario_id', '?')}: {exc}") from exc
    except KeyError as exc:
        raise ScenarioError(f"{obj.get('scenario_id', '?')}: missing field {exc}") from exc
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"{obj.get('scenario_id', '?')}: malformed scenario: {exc}") from exc
    validate_scenario(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as handle:
            obj = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    scenario = scenario_from_json(obj)
    logger.info(f"📄 Loaded scenario {scenario.scenario_id} ({len(scenario.pages)} pages)")
    return scenario


def _natural_key(path: Path):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", path.stem)]


def scenario_paths(directory=None) -> List[Path]:
    root = Path(directory) if directory else config.SCENARIO_DIR
    return sorted(root.glob("*.json"), key=_natural_key)


def load_bundled_scenarios(directory=None) -> List[Scenario]:
    return [load_scenario(path) for path in scenario_paths(directory)]


def page_screen_json(scenario: Scenario, screen_id: str, revealed: bool = True) -> Dict[str, Any]:
    """Canonical JSON of a page with all (or only arrival) elements shown."""
    page = scenario.page(screen_id)
    elements = page.all_elements if revealed else page.screen.elements
    return screen_to_json(
        Screen(screen_id=screen_id, width=page.screen.width, height=page.screen.height, elements=elements)
    )
