"""Shared fixtures: sample screens, a hand-built scenario and a capturing transport."""

from typing import Callable, List, Optional

import pytest

from taskguard.llm_client import ChatRequest
from taskguard.privacy import PlaceholderMemory
from taskguard.screen_model import ElementType, Screen, UiElement
from taskguard.sim_env import load_bundled_scenarios, scenario_from_json


class CapturingTransport:
    """Records every request; replies come from `responder` (or a fixed string)."""

    throttled = False

    def __init__(self, responder: Optional[Callable[[ChatRequest], str]] = None, reply: str = ""):
        self.responder = responder
        self.reply = reply
        self.requests: List[ChatRequest] = []

    def send(self, request: ChatRequest) -> str:
        self.requests.append(request)
        return self.responder(request) if self.responder else self.reply

    def payloads(self) -> List[str]:
        return [text for request in self.requests for text in request.texts()]


class FlakyTransport:
    """Fails with `error` for the first `failures` calls, then answers `reply`."""

    throttled = False

    def __init__(self, failures: int, error: Exception, reply: str = "ok"):
        self.failures = failures
        self.error = error
        self.reply = reply
        self.calls = 0

    def send(self, request: ChatRequest) -> str:
        self.calls += 1
        if self.calls <= self.failures:
            raise self.error
        return self.reply


def element(index, text, bbox, etype="button"):
    return UiElement(index=index, text=text, bbox=bbox, etype=ElementType(etype))


@pytest.fixture
def bbc_screen():
    return Screen(
        screen_id="bbc_home",
        width=1280,
        height=800,
        elements=(
            element(0, "bbc", (0, 0, 80, 40), "icon"),
            element(1, "Sport", (100, 0, 180, 40)),
            element(2, "Weather", (200, 0, 300, 40)),
            element(3, "Search BBC", (400, 0, 700, 40), "input"),
            element(4, "Football", (100, 100, 300, 140)),
        ),
    )


@pytest.fixture
def tie_screen():
    """Anchor "Name" with two equally distant neighbours to its right."""
    return Screen(
        screen_id="form",
        width=800,
        height=600,
        elements=(
            element(0, "Name", (0, 0, 100, 40)),
            element(1, "Far", (300, 0, 400, 40)),
            element(2, "Near A", (150, 0, 250, 40)),
            element(3, "Near B", (150, 10, 250, 30)),
            element(4, "Below", (110, 100, 140, 140)),
        ),
    )


SEARCH_SCENARIO = {
    "scenario_id": "search",
    "instruction": "Search for gloves.",
    "start": "home",
    "goal": {"typed": {"screen": "home", "element": 1, "value": "gloves"}},
    "expert_steps": 1,
    "pages": {
        "home": {
            "width": 800,
            "height": 600,
            "elements": [
                {"index": 0, "text": "logo", "bbox": [0, 0, 40, 40], "type": "icon"},
                {"index": 1, "text": "Search", "bbox": [100, 20, 500, 60], "type": "input"},
                {"index": 2, "text": "Go", "bbox": [520, 20, 600, 60], "type": "button"},
                {"index": 3, "text": "Help", "bbox": [100, 100, 200, 140], "type": "button"},
            ],
            "hidden": [
                {"index": 4, "text": "Football", "bbox": [100, 160, 300, 200], "type": "button"},
                {"index": 5, "text": "Tennis", "bbox": [100, 220, 300, 260], "type": "button"},
            ],
            "transitions": [
                {"element": 2, "target": "results"},
                {"element": 4, "target": "football"},
            ],
        },
        "results": {
            "width": 800,
            "height": 600,
            "elements": [
                {"index": 0, "text": "logo", "bbox": [0, 0, 40, 40], "type": "icon"},
                {"index": 1, "text": "Back", "bbox": [100, 20, 200, 60], "type": "button"},
            ],
            "transitions": [{"element": 1, "target": "home"}],
        },
        "football": {
            "width": 800,
            "height": 600,
            "elements": [{"index": 0, "text": "logo", "bbox": [0, 0, 40, 40], "type": "icon"}],
        },
    },
    "scripted_plans": {"default": {"1": {"none": "enter gloves into Search"}}},
}


@pytest.fixture
def search_scenario():
    return scenario_from_json(SEARCH_SCENARIO)


@pytest.fixture(scope="session")
def bundled_scenarios():
    return load_bundled_scenarios()


@pytest.fixture
def scenario_by_id(bundled_scenarios):
    return {scenario.scenario_id: scenario for scenario in bundled_scenarios}


@pytest.fixture
def memory_path(tmp_path):
    return tmp_path / "memory.json"


@pytest.fixture
def memory(memory_path):
    return PlaceholderMemory.load(memory_path)
