"""Parsed screens: typed UI elements and their linguistic serialization.

A screen is what the screen parser would hand the coordinator: an ordered set
of elements, each with an index, a text caption, an absolute pixel bounding box
and a type (button, input or icon). `serialize_screen` renders the dictionary
form given to language models:

    {0: {text: "Add to Cart", location: [10,20,110,50], type: button}}

Entries are sorted by index. Input elements that currently hold text carry an
extra `value` key. Strings are JSON-quoted so captions containing quotes or
braces survive `parse_screen`.
"""

import json
import re
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import AmbiguousCaptionError, ScreenValidationError

BBox = Tuple[int, int, int, int]


class ElementType(str, Enum):
    BUTTON = "button"
    INPUT = "input"
    ICON = "icon"


class UiElement(BaseModel):
    """One parsed UI element."""

    model_config = ConfigDict(frozen=True)

    index: int = Field(..., ge=0, description="Position in the screen, unique and contiguous from 0")
    text: str = Field("", description="Caption; icon category name for icons")
    bbox: BBox = Field(..., description="(x_min, y_min, x_max, y_max) in absolute pixels")
    etype: ElementType = Field(..., description="button, input or icon")

    @field_validator("bbox")
    @classmethod
    def _non_degenerate(cls, bbox: BBox) -> BBox:
        x_min, y_min, x_max, y_max = bbox
        if x_min >= x_max or y_min >= y_max:
            raise ValueError(f"degenerate bbox {list(bbox)}")
        return bbox

    @property
    def center(self) -> Tuple[float, float]:
        x_min, y_min, x_max, y_max = self.bbox
        return ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0)


class Screen(BaseModel):
    """An immutable parsed screen."""

    model_config = ConfigDict(frozen=True)

    screen_id: str
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    elements: Tuple[UiElement, ...] = ()
    typed_values: Dict[int, str] = Field(default_factory=dict, description="Current content of input elements")

    @model_validator(mode="after")
    def _check_invariants(self) -> "Screen":
        check_screen(self)
        return self

    def element(self, index: int) -> UiElement:
        for element in self.elements:
            if element.index == index:
                return element
        raise KeyError(index)

    def sorted_elements(self) -> List[UiElement]:
        return sorted(self.elements, key=lambda e: e.index)


def check_screen(screen: Screen) -> None:
    """Raise ScreenValidationError naming the first element that breaks an invariant."""
    seen = set()
    for element in screen.elements:
        if element.index in seen:
            raise ScreenValidationError(f"duplicate element index {element.index}", element.index)
        seen.add(element.index)
        x_min, y_min, x_max, y_max = element.bbox
        if x_min >= x_max or y_min >= y_max:
            raise ScreenValidationError(f"element {element.index} has a degenerate bbox", element.index)
        if element.etype == ElementType.ICON and not element.text.strip():
            raise ScreenValidationError(f"icon element {element.index} has no category text", element.index)
        if x_min < 0 or y_min < 0 or x_max > screen.width or y_max > screen.height:
            raise ScreenValidationError(
                f"element {element.index} bbox {list(element.bbox)} exceeds "
                f"{screen.width}x{screen.height} on screen {screen.screen_id}",
                element.index,
            )
    if seen != set(range(len(seen))):
        missing = sorted(set(range(len(seen))) - seen)
        raise ScreenValidationError(f"element indices are not contiguous from 0 (missing {missing})", missing[0])
    inputs = {e.index for e in screen.elements if e.etype == ElementType.INPUT}
    for index in screen.typed_values:
        if index not in inputs:
            raise ScreenValidationError(f"typed value on element {index}, which is not an input", index)


def normalize_caption(text: str) -> str:
    """Trim, collapse internal whitespace and case-fold."""
    return " ".join(text.split()).casefold()


def find_by_caption(screen: Screen, caption: str) -> Optional[UiElement]:
    """Return the unique element whose normalized text equals the normalized caption."""
    wanted = normalize_caption(caption)
    if not wanted:
        return None
    matches = [e for e in screen.sorted_elements() if normalize_caption(e.text) == wanted]
    if len(matches) > 1:
        raise AmbiguousCaptionError(caption, [e.index for e in matches])
    return matches[0] if matches else None


def visible_caption_set(screen: Screen) -> FrozenSet[str]:
    return frozenset(normalize_caption(e.text) for e in screen.elements if e.text.strip())


def _quote(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def serialize_screen(screen: Screen) -> str:
    """Canonical dictionary-style text of a screen, sorted by index."""
    check_screen(screen)
    entries = []
    for element in screen.sorted_elements():
        location = ",".join(str(v) for v in element.bbox)
        body = f"text: {_quote(element.text)}, location: [{location}], type: {element.etype.value}"
        if element.index in screen.typed_values:
            body += f", value: {_quote(screen.typed_values[element.index])}"
        entries.append(f"{element.index}: {{{body}}}")
    return "{" + ", ".join(entries) + "}"


_STRING = r'"(?:[^"\\]|\\.)*"'
_ENTRY = re.compile(
    r"(?P<index>\d+): \{text: (?P<text>" + _STRING + r"), "
    r"location: \[(?P<x_min>\d+),(?P<y_min>\d+),(?P<x_max>\d+),(?P<y_max>\d+)\], "
    r"type: (?P<etype>button|input|icon)"
    r"(?:, value: (?P<value>" + _STRING + r"))?\}"
)


def parse_screen(text: str) -> Tuple[List[UiElement], Dict[int, str]]:
    """Parse `serialize_screen` output back into elements and typed values."""
    body = text.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise ScreenValidationError("screen text must be enclosed in braces")
    body = body[1:-1]
    elements: List[UiElement] = []
    typed: Dict[int, str] = {}
    position = 0
    while position < len(body):
        if elements:
            if not body.startswith(", ", position):
                raise ScreenValidationError(f"expected ', ' at offset {position}")
            position += 2
        match = _ENTRY.match(body, position)
        if match is None:
            raise ScreenValidationError(f"unparseable element entry at offset {position}")
        index = int(match["index"])
        try:
            elements.append(
                UiElement(
                    index=index,
                    text=json.loads(match["text"]),
                    bbox=(int(match["x_min"]), int(match["y_min"]), int(match["x_max"]), int(match["y_max"])),
                    etype=ElementType(match["etype"]),
                )
            )
        except ValidationError as exc:
            raise ScreenValidationError(f"element {index}: {exc.errors()[0]['msg']}", index) from exc
        if match["value"] is not None:
            typed[index] = json.loads(match["value"])
        position = match.end()
    return elements, typed


def screen_to_json(screen: Screen) -> Dict[str, Any]:
    """JSON shape shared by scenario fixtures and corpus files."""
    return {
        "screen_id": screen.screen_id,
        "width": screen.width,
        "height": screen.height,
        "elements": [
            {"index": e.index, "text": e.text, "bbox": list(e.bbox), "type": e.etype.value}
            for e in screen.sorted_elements()
        ],
        "typed_values": {str(k): v for k, v in sorted(screen.typed_values.items())},
    }


def element_from_json(obj: Dict[str, Any]) -> UiElement:
    try:
        return UiElement(
            index=obj["index"],
            text=obj.get("text", ""),
            bbox=tuple(obj["bbox"]),
            etype=ElementType(obj["type"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ScreenValidationError(f"bad element {obj!r}: {exc}", obj.get("index")) from exc


def screen_from_json(obj: Dict[str, Any]) -> Screen:
    elements = tuple(element_from_json(e) for e in obj.get("elements", []))
    try:
        return Screen(
            screen_id=obj["screen_id"],
            width=obj["width"],
            height=obj["height"],
            elements=elements,
            typed_values={int(k): v for k, v in obj.get("typed_values", {}).items()},
        )
    except ValidationError as exc:
        raise ScreenValidationError(f"screen {obj.get('screen_id')!r}: {exc.errors()[0]['msg']}") from exc
    except KeyError as exc:
        raise ScreenValidationError(f"screen is missing field {exc}") from exc


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union else 0.0
