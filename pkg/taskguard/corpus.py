"""Feasibility and completeness corpora built from HTML pages and scenario fixtures.

Feasibility samples pair a screen with a templated command: positives name a
real element, negatives a fake caption drawn from a word pool and rejected
until it appears nowhere on the screen. Completeness samples are
(before, command, after) triples from real page transitions; a negative swaps
exactly one slot for a fake. Every random choice goes through a seeded
`random.Random`, so identical inputs and seed give byte-identical JSONL.
"""

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, FrozenSet, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import lxml.html
from lxml import etree
from pydantic import BaseModel, Field, TypeAdapter

from .errors import AmbiguousCaptionError, CorpusGenerationError, GroundingError
from .executor import CommandIntent, Verb, ground, parse_command, render_command
from .guards import transition_realized
from .screen_model import ElementType, Screen, UiElement, normalize_caption, screen_from_json, screen_to_json, visible_caption_set
from .sim_env import ActionKind, Scenario, page_screen_json

logger = logging.getLogger(__name__)

ADJECTIVES = [
    "Quantum", "Velvet", "Silent", "Amber", "Crimson", "Hollow", "Lunar", "Rapid", "Frozen", "Golden",
    "Hidden", "Mellow", "Nimble", "Polar", "Rustic", "Solar", "Tidal", "Vivid", "Woven", "Zesty",
    "Brisk", "Cobalt", "Dusty", "Fuzzy", "Gentle", "Jolly", "Misty", "Noble", "Plush", "Sturdy",
]
NOUNS = [
    "Llama", "Harbor", "Lantern", "Meadow", "Pebble", "Quill", "Rocket", "Saddle", "Teapot", "Walrus",
    "Anchor", "Biscuit", "Canyon", "Dynamo", "Ember", "Falcon", "Glacier", "Hammock", "Igloo", "Jigsaw",
    "Kettle", "Marble", "Nugget", "Orchid", "Parrot", "Raven", "Sprocket", "Tundra", "Violin", "Wombat",
]
ENTRY_WORDS = ["gloves", "charger", "football", "weather", "headphones", "pizza", "flights", "umbrella", "python"]
TEMPLATE_VERBS = (Verb.SELECT, Verb.CLICK_RIGHT_OF, Verb.ENTER, Verb.SCROLL_UNTIL)
COMPLETENESS_SLOTS = ("before", "caption", "after")

MAX_REJECTIONS = 1000
ROW_HEIGHT = 40
MARGIN = 16


class FeasibilitySample(BaseModel):
    kind: Literal["feasibility"] = "feasibility"
    screen: Dict[str, Any]
    command: str
    label: int = Field(..., ge=0, le=1)
    seed_meta: Dict[str, Any] = Field(default_factory=dict)


class CompletenessSample(BaseModel):
    kind: Literal["completeness"] = "completeness"
    screen_before: Dict[str, Any]
    screen_after: Dict[str, Any]
    command: str
    label: int = Field(..., ge=0, le=1)
    seed_meta: Dict[str, Any] = Field(default_factory=dict)


Sample = Annotated[Union[FeasibilitySample, CompletenessSample], Field(discriminator="kind")]
_SAMPLE = TypeAdapter(Sample)


def derive_seed(seed: int, *parts: str) -> int:
    """Per-unit seed, stable across processes and job counts."""
    digest = hashlib.sha256("\x1f".join([str(seed), *parts]).encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


# --- HTML leaf extraction ----------------------------------------------------

_SKIPPED_TAGS = {"script", "style", "head", "title", "meta", "link", "noscript", "template", "br", "hr", "html", "body"}
_INPUT_TAGS = {"textarea"}
_ICON_TAGS = {"img", "svg", "i", "picture", "canvas"}
_BUTTON_INPUT_TYPES = {"submit", "button", "reset", "checkbox", "radio"}


def _element_type(node) -> Optional[ElementType]:
    tag = node.tag.lower()
    if tag == "input":
        kind = (node.get("type") or "text").lower()
        if kind == "hidden":
            return None
        if kind == "image":
            return ElementType.ICON
        return ElementType.BUTTON if kind in _BUTTON_INPUT_TYPES else ElementType.INPUT
    if tag in _INPUT_TAGS or (node.get("contenteditable") or "").lower() == "true":
        return ElementType.INPUT
    if tag in _ICON_TAGS:
        return ElementType.ICON
    return ElementType.BUTTON


def _caption(node, label_for: Dict[str, str]) -> str:
    """inner-text > value > aria-label > alt > label-for > placeholder."""
    candidates = [
        node.text_content() if node.tag.lower() not in ("input", "textarea") else "",
        node.get("value"),
        node.get("aria-label"),
        node.get("alt"),
        label_for.get(node.get("id") or ""),
        node.get("placeholder"),
    ]
    for candidate in candidates:
        text = " ".join((candidate or "").split())
        if text:
            return text
    return ""


def _is_leaf(node) -> bool:
    return not any(isinstance(child.tag, str) for child in node)


def _hidden(node) -> bool:
    for ancestor in node.iterancestors():
        if ancestor.get("hidden") is not None or ancestor.get("aria-hidden") == "true":
            return True
    return node.get("hidden") is not None or node.get("aria-hidden") == "true"


def extract_leaf_elements(html: str, screen_id: str = "page", width: int = 1280) -> Screen:
    """Leaf elements of an HTML page laid out top to bottom, one per row."""
    try:
        root = lxml.html.fromstring(html)
    except (etree.ParserError, ValueError):
        root = None
    if root is None:
        logger.warning(f"⚠️ {screen_id}: nothing to parse")
        return Screen(screen_id=screen_id, width=width, height=ROW_HEIGHT)

    label_for = {}
    labelled = set()
    for label in root.iter("label"):
        target = label.get("for")
        if target and root.xpath("//*[@id=$id]", id=target):
            label_for[target] = " ".join(label.text_content().split())
            labelled.add(label)

    rows: List[Tuple[str, ElementType]] = []
    for node in root.iter():
        if not isinstance(node.tag, str):
            continue
        tag = node.tag.lower()
        if tag in _SKIPPED_TAGS or node in labelled or not _is_leaf(node) or _hidden(node):
            continue
        etype = _element_type(node)
        if etype is None:
            continue
        caption = _caption(node, label_for)
        if not caption and etype == ElementType.ICON:
            caption = "image" if tag in ("img", "picture", "input") else "icon"
        if not caption:
            continue
        rows.append((caption, etype))

    elements = []
    for index, (caption, etype) in enumerate(rows):
        y_min = MARGIN + index * ROW_HEIGHT
        if etype == ElementType.ICON:
            box_width = 32
        elif etype == ElementType.INPUT:
            box_width = 400
        else:
            box_width = 16 + 8 * len(caption)
        box_width = min(box_width, width - 2 * MARGIN)
        elements.append(
            UiElement(index=index, text=caption, bbox=(MARGIN, y_min, MARGIN + box_width, y_min + 32), etype=etype)
        )
    if not elements:
        logger.warning(f"⚠️ {screen_id}: no extractable elements")
    height = max(ROW_HEIGHT, MARGIN * 2 + len(elements) * ROW_HEIGHT)
    return Screen(screen_id=screen_id, width=width, height=height, elements=tuple(elements))


# --- command sampling --------------------------------------------------------


def fake_caption(rng: random.Random, forbidden: FrozenSet[str]) -> str:
    """Adjective-noun caption absent (after normalization) from `forbidden`."""
    for _ in range(MAX_REJECTIONS):
        caption = f"{rng.choice(ADJECTIVES)} {rng.choice(NOUNS)}"
        if normalize_caption(caption) not in forbidden:
            return caption
    raise CorpusGenerationError("fake caption pool exhausted")


def _round_trips(intent: CommandIntent) -> bool:
    try:
        return parse_command(render_command(intent)) == intent
    except Exception:
        return False


def positive_intents(screen: Screen) -> List[Tuple[UiElement, Verb]]:
    """Every (element, template) pair whose command grounds on the screen."""
    counts: Dict[str, int] = {}
    for element in screen.elements:
        key = normalize_caption(element.text)
        counts[key] = counts.get(key, 0) + 1
    pairs = []
    for element in screen.sorted_elements():
        caption = " ".join(element.text.split())
        if not caption or counts[normalize_caption(caption)] != 1:
            continue
        for verb in TEMPLATE_VERBS:
            words = ENTRY_WORDS[0] if verb == Verb.ENTER else None
            if verb == Verb.ENTER and element.etype != ElementType.INPUT:
                continue
            intent = CommandIntent(verb=verb, caption=caption, words=words)
            if not _round_trips(intent):
                continue
            if verb == Verb.CLICK_RIGHT_OF:
                try:
                    ground(intent, screen)
                except (GroundingError, AmbiguousCaptionError):
                    continue
            pairs.append((element, verb))
    return pairs


def _intent(verb: Verb, caption: str, rng: random.Random) -> CommandIntent:
    words = rng.choice(ENTRY_WORDS) if verb == Verb.ENTER else None
    return CommandIntent(verb=verb, caption=caption, words=words)


def gen_feasibility_samples(
    screen: Screen,
    n_pos: int,
    n_neg: int,
    seed: int,
    forbidden: Optional[FrozenSet[str]] = None,
) -> List[FeasibilitySample]:
    """`forbidden` adds captions negatives must avoid beyond the visible ones."""
    rng = random.Random(seed)
    pairs = positive_intents(screen)
    if n_pos and not pairs:
        raise CorpusGenerationError(f"{screen.screen_id}: no element supports a feasible command")
    screen_json = screen_to_json(screen)
    blocked = visible_caption_set(screen) | (forbidden or frozenset())
    samples = []
    for position in range(n_pos):
        element, verb = rng.choice(pairs)
        intent = _intent(verb, " ".join(element.text.split()), rng)
        samples.append(
            FeasibilitySample(
                screen=screen_json,
                command=render_command(intent),
                label=1,
                seed_meta={"seed": seed, "source": screen.screen_id, "index": position, "element": element.index},
            )
        )
    for position in range(n_neg):
        verb = rng.choice(TEMPLATE_VERBS)
        intent = _intent(verb, fake_caption(rng, blocked), rng)
        samples.append(
            FeasibilitySample(
                screen=screen_json,
                command=render_command(intent),
                label=0,
                seed_meta={"seed": seed, "source": screen.screen_id, "index": n_pos + position},
            )
        )
    return samples


def scenario_transitions(scenario: Scenario) -> List[Tuple[str, UiElement, ActionKind, str]]:
    """(page, element, action, target) for every transition with a unique caption."""
    found = []
    for screen_id in sorted(scenario.pages):
        page = scenario.page(screen_id)
        captions = [normalize_caption(e.text) for e in page.all_elements]
        for (index, action), target in sorted(page.transitions.items(), key=lambda t: (t[0][0], t[0][1].value)):
            element = page.element(index)
            caption = " ".join(element.text.split())
            if caption and captions.count(normalize_caption(caption)) == 1:
                found.append((screen_id, element, action, target))
    return found


def _transition_intent(element: UiElement, action: ActionKind, rng: random.Random) -> CommandIntent:
    verb = Verb.ENTER if action == ActionKind.TYPE else Verb.SELECT
    return _intent(verb, " ".join(element.text.split()), rng)


def gen_completeness_samples(scenario: Scenario, n_pos: int, n_neg: int, seed: int) -> List[CompletenessSample]:
    rng = random.Random(seed)
    transitions = [t for t in scenario_transitions(scenario) if _round_trips(_transition_intent(t[1], t[2], rng))]
    if not transitions:
        raise CorpusGenerationError(f"{scenario.scenario_id}: no usable transitions")
    screens = {sid: page_screen_json(scenario, sid) for sid in sorted(scenario.pages)}
    parsed = {sid: screen_from_json(body) for sid, body in screens.items()}
    page_ids = sorted(screens)
    meta = {"seed": seed, "scenario": scenario.scenario_id}

    samples = []
    for position in range(n_pos):
        source, element, action, target = rng.choice(transitions)
        intent = _transition_intent(element, action, rng)
        samples.append(
            CompletenessSample(
                screen_before=screens[source],
                screen_after=screens[target],
                command=render_command(intent),
                label=1,
                seed_meta={**meta, "index": position},
            )
        )

    for position in range(n_neg):
        for _ in range(MAX_REJECTIONS):
            source, element, action, target = rng.choice(transitions)
            intent = _transition_intent(element, action, rng)
            slot = rng.choice(COMPLETENESS_SLOTS)
            before, after = source, target
            if slot == "before":
                before = rng.choice(page_ids)
            elif slot == "after":
                after = rng.choice(page_ids)
            else:
                forbidden = frozenset(normalize_caption(e.text) for e in scenario.page(source).all_elements)
                intent = _intent(intent.verb, fake_caption(rng, forbidden), rng)
            if (before, after) == (source, target) and slot != "caption":
                continue
            if transition_realized(scenario, parsed[before], intent, parsed[after]):
                continue
            samples.append(
                CompletenessSample(
                    screen_before=screens[before],
                    screen_after=screens[after],
                    command=render_command(intent),
                    label=0,
                    seed_meta={**meta, "index": n_pos + position, "slot": slot},
                )
            )
            break
        else:
            raise CorpusGenerationError(f"{scenario.scenario_id}: cannot build a negative triple")
    return samples


def inject_label_noise(samples: Sequence[Sample], p: float, seed: int) -> List[Sample]:
    """Flip each label with probability `p`."""
    if not 0.0 <= p <= 1.0:
        raise CorpusGenerationError(f"noise probability {p} is outside [0, 1]")
    rng = random.Random(seed)
    noisy = []
    for sample in samples:
        if rng.random() < p:
            meta = {**sample.seed_meta, "noise_flipped": True}
            sample = sample.model_copy(update={"label": 1 - sample.label, "seed_meta": meta})
        noisy.append(sample)
    return noisy


# --- drivers -----------------------------------------------------------------


def _run_units(units: Sequence[Callable[[], List[Sample]]], jobs: int) -> List[Sample]:
    """Run work units in a pool and merge in unit order."""
    if jobs <= 1:
        results = [unit() for unit in units]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda unit: unit(), units))
    return [sample for chunk in results for sample in chunk]


def generate_from_scenarios(
    scenarios: Iterable[Scenario], n_pos: int, n_neg: int, seed: int, jobs: int = 1
) -> List[Sample]:
    """Per page: n_pos + n_neg feasibility samples. Per scenario: n_pos + n_neg triples."""
    units: List[Callable[[], List[Sample]]] = []
    for scenario in scenarios:
        for screen_id in sorted(scenario.pages):
            screen = screen_from_json(page_screen_json(scenario, screen_id))

            def feasibility_unit(screen=screen, scenario_id=scenario.scenario_id):
                samples = gen_feasibility_samples(screen, n_pos, n_neg, derive_seed(seed, scenario_id, screen.screen_id))
                return [
                    s.model_copy(update={"seed_meta": {**s.seed_meta, "scenario": scenario_id}}) for s in samples
                ]

            units.append(feasibility_unit)

        def completeness_unit(scenario=scenario):
            return gen_completeness_samples(scenario, n_pos, n_neg, derive_seed(seed, scenario.scenario_id))

        units.append(completeness_unit)
    samples = _run_units(units, jobs)
    logger.info(f"✅ Generated {len(samples)} samples from scenarios")
    return samples


def generate_from_html_dir(directory, n_pos: int, n_neg: int, seed: int, jobs: int = 1) -> List[Sample]:
    paths = sorted(Path(directory).glob("*.htm*"))
    if not paths:
        raise CorpusGenerationError(f"no HTML files in {directory}")
    units = []
    for path in paths:

        def unit(path=path):
            screen = extract_leaf_elements(path.read_text(encoding="utf-8", errors="replace"), screen_id=path.stem)
            if not screen.elements:
                return []
            return gen_feasibility_samples(screen, n_pos, n_neg, derive_seed(seed, path.name))

        units.append(unit)
    samples = _run_units(units, jobs)
    logger.info(f"✅ Generated {len(samples)} samples from {len(paths)} pages")
    return samples


def sample_to_line(sample: Sample) -> str:
    return json.dumps(sample.model_dump(mode="json"), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(samples: Iterable[Sample], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for sample in samples:
            handle.write(sample_to_line(sample) + "\n")
            count += 1
    logger.info(f"📄 Wrote {count} samples to {path}")
    return count


def read_jsonl(path) -> List[Sample]:
    samples = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                samples.append(_SAMPLE.validate_json(line))
            except ValueError as exc:
                raise CorpusGenerationError(f"{path}:{number}: {exc}") from exc
    return samples
