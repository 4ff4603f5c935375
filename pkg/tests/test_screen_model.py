import pytest

from taskguard.errors import AmbiguousCaptionError, ScreenValidationError
from taskguard.screen_model import (
    ElementType,
    Screen,
    UiElement,
    check_screen,
    find_by_caption,
    iou,
    normalize_caption,
    parse_screen,
    screen_from_json,
    screen_to_json,
    serialize_screen,
    visible_caption_set,
)

from .conftest import element


def test_serialize_sorted_by_index():
    screen = Screen(
        screen_id="s",
        width=200,
        height=100,
        elements=(element(1, "Go", (50, 0, 90, 20)), element(0, "Add to Cart", (10, 20, 110, 50))),
    )
    assert serialize_screen(screen) == (
        '{0: {text: "Add to Cart", location: [10,20,110,50], type: button}, '
        '1: {text: "Go", location: [50,0,90,20], type: button}}'
    )


def test_serialize_empty_screen():
    assert serialize_screen(Screen(screen_id="blank", width=10, height=10)) == "{}"


def test_typed_value_is_serialized():
    screen = Screen(
        screen_id="s",
        width=500,
        height=100,
        elements=(element(0, "Search", (0, 0, 400, 40), "input"),),
        typed_values={0: "gloves"},
    )
    assert serialize_screen(screen).endswith('type: input, value: "gloves"}}')


def test_parse_screen_inverts_serialization(bbc_screen):
    tricky = Screen(
        screen_id="tricky",
        width=500,
        height=200,
        elements=(
            element(0, 'say "hi", {now}', (0, 0, 100, 40)),
            element(1, "Email", (0, 50, 400, 90), "input"),
        ),
        typed_values={1: "a}b, c"},
    )
    for screen in (bbc_screen, tricky):
        elements, typed = parse_screen(serialize_screen(screen))
        assert elements == screen.sorted_elements()
        assert typed == screen.typed_values


def test_parse_screen_rejects_garbage():
    with pytest.raises(ScreenValidationError):
        parse_screen("0: nothing")
    with pytest.raises(ScreenValidationError):
        parse_screen('{0: {text: "x", location: [0,0,1,1], type: slider}}')


def test_bbox_outside_screen_is_rejected():
    with pytest.raises(ValueError):
        Screen(screen_id="s", width=100, height=100, elements=(element(0, "Wide", (0, 0, 120, 20)),))


def test_degenerate_bbox_is_rejected():
    with pytest.raises(ValueError):
        UiElement(index=0, text="Flat", bbox=(10, 10, 10, 20), etype=ElementType.BUTTON)


def test_indices_must_be_contiguous():
    with pytest.raises(ValueError):
        Screen(screen_id="s", width=100, height=100, elements=(element(1, "Only", (0, 0, 10, 10)),))


def test_typed_value_needs_an_input():
    with pytest.raises(ValueError):
        Screen(
            screen_id="s",
            width=100,
            height=100,
            elements=(element(0, "Go", (0, 0, 10, 10)),),
            typed_values={0: "x"},
        )


@pytest.mark.parametrize("caption", ["", "   "])
def test_icon_needs_category_text(caption):
    icons = (element(0, "home", (0, 0, 10, 10), "icon"), element(1, caption, (10, 0, 20, 10), "icon"))
    with pytest.raises(ScreenValidationError) as excinfo:
        check_screen(Screen.model_construct(screen_id="s", width=100, height=100, elements=icons, typed_values={}))
    assert excinfo.value.element_index == 1
    with pytest.raises(ValueError):
        Screen(screen_id="s", width=100, height=100, elements=icons)


def test_find_by_caption_normalizes(bbc_screen):
    assert find_by_caption(bbc_screen, "  sport ").index == 1
    assert find_by_caption(bbc_screen, "SEARCH   bbc").index == 3
    assert find_by_caption(bbc_screen, "Tennis") is None
    assert find_by_caption(bbc_screen, "   ") is None


def test_find_by_caption_ambiguous():
    screen = Screen(
        screen_id="s",
        width=300,
        height=100,
        elements=(element(0, "OK", (0, 0, 50, 20)), element(1, "ok", (100, 0, 150, 20))),
    )
    with pytest.raises(AmbiguousCaptionError) as info:
        find_by_caption(screen, "Ok")
    assert info.value.indices == [0, 1]


def test_normalize_caption():
    assert normalize_caption("  Add\tto  Cart ") == "add to cart"


def test_visible_caption_set(bbc_screen):
    assert visible_caption_set(bbc_screen) == {"bbc", "sport", "weather", "search bbc", "football"}


def test_json_round_trip(bbc_screen):
    screen = bbc_screen.model_copy(update={"typed_values": {3: "scores"}})
    assert screen_from_json(screen_to_json(screen)) == screen


def test_screen_from_json_names_bad_element():
    with pytest.raises(ScreenValidationError):
        screen_from_json(
            {"screen_id": "s", "width": 10, "height": 10, "elements": [{"index": 0, "bbox": [0, 0, 5, 5], "type": "x"}]}
        )


def test_iou():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)
