import random

import pytest

from taskguard import output_codec
from taskguard.errors import (
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
from taskguard.output_codec import ResultKind, StructuredResult, emit, extract_result, parse


def test_emit_canonical_forms():
    assert emit(output_codec.feasibility(1)) == "<s_feasibility> 1 </s_feasibility>"
    assert emit(output_codec.completeness(0)) == "<s_completeness> 0 </s_completeness>"
    assert emit(output_codec.locate((10, 20, 110, 50))) == (
        "<locate_element> <x_min> 10 </x_min> <y_min> 20 </y_min> "
        "<x_max> 110 </x_max> <y_max> 50 </y_max> </locate_element>"
    )


def test_parse_accepts_any_whitespace():
    assert parse("<s_feasibility>1</s_feasibility>") == output_codec.feasibility(1)
    assert parse("\n<s_completeness>\t0 \n</s_completeness>  ") == output_codec.completeness(0)
    assert parse(b"<locate_element><x_min>1</x_min><y_min>2</y_min><x_max>3</x_max><y_max>4</y_max></locate_element>") == (
        output_codec.locate((1, 2, 3, 4))
    )


@pytest.mark.parametrize(
    "text, error",
    [
        ("<s_feasibility> 2 </s_feasibility>", PayloadDomainError),
        ("<s_feasibility> yes </s_feasibility>", PayloadDomainError),
        ("<s_feasibility> 1 </s_completeness>", MismatchedTagError),
        ("<s_mystery> 1 </s_mystery>", UnknownTagError),
        ("<s_feasibility> 1", MalformedSequenceError),
        ("1", MalformedSequenceError),
        ("", MalformedSequenceError),
        ("<s_feasibility> 1 1 </s_feasibility>", MalformedSequenceError),
        (
            "<locate_element> <x_min> 1 </x_min> <y_min> 2 </y_min> <x_max> 3 </x_max> </locate_element>",
            MissingSubtagError,
        ),
        (
            "<locate_element> <x_min> 1 </x_min> <x_min> 1 </x_min> <y_min> 2 </y_min> "
            "<x_max> 3 </x_max> <y_max> 4 </y_max> </locate_element>",
            DuplicateSubtagError,
        ),
        (
            "<locate_element> <y_min> 2 </y_min> <x_min> 1 </x_min> <x_max> 3 </x_max> <y_max> 4 </y_max> </locate_element>",
            SubtagOrderError,
        ),
        (
            "<locate_element> <x_min> 5 </x_min> <y_min> 2 </y_min> <x_max> 5 </x_max> <y_max> 4 </y_max> </locate_element>",
            DegenerateBBoxError,
        ),
        (
            "<locate_element> <x_min> 1 </y_min> <y_min> 2 </y_min> <x_max> 3 </x_max> <y_max> 4 </y_max> </locate_element>",
            MismatchedTagError,
        ),
        (
            "<locate_element> <z_min> 1 </z_min> <y_min> 2 </y_min> <x_max> 3 </x_max> <y_max> 4 </y_max> </locate_element>",
            UnknownTagError,
        ),
    ],
)
def test_parse_errors_are_typed(text, error):
    with pytest.raises(error):
        parse(text)


@pytest.mark.parametrize(
    "text, error",
    [
        ("<s_feasibility> ١ </s_feasibility>", PayloadDomainError),
        ("<s_completeness> １ </s_completeness>", PayloadDomainError),
        (
            "<locate_element> <x_min> ١ </x_min> <y_min> 2 </y_min> <x_max> 3 </x_max> <y_max> 4 </y_max> </locate_element>",
            MalformedSequenceError,
        ),
    ],
)
def test_only_ascii_digits_are_numbers(text, error):
    with pytest.raises(error):
        parse(text)


def test_non_utf8_bytes():
    with pytest.raises(MalformedSequenceError):
        parse(b"\xff\xfe<s_feasibility>")


def test_round_trip_property():
    rng = random.Random(11)
    for _ in range(10_000):
        kind = rng.choice(list(ResultKind))
        if kind == ResultKind.LOCATE:
            x_min, y_min = rng.randrange(0, 3000), rng.randrange(0, 3000)
            result = output_codec.locate((x_min, y_min, x_min + rng.randrange(1, 500), y_min + rng.randrange(1, 500)))
        else:
            result = StructuredResult(kind=kind, payload=rng.randint(0, 1))
        assert parse(emit(result)) == result


_FRAGMENTS = [
    "<s_feasibility>",
    "</s_feasibility>",
    "<s_completeness>",
    "</s_completeness>",
    "<locate_element>",
    "</locate_element>",
    "<x_min>",
    "</x_min>",
    "<y_min>",
    "</y_min>",
    "<x_max>",
    "</x_max>",
    "<y_max>",
    "</y_max>",
    "<foo>",
    "</",
    "<",
    ">",
    "0",
    "1",
    "2",
    "42",
    "-3",
    "999999999999",
    " ",
    "\n",
    "abc",
    "é",
]


def test_fuzz_never_crashes():
    rng = random.Random(5)
    for _ in range(10_000):
        text = "".join(rng.choice(_FRAGMENTS) for _ in range(rng.randrange(0, 16)))
        data = text.encode("utf-8") if rng.random() < 0.1 else text
        try:
            result = parse(data)
        except CodecError:
            continue
        assert isinstance(result, StructuredResult)


def test_extract_result_inside_prose():
    reply = "Looking at the screen, the button exists.\n<s_feasibility> 1 </s_feasibility>\nDone."
    assert extract_result(reply) == output_codec.feasibility(1)
    assert extract_result(reply, ResultKind.COMPLETENESS) is None
    assert extract_result("no tags here") is None
    assert extract_result("<s_feasibility> 7 </s_feasibility> <s_feasibility> 0 </s_feasibility>") == (
        output_codec.feasibility(0)
    )
