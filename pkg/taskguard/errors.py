# Copyright 2025 Google LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Error hierarchy shared by every taskguard module."""

from typing import List, Optional


class TaskGuardError(Exception):
    """Root of all errors raised by taskguard."""


# --- screens ---
class ScreenValidationError(TaskGuardError, ValueError):
    """A Screen or UiElement violates its invariants."""

    def __init__(self, message: str, element_index: Optional[int] = None):
        super().__init__(message)
        self.element_index = element_index


class AmbiguousCaptionError(TaskGuardError):
    """More than one element matches a caption."""

    def __init__(self, caption: str, indices: List[int]):
        super().__init__(f"caption {caption!r} matches elements {indices}")
        self.caption = caption
        self.indices = indices


# --- structured output codec ---
class CodecError(TaskGuardError):
    """Base for structured-result parse failures."""


class MalformedSequenceError(CodecError):
    """Token stream is empty, truncated or contains stray text."""


class UnknownTagError(CodecError):
    """Opening tag is not a registered task prompt."""


class MismatchedTagError(CodecError):
    """Closing tag does not match the opening tag."""


class PayloadDomainError(CodecError):
    """Feasibility / completeness payload is not 0 or 1."""


class MissingSubtagError(CodecError):
    """A bbox sub-tag is absent."""


class DuplicateSubtagError(CodecError):
    """A bbox sub-tag appears more than once."""


class SubtagOrderError(CodecError):
    """bbox sub-tags are not in x_min, y_min, x_max, y_max order."""


class DegenerateBBoxError(CodecError):
    """bbox has x_min >= x_max or y_min >= y_max."""


# --- simulator / executor ---
class ScenarioError(TaskGuardError):
    """Scenario file is invalid or a scripted plan table is incomplete."""


class ExecutionError(TaskGuardError):
    """Action targets an invisible or nonexistent element."""


class UnparseableCommandError(TaskGuardError):
    """Command text matches none of the command templates."""


class GroundingError(TaskGuardError):
    """Command could not be resolved to an element on the screen."""


class CaptionNotFoundError(GroundingError):
    """Captioned element is absent from the visible screen."""


class NothingToTheRightError(GroundingError):
    """No visible element lies to the right of the anchor."""


class TargetTypeError(GroundingError):
    """`enter` target is not an input element."""


# --- guards / planner / llm ---
class GuardUnavailableError(TaskGuardError):
    """A guard backend could not produce a verdict."""


class PlannerUnavailableError(TaskGuardError):
    """The planner could not produce a next command."""


class TransportError(TaskGuardError):
    """Permanent failure talking to a model endpoint."""


class TransientTransportError(TransportError):
    """Retryable failure (rate limit, 5xx, connection reset)."""


class FixtureMissingError(TransportError):
    """No recorded reply exists for a request hash."""


# --- privacy ---
class PrivacyViolationError(TaskGuardError):
    """An outbound payload contains a stored secret."""

    def __init__(self, placeholder: str):
        super().__init__(f"outbound payload contains the value of {{{placeholder}}}")
        self.placeholder = placeholder


class PlaceholderCollisionError(TaskGuardError):
    """Placeholder name already maps to a different value."""

    def __init__(self, name: str):
        super().__init__(f"placeholder {{{name}}} already holds a different value")
        self.name = name


class MemoryFileError(TaskGuardError):
    """The placeholder memory file cannot be read as a name-to-value object."""


# --- corpus / evaluation ---
class CorpusGenerationError(TaskGuardError):
    """Sample generation cannot satisfy its constraints."""


class MetricsInputError(TaskGuardError):
    """Metric computation received unusable input."""


# --- coordinator ---
class IllegalTransitionError(TaskGuardError):
    """The task automaton was asked to skip or reorder a stage."""
