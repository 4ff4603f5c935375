"""Planner interface and the guarded plan/execute/verify automaton.

One run walks the automaton

    planning -> [feasibility_check] -> executing -> [completeness_check] -> planning ...

A negative guard verdict sends the run back to planning with the current
screen attached as feedback. Each step may be replanned `max_replans` times;
one more negative verdict ends the run with `replan_budget_exhausted`.
Valid steps are counted from the oracle completeness verdict whatever guards
are enabled, so every configuration is scored against the same ground truth.
"""

import json
import logging
import re
from enum import Enum
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import TaskConfig
from .errors import (
    ExecutionError,
    GuardUnavailableError,
    IllegalTransitionError,
    PlannerUnavailableError,
    PrivacyViolationError,
    ScenarioError,
    TransportError,
    UnparseableCommandError,
)
from .executor import ExecutionOutcome, Grounder, blind_click, execute, parse_command
from .guards import (
    Backend,
    CompletenessGuard,
    FeasibilityGuard,
    GuardVerdict,
    OracleCompleteness,
    OracleFeasibility,
    hard_verdict,
)
from .llm_client import NO_FEEDBACK, Feedback, FeedbackKind, LlmClient, build_planner_prompt
from .privacy import CollisionPolicy, Detector, PlaceholderMemory, redact, restore, unknown_placeholders
from .screen_model import Screen, serialize_screen
from .sim_env import EnvState, Scenario, current_screen, goal_reached, initial_state

logger = logging.getLogger(__name__)


class PlanKind(str, Enum):
    COMMAND = "command"
    DONE = "done"
    GIVE_UP = "give_up"


class PlanResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PlanKind
    command: Optional[str] = None
    reason: Optional[str] = None

    @model_validator(mode="after")
    def _shape(self) -> "PlanResult":
        if self.kind == PlanKind.COMMAND and not (self.command and self.command.strip()):
            raise ValueError("a command plan needs non-empty command text")
        return self

    @classmethod
    def of_command(cls, text: str) -> "PlanResult":
        return cls(kind=PlanKind.COMMAND, command=text)

    @classmethod
    def done(cls) -> "PlanResult":
        return cls(kind=PlanKind.DONE)

    @classmethod
    def give_up(cls, reason: str) -> "PlanResult":
        return cls(kind=PlanKind.GIVE_UP, reason=reason)


class PlanContext(BaseModel):
    """Everything a planner may look at when proposing the next command."""

    model_config = ConfigDict(frozen=True)

    instruction: str
    history: Tuple[str, ...] = ()
    feedback: Feedback = NO_FEEDBACK
    step_index: int = Field(1, ge=1)
    replan_attempt: int = Field(0, ge=0)


class Planner(Protocol):
    def plan(self, context: PlanContext) -> PlanResult: ...


def _plan_from_entry(entry: Any, where: str) -> PlanResult:
    if isinstance(entry, str) and entry.strip():
        return PlanResult.of_command(entry)
    if isinstance(entry, dict):
        if entry.get("done") is True:
            return PlanResult.done()
        if isinstance(entry.get("give_up"), str):
            return PlanResult.give_up(entry["give_up"])
    raise ScenarioError(f"{where}: unusable plan entry {entry!r}")


class ScriptedPlanner:
    """Replays a scenario's `scripted_plans` table.

    Tables are keyed by configuration label (falling back to `default`), then
    step number, then feedback kind. A list value is indexed by the replan
    attempt within the step; its last entry repeats.
    """

    def __init__(self, scenario: Scenario, track: str = "default"):
        self.scenario = scenario
        self.track = track

    def _table(self) -> Dict[str, Any]:
        plans = self.scenario.scripted_plans
        table = plans.get(self.track, plans.get("default"))
        if not isinstance(table, dict):
            raise ScenarioError(f"{self.scenario.scenario_id}: no scripted plan track {self.track!r} or default")
        return table

    def plan(self, context: PlanContext) -> PlanResult:
        where = f"{self.scenario.scenario_id}[{self.track}] step {context.step_index}"
        step = self._table().get(str(context.step_index))
        if not isinstance(step, dict):
            raise ScenarioError(f"{where}: no scripted entry")
        kind = context.feedback.kind.value
        if kind not in step:
            raise ScenarioError(f"{where}: no entry for feedback {kind!r}")
        entry = step[kind]
        if isinstance(entry, list):
            if not entry:
                raise ScenarioError(f"{where}: empty plan list for {kind!r}")
            entry = entry[min(max(context.replan_attempt - 1, 0), len(entry) - 1)]
        return _plan_from_entry(entry, where)


def validate_scripted_plans(scenario: Scenario) -> None:
    """Check the shape of every scripted entry before a run."""
    for track, table in scenario.scripted_plans.items():
        if not isinstance(table, dict):
            raise ScenarioError(f"{scenario.scenario_id}: track {track!r} is not a table")
        for step, entries in table.items():
            where = f"{scenario.scenario_id}[{track}] step {step}"
            if not step.isdigit() or int(step) < 1:
                raise ScenarioError(f"{where}: step keys are positive integers")
            if not isinstance(entries, dict) or "none" not in entries:
                raise ScenarioError(f"{where}: needs at least a 'none' entry")
            for kind, entry in entries.items():
                if kind not in {k.value for k in FeedbackKind}:
                    raise ScenarioError(f"{where}: unknown feedback kind {kind!r}")
                for item in entry if isinstance(entry, list) else [entry]:
                    _plan_from_entry(item, where)


_GIVE_UP = re.compile(r"give\s*up\s*:?\s*(.*)", re.I | re.S)
_NUMBERING = re.compile(r"^(?:\d+[.)]|[-*])\s+")


def parse_plan_reply(reply: str) -> PlanResult:
    lines = [line.strip() for line in (reply or "").splitlines() if line.strip()]
    if not lines:
        raise PlannerUnavailableError("planner returned an empty reply")
    first = _NUMBERING.sub("", lines[0]).strip("`").strip()
    if first.rstrip(".").upper() == "DONE":
        return PlanResult.done()
    give_up = _GIVE_UP.fullmatch(first)
    if give_up:
        return PlanResult.give_up(give_up.group(1).strip() or "no reason given")
    return PlanResult.of_command(first)


class LlmPlanner:
    def __init__(self, client: LlmClient):
        self.client = client

    def plan(self, context: PlanContext) -> PlanResult:
        request = build_planner_prompt(context.instruction, context.history, context.feedback)
        try:
            reply = self.client.complete(request)
        except TransportError as exc:
            raise PlannerUnavailableError(f"planner model unavailable: {exc}") from exc
        return parse_plan_reply(reply)


def plan_next(
    planner: Planner,
    instruction: str,
    history: Sequence[str] = (),
    feedback: Feedback = NO_FEEDBACK,
    step_index: int = 1,
    replan_attempt: int = 0,
) -> PlanResult:
    context = PlanContext(
        instruction=instruction,
        history=tuple(history),
        feedback=feedback,
        step_index=step_index,
        replan_attempt=replan_attempt,
    )
    return planner.plan(context)


# --- run records -------------------------------------------------------------


class RunState(str, Enum):
    PLANNING = "planning"
    FEASIBILITY_CHECK = "feasibility_check"
    EXECUTING = "executing"
    COMPLETENESS_CHECK = "completeness_check"
    TERMINATED = "terminated"


ALLOWED_TRANSITIONS = {
    RunState.PLANNING: {RunState.FEASIBILITY_CHECK, RunState.EXECUTING, RunState.TERMINATED},
    RunState.FEASIBILITY_CHECK: {RunState.PLANNING, RunState.EXECUTING, RunState.TERMINATED},
    RunState.EXECUTING: {RunState.COMPLETENESS_CHECK, RunState.PLANNING, RunState.TERMINATED},
    RunState.COMPLETENESS_CHECK: {RunState.PLANNING, RunState.TERMINATED},
    RunState.TERMINATED: set(),
}


class EndStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class TerminationReason(str, Enum):
    GOAL_REACHED = "goal_reached"
    PLANNER_DONE = "planner_done"
    PLANNER_GAVE_UP = "planner_gave_up"
    PLANNER_UNAVAILABLE = "planner_unavailable"
    REPLAN_BUDGET_EXHAUSTED = "replan_budget_exhausted"
    STEP_CAP = "step_cap"
    PRIVACY_VIOLATION = "privacy_violation"


class StepRecord(BaseModel):
    """One proposed command and what became of it. Commands are stored redacted."""

    step_index: int
    replan_attempt: int = 0
    command: str
    feasibility_verdict: Optional[GuardVerdict] = None
    executed: bool = False
    blind: bool = False
    grounded_element: Optional[int] = None
    completeness_verdict: Optional[GuardVerdict] = None
    valid: bool = False

    @model_validator(mode="after")
    def _valid_needs_execution(self) -> "StepRecord":
        if self.valid and not self.executed:
            raise ValueError("a valid step must have been executed")
        return self


class TaskReport(BaseModel):
    scenario_id: str
    config_label: str
    valid_steps: int
    total_steps: int
    expert_steps: int
    end_status: EndStatus
    termination_reason: TerminationReason
    warnings: List[str] = Field(default_factory=list)
    planner_calls: int = 0
    total_replans: int = 0
    step_log: List[StepRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _counts(self) -> "TaskReport":
        if self.valid_steps > self.total_steps:
            raise ValueError("valid_steps cannot exceed total_steps")
        return self

    @property
    def success(self) -> bool:
        return self.end_status == EndStatus.SUCCESS

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False)


class TaskRun:
    """Mutable bookkeeping of one run; stage changes go through `advance`."""

    def __init__(self, instruction: str, config: TaskConfig, scenario_id: str = ""):
        self.instruction = instruction
        self.config = config
        self.scenario_id = scenario_id
        self.state = RunState.PLANNING
        self.step_log: List[StepRecord] = []
        self.warnings: List[str] = []
        self.replans_used_this_step = 0
        self.total_replans = 0
        self.planner_calls = 0
        self.step_index = 1
        self.feedback: Feedback = NO_FEEDBACK
        self.history: List[str] = []
        self.end_status: Optional[EndStatus] = None
        self.termination_reason: Optional[TerminationReason] = None

    def can_advance(self, new_state: RunState) -> bool:
        if new_state not in ALLOWED_TRANSITIONS[self.state]:
            return False
        if self.config.feasibility_enabled and (self.state, new_state) == (RunState.PLANNING, RunState.EXECUTING):
            return False
        if self.config.completeness_enabled and self.state == RunState.EXECUTING:
            return new_state == RunState.COMPLETENESS_CHECK
        return True

    def advance(self, new_state: RunState) -> None:
        if not self.can_advance(new_state):
            raise IllegalTransitionError(f"[{self.scenario_id}] {self.state.value} -> {new_state.value}")
        logger.debug(f"[{self.scenario_id}] {self.state.value} -> {new_state.value}")
        self.state = new_state

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            logger.warning(f"⚠️ [{self.scenario_id}] {message}")
            self.warnings.append(message)

    def terminate(self, status: EndStatus, reason: TerminationReason) -> None:
        self.advance(RunState.TERMINATED)
        self.end_status = status
        self.termination_reason = reason
        mark = "🎉" if status == EndStatus.SUCCESS else "❌"
        logger.info(f"{mark} [{self.scenario_id}] Run ended: {status.value} ({reason.value})")

    def replan(self, kind: FeedbackKind, command: str, screen_text: str) -> bool:
        """Ask for another command at this step; False when the budget is spent."""
        if self.replans_used_this_step >= self.config.max_replans:
            self.terminate(EndStatus.FAILURE, TerminationReason.REPLAN_BUDGET_EXHAUSTED)
            return False
        self.replans_used_this_step += 1
        self.total_replans += 1
        self.feedback = Feedback(kind=kind, command=command, screen_text=screen_text)
        logger.info(
            f"🔁 [{self.scenario_id}] Step {self.step_index}: {kind.value}, replanning "
            f"({self.replans_used_this_step}/{self.config.max_replans})"
        )
        self.advance(RunState.PLANNING)
        return True

    def next_step(self) -> None:
        self.step_index += 1
        self.replans_used_this_step = 0
        self.feedback = NO_FEEDBACK
        self.advance(RunState.PLANNING)

    def report(self, expert_steps: int) -> TaskReport:
        executed = [record for record in self.step_log if record.executed]
        return TaskReport(
            scenario_id=self.scenario_id,
            config_label=self.config.label,
            valid_steps=sum(1 for record in executed if record.valid),
            total_steps=len(executed),
            expert_steps=expert_steps,
            end_status=self.end_status or EndStatus.FAILURE,
            termination_reason=self.termination_reason or TerminationReason.STEP_CAP,
            warnings=list(self.warnings),
            planner_calls=self.planner_calls,
            total_replans=self.total_replans,
            step_log=list(self.step_log),
        )


# --- the automaton -----------------------------------------------------------


def _unavailable_verdict(positive: bool, guard, exc: Exception) -> GuardVerdict:
    backend = getattr(guard, "backend", Backend.LLM)
    if backend == Backend.ORACLE:
        backend = Backend.LLM
    return hard_verdict(positive, backend, f"guard-unavailable: {exc}")


class _Runner:
    """Drives one TaskRun against a scenario."""

    def __init__(
        self,
        instruction: str,
        scenario: Scenario,
        config: TaskConfig,
        planner: Planner,
        feasibility: Optional[FeasibilityGuard],
        completeness: Optional[CompletenessGuard],
        memory: PlaceholderMemory,
        grounder: Optional[Grounder],
    ):
        self.scenario = scenario
        self.config = config
        self.planner = planner
        self.feasibility = feasibility
        self.completeness = completeness
        self.memory = memory
        self.grounder = grounder
        self.validity = OracleCompleteness(scenario)
        self.run = TaskRun(instruction, config, scenario.scenario_id)
        self.state: EnvState = initial_state(scenario)

    def _screen_text(self, screen: Screen) -> str:
        return self.memory.mask(serialize_screen(screen))

    def _command_for(self, guard, redacted: str, restored: str) -> str:
        return restored if getattr(guard, "runs_locally", False) else redacted

    def _check_feasibility(self, screen: Screen, redacted: str, restored: str) -> GuardVerdict:
        guard = self.feasibility
        try:
            return guard.predict_feasibility(screen, self._command_for(guard, redacted, restored))
        except GuardUnavailableError as exc:
            self.run.warn(f"feasibility guard failed at step {self.run.step_index}: {exc}")
            return _unavailable_verdict(self.config.feasibility_fail_open, guard, exc)

    def _check_completeness(
        self, before: Optional[Screen], redacted: str, restored: str, after: Screen
    ) -> GuardVerdict:
        guard = self.completeness
        if self.config.after_only_completeness and not getattr(guard, "runs_locally", False):
            before = None
        try:
            return guard.verify_completeness(before, self._command_for(guard, redacted, restored), after)
        except GuardUnavailableError as exc:
            self.run.warn(f"completeness guard failed at step {self.run.step_index}: {exc}")
            return _unavailable_verdict(self.config.completeness_fail_open, guard, exc)

    def _execute(self, restored: str) -> ExecutionOutcome:
        try:
            intent = parse_command(restored)
        except UnparseableCommandError:
            if self.config.blind_mode:
                return blind_click(self.state, self.scenario)
            return ExecutionOutcome(executed=False, resulting_state=self.state)
        return execute(intent, self.state, self.scenario, blind_mode=self.config.blind_mode, grounder=self.grounder)

    def _plan(self) -> Optional[PlanResult]:
        run = self.run
        try:
            plan = plan_next(
                self.planner,
                run.instruction,
                run.history,
                run.feedback,
                step_index=run.step_index,
                replan_attempt=run.replans_used_this_step,
            )
        except PrivacyViolationError as exc:
            run.warn(str(exc))
            run.terminate(EndStatus.FAILURE, TerminationReason.PRIVACY_VIOLATION)
            return None
        except (PlannerUnavailableError, ScenarioError, TransportError) as exc:
            run.warn(f"planner failed at step {run.step_index}: {exc}")
            run.terminate(EndStatus.FAILURE, TerminationReason.PLANNER_UNAVAILABLE)
            return None
        finally:
            run.planner_calls += 1
        if plan.kind == PlanKind.DONE:
            run.terminate(EndStatus.FAILURE, TerminationReason.PLANNER_DONE)
            return None
        if plan.kind == PlanKind.GIVE_UP:
            run.warn(f"planner gave up: {plan.reason}")
            run.terminate(EndStatus.FAILURE, TerminationReason.PLANNER_GAVE_UP)
            return None
        return plan

    def _step(self) -> None:
        """One pass from planning to the next planning (or termination)."""
        run = self.run
        plan = self._plan()
        if plan is None:
            return
        redacted = plan.command.strip()
        restored = restore(redacted, self.memory)
        for name in unknown_placeholders(redacted, self.memory):
            run.warn(f"unknown placeholder {{{name}}} left in place")
        record = StepRecord(step_index=run.step_index, replan_attempt=run.replans_used_this_step, command=redacted)
        before = current_screen(self.state, self.scenario)

        if self.config.feasibility_enabled:
            run.advance(RunState.FEASIBILITY_CHECK)
            try:
                verdict = self._check_feasibility(before, redacted, restored)
            except PrivacyViolationError as exc:
                run.warn(str(exc))
                run.terminate(EndStatus.FAILURE, TerminationReason.PRIVACY_VIOLATION)
                return
            record = record.model_copy(update={"feasibility_verdict": verdict})
            if not verdict.positive:
                run.step_log.append(record)
                logger.info(f"🚫 [{run.scenario_id}] Step {run.step_index} infeasible: {redacted}")
                run.replan(FeedbackKind.INFEASIBLE, redacted, self._screen_text(before))
                return

        run.advance(RunState.EXECUTING)
        try:
            outcome = self._execute(restored)
        except ExecutionError as exc:
            run.warn(f"execution failed at step {run.step_index}: {exc}")
            outcome = ExecutionOutcome(executed=False, resulting_state=self.state)
        self.state = outcome.resulting_state
        after = current_screen(self.state, self.scenario)
        valid = outcome.executed and self.validity.verify_completeness(before, restored, after).positive
        record = record.model_copy(
            update={
                "executed": outcome.executed,
                "blind": outcome.blind,
                "grounded_element": outcome.grounded_element,
                "valid": valid,
            }
        )
        if outcome.executed:
            run.history.append(redacted)
            mark = "✅" if valid else "❌"
            logger.info(f"{mark} [{run.scenario_id}] Step {run.step_index}: {redacted}")
        else:
            logger.info(f"⚠️ [{run.scenario_id}] Step {run.step_index} not executed: {redacted}")

        verdict = None
        if self.config.completeness_enabled:
            run.advance(RunState.COMPLETENESS_CHECK)
            try:
                verdict = self._check_completeness(before, redacted, restored, after)
            except PrivacyViolationError as exc:
                run.step_log.append(record)
                run.warn(str(exc))
                run.terminate(EndStatus.FAILURE, TerminationReason.PRIVACY_VIOLATION)
                return
            record = record.model_copy(update={"completeness_verdict": verdict})
        run.step_log.append(record)

        if goal_reached(self.state, self.scenario):
            run.terminate(EndStatus.SUCCESS, TerminationReason.GOAL_REACHED)
            return
        if verdict is not None and not verdict.positive:
            run.replan(FeedbackKind.INCOMPLETE, redacted, self._screen_text(after))
            return
        run.next_step()

    def run_to_end(self) -> TaskReport:
        run = self.run
        logger.info(f"▶️ [{run.scenario_id}] Starting run ({self.config.label})")
        if goal_reached(self.state, self.scenario):
            run.terminate(EndStatus.SUCCESS, TerminationReason.GOAL_REACHED)
        while run.state != RunState.TERMINATED:
            if run.step_index > self.config.step_cap:
                run.terminate(EndStatus.FAILURE, TerminationReason.STEP_CAP)
                break
            self._step()
        return run.report(self.scenario.expert_steps)


def run_task(
    instruction: str,
    scenario: Scenario,
    config: TaskConfig,
    planner: Optional[Planner] = None,
    feasibility: Optional[FeasibilityGuard] = None,
    completeness: Optional[CompletenessGuard] = None,
    memory: Optional[PlaceholderMemory] = None,
    grounder: Optional[Grounder] = None,
) -> TaskReport:
    """Run one already-redacted instruction to completion.

    Defaults: the scenario's scripted planner for this configuration and
    oracle guards for whichever checks `config` enables.
    """
    if config.feasibility_enabled and feasibility is None:
        feasibility = OracleFeasibility(scenario)
    if config.completeness_enabled and completeness is None:
        completeness = OracleCompleteness(scenario)
    runner = _Runner(
        instruction,
        scenario,
        config,
        planner or ScriptedPlanner(scenario, config.label),
        feasibility,
        completeness,
        memory if memory is not None else PlaceholderMemory(),
        grounder,
    )
    return runner.run_to_end()


class PlaintextPlanner:
    """Fills placeholders in another planner's commands with the real values.

    Scripted plan tables are written against placeholders; with the protector
    off the coordinator works on the real instruction and names real values.
    """

    def __init__(self, inner: Planner, values: PlaceholderMemory):
        self.inner = inner
        self.values = values

    def plan(self, context: PlanContext) -> PlanResult:
        plan = self.inner.plan(context)
        if plan.kind != PlanKind.COMMAND:
            return plan
        return PlanResult.of_command(restore(plan.command, self.values))


def run_instruction(
    raw_instruction: str,
    scenario: Scenario,
    config: TaskConfig,
    memory: Optional[PlaceholderMemory] = None,
    planner: Optional[Planner] = None,
    feasibility: Optional[FeasibilityGuard] = None,
    completeness: Optional[CompletenessGuard] = None,
    grounder: Optional[Grounder] = None,
    detector: Optional[Detector] = None,
    policy: CollisionPolicy = CollisionPolicy.ERROR,
) -> TaskReport:
    """Redact a raw user instruction, then run it.

    With `config.protector_enabled` off the instruction is run as written: the
    planner sees the real values and nothing is stored in `memory`.
    """
    if not config.protector_enabled:
        values = PlaceholderMemory()
        plain, values = redact(raw_instruction, values, detector, CollisionPolicy.SUFFIX)
        planner = PlaintextPlanner(planner or ScriptedPlanner(scenario, config.label), values)
        logger.info(f"🔓 [{scenario.scenario_id}] Security protector off: planning on the real instruction")
        plain = restore(plain, values)
        return run_task(plain, scenario, config, planner, feasibility, completeness, None, grounder)
    memory = memory if memory is not None else PlaceholderMemory()
    redacted, memory = redact(raw_instruction, memory, detector, policy)
    report = run_task(redacted, scenario, config, planner, feasibility, completeness, memory, grounder)
    unknown = [f"unknown placeholder {{{name}}} in instruction" for name in unknown_placeholders(redacted, memory)]
    if unknown:
        report = report.model_copy(update={"warnings": unknown + report.warnings})
    return report
