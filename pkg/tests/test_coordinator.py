import copy
import random

import pytest

from taskguard.config import ABLATION_CONFIGS, TaskConfig
from taskguard.coordinator import (
    LlmPlanner,
    PlanKind,
    PlanResult,
    RunState,
    ScriptedPlanner,
    TaskRun,
    TerminationReason,
    parse_plan_reply,
    plan_next,
    run_instruction,
    run_task,
    validate_scripted_plans,
)
from taskguard.errors import (
    GuardUnavailableError,
    IllegalTransitionError,
    PlannerUnavailableError,
    ScenarioError,
)
from taskguard.guards import Backend, hard_verdict
from taskguard.llm_client import Feedback, FeedbackKind, LlmClient, build_planner_prompt
from taskguard.privacy import OutboundFilter, PlaceholderMemory
from taskguard.sim_env import load_bundled_scenarios, page_captions, scenario_from_json

from .conftest import SEARCH_SCENARIO, CapturingTransport


class RecordingPlanner:
    """Wraps another planner and keeps every context it was asked about."""

    def __init__(self, inner):
        self.inner = inner
        self.contexts = []

    def plan(self, context):
        self.contexts.append(context)
        return self.inner.plan(context)


class RepeatPlanner:
    def __init__(self, *plans):
        self.plans = list(plans)
        self.calls = 0

    def plan(self, context):
        plan = self.plans[min(self.calls, len(self.plans) - 1)]
        self.calls += 1
        if isinstance(plan, Exception):
            raise plan
        return plan if isinstance(plan, PlanResult) else PlanResult.of_command(plan)


class UnavailableGuard:
    backend = Backend.LLM
    runs_locally = False

    def predict_feasibility(self, screen, command):
        raise GuardUnavailableError("endpoint down")


class SpyCompleteness:
    backend = Backend.LLM

    def __init__(self, runs_locally=False):
        self.runs_locally = runs_locally
        self.before_screens = []

    def verify_completeness(self, before, command, after):
        self.before_screens.append(before)
        return hard_verdict(True, self.backend)


def _cases():
    return [(s, label) for s in load_bundled_scenarios() for label in sorted(s.expected)]


# (valid, total, success) per configuration for every bundled task.
CASE_STUDY_PROGRESS = {
    "no1": {"baseline": (4, 4, True), "fea": (4, 4, True), "fea_com": (4, 4, True)},
    "no2": {"baseline": (4, 4, True), "fea": (4, 4, True), "fea_com": (4, 4, True)},
    "no3": {"baseline": (3, 3, True), "fea": (3, 3, True), "fea_com": (3, 3, True)},
    "no4": {"baseline": (1, 3, False), "fea": (3, 3, True), "fea_com": (3, 3, True)},
    "no5": {"baseline": (2, 3, False), "fea": (3, 3, True), "fea_com": (3, 3, True)},
    "no6": {"baseline": (2, 5, False), "fea": (4, 4, True), "fea_com": (4, 5, True)},
    "no7": {"baseline": (5, 6, False), "fea": (6, 6, True), "fea_com": (6, 6, True)},
    "no8": {"baseline": (4, 6, False), "fea": (6, 6, True), "fea_com": (6, 6, True)},
    "no9": {"baseline": (4, 7, False), "fea": (5, 5, False), "fea_com": (9, 9, True)},
    "no10": {"baseline": (2, 6, False), "fea": (3, 3, False), "fea_com": (6, 7, True)},
    "no11": {"baseline": (3, 6, False), "fea": (3, 3, False), "fea_com": (3, 3, False)},
    "no12": {"baseline": (5, 7, False), "fea": (6, 6, False), "fea_com": (6, 6, False)},
}
TRACKS = ("baseline", "fea", "fea_com")


def _progress(scenario):
    reports = {
        label: run_instruction(scenario.instruction, scenario, ABLATION_CONFIGS[label], memory=PlaceholderMemory())
        for label in TRACKS
    }
    return {label: (r.valid_steps, r.total_steps, r.success) for label, r in reports.items()}


@pytest.mark.parametrize("scenario, label", _cases(), ids=lambda v: getattr(v, "scenario_id", v))
def test_bundled_scenarios_replay_exactly(scenario, label):
    report = run_instruction(scenario.instruction, scenario, ABLATION_CONFIGS[label], memory=PlaceholderMemory())
    expected = scenario.expected[label]
    assert (report.valid_steps, report.total_steps, report.success) == (expected.valid, expected.total, expected.success)
    assert report.termination_reason.value == expected.reason


def test_no9_progress(scenario_by_id):
    no9 = scenario_by_id["no9"]
    baseline = run_task(no9.instruction, no9, ABLATION_CONFIGS["baseline"])
    fea = run_task(no9.instruction, no9, ABLATION_CONFIGS["fea"])
    fea_com = run_task(no9.instruction, no9, ABLATION_CONFIGS["fea_com"])
    assert (baseline.valid_steps, baseline.total_steps) == (4, 7)
    assert fea.termination_reason == TerminationReason.REPLAN_BUDGET_EXHAUSTED
    assert fea_com.success and fea_com.valid_steps == fea_com.expert_steps == 9
    assert baseline.valid_steps <= fea.valid_steps <= fea_com.valid_steps


def test_case_study_table_covers_every_bundled_task(bundled_scenarios):
    assert sorted(s.scenario_id for s in bundled_scenarios) == sorted(CASE_STUDY_PROGRESS)


@pytest.mark.parametrize("scenario", load_bundled_scenarios(), ids=lambda s: s.scenario_id)
def test_guards_never_lose_progress(scenario):
    progress = _progress(scenario)
    assert progress == CASE_STUDY_PROGRESS[scenario.scenario_id]
    assert progress["fea"][0] >= progress["baseline"][0]
    success = [progress[label][2] for label in TRACKS]
    assert success == sorted(success)


@pytest.mark.parametrize("label", TRACKS)
@pytest.mark.parametrize("scenario_id", ["no7", "no10"])
def test_protector_does_not_change_progress(scenario_by_id, scenario_id, label):
    scenario = scenario_by_id[scenario_id]
    memory = PlaceholderMemory()
    protected = run_instruction(scenario.instruction, scenario, ABLATION_CONFIGS[label], memory=memory)
    plain_config = ABLATION_CONFIGS[label].model_copy(update={"protector_enabled": False})
    plain = run_instruction(scenario.instruction, scenario, plain_config)
    assert len(memory) == 2
    assert (protected.valid_steps, protected.total_steps, protected.success) == (
        plain.valid_steps,
        plain.total_steps,
        plain.success,
    )


def test_no10_secrets_with_and_without_protector(scenario_by_id):
    no10 = scenario_by_id["no10"]
    memory = PlaceholderMemory()
    protected = run_instruction(no10.instruction, no10, ABLATION_CONFIGS["fea_com"], memory=memory)
    assert memory.entries == {"card_num": "4111 1111 1111 1111", "web_url": "costco.com/account"}
    commands = [record.command for record in protected.step_log]
    assert "enter {card_num} into Card Number" in commands
    assert not any("4111 1111 1111 1111" in command for command in commands)

    untouched = PlaceholderMemory()
    plain_config = ABLATION_CONFIGS["fea_com"].model_copy(update={"protector_enabled": False})
    plain = run_instruction(no10.instruction, no10, plain_config, memory=untouched)
    commands = [record.command for record in plain.step_log]
    assert "enter 4111 1111 1111 1111 into Card Number" in commands
    assert "enter costco.com/account into Address and search bar" in commands
    assert len(untouched) == 0


@pytest.mark.parametrize("runs_locally", [False, True])
def test_after_only_completeness_drops_the_before_screen(search_scenario, runs_locally):
    verifier = SpyCompleteness(runs_locally)
    config = TaskConfig(completeness_enabled=True, after_only_completeness=True)
    planner = RepeatPlanner("enter gloves into Search")
    report = run_task("x", search_scenario, config, planner=planner, completeness=verifier)
    assert report.success and len(verifier.before_screens) == 1
    assert (verifier.before_screens[0] is None) is not runs_locally


def test_completeness_sees_the_before_screen_by_default(search_scenario):
    verifier = SpyCompleteness()
    config = TaskConfig(completeness_enabled=True)
    run_task("x", search_scenario, config, planner=RepeatPlanner("enter gloves into Search"), completeness=verifier)
    assert verifier.before_screens and verifier.before_screens[0] is not None


def test_typed_value_goal(search_scenario):
    report = run_task("Search for gloves.", search_scenario, TaskConfig())
    assert report.success and report.termination_reason == TerminationReason.GOAL_REACHED
    assert (report.valid_steps, report.total_steps, report.planner_calls) == (1, 1, 1)


def test_planner_done_is_a_failure(search_scenario):
    report = run_task("x", search_scenario, TaskConfig(), planner=RepeatPlanner(PlanResult.done()))
    assert not report.success
    assert report.termination_reason == TerminationReason.PLANNER_DONE


def test_planner_gave_up(search_scenario):
    report = run_task("x", search_scenario, TaskConfig(), planner=RepeatPlanner(PlanResult.give_up("no search box")))
    assert report.termination_reason == TerminationReason.PLANNER_GAVE_UP
    assert any("no search box" in w for w in report.warnings)


def test_planner_unavailable(search_scenario):
    planner = RepeatPlanner(PlannerUnavailableError("timeout"))
    report = run_task("x", search_scenario, TaskConfig(), planner=planner)
    assert report.termination_reason == TerminationReason.PLANNER_UNAVAILABLE
    assert report.planner_calls == 1


@pytest.mark.parametrize("max_replans", [0, 1, 3])
def test_replan_budget(search_scenario, max_replans):
    config = TaskConfig(feasibility_enabled=True, max_replans=max_replans)
    report = run_task("x", search_scenario, config, planner=RepeatPlanner("select the Cart item"))
    assert report.termination_reason == TerminationReason.REPLAN_BUDGET_EXHAUSTED
    assert report.planner_calls == max_replans + 1
    assert report.total_replans == max_replans
    assert report.total_steps == 0
    assert len(report.step_log) == max_replans + 1


def test_replan_recovers(search_scenario):
    config = TaskConfig(feasibility_enabled=True, max_replans=1)
    planner = RecordingPlanner(RepeatPlanner("select the Cart item", "enter gloves into Search"))
    report = run_task("x", search_scenario, config, planner=planner)
    assert report.success
    assert [c.feedback.kind for c in planner.contexts] == [FeedbackKind.NONE, FeedbackKind.INFEASIBLE]
    assert planner.contexts[1].replan_attempt == 1
    assert planner.contexts[1].feedback.command == "select the Cart item"


def test_step_cap(search_scenario):
    report = run_task("x", search_scenario, TaskConfig(step_cap=4), planner=RepeatPlanner("select the Help item"))
    assert report.termination_reason == TerminationReason.STEP_CAP
    assert (report.valid_steps, report.total_steps, report.planner_calls) == (0, 4, 4)


def test_incomplete_step_is_replanned_with_screen(search_scenario):
    config = TaskConfig(completeness_enabled=True, max_replans=1)
    planner = RecordingPlanner(RepeatPlanner("select the Help item", "enter gloves into Search"))
    report = run_task("x", search_scenario, config, planner=planner)
    assert report.success and report.total_replans == 1
    feedback = planner.contexts[1].feedback
    assert feedback.kind == FeedbackKind.INCOMPLETE
    assert "location: [" in feedback.screen_text
    assert not report.step_log[0].completeness_verdict.positive


def test_unknown_placeholder_is_left_and_warned(search_scenario):
    report = run_task("x", search_scenario, TaskConfig(step_cap=1), planner=RepeatPlanner("enter {pin} into Search"))
    assert "unknown placeholder {pin} left in place" in report.warnings
    assert report.step_log[0].executed and not report.success


def test_unavailable_guard_fails_closed_by_default(search_scenario):
    config = TaskConfig(feasibility_enabled=True, max_replans=0)
    report = run_task("x", search_scenario, config, feasibility=UnavailableGuard())
    assert report.termination_reason == TerminationReason.REPLAN_BUDGET_EXHAUSTED
    assert any("feasibility guard failed" in w for w in report.warnings)
    assert report.step_log[0].feasibility_verdict.rationale.startswith("guard-unavailable")


def test_unavailable_guard_fail_open(search_scenario):
    config = TaskConfig(feasibility_enabled=True, feasibility_fail_open=True)
    report = run_task("x", search_scenario, config, feasibility=UnavailableGuard())
    assert report.success
    assert len(report.warnings) == 1


def test_outbound_secret_stops_the_run(search_scenario):
    memory = PlaceholderMemory({"password": "hunter22"})
    transport = CapturingTransport(reply="enter gloves into Search")
    planner = LlmPlanner(LlmClient(transport, outbound_filter=OutboundFilter(memory)))
    report = run_task("type hunter22 please", search_scenario, TaskConfig(), planner=planner, memory=memory)
    assert report.termination_reason == TerminationReason.PRIVACY_VIOLATION
    assert transport.requests == []


def test_llm_planner_drives_a_run(search_scenario):
    transport = CapturingTransport(reply="1. enter gloves into Search\n")
    report = run_task("Search for gloves.", search_scenario, TaskConfig(), planner=LlmPlanner(LlmClient(transport)))
    assert report.success
    assert transport.requests[0].turns[-1].content.startswith("Instruction: Search for gloves.")


def test_no7_secrets_stay_local(scenario_by_id):
    no7 = scenario_by_id["no7"]
    memory = PlaceholderMemory()
    report = run_instruction(no7.instruction, no7, ABLATION_CONFIGS["fea"], memory=memory)
    assert report.success
    assert memory.entries == {"username": "alice.w", "password": "s3cret!9"}
    assert "enter {password} into Password" in [r.command for r in report.step_log]
    assert "s3cret!9" not in report.to_json() and "alice.w" not in report.to_json()


@pytest.mark.parametrize(
    "reply, kind, command",
    [
        ("select the Go item", PlanKind.COMMAND, "select the Go item"),
        ("1. select the Go item\n2. select the Help item", PlanKind.COMMAND, "select the Go item"),
        ("`select the Go item`", PlanKind.COMMAND, "select the Go item"),
        ("DONE.", PlanKind.DONE, None),
        ("give up: there is no cart", PlanKind.GIVE_UP, None),
    ],
)
def test_parse_plan_reply(reply, kind, command):
    plan = parse_plan_reply(reply)
    assert plan.kind == kind
    assert plan.command == command


def test_empty_plan_reply():
    with pytest.raises(PlannerUnavailableError):
        parse_plan_reply("  \n ")


def test_scripted_planner_list_entries_follow_replan_attempt():
    raw = copy.deepcopy(SEARCH_SCENARIO)
    raw["scripted_plans"] = {"default": {"1": {"none": "select the Cart item", "infeasible": ["a", "b"]}}}
    planner = ScriptedPlanner(scenario_from_json(raw))
    feedback = Feedback(kind=FeedbackKind.INFEASIBLE, command="x", screen_text="{}")
    assert plan_next(planner, "x").command == "select the Cart item"
    assert plan_next(planner, "x", feedback=feedback, replan_attempt=1).command == "a"
    assert plan_next(planner, "x", feedback=feedback, replan_attempt=2).command == "b"
    assert plan_next(planner, "x", feedback=feedback, replan_attempt=5).command == "b"


def test_scripted_planner_missing_step_is_reported(search_scenario):
    empty = search_scenario.model_copy(update={"scripted_plans": {"default": {}}})
    report = run_task("x", search_scenario, TaskConfig(), planner=ScriptedPlanner(empty))
    assert report.termination_reason == TerminationReason.PLANNER_UNAVAILABLE


def test_validate_scripted_plans(bundled_scenarios):
    for scenario in bundled_scenarios:
        validate_scripted_plans(scenario)
    raw = copy.deepcopy(SEARCH_SCENARIO)
    raw["scripted_plans"] = {"default": {"1": {"infeasible": "select the Go item"}}}
    with pytest.raises(ScenarioError):
        validate_scripted_plans(scenario_from_json(raw))
    raw["scripted_plans"] = {"default": {"one": {"none": "select the Go item"}}}
    with pytest.raises(ScenarioError):
        validate_scripted_plans(scenario_from_json(raw))


def test_illegal_transition():
    run = TaskRun("x", TaskConfig(feasibility_enabled=True))
    with pytest.raises(IllegalTransitionError):
        run.advance(RunState.EXECUTING)
    run.advance(RunState.FEASIBILITY_CHECK)
    run.advance(RunState.EXECUTING)
    completeness_run = TaskRun("x", TaskConfig(completeness_enabled=True))
    completeness_run.advance(RunState.EXECUTING)
    with pytest.raises(IllegalTransitionError):
        completeness_run.advance(RunState.PLANNING)


@pytest.mark.parametrize("label", ["baseline", "fea", "fea_com"])
def test_screen_reaches_planner_only_with_feedback(bundled_scenarios, label):
    for scenario in bundled_scenarios:
        planner = RecordingPlanner(ScriptedPlanner(scenario, label))
        run_instruction(scenario.instruction, scenario, ABLATION_CONFIGS[label], planner=planner)
        assert planner.contexts
        for context in planner.contexts:
            query = build_planner_prompt(context.instruction, context.history, context.feedback).turns[-1].content
            assert ("location: [" in query) == (context.feedback.kind != FeedbackKind.NONE)


class RandomPlanner:
    def __init__(self, rng, captions):
        self.rng = rng
        self.captions = captions

    def plan(self, context):
        roll = self.rng.random()
        if roll < 0.05:
            return PlanResult.done()
        if roll < 0.08:
            return PlanResult.of_command("dance wildly")
        caption = self.rng.choice(self.captions)
        verb = self.rng.choice(["select the {} item", "scroll until {}", "click the item to the right of {}"])
        if roll < 0.2:
            return PlanResult.of_command(f"enter hello into {caption}")
        return PlanResult.of_command(verb.format(caption))


def test_random_runs_respect_budgets(bundled_scenarios):
    rng = random.Random(99)
    for _ in range(100):
        scenario = rng.choice(bundled_scenarios)
        captions = sorted({c for page in scenario.pages for c in page_captions(scenario, page)})
        config = TaskConfig(
            feasibility_enabled=rng.random() < 0.5,
            completeness_enabled=rng.random() < 0.5,
            max_replans=rng.randint(0, 3),
            step_cap=rng.randint(1, 10),
            blind_mode=rng.random() < 0.5,
        )
        report = run_task(scenario.instruction, scenario, config, planner=RandomPlanner(rng, captions))
        assert report.planner_calls <= config.step_cap * (1 + config.max_replans)
        assert report.valid_steps <= report.total_steps <= report.planner_calls
        assert report.success == (report.termination_reason == TerminationReason.GOAL_REACHED)
