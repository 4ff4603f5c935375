import pytest
from tenacity import wait_none

from taskguard import output_codec
from taskguard.errors import GuardUnavailableError, ScenarioError, TransientTransportError
from taskguard.guards import (
    NEGATIVE_SCORE,
    POSITIVE_SCORE,
    AdapterGuard,
    Backend,
    GuardVerdict,
    Label,
    LlmCompletenessVerifier,
    LlmFeasibilityPredictor,
    OracleCompleteness,
    OracleFeasibility,
    build_guard,
    verdict_from_reply,
)
from taskguard.llm_client import LlmClient
from taskguard.output_codec import ResultKind
from taskguard.sim_env import Action, apply, current_screen, initial_state

from .conftest import CapturingTransport, FlakyTransport


def test_verdict_score_must_agree_with_label():
    with pytest.raises(ValueError):
        GuardVerdict(label=Label.POSITIVE, score=0.2, backend=Backend.LLM)
    with pytest.raises(ValueError):
        GuardVerdict(label=Label.POSITIVE, score=0.9, backend=Backend.ORACLE)


def test_oracle_feasibility(bbc_screen):
    oracle = OracleFeasibility()
    assert oracle.predict_feasibility(bbc_screen, "select the Sport item").score == 1.0
    assert oracle.predict_feasibility(bbc_screen, "select the Tennis item").score == 0.0
    assert not oracle.predict_feasibility(bbc_screen, "make me a sandwich").positive


def test_oracle_scroll_until_sees_hidden_elements(search_scenario):
    screen = current_screen(initial_state(search_scenario), search_scenario)
    with_scenario = OracleFeasibility(search_scenario)
    assert with_scenario.predict_feasibility(screen, "scroll until Tennis").positive
    assert not with_scenario.predict_feasibility(screen, "scroll until Cricket").positive
    assert not OracleFeasibility().predict_feasibility(screen, "scroll until Tennis").positive


def test_oracle_completeness(search_scenario):
    oracle = OracleCompleteness(search_scenario)
    state = initial_state(search_scenario)
    before = current_screen(state, search_scenario)
    after_go = current_screen(apply(state, Action.click(2), search_scenario), search_scenario)
    assert oracle.verify_completeness(before, "select the Go item", after_go).positive
    assert not oracle.verify_completeness(before, "select the Help item", before).positive
    typed = current_screen(apply(state, Action.type_text(1, "gloves"), search_scenario), search_scenario)
    assert oracle.verify_completeness(before, "enter gloves into Search", typed).positive
    assert not oracle.verify_completeness(before, "enter mittens into Search", typed).positive
    with pytest.raises(GuardUnavailableError):
        oracle.verify_completeness(None, "select the Go item", after_go)


@pytest.mark.parametrize(
    "reply, kind, positive",
    [
        ("<s_feasibility> 1 </s_feasibility>", ResultKind.FEASIBILITY, True),
        ("Sure. <s_feasibility> 0 </s_feasibility>", ResultKind.FEASIBILITY, False),
        ("The command is infeasible here.", ResultKind.FEASIBILITY, False),
        ("Feasible", ResultKind.FEASIBILITY, True),
        ("incomplete: nothing changed", ResultKind.COMPLETENESS, False),
        ("1", ResultKind.COMPLETENESS, True),
        ("I cannot tell.", ResultKind.COMPLETENESS, False),
    ],
)
def test_verdict_from_reply(reply, kind, positive):
    verdict = verdict_from_reply(reply, kind)
    assert verdict.positive is positive
    assert verdict.score == (POSITIVE_SCORE if positive else NEGATIVE_SCORE)


def test_unparseable_reply_is_flagged():
    verdict = verdict_from_reply("I cannot tell.", ResultKind.FEASIBILITY)
    assert verdict.rationale.startswith("guard-parse")


def test_llm_feasibility_masks_screen(bbc_screen):
    transport = CapturingTransport(reply="<s_feasibility> 1 </s_feasibility>")
    predictor = LlmFeasibilityPredictor(LlmClient(transport), mask=lambda t: t.replace("Weather", "{w}"))
    assert predictor.predict_feasibility(bbc_screen, "select the Sport item").positive
    query = transport.requests[0].turns[-1].content
    assert "{w}" in query and "Weather" not in query
    assert query.endswith("Command: select the Sport item")


def test_llm_completeness_after_only(bbc_screen):
    transport = CapturingTransport(reply="<s_completeness> 0 </s_completeness>")
    verifier = LlmCompletenessVerifier(LlmClient(transport), after_only=True)
    assert not verifier.verify_completeness(bbc_screen, "select the Sport item", bbc_screen).positive
    assert "Screen before execution" not in transport.requests[0].turns[-1].content


def test_llm_guard_unavailable(bbc_screen):
    client = LlmClient(FlakyTransport(5, TransientTransportError("503")), retry_wait=wait_none())
    with pytest.raises(GuardUnavailableError):
        LlmFeasibilityPredictor(client).predict_feasibility(bbc_screen, "select the Sport item")


def test_adapter_guard(bbc_screen):
    payloads = []

    def poster(payload):
        payloads.append(payload)
        return output_codec.emit(output_codec.completeness(1))

    guard = AdapterGuard(poster)
    assert guard.verify_completeness(bbc_screen, "select the Sport item", bbc_screen).backend == Backend.ADAPTER
    assert set(payloads[0]) == {"before", "command", "after"}
    assert not guard.predict_feasibility(bbc_screen, "select the Sport item").positive


def test_build_guard():
    assert build_guard("off", "feasibility") is None
    assert isinstance(build_guard("oracle", "feasibility"), OracleFeasibility)
    with pytest.raises(ScenarioError):
        build_guard("oracle", "completeness")
    with pytest.raises(ValueError):
        build_guard("llm", "feasibility")
    with pytest.raises(ValueError):
        build_guard("psychic", "feasibility")
