"""Command-line entry point.

    taskguard run --scenario no9.json --feasibility oracle --completeness oracle
    taskguard gen-corpus --scenario-dir taskguard/scenarios --out corpus.jsonl --seed 7
    taskguard eval --corpus corpus.jsonl --backend oracle --sample 5000
    taskguard replay --all

Exit codes: 0 success, 1 task failure, 2 input error, 3 privacy violation.
Nothing touches the network unless `--transport live` is given.
"""

import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from absl import app, flags

from . import config
from .config import TaskConfig, read_config_file
from .coordinator import LlmPlanner, ScriptedPlanner, TerminationReason, run_instruction, validate_scripted_plans
from .corpus import generate_from_html_dir, generate_from_scenarios, inject_label_noise, write_jsonl
from .errors import (
    CorpusGenerationError,
    MemoryFileError,
    MetricsInputError,
    PlaceholderCollisionError,
    PrivacyViolationError,
    ScenarioError,
    ScreenValidationError,
    TaskGuardError,
)
from .evaluation import evaluate_predictor, expected_mismatches, progress_row, progress_table, replay_all
from .guards import GUARD_KINDS, build_guard
from .llm_client import AdapterEndpoint, LlmClient, build_transport, requests_poster
from .privacy import CollisionPolicy, OutboundFilter, PlaceholderMemory
from .sim_env import load_bundled_scenarios, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TASK_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_PRIVACY_VIOLATION = 3

SUBCOMMANDS = ("run", "gen-corpus", "eval", "replay")

FLAGS = flags.FLAGS

flags.DEFINE_string("config", None, "key=value file merged under explicit flags.")
flags.DEFINE_string("log_level", config.LOG_LEVEL, "Logging level.")
flags.DEFINE_integer("jobs", 1, "Worker threads for gen-corpus and eval.")

# run
flags.DEFINE_string("scenario", None, "Scenario fixture (path, or a bundled id such as no9).")
flags.DEFINE_enum("feasibility", "off", list(GUARD_KINDS), "Feasibility predictor backend.")
flags.DEFINE_enum("completeness", "off", list(GUARD_KINDS), "Completeness verifier backend.")
flags.DEFINE_enum("planner", "scripted", ["scripted", "llm"], "Coordinator.")
flags.DEFINE_integer("max_replans", config.MAX_REPLANS, "Replanning attempts per step.")
flags.DEFINE_integer("step_cap", config.STEP_CAP, "Global cap on planned steps.")
flags.DEFINE_bool("blind_mode", False, "Click a fallback element when grounding fails.")
flags.DEFINE_string("memory_file", config.MEMORY_FILE, "Placeholder memory file.")
flags.DEFINE_string("transport", None, "Model transport: live or fixtures:DIR.")
flags.DEFINE_string("instruction", None, "Raw instruction; defaults to the scenario's own.")
flags.DEFINE_bool("completeness_after_only", False, "Completeness verifier sees only the after-screen.")
flags.DEFINE_bool("fail_open_feasibility", False, "Treat an unavailable feasibility guard as feasible.")
flags.DEFINE_integer("max_in_flight", config.MAX_IN_FLIGHT, "Concurrent model requests.")
flags.DEFINE_enum("collision_policy", "error", [p.value for p in CollisionPolicy], "Placeholder name collisions.")
flags.DEFINE_string("adapter_url", config.ADAPTER_URL, "Endpoint of the external guard model.")
flags.DEFINE_bool("protector", True, "Redact secrets into local placeholders (--noprotector disables).")

# gen-corpus
flags.DEFINE_string("html_dir", None, "Directory of HTML pages.")
flags.DEFINE_string("scenario_dir", None, "Directory of scenario fixtures.")
flags.DEFINE_string("out", None, "Output JSONL file.")
flags.DEFINE_integer("n_pos", 50, "Positive samples per page (per scenario for completeness).")
flags.DEFINE_integer("n_neg", 50, "Negative samples per page (per scenario for completeness).")
flags.DEFINE_integer("seed", 0, "Random seed.")
flags.DEFINE_float("noise", 0.0, "Label flip probability.")

# eval / replay
flags.DEFINE_string("corpus", None, "Corpus JSONL file.")
flags.DEFINE_enum("backend", "oracle", ["oracle", "llm", "adapter"], "Guard backend to evaluate.")
flags.DEFINE_integer("sample", None, "Evaluate a seeded subsample of this size.")
flags.DEFINE_bool("all", False, "Replay every bundled scenario.")


def normalize_argv(argv: Sequence[str]) -> List[str]:
    """Accept `--max-replans` as well as `--max_replans`."""
    normalized = []
    for arg in argv:
        if arg.startswith("--") and len(arg) > 2:
            name, sep, value = arg[2:].partition("=")
            arg = "--" + name.replace("-", "_") + sep + value
        normalized.append(arg)
    return normalized


def merge_config_file() -> None:
    if FLAGS.config and not Path(FLAGS.config).is_file():
        raise app.UsageError(f"config file {FLAGS.config!r} not found")
    for key, value in read_config_file(FLAGS.config).items():
        if key not in FLAGS:
            raise app.UsageError(f"unknown key {key!r} in {FLAGS.config}")
        if not FLAGS[key].present:
            FLAGS[key].parse(value)


def _resolve_scenario_path(value: str) -> Path:
    path = Path(value)
    if path.exists():
        return path
    bundled = config.SCENARIO_DIR / (value if value.endswith(".json") else f"{value}.json")
    if bundled.exists():
        return bundled
    raise app.UsageError(f"scenario {value!r} not found")


def _client(memory: Optional[PlaceholderMemory]) -> Optional[LlmClient]:
    if not FLAGS.transport:
        return None
    try:
        transport = build_transport(FLAGS.transport)
    except ValueError as exc:
        raise app.UsageError(str(exc)) from exc
    return LlmClient(transport, OutboundFilter(memory), max_in_flight=FLAGS.max_in_flight)


def _poster(memory: Optional[PlaceholderMemory]):
    return AdapterEndpoint(requests_poster(FLAGS.adapter_url), OutboundFilter(memory))


def _check_remote_backends(kinds: Sequence[str]) -> None:
    if "llm" in kinds and not FLAGS.transport:
        raise app.UsageError("llm backends need --transport live or --transport fixtures:DIR")
    if "adapter" in kinds and FLAGS.transport != "live":
        raise app.UsageError("the adapter backend calls a remote endpoint; pass --transport live")


def cmd_run() -> int:
    if not FLAGS.scenario:
        raise app.UsageError("run needs --scenario")
    _check_remote_backends([FLAGS.feasibility, FLAGS.completeness, FLAGS.planner])
    if FLAGS.max_replans < 0 or FLAGS.step_cap < 1:
        raise app.UsageError("--max-replans must be >= 0 and --step-cap >= 1")
    if FLAGS.blind_mode and FLAGS.feasibility != "off":
        logger.warning("⚠️ --blind-mode with a feasibility guard: blind clicks only follow approved commands")

    scenario = load_scenario(_resolve_scenario_path(FLAGS.scenario))
    if FLAGS.planner == "scripted":
        validate_scripted_plans(scenario)
    task_config = TaskConfig(
        feasibility_enabled=FLAGS.feasibility != "off",
        completeness_enabled=FLAGS.completeness != "off",
        max_replans=FLAGS.max_replans,
        step_cap=FLAGS.step_cap,
        blind_mode=FLAGS.blind_mode,
        after_only_completeness=FLAGS.completeness_after_only,
        feasibility_fail_open=FLAGS.fail_open_feasibility,
        protector_enabled=FLAGS.protector,
    )
    if FLAGS.protector:
        memory = PlaceholderMemory.load(FLAGS.memory_file)
    else:
        logger.warning("⚠️ --noprotector: secrets are sent to the coordinator as written")
        memory = PlaceholderMemory()
    client = _client(memory if FLAGS.protector else None)
    poster = _poster(memory) if "adapter" in (FLAGS.feasibility, FLAGS.completeness) else None
    guards = {
        role: build_guard(
            kind,
            role,
            scenario=scenario,
            client=client,
            poster=poster,
            mask=memory.mask,
            after_only=FLAGS.completeness_after_only,
        )
        for role, kind in (("feasibility", FLAGS.feasibility), ("completeness", FLAGS.completeness))
    }
    planner = LlmPlanner(client) if FLAGS.planner == "llm" else ScriptedPlanner(scenario, task_config.label)

    report = run_instruction(
        FLAGS.instruction or scenario.instruction,
        scenario,
        task_config,
        memory=memory,
        planner=planner,
        feasibility=guards["feasibility"],
        completeness=guards["completeness"],
        policy=CollisionPolicy(FLAGS.collision_policy),
    )
    print(report.to_json())
    logger.info(f"{'✅' if report.success else '❌'} {scenario.scenario_id} {task_config.label}: {progress_row(report)}")
    if report.termination_reason == TerminationReason.PRIVACY_VIOLATION:
        return EXIT_PRIVACY_VIOLATION
    return EXIT_OK if report.success else EXIT_TASK_FAILURE


def cmd_gen_corpus() -> int:
    if bool(FLAGS.html_dir) == bool(FLAGS.scenario_dir):
        raise app.UsageError("gen-corpus needs exactly one of --html-dir and --scenario-dir")
    if not FLAGS.out:
        raise app.UsageError("gen-corpus needs --out")
    if FLAGS.n_pos < 0 or FLAGS.n_neg < 0 or FLAGS.n_pos + FLAGS.n_neg == 0:
        raise app.UsageError("--n-pos and --n-neg must be >= 0 and not both 0")
    if not 0.0 <= FLAGS.noise <= 1.0:
        raise app.UsageError("--noise must lie in [0, 1]")
    if FLAGS.html_dir:
        samples = generate_from_html_dir(FLAGS.html_dir, FLAGS.n_pos, FLAGS.n_neg, FLAGS.seed, FLAGS.jobs)
    else:
        scenarios = load_bundled_scenarios(FLAGS.scenario_dir)
        if not scenarios:
            raise app.UsageError(f"no scenario fixtures in {FLAGS.scenario_dir}")
        samples = generate_from_scenarios(scenarios, FLAGS.n_pos, FLAGS.n_neg, FLAGS.seed, FLAGS.jobs)
    if FLAGS.noise:
        samples = inject_label_noise(samples, FLAGS.noise, FLAGS.seed)
    write_jsonl(samples, FLAGS.out)
    return EXIT_OK


def cmd_eval() -> int:
    if not FLAGS.corpus:
        raise app.UsageError("eval needs --corpus")
    _check_remote_backends([FLAGS.backend])
    client = _client(None)
    poster = _poster(None) if FLAGS.backend == "adapter" else None
    report = evaluate_predictor(
        FLAGS.corpus,
        backend=FLAGS.backend,
        sample=FLAGS.sample,
        seed=FLAGS.seed,
        client=client,
        poster=poster,
        jobs=FLAGS.jobs,
    )
    print(report.to_json())
    return EXIT_OK


def cmd_replay() -> int:
    if FLAGS.all == bool(FLAGS.scenario):
        raise app.UsageError("replay needs exactly one of --all and --scenario")
    if FLAGS.all:
        scenarios = load_bundled_scenarios(FLAGS.scenario_dir)
    else:
        scenarios = [load_scenario(_resolve_scenario_path(FLAGS.scenario))]
    rows, mismatches = replay_all(scenarios)
    print(progress_table(rows))
    for line in mismatches:
        print(f"mismatch: {line}")
    return EXIT_TASK_FAILURE if mismatches else EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "gen-corpus": cmd_gen_corpus,
    "eval": cmd_eval,
    "replay": cmd_replay,
}


def main(argv: Sequence[str]) -> int:
    """Dispatch `argv[1]`; flags are already parsed."""
    try:
        merge_config_file()
    except (app.UsageError, flags.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    logging.basicConfig(
        level=FLAGS.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    if len(argv) != 2 or argv[1] not in COMMANDS:
        print(f"usage: taskguard {{{'|'.join(SUBCOMMANDS)}}} [flags]", file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        return COMMANDS[argv[1]]()
    except app.UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (
        ScenarioError,
        ScreenValidationError,
        PlaceholderCollisionError,
        MemoryFileError,
        MetricsInputError,
    ) as exc:
        logger.error(f"❌ {exc}")
        return EXIT_INPUT_ERROR
    except PrivacyViolationError as exc:
        logger.error(f"❌ {exc}")
        return EXIT_PRIVACY_VIOLATION
    except (CorpusGenerationError, TaskGuardError, OSError) as exc:
        logger.error(f"❌ {exc}")
        return EXIT_TASK_FAILURE


def run_cli(argv: Sequence[str]) -> int:
    """Parse `argv` from scratch and run; used by tests and embedding code."""
    FLAGS.unparse_flags()
    try:
        remaining = FLAGS(normalize_argv(argv))
    except flags.Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    return main(remaining)


def _parse_flags(argv: Sequence[str]) -> List[str]:
    try:
        return FLAGS(normalize_argv(argv))
    except flags.Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_INPUT_ERROR)


def run_main() -> None:
    app.run(main, flags_parser=_parse_flags)


if __name__ == "__main__":
    run_main()
