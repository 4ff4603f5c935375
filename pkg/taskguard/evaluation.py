"""Guard metrics (accuracy, average precision, F1) and case-study progress accounting."""

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .config import ABLATION_CONFIGS, TaskConfig
from .coordinator import TaskReport, run_instruction
from .corpus import CompletenessSample, FeasibilitySample, Sample, read_jsonl
from .errors import MetricsInputError, TaskGuardError
from .guards import build_guard
from .llm_client import LlmClient
from .privacy import PlaceholderMemory
from .screen_model import screen_from_json
from .sim_env import Scenario, load_bundled_scenarios

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
SCORE_CONVENTION = "score >= threshold predicts label 1"

CONFIG_TITLES = {"baseline": "Baseline", "fea": "+Fea", "com": "+Com", "fea_com": "+Fea+Com"}


class MetricsReport(BaseModel):
    accuracy: float = Field(..., ge=0.0, le=1.0)
    average_precision: Optional[float] = Field(None, description="None when there is no positive label")
    f1: Optional[float] = Field(None, description="None when there is no positive label")
    n: int = Field(..., ge=1)
    confusion: Tuple[int, int, int, int] = Field(..., description="(tp, fp, tn, fn)")
    threshold: float = THRESHOLD
    score_convention: str = SCORE_CONVENTION
    failure_rate: float = 0.0
    n_failures: int = 0

    @model_validator(mode="after")
    def _consistent(self) -> "MetricsReport":
        if sum(self.confusion) != self.n:
            raise ValueError(f"confusion {self.confusion} does not add up to n={self.n}")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False)


def compute_metrics(pairs: Sequence[Tuple[float, int]], threshold: float = THRESHOLD) -> MetricsReport:
    """Metrics over (score, true label) pairs.

    AP is the mean, over positives, of the precision at each positive's rank
    when samples are ranked by descending score. Equal scores keep input order.
    """
    if not pairs:
        raise MetricsInputError("no predictions to score")
    scores = np.asarray([float(s) for s, _ in pairs], dtype=np.float64)
    labels = np.asarray([int(y) for _, y in pairs], dtype=np.int64)
    if np.any(np.isnan(scores)) or np.any((scores < 0.0) | (scores > 1.0)):
        raise MetricsInputError("scores must lie in [0, 1]")
    if np.any((labels != 0) & (labels != 1)):
        raise MetricsInputError("labels must be 0 or 1")

    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    n = len(pairs)

    average_precision = f1 = None
    if tp + fn:
        order = np.argsort(-scores, kind="stable")
        ranked = labels[order]
        precision_at = np.cumsum(ranked) / np.arange(1, n + 1)
        average_precision = float(np.mean(precision_at[ranked == 1]))
        f1 = 2.0 * tp / (2 * tp + fp + fn)
    return MetricsReport(
        accuracy=(tp + tn) / n,
        average_precision=average_precision,
        f1=f1,
        n=n,
        confusion=(tp, fp, tn, fn),
        threshold=threshold,
    )


def sample_corpus(samples: Sequence[Sample], k: Optional[int], seed: int = 0) -> List[Sample]:
    """`k` samples without replacement, kept in corpus order."""
    if k is None or k >= len(samples):
        return list(samples)
    if k < 1:
        raise MetricsInputError(f"sample size must be >= 1, got {k}")
    rng = random.Random(seed)
    return [samples[i] for i in sorted(rng.sample(range(len(samples)), k))]


class GuardResolver:
    """Builds (and caches) the guard each sample is scored with."""

    def __init__(
        self,
        backend: str,
        scenarios: Optional[Mapping[str, Scenario]] = None,
        client: Optional[LlmClient] = None,
        poster: Optional[Callable[[Dict[str, Any]], str]] = None,
        after_only: bool = False,
    ):
        self.backend = backend
        self.scenarios = dict(scenarios or {})
        self.client = client
        self.poster = poster
        self.after_only = after_only
        self._cache: Dict[Tuple[str, Optional[str]], Any] = {}

    def __call__(self, sample: Sample):
        role = sample.kind
        scenario_id = sample.seed_meta.get("scenario")
        key = (role, scenario_id if self.backend == "oracle" else None)
        if key not in self._cache:
            scenario = self.scenarios.get(scenario_id) if scenario_id else None
            self._cache[key] = build_guard(
                self.backend,
                role,
                scenario=scenario,
                client=self.client,
                poster=self.poster,
                after_only=self.after_only,
            )
        return self._cache[key]


def score_sample(sample: Sample, resolver: Callable[[Sample], Any]) -> float:
    guard = resolver(sample)
    if isinstance(sample, FeasibilitySample):
        verdict = guard.predict_feasibility(screen_from_json(sample.screen), sample.command)
    else:
        verdict = guard.verify_completeness(
            screen_from_json(sample.screen_before), sample.command, screen_from_json(sample.screen_after)
        )
    return verdict.score


def evaluate_samples(samples: Sequence[Sample], resolver: Callable[[Sample], Any], jobs: int = 1) -> MetricsReport:
    """Score every sample; a failing sample counts as a negative prediction."""

    def one(sample: Sample) -> Tuple[float, bool]:
        try:
            return score_sample(sample, resolver), False
        except (TaskGuardError, ValueError) as exc:
            logger.warning(f"⚠️ Sample {sample.seed_meta.get('index')} failed: {exc}")
            return 0.0, True

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(sample) for sample in samples]
    report = compute_metrics([(score, sample.label) for (score, _), sample in zip(results, samples)])
    failures = sum(1 for _, failed in results if failed)
    return report.model_copy(update={"n_failures": failures, "failure_rate": failures / len(results)})


def evaluate_predictor(
    corpus_path,
    backend: str = "oracle",
    sample: Optional[int] = None,
    seed: int = 0,
    scenarios: Optional[Mapping[str, Scenario]] = None,
    client: Optional[LlmClient] = None,
    poster: Optional[Callable[[Dict[str, Any]], str]] = None,
    jobs: int = 1,
) -> MetricsReport:
    samples = sample_corpus(read_jsonl(corpus_path), sample, seed)
    if not samples:
        raise MetricsInputError(f"{corpus_path} holds no samples")
    if scenarios is None and backend == "oracle" and any(isinstance(s, CompletenessSample) for s in samples):
        scenarios = {s.scenario_id: s for s in load_bundled_scenarios()}
    report = evaluate_samples(samples, GuardResolver(backend, scenarios, client, poster), jobs)
    logger.info(f"📄 {backend} on {report.n} samples: acc={report.accuracy:.4f}")
    return report


# --- task progress -----------------------------------------------------------


def progress_row(report: TaskReport) -> str:
    mark = "✓" if report.success else "✗"
    return f"{report.valid_steps}/{report.total_steps} ({report.expert_steps}) {mark}"


class ReplayRow(BaseModel):
    scenario_id: str
    reports: Dict[str, TaskReport]


def expected_mismatches(scenario: Scenario, label: str, report: TaskReport) -> List[str]:
    expected = scenario.expected.get(label)
    if expected is None:
        return []
    actual = (report.valid_steps, report.total_steps, report.success)
    wanted = (expected.valid, expected.total, expected.success)
    found = []
    if actual != wanted:
        found.append(
            f"{scenario.scenario_id} {label}: got {progress_row(report)}, "
            f"expected {expected.valid}/{expected.total} ({report.expert_steps}) {'✓' if expected.success else '✗'}"
        )
    if expected.reason and expected.reason != report.termination_reason.value:
        found.append(
            f"{scenario.scenario_id} {label}: ended with {report.termination_reason.value}, expected {expected.reason}"
        )
    return found


def replay_all(
    scenarios: Optional[Sequence[Scenario]] = None,
    configs: Optional[Mapping[str, TaskConfig]] = None,
) -> Tuple[List[ReplayRow], List[str]]:
    """Run every scenario under every configuration with the scripted planner and oracle guards."""
    scenarios = list(scenarios) if scenarios is not None else load_bundled_scenarios()
    configs = configs or ABLATION_CONFIGS
    rows, mismatches = [], []
    for scenario in scenarios:
        reports = {}
        for label, config in configs.items():
            report = run_instruction(scenario.instruction, scenario, config, memory=PlaceholderMemory())
            reports[label] = report
            mismatches.extend(expected_mismatches(scenario, label, report))
        rows.append(ReplayRow(scenario_id=scenario.scenario_id, reports=reports))
    if mismatches:
        logger.warning(f"⚠️ {len(mismatches)} replay results differ from the fixtures")
    else:
        logger.info(f"🎉 All {len(rows)} scenarios match their expected progress")
    return rows, mismatches


def progress_table(rows: Sequence[ReplayRow]) -> str:
    """Aligned text table, one scenario per line."""
    labels = []
    for row in rows:
        labels.extend(label for label in row.reports if label not in labels)
    header = ["Task"] + [CONFIG_TITLES.get(label, label) for label in labels]
    body = [
        [row.scenario_id] + [progress_row(row.reports[label]) if label in row.reports else "-" for label in labels]
        for row in rows
    ]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in [header] + body]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)
