"""Evaluation harness: dataset ingestion, n-sample runs, pass@k, suite reports.

Scoring separates two worlds on purpose: the loops only ever see the task
prompt (golden testbenches are quarantined to the scoring sandbox), and the
audit helper verifies that separation over a finished run's transcripts.
Suite aggregation is a deterministic fold in (task_id, sample_index) order,
so a suite over replay agents is byte-for-byte reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from veriloop.autodv import (
    DEFAULT_COVERAGE_THRESHOLD,
    DEFAULT_DV_BUDGET,
    AutoDVConfig,
    run_autodv,
    verification_verdict,
)
from veriloop.autoreview import (
    DEFAULT_REVIEW_BUDGET,
    AutoReviewConfig,
    classify_prompt,
    run_autoreview,
)
from veriloop.eda import ToolProfile, Workspace, compile_bundle, make_workspace, simulate
from veriloop.errors import (
    DomainError,
    DuplicateTaskId,
    FormatError,
    MissingReports,
    VeriloopError,
)
from veriloop.gateway import AgentConfig, Provider, ReplayGateway, build_gateway
from veriloop.model import (
    Budget,
    DesignTask,
    LoopOutcome,
    RtlBundle,
    is_filesystem_safe,
    to_dict,
)

__all__ = [
    "BenchmarkTask",
    "SampleResult",
    "TaskTally",
    "SuiteMode",
    "SuiteReport",
    "BenchConfig",
    "pass_at_k",
    "load_dataset",
    "score_sample",
    "run_suite",
    "emit_report",
    "audit_quarantine",
    "convert_verilogeval",
]

log = logging.getLogger(__name__)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate of P(at least one of k draws from n samples is correct).

    1 - C(n-c, k) / C(n, k), evaluated as one correctly-rounded division of
    exact integer binomials: no factorial overflow at any n, agreement with
    subset enumeration is exact, and pass@1 reduces to c/n exactly.
    """
    if not (0 <= c <= n and 1 <= k <= n):
        raise DomainError(f"pass_at_k: need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")
    if n - c < k:
        return 1.0
    total = math.comb(n, k)
    return (total - math.comb(n - c, k)) / total


@dataclass(frozen=True, slots=True)
class BenchmarkTask:
    task_id: str
    prompt: str
    golden_testbench: str
    reference_design: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.task_id or not is_filesystem_safe(self.task_id):
            raise ValueError(f"BenchmarkTask.task_id: not filesystem-safe: {self.task_id!r}")
        if not self.prompt.strip():
            raise ValueError("BenchmarkTask.prompt: must be non-empty")
        if not self.golden_testbench.strip():
            raise ValueError("BenchmarkTask.golden_testbench: must be non-empty")


@dataclass(frozen=True, slots=True)
class SampleResult:
    task_id: str
    sample_index: int
    syntax_ok: bool
    functional_ok: bool
    coverage_met: bool
    syntax_error_count: int
    iterations_used: int

    def __post_init__(self) -> None:
        if self.functional_ok and not self.syntax_ok:
            raise ValueError("SampleResult: functional_ok requires syntax_ok")
        if self.syntax_error_count < 0:
            raise ValueError("SampleResult.syntax_error_count: must be non-negative")


@dataclass(frozen=True, slots=True)
class TaskTally:
    n: int
    c_syntax: int
    c_functional: int
    coverage_met_any: bool


class SuiteMode(Enum):
    BASELINE = "baseline"
    AUTOREVIEW = "autoreview"
    AUTODV = "autodv"


@dataclass(frozen=True, slots=True)
class SuiteReport:
    mode: str
    model_id: str
    n_samples: int
    k: int
    per_task: dict[str, TaskTally]
    pass_at_k_syntax: float
    pass_at_k_functional: float
    total_syntax_errors: int
    verification_success_rate: Optional[float]
    config_fingerprint: str


@dataclass(frozen=True)
class BenchConfig:
    """Agent/tool/budget selection for a whole suite run."""

    code_agent: AgentConfig
    tool_profile: ToolProfile
    review_agent: Optional[AgentConfig] = None
    review_budget: Budget = DEFAULT_REVIEW_BUDGET
    dv_budget: Budget = DEFAULT_DV_BUDGET
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD
    issue_cap: int = 10


_REQUIRED_DATASET_KEYS = {"task_id", "prompt", "golden_testbench"}
_OPTIONAL_DATASET_KEYS = {"reference_design"}


def load_dataset(path: str | Path) -> list[BenchmarkTask]:
    """Parse a line-delimited dataset file (one JSON object per line)."""
    source = Path(path)
    tasks: list[BenchmarkTask] = []
    seen: set[str] = set()
    with source.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{source}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(record, dict):
                raise FormatError(f"{source}:{lineno}: record must be an object")
            missing = _REQUIRED_DATASET_KEYS - set(record)
            if missing:
                raise FormatError(f"{source}:{lineno}: missing fields {sorted(missing)}")
            unknown = set(record) - _REQUIRED_DATASET_KEYS - _OPTIONAL_DATASET_KEYS
            if unknown:
                raise FormatError(f"{source}:{lineno}: unknown fields {sorted(unknown)}")
            task_id = record["task_id"]
            if task_id in seen:
                raise DuplicateTaskId(f"{source}:{lineno}: duplicate task_id {task_id!r}")
            seen.add(task_id)
            try:
                tasks.append(
                    BenchmarkTask(
                        task_id=task_id,
                        prompt=record["prompt"],
                        golden_testbench=record["golden_testbench"],
                        reference_design=record.get("reference_design"),
                    )
                )
            except (ValueError, TypeError) as exc:
                raise FormatError(f"{source}:{lineno}: {exc}") from None
    return tasks


def score_sample(
    outcome: LoopOutcome,
    golden_testbench: str,
    profile: ToolProfile,
    ws: Workspace,
    *,
    task_id: str,
    sample_index: int,
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD,
) -> SampleResult:
    """Score one loop outcome against the task's golden testbench.

    The golden testbench replaces the self-generated one in a fresh scoring
    sandbox; it never touched the loop itself. syntax_error_count reads the
    FIRST iteration's compile report so baseline and repaired runs count the
    same thing.
    """
    last_compile = outcome.last_compile_report()
    syntax_ok = (
        outcome.final_bundle is not None
        and last_compile is not None
        and last_compile.error_count == 0
    )

    first_compile = next((r.compile for r in outcome.trace if r.compile is not None), None)
    syntax_error_count = first_compile.syntax_error_count if first_compile else 0

    functional_ok = False
    if syntax_ok:
        scoring_bundle = RtlBundle(
            design_source=outcome.final_bundle.design_source,
            testbench_source=golden_testbench,
            top_module=outcome.final_bundle.top_module,
        )
        scoring_ws = ws.subspace("scoring")
        report = compile_bundle(profile, scoring_bundle, scoring_ws)
        if report.error_count == 0:
            sim = simulate(profile, scoring_ws)
            functional_ok = sim.passed

    try:
        coverage_met, _functional = verification_verdict(outcome, coverage_threshold)
    except MissingReports:
        coverage_met = False

    return SampleResult(
        task_id=task_id,
        sample_index=sample_index,
        syntax_ok=syntax_ok,
        functional_ok=functional_ok,
        coverage_met=coverage_met,
        syntax_error_count=syntax_error_count,
        iterations_used=outcome.iterations_used,
    )


def _config_fingerprint(config: BenchConfig, mode: SuiteMode, n_samples: int, k: int) -> str:
    """Semantic config hash: stable across machines, so no filesystem paths."""
    material = {
        "mode": mode.value,
        "n": n_samples,
        "k": k,
        "code": {
            "provider": config.code_agent.provider.value,
            "model": config.code_agent.model_id,
            "temperature": config.code_agent.temperature,
        },
        "review": None
        if config.review_agent is None
        else {
            "provider": config.review_agent.provider.value,
            "model": config.review_agent.model_id,
            "temperature": config.review_agent.temperature,
        },
        "tool": config.tool_profile.tool_id,
        "review_budget": to_dict(config.review_budget),
        "dv_budget": to_dict(config.dv_budget),
        "coverage_threshold": config.coverage_threshold,
        "issue_cap": config.issue_cap,
    }
    blob = json.dumps(material, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _sample_seed(task_id: str, sample_index: int, fingerprint: str) -> int:
    digest = hashlib.sha256(f"{task_id}:{sample_index}:{fingerprint}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _resolve_replay_dir(root: Path, task_id: str, sample_index: int) -> Path:
    """Per-sample replay scripts may live in <root>/<task_id>/sample_<i>, per-task
    in <root>/<task_id>, otherwise every sample replays <root> from the start."""
    per_sample = root / task_id / f"sample_{sample_index}"
    if per_sample.is_dir():
        return per_sample
    per_task = root / task_id
    if per_task.is_dir():
        return per_task
    return root


def _sample_agent(config: AgentConfig, task_id: str, sample_index: int, seed: int):
    if config.provider is Provider.REPLAY:
        return ReplayGateway(_resolve_replay_dir(Path(config.replay_dir), task_id, sample_index))
    return build_gateway(dataclasses.replace(config, sampling_seed=seed))


def _run_sample(
    task: BenchmarkTask,
    sample_index: int,
    mode: SuiteMode,
    config: BenchConfig,
    work_dir: Path,
    fingerprint: str,
) -> SampleResult:
    seed = _sample_seed(task.task_id, sample_index, fingerprint)
    ws = make_workspace(task.task_id, work_dir)
    case = classify_prompt(task.prompt)
    design_task = DesignTask(
        task_id=task.task_id,
        user_prompt=task.prompt,
        case=case,
        provided_rtl=None,
        golden_testbench=None,  # quarantined: scoring only
    )
    review_budget = config.review_budget
    if mode is SuiteMode.BASELINE:
        review_budget = dataclasses.replace(review_budget, max_iterations=1)
    review_config = AutoReviewConfig(
        code_agent=config.code_agent,
        tool_profile=config.tool_profile,
        review_agent=config.review_agent,
        budget=review_budget,
        interactive=False,
        issue_cap=config.issue_cap,
    )
    code_gw = _sample_agent(config.code_agent, task.task_id, sample_index, seed)
    review_gw = (
        _sample_agent(config.review_agent, task.task_id, sample_index, seed)
        if config.review_agent is not None
        else None
    )

    if mode is SuiteMode.AUTODV:
        dv_config = AutoDVConfig(
            review_config=review_config,
            coverage_threshold=config.coverage_threshold,
            dv_budget=config.dv_budget,
        )
        outcome = run_autodv(
            design_task, dv_config, ws, code_gateway=code_gw, review_gateway=review_gw
        )
    else:
        outcome = run_autoreview(
            design_task, review_config, ws, code_gateway=code_gw, review_gateway=review_gw
        )
    return score_sample(
        outcome,
        task.golden_testbench,
        config.tool_profile,
        ws,
        task_id=task.task_id,
        sample_index=sample_index,
        coverage_threshold=config.coverage_threshold,
    )


def _failed_sample(task_id: str, sample_index: int) -> SampleResult:
    return SampleResult(
        task_id=task_id,
        sample_index=sample_index,
        syntax_ok=False,
        functional_ok=False,
        coverage_met=False,
        syntax_error_count=0,
        iterations_used=0,
    )


def run_suite(
    dataset: list[BenchmarkTask],
    mode: SuiteMode,
    n_samples: int,
    k: int,
    jobs: int,
    config: BenchConfig,
    work_dir: str | Path,
) -> SuiteReport:
    """Run n_samples independent samples per task and macro-average pass@k.

    Per-sample failures (tool missing, replay exhausted mid-suite, bad agent
    output) score as failing samples; the suite itself never aborts.
    Aggregation order is fixed, so identical configs yield identical reports.
    """
    if not dataset:
        raise FormatError("run_suite: dataset is empty")
    if not (n_samples >= k >= 1):
        raise DomainError(f"run_suite: need n_samples >= k >= 1, got n={n_samples} k={k}")
    if jobs < 1:
        raise DomainError("run_suite: jobs must be >= 1")

    fingerprint = _config_fingerprint(config, mode, n_samples, k)
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)

    units = [(task, i) for task in dataset for i in range(n_samples)]

    def run_unit(unit: tuple[BenchmarkTask, int]) -> SampleResult:
        task, index = unit
        try:
            return _run_sample(task, index, mode, config, work, fingerprint)
        except (VeriloopError, OSError, ValueError) as exc:
            log.warning("sample %s/%d failed: %s", task.task_id, index, exc)
            return _failed_sample(task.task_id, index)

    if jobs == 1:
        results = [run_unit(u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_unit, units))

    by_key = {(r.task_id, r.sample_index): r for r in results}
    per_task: dict[str, TaskTally] = {}
    total_syntax_errors = 0
    for task in sorted(dataset, key=lambda t: t.task_id):
        samples = [by_key[(task.task_id, i)] for i in range(n_samples)]
        per_task[task.task_id] = TaskTally(
            n=n_samples,
            c_syntax=sum(1 for s in samples if s.syntax_ok),
            c_functional=sum(1 for s in samples if s.functional_ok),
            coverage_met_any=any(s.coverage_met for s in samples),
        )
        total_syntax_errors += samples[0].syntax_error_count

    tallies = [per_task[t] for t in sorted(per_task)]
    pass_syntax = sum(pass_at_k(t.n, t.c_syntax, k) for t in tallies) / len(tallies)
    pass_functional = sum(pass_at_k(t.n, t.c_functional, k) for t in tallies) / len(tallies)
    success_rate = (
        sum(1 for t in tallies if t.coverage_met_any) / len(tallies)
        if mode is SuiteMode.AUTODV
        else None
    )
    return SuiteReport(
        mode=mode.value,
        model_id=config.code_agent.model_id,
        n_samples=n_samples,
        k=k,
        per_task=per_task,
        pass_at_k_syntax=pass_syntax,
        pass_at_k_functional=pass_functional,
        total_syntax_errors=total_syntax_errors,
        verification_success_rate=success_rate,
        config_fingerprint=fingerprint,
    )


class ReportFormat(Enum):
    JSON = "json"
    MARKDOWN_TABLE = "markdown_table"


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{value * 100:.2f}%"


def render_markdown_table(report: SuiteReport) -> str:
    k = report.k
    header = (
        f"| mode | model | pass@{k}_syntax | pass@{k}_functional "
        "| total syntax errors | verification success rate |"
    )
    divider = "|---|---|---|---|---|---|"
    row = (
        f"| {report.mode} | {report.model_id} | {_percent(report.pass_at_k_syntax)} "
        f"| {_percent(report.pass_at_k_functional)} | {report.total_syntax_errors} "
        f"| {_percent(report.verification_success_rate)} |"
    )
    return "\n".join([header, divider, row]) + "\n"


def emit_report(report: SuiteReport, fmt: ReportFormat, out_dir: str | Path) -> Path:
    """Write report.json (canonical schema) or report.md (figure-style table)."""
    if not report.per_task:
        raise FormatError("emit_report: suite report has no tasks")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt is ReportFormat.JSON:
        path = out / "report.json"
        payload = json.dumps(to_dict(report), indent=2, ensure_ascii=False, sort_keys=False)
        path.write_text(payload + "\n", encoding="utf-8")
    else:
        path = out / "report.md"
        path.write_text(render_markdown_table(report), encoding="utf-8")
    return path


def load_report(path: str | Path) -> SuiteReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    per_task = {
        task_id: TaskTally(**tally) for task_id, tally in data.pop("per_task", {}).items()
    }
    return SuiteReport(per_task=per_task, **data)


# --- golden-testbench quarantine audit --------------------------------------


def _string_leaves(value) -> list[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, list):
        return [leaf for item in value for leaf in _string_leaves(item)]
    if isinstance(value, dict):
        return [leaf for item in value.values() for leaf in _string_leaves(item)]
    return []


def _searchable_text(path: Path) -> str:
    raw = path.read_text(encoding="utf-8", errors="replace")
    if path.suffix == ".json":
        try:
            return "\n".join(_string_leaves(json.loads(raw)))
        except (json.JSONDecodeError, RecursionError):
            return raw
    return raw


def audit_quarantine(work_dir: str | Path, dataset: list[BenchmarkTask]) -> list[str]:
    """String-containment scan: golden testbench text must never reach an agent.

    Returns violation descriptions ("file :: task_id"); empty means clean.
    Scans every transcript and prompt artifact under work_dir.
    """
    violations: list[str] = []
    goldens = {task.task_id: task.golden_testbench.strip() for task in dataset}
    root = Path(work_dir)
    candidates = [
        p
        for pattern in ("transcript_*.json", "prompt.txt", "response.txt")
        for p in root.rglob(pattern)
    ]
    for path in candidates:
        try:
            text = _searchable_text(path)
        except OSError:
            continue
        for task_id, golden in goldens.items():
            if golden and golden in text:
                violations.append(f"{path} :: {task_id}")
    return sorted(violations)


# --- VerilogEval-Human importer ----------------------------------------------


def convert_verilogeval(
    problems_path: str | Path,
    descriptions_path: str | Path,
    out_path: str | Path,
) -> int:
    """Import the public VerilogEval-Human distribution into the dataset format.

    Expects the v1 layout: a problems JSONL with task_id/prompt/test (and
    optionally canonical_solution), plus a descriptions JSONL with
    task_id/detail_description. Returns the number of tasks written.
    """
    def read_jsonl(path: Path) -> dict[str, dict]:
        records = {}
        with path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
                if "task_id" not in record:
                    raise FormatError(f"{path}:{lineno}: missing task_id")
                records[record["task_id"]] = record
        return records

    problems = read_jsonl(Path(problems_path))
    descriptions = read_jsonl(Path(descriptions_path))

    written = 0
    with Path(out_path).open("w", encoding="utf-8") as out:
        for task_id in sorted(problems):
            problem = problems[task_id]
            description = descriptions.get(task_id, {})
            prompt_text = description.get("detail_description", "").strip()
            interface = problem.get("prompt", "").strip()
            if interface:
                prompt_text = f"{prompt_text}\n\nInterface:\n{interface}" if prompt_text else interface
            golden = problem.get("test", "")
            if not golden.strip():
                log.warning("skipping %s: no golden testbench", task_id)
                continue
            reference = None
            if problem.get("canonical_solution"):
                reference = interface + problem["canonical_solution"]
            record = {
                "task_id": task_id.replace("/", "_"),
                "prompt": prompt_text or f"Implement benchmark task {task_id}.",
                "golden_testbench": golden,
            }
            if reference:
                record["reference_design"] = reference
            out.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
    return written
