"""Core domain types shared by every pipeline stage, plus budget accounting.

All types are immutable value objects: safe to share across worker threads
and to serialize/deserialize without loss. Serialization uses one canonical
field order (dataclass declaration order) and two-space indentation so run
artifacts diff cleanly line by line.
"""

from __future__ import annotations

import dataclasses
import json
import re
import typing
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Union

__all__ = [
    "PromptCase",
    "Severity",
    "Category",
    "Phase",
    "LoopStatus",
    "DesignTask",
    "RtlBundle",
    "Diagnostic",
    "CompileReport",
    "AssertionFailure",
    "SimReport",
    "CoveragePoints",
    "CoverageReport",
    "Issue",
    "ReviewFeedback",
    "Budget",
    "IterationRecord",
    "LoopOutcome",
    "COVERAGE_METRICS",
    "budget_remaining",
    "agent_calls_used",
    "to_dict",
    "from_dict",
    "to_canonical_json",
    "from_canonical_json",
    "is_filesystem_safe",
]

IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")
_SAFE_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

# Fixed metric order; also the tie-break order when ranking coverage gaps.
COVERAGE_METRICS = ("line", "toggle", "combinational", "fsm")


def is_filesystem_safe(name: str) -> bool:
    """True when *name* can be used as a single path component anywhere."""
    return bool(_SAFE_ID_RE.match(name)) and ".." not in name


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ValueError(f"{where}: {message}")


class PromptCase(Enum):
    DETAILED = "detailed"
    VAGUE = "vague"
    TASK_BASED = "task_based"


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


class Category(Enum):
    SYNTAX = "syntax"
    ELABORATION = "elaboration"
    OTHER = "other"


class Phase(Enum):
    SYNTAX_REPAIR = "syntax_repair"
    FUNCTIONAL_REPAIR = "functional_repair"
    COVERAGE_IMPROVEMENT = "coverage_improvement"


class LoopStatus(Enum):
    SUCCESS = "success"
    BUDGET_EXHAUSTED = "budget_exhausted"
    TOOL_FAILURE = "tool_failure"
    AGENT_FAILURE = "agent_failure"


@dataclass(frozen=True, slots=True)
class DesignTask:
    """One unit of user intent entering the pipeline."""

    task_id: str
    user_prompt: str
    case: PromptCase
    provided_rtl: Optional[str] = None
    golden_testbench: Optional[str] = None

    def __post_init__(self) -> None:
        _require(bool(self.task_id), "DesignTask.task_id", "must be non-empty")
        _require(
            is_filesystem_safe(self.task_id),
            "DesignTask.task_id",
            f"not filesystem-safe: {self.task_id!r}",
        )
        _require(bool(self.user_prompt.strip()), "DesignTask.user_prompt", "must be non-empty")
        if self.case is PromptCase.TASK_BASED:
            _require(
                self.provided_rtl is not None,
                "DesignTask.provided_rtl",
                "required when case is task_based",
            )


@dataclass(frozen=True, slots=True)
class RtlBundle:
    """A design plus its testbench; the unit flowing through both loops."""

    design_source: str
    testbench_source: str
    top_module: str

    def __post_init__(self) -> None:
        _require(bool(self.design_source.strip()), "RtlBundle.design_source", "must be non-empty")
        _require(
            bool(IDENTIFIER_RE.match(self.top_module)),
            "RtlBundle.top_module",
            f"not a valid HDL identifier: {self.top_module!r}",
        )


@dataclass(frozen=True, slots=True)
class Diagnostic:
    """One normalized compiler message."""

    file: str
    line: Optional[int]
    severity: Severity
    category: Category
    message: str

    def __post_init__(self) -> None:
        _require(bool(self.message), "Diagnostic.message", "must be non-empty")
        if self.line is not None:
            _require(self.line > 0, "Diagnostic.line", "must be positive when present")


@dataclass(frozen=True, slots=True)
class CompileReport:
    diagnostics: tuple[Diagnostic, ...]
    exit_ok: bool
    raw_log: str
    tool_id: str
    wall_seconds: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
        _require(self.wall_seconds >= 0, "CompileReport.wall_seconds", "must be non-negative")
        if self.exit_ok:
            _require(
                self.error_count == 0,
                "CompileReport.exit_ok",
                "true despite error-severity diagnostics",
            )

    @property
    def error_count(self) -> int:
        return sum(1 for d in self.diagnostics if d.severity is Severity.ERROR)

    @property
    def syntax_error_count(self) -> int:
        """Error diagnostics with category syntax or elaboration (the benchmark counting unit)."""
        return sum(
            1
            for d in self.diagnostics
            if d.severity is Severity.ERROR
            and d.category in (Category.SYNTAX, Category.ELABORATION)
        )


@dataclass(frozen=True, slots=True)
class AssertionFailure:
    label: str
    sim_time: Optional[int]
    message: str

    def __post_init__(self) -> None:
        if self.sim_time is not None:
            _require(self.sim_time >= 0, "AssertionFailure.sim_time", "must be non-negative")


@dataclass(frozen=True, slots=True)
class SimReport:
    failed_assertions: tuple[AssertionFailure, ...]
    mismatch_count: int
    passed: bool
    timed_out: bool
    raw_log: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "failed_assertions", tuple(self.failed_assertions))
        _require(self.mismatch_count >= 0, "SimReport.mismatch_count", "must be non-negative")
        if self.passed:
            _require(
                not self.failed_assertions and self.mismatch_count == 0 and not self.timed_out,
                "SimReport.passed",
                "true despite failure evidence",
            )


@dataclass(frozen=True, slots=True)
class CoveragePoints:
    covered: int
    total: int

    def __post_init__(self) -> None:
        _require(self.covered >= 0, "CoveragePoints.covered", "must be non-negative")
        _require(self.total >= 0, "CoveragePoints.total", "must be non-negative")
        _require(self.covered <= self.total, "CoveragePoints.covered", "exceeds total")

    @property
    def ratio(self) -> float:
        return self.covered / self.total if self.total else 1.0


def _aggregate_of(metrics: Mapping[str, CoveragePoints]) -> float:
    """Point-weighted total: summed covered over summed total, 1.0 with no points."""
    total = sum(p.total for p in metrics.values())
    if total == 0:
        return 1.0
    return sum(p.covered for p in metrics.values()) / total


@dataclass(frozen=True, slots=True)
class CoverageReport:
    metrics: dict[str, CoveragePoints]
    aggregate: float

    def __post_init__(self) -> None:
        for name in self.metrics:
            _require(
                name in COVERAGE_METRICS,
                "CoverageReport.metrics",
                f"unknown metric {name!r}",
            )
        ordered = {m: self.metrics[m] for m in COVERAGE_METRICS if m in self.metrics}
        object.__setattr__(self, "metrics", ordered)
        _require(
            abs(self.aggregate - _aggregate_of(ordered)) <= 1e-12,
            "CoverageReport.aggregate",
            "inconsistent with metric points",
        )

    @classmethod
    def from_metrics(cls, metrics: Mapping[str, CoveragePoints]) -> "CoverageReport":
        return cls(metrics=dict(metrics), aggregate=_aggregate_of(metrics))

    def weakest_metric(self) -> Optional[str]:
        """Metric with the lowest covered/total ratio among those with points."""
        candidates = [m for m in COVERAGE_METRICS if self.metrics.get(m, CoveragePoints(0, 0)).total > 0]
        if not candidates:
            return None
        return min(candidates, key=lambda m: (self.metrics[m].ratio, COVERAGE_METRICS.index(m)))


@dataclass(frozen=True, slots=True)
class Issue:
    """One distilled, actionable finding.

    origin points back into the source report: "file:line" (or "file") for a
    diagnostic, the assertion label, "mismatches" for a mismatch total, or the
    coverage metric name.
    """

    origin: str
    explanation: str
    focus_hint: str


@dataclass(frozen=True, slots=True)
class ReviewFeedback:
    phase: Phase
    issues: tuple[Issue, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "issues", tuple(self.issues))
        _require(bool(self.issues), "ReviewFeedback.issues", "must be non-empty")


@dataclass(frozen=True, slots=True)
class Budget:
    max_iterations: int
    max_agent_calls: int
    tool_timeout_seconds: int

    def __post_init__(self) -> None:
        for name in ("max_iterations", "max_agent_calls", "tool_timeout_seconds"):
            _require(getattr(self, name) > 0, f"Budget.{name}", "must be strictly positive")


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """Audit entry for one loop iteration.

    One record describes one candidate bundle: the prompt/response exchange
    that produced it, every tool report measured on it, and the feedback
    distilled from those reports (absent on the terminal iteration).
    agent_calls counts the LLM exchanges spent in this iteration (generation,
    review analysis, disambiguation retries); 0 for iterations that used
    caller-provided RTL.
    """

    index: int
    prompt_sent: str
    agent_response: str
    compile: Optional[CompileReport] = None
    sim: Optional[SimReport] = None
    coverage: Optional[CoverageReport] = None
    feedback: Optional[ReviewFeedback] = None
    agent_calls: int = 1

    def __post_init__(self) -> None:
        _require(self.index >= 1, "IterationRecord.index", "must be 1-based")
        _require(self.agent_calls >= 0, "IterationRecord.agent_calls", "must be non-negative")


@dataclass(frozen=True, slots=True)
class LoopOutcome:
    status: LoopStatus
    iterations_used: int
    final_bundle: Optional[RtlBundle]
    trace: tuple[IterationRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "trace", tuple(self.trace))
        _require(
            self.iterations_used == len(self.trace),
            "LoopOutcome.iterations_used",
            "must equal trace length",
        )
        indices = [r.index for r in self.trace]
        _require(
            all(b > a for a, b in zip(indices, indices[1:])),
            "LoopOutcome.trace",
            "record indices must be strictly increasing",
        )
        if self.status is LoopStatus.SUCCESS:
            _require(
                self.final_bundle is not None,
                "LoopOutcome.final_bundle",
                "required on success",
            )
            last_compile = self.last_compile_report()
            _require(
                last_compile is not None and last_compile.error_count == 0,
                "LoopOutcome.status",
                "success requires a final clean compile in the trace",
            )

    def last_compile_report(self) -> Optional[CompileReport]:
        for record in reversed(self.trace):
            if record.compile is not None:
                return record.compile
        return None

    def last_sim_report(self) -> Optional[SimReport]:
        for record in reversed(self.trace):
            if record.sim is not None:
                return record.sim
        return None

    def last_coverage_report(self) -> Optional[CoverageReport]:
        for record in reversed(self.trace):
            if record.coverage is not None:
                return record.coverage
        return None


# --- budget accounting -----------------------------------------------------

def agent_calls_used(trace: Iterable[IterationRecord]) -> int:
    return sum(r.agent_calls for r in trace)


def budget_remaining(budget: Budget, trace: Iterable[IterationRecord]) -> tuple[int, int]:
    """(iterations_left, calls_left) for *trace*, clamped at zero."""
    records = list(trace)
    iterations_left = max(0, budget.max_iterations - len(records))
    calls_left = max(0, budget.max_agent_calls - agent_calls_used(records))
    return iterations_left, calls_left


# --- canonical serialization -------------------------------------------------

def to_dict(obj: Any) -> Any:
    """Recursively serialize a model value to JSON-ready data.

    Field order follows dataclass declaration order, so the output is stable.
    """
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, Mapping):
        return {str(k): to_dict(v) for k, v in obj.items()}
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _from_hint(hint: Any, value: Any, where: str) -> Any:
    origin = typing.get_origin(hint)
    if origin is Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _from_hint(args[0], value, where)
    if origin in (tuple, list):
        (item_hint, *_rest) = typing.get_args(hint) or (Any,)
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected array, got {type(value).__name__}")
        return tuple(_from_hint(item_hint, v, f"{where}[{i}]") for i, v in enumerate(value))
    if origin is dict:
        _key_hint, val_hint = typing.get_args(hint)
        if not isinstance(value, Mapping):
            raise ValueError(f"{where}: expected object, got {type(value).__name__}")
        return {k: _from_hint(val_hint, v, f"{where}.{k}") for k, v in value.items()}
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from None
    if dataclasses.is_dataclass(hint):
        return from_dict(hint, value)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def from_dict(cls: type, data: Any) -> Any:
    """Reconstruct a model dataclass from `to_dict` output. Unknown keys are rejected."""
    if not isinstance(data, Mapping):
        raise ValueError(f"{cls.__name__}: expected object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown fields {unknown}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _from_hint(hints[f.name], data[f.name], f"{cls.__name__}.{f.name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ValueError(f"{cls.__name__}: missing required field {f.name!r}")
    return cls(**kwargs)


def to_canonical_json(obj: Any) -> str:
    """Line-stable JSON: canonical field order, two-space indent, trailing newline."""
    return json.dumps(to_dict(obj), indent=2, ensure_ascii=False, sort_keys=False) + "\n"


def from_canonical_json(cls: type, raw: str) -> Any:
    return from_dict(cls, json.loads(raw))
