"""Parse raw tool logs into structured reports and distill them into feedback.

Parsing is data-driven: each tool ships a ParseRuleSet (a JSON file of
anchored regex rules with named capture groups), so supporting a new tool
means adding a rule file, not code. Rules are tried in order; the first
match consumes the line. All parsers are total functions over arbitrary
text: garbage in, empty (or degraded) report out, never an exception other
than the documented ParseFailure for coverage output.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from veriloop.errors import NothingToDistill, ParseFailure
from veriloop.model import (
    COVERAGE_METRICS,
    AssertionFailure,
    Category,
    CompileReport,
    CoveragePoints,
    CoverageReport,
    Diagnostic,
    Issue,
    Phase,
    ReviewFeedback,
    RtlBundle,
    Severity,
    SimReport,
)

__all__ = [
    "MatchRule",
    "ParseRuleSet",
    "load_rules",
    "parse_compile_log",
    "parse_sim_log",
    "parse_coverage_report",
    "distill",
    "render_review_prompt",
]

# Named groups a rule may capture. "count" accumulates mismatch totals,
# everything else is positional metadata.
ALLOWED_GROUPS = {"file", "line", "message", "label", "time", "metric", "covered", "total", "count"}

RAW_LOG_EXCERPT_BYTES = 8 * 1024


@dataclass(frozen=True)
class MatchRule:
    """One anchored pattern; severity/category apply to diagnostics it yields."""

    pattern: str
    severity: Optional[Severity] = None
    category: Optional[Category] = None
    ignore: bool = False
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        compiled = re.compile(self.pattern)
        groups = set(compiled.groupindex)
        unknown = groups - ALLOWED_GROUPS
        if unknown:
            raise ValueError(f"MatchRule: unknown capture groups {sorted(unknown)}")
        carries_payload = bool(groups & {"message", "metric", "label", "count"}) or {
            "covered",
            "total",
        } <= groups
        if not self.ignore and not carries_payload:
            raise ValueError(
                f"MatchRule: rule must capture message/metric/label/count or covered+total: "
                f"{self.pattern!r}"
            )
        object.__setattr__(self, "regex", compiled)


@dataclass(frozen=True)
class ParseRuleSet:
    tool_id: str
    error_patterns: tuple[MatchRule, ...]
    assertion_patterns: tuple[MatchRule, ...]
    coverage_row_patterns: tuple[MatchRule, ...]


def _rule_from_dict(data: dict) -> MatchRule:
    return MatchRule(
        pattern=data["pattern"],
        severity=Severity(data["severity"]) if "severity" in data else None,
        category=Category(data["category"]) if "category" in data else None,
        ignore=bool(data.get("ignore", False)),
    )


def load_rules(tool_id: str, config_dir: str | Path | None = None) -> ParseRuleSet:
    """Load the rule file for *tool_id* from config_dir, falling back to the built-ins."""
    raw: str | None = None
    if config_dir is not None:
        candidate = Path(config_dir) / f"{tool_id}.json"
        if candidate.is_file():
            raw = candidate.read_text(encoding="utf-8")
    if raw is None:
        builtin = resources.files("veriloop.rules").joinpath(f"{tool_id}.json")
        if not builtin.is_file():
            raise ParseFailure(f"no parse rules for tool {tool_id!r}")
        raw = builtin.read_text(encoding="utf-8")
    data = json.loads(raw)
    return ParseRuleSet(
        tool_id=data["tool_id"],
        error_patterns=tuple(_rule_from_dict(r) for r in data.get("error_patterns", [])),
        assertion_patterns=tuple(_rule_from_dict(r) for r in data.get("assertion_patterns", [])),
        coverage_row_patterns=tuple(
            _rule_from_dict(r) for r in data.get("coverage_row_patterns", [])
        ),
    )


def _int_or_none(raw: Optional[str]) -> Optional[int]:
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        return None
    return value


def parse_compile_log(rules: ParseRuleSet, raw: str, exit_ok: bool) -> list[Diagnostic]:
    """One Diagnostic per recognized line.

    Unmatched lines containing "error" (case-insensitive) are retained as
    category-other diagnostics so no information is destroyed. When the tool
    exited non-zero but nothing at all was recognized, a single synthesized
    diagnostic records the failure so a broken compile can never read as clean.
    """
    diagnostics: list[Diagnostic] = []
    for line in raw.splitlines():
        line = line.rstrip("\r")
        matched = False
        for rule in rules.error_patterns:
            m = rule.regex.search(line)
            if m is None:
                continue
            matched = True
            if rule.ignore:
                break
            groups = m.groupdict()
            message = (groups.get("message") or line.strip() or "unrecognized diagnostic").strip()
            line_no = _int_or_none(groups.get("line"))
            if line_no is not None and line_no <= 0:
                line_no = None
            diagnostics.append(
                Diagnostic(
                    file=groups.get("file") or "",
                    line=line_no,
                    severity=rule.severity or Severity.ERROR,
                    category=rule.category or Category.OTHER,
                    message=message,
                )
            )
            break
        if not matched and line.strip() and "error" in line.lower():
            diagnostics.append(
                Diagnostic(
                    file="",
                    line=None,
                    severity=Severity.ERROR,
                    category=Category.OTHER,
                    message=line.strip(),
                )
            )
    if not exit_ok and not any(d.severity is Severity.ERROR for d in diagnostics):
        diagnostics.append(
            Diagnostic(
                file="",
                line=None,
                severity=Severity.ERROR,
                category=Category.OTHER,
                message="tool exited with an error status but produced no recognizable diagnostic",
            )
        )
    return diagnostics


def parse_sim_log(rules: ParseRuleSet, raw: str, timed_out: bool) -> SimReport:
    """Collect assertion failures and mismatch totals; passed only on a fully clean run."""
    failures: list[AssertionFailure] = []
    mismatch_count = 0
    for line in raw.splitlines():
        line = line.rstrip("\r")
        for rule in rules.assertion_patterns:
            m = rule.regex.search(line)
            if m is None:
                continue
            if rule.ignore:
                break
            groups = m.groupdict()
            count = _int_or_none(groups.get("count"))
            if count is not None:
                mismatch_count += count
                break
            message = (groups.get("message") or line.strip()).strip()
            label = groups.get("label") or ""
            if not label and groups.get("file"):
                line_no = groups.get("line")
                label = f"{groups['file']}:{line_no}" if line_no else groups["file"]
            if not label:
                label = message or "failure"
            failures.append(
                AssertionFailure(
                    label=label,
                    sim_time=_int_or_none(groups.get("time")),
                    message=message or label,
                )
            )
            break
    passed = not failures and mismatch_count == 0 and not timed_out
    return SimReport(
        failed_assertions=tuple(failures),
        mismatch_count=mismatch_count,
        passed=passed,
        timed_out=timed_out,
        raw_log=raw,
    )


_METRIC_ALIASES = {
    "line": "line",
    "toggle": "toggle",
    "combinational": "combinational",
    "combinational logic": "combinational",
    "fsm": "fsm",
    "fsm state": "fsm",
    "fsm state/arc": "fsm",
}


def _normalize_metric(raw: str) -> Optional[str]:
    return _METRIC_ALIASES.get(raw.strip().lower())


def parse_coverage_report(rules: ParseRuleSet, raw: str) -> CoverageReport:
    """Extract (metric, covered, total) rows and compute the point-weighted aggregate.

    Rules that capture only a metric name set the current section; rules that
    capture covered/total without a metric use it. A later row for the same
    metric replaces the earlier one (accumulated totals, not additive).
    """
    rows: dict[str, CoveragePoints] = {}
    current_metric: Optional[str] = None
    for line in raw.splitlines():
        line = line.rstrip("\r")
        for rule in rules.coverage_row_patterns:
            m = rule.regex.search(line)
            if m is None:
                continue
            if rule.ignore:
                break
            groups = m.groupdict()
            metric = _normalize_metric(groups["metric"]) if groups.get("metric") else None
            covered = _int_or_none(groups.get("covered"))
            total = _int_or_none(groups.get("total"))
            if covered is None or total is None:
                if metric is not None:
                    current_metric = metric
                break
            metric = metric or current_metric
            if metric is not None:
                # Garbage rows (covered > total) are clamped; parsers stay total.
                rows[metric] = CoveragePoints(covered=min(covered, total), total=total)
            break
    if rows:
        return CoverageReport.from_metrics(rows)
    if raw.strip():
        raise ParseFailure("no coverage rows recognized", raw=raw)
    return CoverageReport.from_metrics({})


# --- feedback distillation ---------------------------------------------------

_SEVERITY_ORDER = {Severity.ERROR: 0, Severity.WARNING: 1}


def _diagnostic_origin(diag: Diagnostic) -> str:
    if diag.file and diag.line is not None:
        return f"{diag.file}:{diag.line}"
    if diag.file:
        return diag.file
    return "log"


def _diagnostic_hint(diag: Diagnostic) -> str:
    where = f" at {diag.file}:{diag.line}" if diag.file and diag.line is not None else (
        f" in {diag.file}" if diag.file else ""
    )
    return f"Fix the {diag.category.value} error{where}."


def _syntax_issues(report: CompileReport) -> list[Issue]:
    seen: set[tuple[str, Optional[int], str]] = set()
    unique: list[Diagnostic] = []
    for diag in report.diagnostics:
        if diag.severity is not Severity.ERROR:
            continue
        key = (diag.file, diag.line, diag.message)
        if key in seen:
            continue
        seen.add(key)
        unique.append(diag)
    unique.sort(
        key=lambda d: (
            _SEVERITY_ORDER[d.severity],
            d.file,
            d.line if d.line is not None else 1 << 30,
            d.message,
        )
    )
    return [
        Issue(origin=_diagnostic_origin(d), explanation=d.message, focus_hint=_diagnostic_hint(d))
        for d in unique
    ]


def _functional_issues(report: SimReport) -> list[Issue]:
    issues: list[Issue] = []
    seen: set[tuple[str, str]] = set()
    ordered = sorted(
        report.failed_assertions,
        key=lambda f: (f.sim_time if f.sim_time is not None else 1 << 62, f.label),
    )
    for failure in ordered:
        key = (failure.label, failure.message)
        if key in seen:
            continue
        seen.add(key)
        when = f" at time {failure.sim_time}" if failure.sim_time is not None else ""
        issues.append(
            Issue(
                origin=failure.label,
                explanation=failure.message,
                focus_hint=f"Make the check '{failure.label}'{when} pass by correcting the design behavior.",
            )
        )
    if report.mismatch_count > 0:
        issues.append(
            Issue(
                origin="mismatches",
                explanation=f"{report.mismatch_count} output mismatches against expected values",
                focus_hint="Align the design outputs with the expected responses for every stimulus.",
            )
        )
    if not issues:
        issues.append(
            Issue(
                origin="simulation",
                explanation="simulation reported failure without specific diagnostics",
                focus_hint="Re-examine the design and testbench for silent failure paths.",
            )
        )
    return issues


def _coverage_issue(report: CoverageReport, threshold: float) -> Issue:
    metric = report.weakest_metric() or COVERAGE_METRICS[0]
    points = report.metrics.get(metric, CoveragePoints(0, 0))
    return Issue(
        origin=metric,
        explanation=(
            f"{metric} coverage is {points.covered}/{points.total} "
            f"({points.ratio:.0%}); aggregate {report.aggregate:.2%} is below the "
            f"{threshold:.0%} target"
        ),
        focus_hint=f"Extend the testbench stimulus to raise {metric} coverage.",
    )


def distill(
    compile: Optional[CompileReport] = None,
    sim: Optional[SimReport] = None,
    coverage: Optional[CoverageReport] = None,
    cap: int = 10,
    coverage_threshold: float = 0.90,
) -> ReviewFeedback:
    """Reduce raw reports to a ranked, deduplicated, capped issue list.

    Phase precedence is strict: syntax errors outrank functional failures,
    which outrank coverage gaps. Raises NothingToDistill when every present
    report is clean (the caller's loop should have terminated instead).
    """
    if cap <= 0:
        raise ValueError("distill: cap must be positive")
    if compile is not None and compile.error_count > 0:
        phase = Phase.SYNTAX_REPAIR
        issues = _syntax_issues(compile)
    elif sim is not None and not sim.passed:
        phase = Phase.FUNCTIONAL_REPAIR
        issues = _functional_issues(sim)
    elif coverage is not None and coverage.aggregate < coverage_threshold:
        phase = Phase.COVERAGE_IMPROVEMENT
        issues = [_coverage_issue(coverage, coverage_threshold)]
    else:
        raise NothingToDistill("all reports are clean")
    return ReviewFeedback(phase=phase, issues=tuple(issues[:cap]))


# --- review prompt rendering -------------------------------------------------

_PHASE_HEADERS = {
    Phase.SYNTAX_REPAIR: (
        "Syntax repair required",
        "The previous candidate failed to compile. Resolve every issue below.",
    ),
    Phase.FUNCTIONAL_REPAIR: (
        "Functional repair required",
        "The design compiled but simulation found behavioral failures. Revise the design so every check passes.",
    ),
    Phase.COVERAGE_IMPROVEMENT: (
        "Coverage improvement required",
        "The design simulates cleanly but verification coverage is below target. Revise the testbench to exercise more of the design.",
    ),
}

_PHASE_CLOSING = {
    Phase.SYNTAX_REPAIR: (
        "Return the complete corrected design (and testbench if it must change) in fenced "
        "verilog code blocks. Do not omit unchanged lines."
    ),
    Phase.FUNCTIONAL_REPAIR: (
        "Return the complete corrected design in a fenced verilog code block, followed by the "
        "testbench in its own fenced block if it must change. Do not omit unchanged lines."
    ),
    Phase.COVERAGE_IMPROVEMENT: (
        "Return the complete improved testbench in a fenced verilog code block (and the design "
        "only if it must change). Do not omit unchanged lines."
    ),
}


def render_review_prompt(
    feedback: ReviewFeedback,
    current_bundle: RtlBundle,
    agent_analysis: Optional[str] = None,
) -> str:
    """Deterministic review prompt: same inputs, byte-identical output."""
    if not feedback.issues:
        raise ValueError("render_review_prompt: feedback has no issues")
    header, goal = _PHASE_HEADERS[feedback.phase]
    lines = [f"## Review: {header}", goal, "", "Issues:"]
    for i, issue in enumerate(feedback.issues, start=1):
        lines.append(f"{i}. [{issue.origin}] {issue.explanation}")
        lines.append(f"   Hint: {issue.focus_hint}")
    lines += [
        "",
        f"Current design (top module `{current_bundle.top_module}`):",
        "```verilog",
        current_bundle.design_source,
        "```",
    ]
    if feedback.phase is not Phase.SYNTAX_REPAIR and current_bundle.testbench_source.strip():
        lines += [
            "",
            "Current testbench:",
            "```verilog",
            current_bundle.testbench_source,
            "```",
        ]
    if agent_analysis:
        lines += ["", "Reviewer analysis:", agent_analysis.strip()]
    lines += ["", _PHASE_CLOSING[feedback.phase]]
    return "\n".join(lines) + "\n"


def log_excerpt(raw: str, budget_bytes: int = RAW_LOG_EXCERPT_BYTES) -> str:
    """Tail-biased excerpt of a raw log (tools print their errors last)."""
    encoded = raw.encode("utf-8", errors="replace")
    if len(encoded) <= budget_bytes:
        return raw
    tail = encoded[-budget_bytes:]
    return "[... log truncated ...]\n" + tail.decode("utf-8", errors="replace")
