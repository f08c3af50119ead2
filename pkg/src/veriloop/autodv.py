"""The functional-verification loop, wrapping the syntax-correction loop.

Phase A obtains a syntactically clean bundle (and a testbench, generating one
when the task provided only a design). Phase B then iterates
simulate/coverage/distill/revise until assertions pass and aggregate coverage
meets the threshold. Every revision re-enters the compile gate, so no
syntactically broken bundle is ever simulated; a revision that breaks syntax
is repaired inline within the remaining review budget, visible in the trace
as extra compile-only records between simulated iterations.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

from veriloop.autoreview import (
    AutoReviewConfig,
    LoopState,
    TESTBENCH_PROMPT_TEMPLATE,
    _capped_profile,
    finalize,
    prepare_initial_prompt,
    run_compile_loop,
)
from veriloop.distill import distill, render_review_prompt
from veriloop.eda import Workspace, measure_coverage, simulate
from veriloop.errors import (
    GatewayError,
    MissingArtifact,
    MissingReports,
    ParseFailure,
    ToolNotFound,
)
from veriloop.gateway import ChatGateway
from veriloop.model import (
    Budget,
    DesignTask,
    LoopOutcome,
    LoopStatus,
    Phase,
    PromptCase,
)

__all__ = [
    "AutoDVConfig",
    "run_autodv",
    "verification_verdict",
    "verification_summary",
    "DEFAULT_DV_BUDGET",
    "DEFAULT_COVERAGE_THRESHOLD",
]

log = logging.getLogger(__name__)

DEFAULT_DV_BUDGET = Budget(max_iterations=5, max_agent_calls=15, tool_timeout_seconds=120)
DEFAULT_COVERAGE_THRESHOLD = 0.90


@dataclass(frozen=True)
class AutoDVConfig:
    """Verification-loop knobs on top of an AutoReviewConfig.

    coverage_threshold uses a >= comparison. regenerate_testbench governs
    functional-repair revisions only: when False the previous testbench is
    pinned there, while coverage-improvement revisions may always replace it
    (coverage gaps are testbench work by definition).
    """

    review_config: AutoReviewConfig
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD
    dv_budget: Budget = DEFAULT_DV_BUDGET
    regenerate_testbench: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise ValueError("AutoDVConfig.coverage_threshold: must be in (0, 1]")


def run_autodv(
    task: DesignTask,
    config: AutoDVConfig,
    ws: Workspace,
    *,
    code_gateway: Optional[ChatGateway] = None,
    review_gateway: Optional[ChatGateway] = None,
) -> LoopOutcome:
    """Drive a bundle to functional correctness and the coverage target.

    The returned trace extends the syntax-phase trace: records gain sim and
    coverage reports once phase B measures them. Success requires the final
    simulated iteration to pass with aggregate coverage >= the threshold.
    """
    review_config = config.review_config
    state = LoopState.create(task, review_config, ws, code_gateway, review_gateway)

    use_provided = task.case is PromptCase.TASK_BASED and task.provided_rtl is not None
    if use_provided:
        initial_prompt: Optional[str] = None
    else:
        try:
            initial_prompt = prepare_initial_prompt(task, review_config, state.code_gw)
        except GatewayError:
            return _finish(state, config, LoopStatus.AGENT_FAILURE)

    status = run_compile_loop(
        state,
        initial_prompt,
        review_config.budget.max_iterations,
        use_provided_rtl=use_provided,
    )
    if status is not LoopStatus.SUCCESS:
        return _finish(state, config, status)

    # Phase B runs on its own budget; the combined call allowance honors both caps.
    state.call_cap = review_config.budget.max_agent_calls + config.dv_budget.max_agent_calls
    state.profile = _capped_profile(review_config.tool_profile, config.dv_budget)

    if not state.bundle.testbench_source.strip():
        status = _generate_testbench(state, review_config)
        if status is not LoopStatus.SUCCESS:
            return _finish(state, config, status)

    status = _verification_loop(state, config)
    return _finish(state, config, status)


def _generate_testbench(state: LoopState, review_config: AutoReviewConfig) -> LoopStatus:
    """Task-based inputs arrive without a testbench; one is mandatory here."""
    prompt = TESTBENCH_PROMPT_TEMPLATE.format(
        top=state.bundle.top_module, design=state.bundle.design_source
    )
    status = run_compile_loop(
        state,
        prompt,
        review_config.budget.max_iterations,
        merge_into_previous=True,
    )
    if status is LoopStatus.SUCCESS and not state.bundle.testbench_source.strip():
        log.warning("agent did not produce a usable testbench")
        return LoopStatus.AGENT_FAILURE
    return status


def _verification_loop(state: LoopState, config: AutoDVConfig) -> LoopStatus:
    review_config = config.review_config
    threshold = config.coverage_threshold

    for dv_iteration in range(1, config.dv_budget.max_iterations + 1):
        try:
            sim = simulate(state.profile, state.current_sub, rules=state.rules)
        except (ToolNotFound, MissingArtifact) as exc:
            log.error("simulation failure: %s", exc)
            return LoopStatus.TOOL_FAILURE

        coverage = None
        try:
            coverage = measure_coverage(state.profile, state.bundle, state.current_sub, rules=state.rules)
        except ToolNotFound as exc:
            log.error("coverage tool failure: %s", exc)
            return LoopStatus.TOOL_FAILURE
        except (ParseFailure, MissingArtifact) as exc:
            # Degraded mode: functional-only verification for this run.
            log.warning("coverage unavailable (%s); continuing on simulation alone", exc)

        state.trace[-1] = dataclasses.replace(state.trace[-1], sim=sim, coverage=coverage)

        met_coverage = coverage is not None and coverage.aggregate >= threshold
        if sim.passed and met_coverage:
            return LoopStatus.SUCCESS
        if sim.passed and coverage is None:
            # Nothing measurable left to improve without coverage data.
            return LoopStatus.BUDGET_EXHAUSTED
        if dv_iteration == config.dv_budget.max_iterations or state.calls_left == 0:
            return LoopStatus.BUDGET_EXHAUSTED

        feedback = distill(
            sim=sim,
            coverage=coverage,
            cap=review_config.issue_cap,
            coverage_threshold=threshold,
        )
        analysis = state.review_analysis(feedback, sim.raw_log)
        state.trace[-1] = dataclasses.replace(state.trace[-1], feedback=feedback)
        prompt = render_review_prompt(feedback, state.bundle, analysis)

        keep_testbench = (
            not config.regenerate_testbench and feedback.phase is Phase.FUNCTIONAL_REPAIR
        )
        status = run_compile_loop(
            state,
            prompt,
            review_config.budget.max_iterations,
            merge_into_previous=True,
            keep_testbench=keep_testbench,
        )
        if status is not LoopStatus.SUCCESS:
            return status

    return LoopStatus.BUDGET_EXHAUSTED


def _finish(state: LoopState, config: AutoDVConfig, status: LoopStatus) -> LoopOutcome:
    outcome = finalize(state, state.outcome(status))
    try:
        summary = verification_summary(outcome, config.coverage_threshold)
        (state.ws.root / "verification_summary.txt").write_text(summary, encoding="utf-8")
    except OSError:  # pragma: no cover
        log.warning("could not write verification summary under %s", state.ws.root)
    return outcome


def verification_verdict(outcome: LoopOutcome, threshold: float) -> tuple[bool, bool]:
    """(met_coverage, functional_pass) read from the final simulated iteration.

    Pure read-out of the trace, no re-execution. Raises MissingReports when
    the outcome aborted before anything was simulated.
    """
    for record in reversed(outcome.trace):
        if record.sim is not None:
            met = record.coverage is not None and record.coverage.aggregate >= threshold
            return met, record.sim.passed
    raise MissingReports("outcome contains no simulation report")


def verification_summary(outcome: LoopOutcome, threshold: float) -> str:
    """Plain-text summary of a verification run, for humans and the CLI."""
    lines = ["Verification summary", f"  status: {outcome.status.value}"]
    simulated = sum(1 for r in outcome.trace if r.sim is not None)
    lines.append(f"  iterations: {outcome.iterations_used} ({simulated} simulated)")
    try:
        met_coverage, functional_pass = verification_verdict(outcome, threshold)
    except MissingReports:
        lines.append("  verification: never reached simulation")
        return "\n".join(lines) + "\n"
    lines.append(f"  functional: {'PASS' if functional_pass else 'FAIL'}")
    last_sim = outcome.last_sim_report()
    if last_sim is not None and not last_sim.passed:
        for failure in last_sim.failed_assertions[:5]:
            when = f" at time {failure.sim_time}" if failure.sim_time is not None else ""
            lines.append(f"    failed{when}: {failure.message}")
        if last_sim.mismatch_count:
            lines.append(f"    mismatches: {last_sim.mismatch_count}")
    coverage = None
    for record in reversed(outcome.trace):
        if record.sim is not None:
            coverage = record.coverage
            break
    if coverage is None:
        lines.append(f"  coverage: unavailable (target {threshold:.2%})")
    else:
        verdict = "met" if met_coverage else "below target"
        lines.append(f"  coverage: {coverage.aggregate:.2%} (target {threshold:.2%}) - {verdict}")
        for name, points in coverage.metrics.items():
            lines.append(f"    {name}: {points.covered}/{points.total}")
    return "\n".join(lines) + "\n"
