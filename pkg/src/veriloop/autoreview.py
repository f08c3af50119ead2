"""The syntax-correction loop: classify, generate, compile, distill, re-prompt.

One loop instance is strictly sequential and exception-contained: gateway and
tool failures become LoopOutcome statuses, never escaping exceptions, so a
harness can run thousands of adversarial scripts safely. Every iteration
leaves a complete audit trail (prompt, response, reports, feedback) both in
the returned trace and as files under the workspace.

Each record in a trace describes one candidate bundle: the exchange that
produced it, the reports measured on it, and the feedback distilled from
those reports. The verification loop reuses the same machinery, so its
records simply gain sim/coverage fields.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from veriloop.distill import (
    ParseRuleSet,
    distill,
    load_rules,
    log_excerpt,
    render_review_prompt,
)
from veriloop.eda import ToolProfile, Workspace, compile_bundle
from veriloop.errors import (
    ExtractionError,
    GatewayError,
    InteractionUnavailable,
    NoCodeFound,
    ToolNotFound,
)
from veriloop.extract import extract_rtl_bundle, first_module_name, merge_revision
from veriloop.gateway import (
    AgentConfig,
    AgentRole,
    ChatGateway,
    ChatMessage,
    Role,
    Transcript,
    build_gateway,
    new_transcript,
    record_transcript,
)
from veriloop.model import (
    Budget,
    CompileReport,
    DesignTask,
    IterationRecord,
    LoopOutcome,
    LoopStatus,
    PromptCase,
    ReviewFeedback,
    RtlBundle,
    to_canonical_json,
)

__all__ = [
    "AutoReviewConfig",
    "classify_prompt",
    "elicit_details",
    "run_autoreview",
    "DEFAULT_REVIEW_BUDGET",
]

log = logging.getLogger(__name__)

DEFAULT_REVIEW_BUDGET = Budget(max_iterations=5, max_agent_calls=15, tool_timeout_seconds=120)

MAX_ELICITATION_ROUNDS = 3

CODE_SYSTEM_PROMPT = """\
You are an expert digital design engineer writing synthesizable Verilog.
Reply with complete, compilable files only, each in its own fenced verilog code block.
When a testbench is requested: name its module tb_<design>, make it self-checking,
print "ALL TESTS PASSED" when every check passes, print
"ASSERTION FAILED at time <t>: <detail>" for each failing check,
and dump waves to dump.vcd."""

REVIEW_SYSTEM_PROMPT = """\
You are a meticulous RTL reviewer. Given distilled tool findings and a log excerpt,
explain the root cause of each issue in one or two sentences and name the smallest fix.
Be concrete; do not rewrite the code yourself.

The user's original request, for context:
{user_prompt}"""

ELICIT_SYSTEM_PROMPT = """\
You are a hardware design engineer gathering requirements.
The user's request is too vague to implement. Ask exactly one short clarifying
question per turn (bit widths, ports, reset behavior, interfaces).
When you have enough information to build the design, reply with the single word READY."""

GENERATION_PROMPT_TEMPLATE = """\
Design the following hardware module in Verilog.

Request:
{prompt}

Reply with two fenced verilog code blocks: first the complete design, then a
self-checking testbench module named tb_<design> that instantiates the design."""

TESTBENCH_PROMPT_TEMPLATE = """\
Write a self-checking Verilog testbench for the design below. Name the testbench
module tb_{top}, instantiate the design, stimulate it thoroughly, print
"ALL TESTS PASSED" when every check passes, print
"ASSERTION FAILED at time <t>: <detail>" for each failing check, and dump waves
to dump.vcd.

```verilog
{design}
```

Reply with the testbench in one fenced verilog code block."""

DISAMBIGUATION_PROMPT = """\
Your previous reply could not be parsed into a design and a testbench.
Reply again with the complete design in one fenced verilog code block, followed by
the testbench (module name starting with tb_) in a second fenced verilog code block.
No prose outside the code blocks."""

_MODULE_SPAN_RE = re.compile(r"\bmodule\b.*?\bendmodule\b", re.DOTALL)
_IMPERATIVE_RE = re.compile(r"\b(compile|verif\w*|test\w*|simulat\w*|check|lint)\b", re.IGNORECASE)
_PORT_TOKEN_RE = re.compile(
    r"\b(input|output|inout|ports?)\b|\w+\s*\[\s*\d+\s*:\s*\d+\s*\]", re.IGNORECASE
)
_BEHAVIOR_RE = re.compile(
    r"\b(reset|count|increment|decrement|toggle|shift|add|subtract|multiply|divide|"
    r"invert|wrap|clear|load|enable|select|mux|multiplex|latch|store|compute|"
    r"accumulate|compare|detect|sort|encode|decode|buffer|sample)\w*\b",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class AutoReviewConfig:
    """Everything one syntax-repair loop needs.

    review_agent = None disables the optional LLM review analysis (mechanical
    distillation still runs). answer_channel supplies answers for
    vague-prompt clarification: a callable taking the question text. The CLI
    wires it to the terminal; tests wire it to a script.
    """

    code_agent: AgentConfig
    tool_profile: ToolProfile
    review_agent: Optional[AgentConfig] = None
    budget: Budget = DEFAULT_REVIEW_BUDGET
    interactive: bool = False
    issue_cap: int = 10
    context_char_budget: int = 120_000
    answer_channel: Optional[Callable[[str], str]] = None

    def __post_init__(self) -> None:
        if self.issue_cap <= 0:
            raise ValueError("AutoReviewConfig.issue_cap: must be positive")
        if self.context_char_budget <= 0:
            raise ValueError("AutoReviewConfig.context_char_budget: must be positive")


def classify_prompt(prompt: str, provided_rtl: Optional[str] = None) -> PromptCase:
    """Sort a user prompt into one of the three intake cases.

    Task-based: RTL is provided outright, or the prompt both demands a
    compile/verify/test action and embeds a module definition. Detailed: at
    least one port-like token plus a behavioral clause. Everything else is
    vague.
    """
    if not prompt or not prompt.strip():
        raise ValueError("classify_prompt: prompt must be non-empty")
    if provided_rtl is not None:
        return PromptCase.TASK_BASED
    if _IMPERATIVE_RE.search(prompt) and _MODULE_SPAN_RE.search(prompt):
        return PromptCase.TASK_BASED
    if _PORT_TOKEN_RE.search(prompt) and _BEHAVIOR_RE.search(prompt):
        return PromptCase.DETAILED
    return PromptCase.VAGUE


def elicit_details(prompt: str, gateway: ChatGateway, config: AutoReviewConfig) -> str:
    """Bounded clarifying Q&A for vague prompts; returns the enriched prompt.

    Runs at most MAX_ELICITATION_ROUNDS question/answer rounds and stops
    early when the agent signals READY; always returns a best-effort
    enrichment rather than erroring at the bound.
    """
    if not config.interactive:
        raise InteractionUnavailable("clarifying Q&A requires interactive mode")
    channel = config.answer_channel
    if channel is None:
        raise InteractionUnavailable("no answer channel configured")
    transcript = new_transcript(ELICIT_SYSTEM_PROMPT, prompt, AgentRole.CODE)
    parts = [prompt]
    for _ in range(MAX_ELICITATION_ROUNDS):
        reply = gateway.send(transcript)
        transcript = transcript.append(reply)
        if reply.content.strip().upper().endswith("READY"):
            break
        answer = channel(reply.content) or "no preference"
        parts.append(f"Q: {reply.content.strip()}\nA: {answer.strip()}")
        transcript = transcript.append(ChatMessage(Role.USER, answer))
    return "\n\n".join(parts)


class CountingGateway(ChatGateway):
    """Counts successful sends so budget checks see every agent call."""

    def __init__(self, inner: ChatGateway):
        self._inner = inner
        self.calls = 0

    def send(self, transcript: Transcript) -> ChatMessage:
        reply = self._inner.send(transcript)
        self.calls += 1
        return reply

    def _complete(self, transcript: Transcript) -> ChatMessage:  # pragma: no cover
        raise NotImplementedError


def _prune_transcript(transcript: Transcript, char_budget: int) -> Transcript:
    """Drop the oldest review exchanges pairwise once the context grows too large.

    The system prompt and the original generation request are always kept.
    """
    messages = list(transcript.messages)
    while sum(len(m.content) for m in messages) > char_budget and len(messages) > 4:
        del messages[2:4]
    return Transcript(messages=tuple(messages), agent_role=transcript.agent_role)


def bundle_from_source(source: str) -> RtlBundle:
    """Wrap caller-provided RTL as a design-only bundle."""
    top = first_module_name(source)
    if top is None:
        raise NoCodeFound("provided RTL declares no module")
    return RtlBundle(design_source=source, testbench_source="", top_module=top)


def _capped_profile(profile: ToolProfile, budget: Budget) -> ToolProfile:
    cap = budget.tool_timeout_seconds
    return dataclasses.replace(
        profile,
        compile_timeout_seconds=min(profile.compile_timeout_seconds, cap),
        sim_timeout_seconds=min(profile.sim_timeout_seconds, cap),
        coverage_timeout_seconds=min(profile.coverage_timeout_seconds, cap),
    )


@dataclass
class LoopState:
    """Mutable bookkeeping shared between the two loop engines.

    call_cap is the absolute agent-call allowance; the verification loop
    raises it when it enters its own phase so the combined total stays within
    both budgets' caps.
    """

    config: AutoReviewConfig
    task: DesignTask
    ws: Workspace
    code_gw: CountingGateway
    review_gw: Optional[CountingGateway]
    call_cap: int
    profile: ToolProfile
    rules: ParseRuleSet
    trace: list[IterationRecord] = field(default_factory=list)
    transcript: Optional[Transcript] = None
    bundle: Optional[RtlBundle] = None
    current_sub: Optional[Workspace] = None

    @classmethod
    def create(
        cls,
        task: DesignTask,
        config: AutoReviewConfig,
        ws: Workspace,
        code_gateway: Optional[ChatGateway] = None,
        review_gateway: Optional[ChatGateway] = None,
    ) -> "LoopState":
        code_gw = CountingGateway(code_gateway or build_gateway(config.code_agent))
        review_gw: Optional[CountingGateway] = None
        if review_gateway is not None:
            review_gw = CountingGateway(review_gateway)
        elif config.review_agent is not None:
            review_gw = CountingGateway(build_gateway(config.review_agent))
        return cls(
            config=config,
            task=task,
            ws=ws,
            code_gw=code_gw,
            review_gw=review_gw,
            call_cap=config.budget.max_agent_calls,
            profile=_capped_profile(config.tool_profile, config.budget),
            rules=load_rules(config.tool_profile.tool_id),
        )

    @property
    def next_index(self) -> int:
        return self.trace[-1].index + 1 if self.trace else 1

    @property
    def calls_used(self) -> int:
        return self.code_gw.calls + (self.review_gw.calls if self.review_gw else 0)

    @property
    def calls_left(self) -> int:
        return max(0, self.call_cap - self.calls_used)

    def outcome(self, status: LoopStatus) -> LoopOutcome:
        return LoopOutcome(
            status=status,
            iterations_used=len(self.trace),
            final_bundle=self.bundle,
            trace=tuple(self.trace),
        )

    def send_code(self, prompt_text: str) -> ChatMessage:
        if self.transcript is None:
            self.transcript = new_transcript(CODE_SYSTEM_PROMPT, prompt_text, AgentRole.CODE)
        else:
            pruned = _prune_transcript(self.transcript, self.config.context_char_budget)
            self.transcript = pruned.append(ChatMessage(Role.USER, prompt_text))
        reply = self.code_gw.send(self.transcript)
        self.transcript = self.transcript.append(reply)
        return reply

    def review_analysis(self, feedback: ReviewFeedback, raw_log: str) -> Optional[str]:
        """Optional LLM pass over the distilled issues; never fatal to the loop."""
        if self.review_gw is None or self.calls_left <= 1:
            return None
        issue_lines = "\n".join(f"- [{i.origin}] {i.explanation}" for i in feedback.issues)
        request = (
            f"Findings ({feedback.phase.value}):\n{issue_lines}\n\n"
            f"Log excerpt:\n{log_excerpt(raw_log)}"
        )
        transcript = new_transcript(
            REVIEW_SYSTEM_PROMPT.format(user_prompt=self.task.user_prompt),
            request,
            AgentRole.REVIEW,
        )
        try:
            return self.review_gw.send(transcript).content
        except GatewayError as exc:
            log.warning("review analysis skipped: %s", exc)
            return None

    def record(
        self,
        index: int,
        prompt_text: str,
        response_text: str,
        calls: int,
        compile_report: Optional[CompileReport] = None,
        feedback: Optional[ReviewFeedback] = None,
    ) -> None:
        self.trace.append(
            IterationRecord(
                index=index,
                prompt_sent=prompt_text,
                agent_response=response_text,
                compile=compile_report,
                feedback=feedback,
                agent_calls=calls,
            )
        )

    def write_artifacts(self, sub: Workspace, prompt_text: str, response_text: str) -> None:
        try:
            (sub.root / "prompt.txt").write_text(prompt_text, encoding="utf-8")
            (sub.root / "response.txt").write_text(response_text, encoding="utf-8")
        except OSError:  # pragma: no cover - audit files are best-effort
            log.warning("could not write iteration artifacts under %s", sub.root)


def run_compile_loop(
    state: LoopState,
    first_prompt: Optional[str],
    max_new_iterations: int,
    *,
    use_provided_rtl: bool = False,
    merge_into_previous: bool = False,
    keep_testbench: bool = False,
) -> LoopStatus:
    """Drive generate/compile/repair iterations until clean or out of budget.

    first_prompt is the prompt that produces the first candidate of this
    invocation (None only with use_provided_rtl). With merge_into_previous,
    replies are folded into state.bundle so partial revisions keep the
    untouched file. Returns SUCCESS once a candidate compiles with zero
    error-severity diagnostics; the caller owns outcome construction.
    """
    config = state.config
    next_prompt = first_prompt
    new_iterations = 0

    while new_iterations < max_new_iterations:
        index = state.next_index
        calls_before = state.calls_used
        prompt_text = next_prompt or ""
        response_text = ""
        candidate: Optional[RtlBundle] = None

        if use_provided_rtl and new_iterations == 0:
            prompt_text = state.task.user_prompt
            try:
                candidate = bundle_from_source(state.task.provided_rtl or "")
            except ExtractionError:
                return LoopStatus.AGENT_FAILURE
        else:
            if state.calls_left == 0:
                return LoopStatus.BUDGET_EXHAUSTED
            try:
                reply = state.send_code(prompt_text)
                response_text = reply.content
                candidate = _extract_candidate(state, reply, merge_into_previous, keep_testbench)
                if candidate is None and state.calls_left > 0:
                    reply = state.send_code(DISAMBIGUATION_PROMPT)
                    response_text = reply.content
                    candidate = _extract_candidate(state, reply, merge_into_previous, keep_testbench)
            except GatewayError as exc:
                log.warning("agent failure: %s", exc)
                return LoopStatus.AGENT_FAILURE

        new_iterations += 1
        if candidate is None:
            state.record(index, prompt_text, response_text, state.calls_used - calls_before)
            next_prompt = DISAMBIGUATION_PROMPT
            continue

        state.bundle = candidate
        sub = state.ws.subspace(f"iter_{index:03d}")
        state.current_sub = sub
        state.write_artifacts(sub, prompt_text, response_text)
        try:
            report = compile_bundle(state.profile, candidate, sub, rules=state.rules)
        except ToolNotFound as exc:
            log.error("tool failure: %s", exc)
            state.record(index, prompt_text, response_text, state.calls_used - calls_before)
            return LoopStatus.TOOL_FAILURE

        if report.error_count == 0:
            state.record(
                index, prompt_text, response_text, state.calls_used - calls_before, report
            )
            return LoopStatus.SUCCESS

        feedback: Optional[ReviewFeedback] = None
        if new_iterations < max_new_iterations and state.calls_left > 0:
            feedback = distill(compile=report, cap=config.issue_cap)
            analysis = state.review_analysis(feedback, report.raw_log)
            next_prompt = render_review_prompt(feedback, candidate, analysis)

        state.record(
            index, prompt_text, response_text, state.calls_used - calls_before, report, feedback
        )
        if feedback is None:
            break

    return LoopStatus.BUDGET_EXHAUSTED


def _extract_candidate(
    state: LoopState,
    reply: ChatMessage,
    merge_into_previous: bool,
    keep_testbench: bool,
) -> Optional[RtlBundle]:
    try:
        if merge_into_previous and state.bundle is not None:
            return merge_revision(state.bundle, reply, keep_testbench=keep_testbench)
        return extract_rtl_bundle(reply)
    except ExtractionError as exc:
        log.debug("extraction failed: %s", exc)
        return None


def prepare_initial_prompt(task: DesignTask, config: AutoReviewConfig, gateway: ChatGateway) -> str:
    """The first generation prompt, after optional vague-prompt enrichment."""
    prompt = task.user_prompt
    if (
        task.case is PromptCase.VAGUE
        and config.interactive
        and config.answer_channel is not None
    ):
        try:
            prompt = elicit_details(task.user_prompt, gateway, config)
        except GatewayError as exc:
            log.warning("elicitation failed, proceeding with original prompt: %s", exc)
    return GENERATION_PROMPT_TEMPLATE.format(prompt=prompt)


def finalize(state: LoopState, outcome: LoopOutcome) -> LoopOutcome:
    """Persist the transcript and outcome file at the workspace root."""
    if state.transcript is not None:
        try:
            record_transcript(state.transcript, state.ws.root)
        except OSError:  # pragma: no cover
            log.warning("could not record transcript under %s", state.ws.root)
    try:
        (state.ws.root / "outcome.json").write_text(to_canonical_json(outcome), encoding="utf-8")
    except OSError:  # pragma: no cover
        log.warning("could not write outcome file under %s", state.ws.root)
    return outcome


def run_autoreview(
    task: DesignTask,
    config: AutoReviewConfig,
    ws: Workspace,
    *,
    code_gateway: Optional[ChatGateway] = None,
    review_gateway: Optional[ChatGateway] = None,
) -> LoopOutcome:
    """Generate a candidate bundle and iterate compile/distill/re-prompt until clean.

    Returns a LoopOutcome for every input: gateway errors become
    agent_failure, a missing tool tool_failure, spent budgets
    budget_exhausted. Gateways may be passed in to share replay cursors with
    a caller.
    """
    state = LoopState.create(task, config, ws, code_gateway, review_gateway)
    use_provided = task.case is PromptCase.TASK_BASED and task.provided_rtl is not None
    if use_provided:
        initial_prompt: Optional[str] = None
    else:
        try:
            initial_prompt = prepare_initial_prompt(task, config, state.code_gw)
        except GatewayError:
            return finalize(state, state.outcome(LoopStatus.AGENT_FAILURE))

    status = run_compile_loop(
        state,
        initial_prompt,
        config.budget.max_iterations,
        use_provided_rtl=use_provided,
    )
    return finalize(state, state.outcome(status))
