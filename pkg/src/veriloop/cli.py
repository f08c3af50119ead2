"""The veriloop command line: generate, verify, bench, record, import-dataset.

Configuration layers, later wins: built-in defaults, config file (--config or
./veriloop.conf), environment (VERILOOP_* variables), command-line flags.
Unknown config keys are rejected. API keys are accepted only through the
environment variable named by code.api_key_env, never as flags or file
entries.

Exit codes are part of the contract:
  0 success, 1 tool/agent failure, 2 budget exhausted,
  3 functional pass but coverage below threshold (verify only),
  64 usage/config error, 65 dataset error (bench only).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from veriloop.autodv import AutoDVConfig, run_autodv, verification_summary, verification_verdict
from veriloop.autoreview import AutoReviewConfig, classify_prompt, run_autoreview
from veriloop.bench import (
    BenchConfig,
    ReportFormat,
    SuiteMode,
    convert_verilogeval,
    emit_report,
    load_dataset,
    render_markdown_table,
    run_suite,
)
from veriloop.eda import get_profile, make_workspace
from veriloop.errors import (
    ConfigError,
    FormatError,
    MissingReports,
    VeriloopError,
)
from veriloop.gateway import AgentConfig, ChatGateway, Provider, Recorder, ReplayGateway, build_gateway
from veriloop.model import Budget, DesignTask, LoopOutcome, LoopStatus, PromptCase

__all__ = ["main", "build_parser", "resolve_config", "RunConfig"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BUDGET = 2
EXIT_COVERAGE_SHORT = 3
EXIT_USAGE = 64
EXIT_DATA = 65

ENV_PREFIX = "VERILOOP_"
DEFAULT_CONFIG_FILE = "veriloop.conf"

DEFAULTS: dict[str, str] = {
    "code.provider": "http_chat",
    "code.model": "default",
    "code.endpoint": "",
    "code.replay_dir": "",
    "code.temperature": "0.2",
    "code.api_key_env": "VERILOOP_API_KEY",
    "code.request_timeout_seconds": "30",
    "code.max_retries": "2",
    "review.enabled": "false",
    "review.provider": "",
    "review.model": "",
    "review.endpoint": "",
    "review.replay_dir": "",
    "review.temperature": "0.0",
    "review.api_key_env": "",
    "tool.profile": "stub",
    "budget.review_iterations": "5",
    "budget.review_agent_calls": "15",
    "budget.dv_iterations": "5",
    "budget.dv_agent_calls": "15",
    "budget.tool_timeout_seconds": "120",
    "coverage.threshold": "0.90",
    "workspace.dir": "veriloop_runs",
    "jobs": "1",
    "log.verbosity": "info",
}

# Flag destination -> config key. Only set flags override.
_FLAG_KEYS = {
    "provider": "code.provider",
    "model": "code.model",
    "endpoint": "code.endpoint",
    "replay_dir": "code.replay_dir",
    "temperature": "code.temperature",
    "tool_profile": "tool.profile",
    "workspace_dir": "workspace.dir",
    "coverage_threshold": "coverage.threshold",
    "jobs": "jobs",
    "max_iterations": "budget.review_iterations",
    "dv_iterations": "budget.dv_iterations",
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    code_agent: AgentConfig
    review_agent: Optional[AgentConfig]
    tool_profile_name: str
    review_budget: Budget
    dv_budget: Budget
    coverage_threshold: float
    workspace_dir: Path
    jobs: int
    verbosity: str


def _parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _env_overrides() -> dict[str, str]:
    values = {}
    for key in DEFAULTS:
        env_name = ENV_PREFIX + key.replace(".", "_").upper()
        if env_name in os.environ:
            values[key] = os.environ[env_name]
    return values


def _flag_overrides(args: argparse.Namespace) -> dict[str, str]:
    values = {}
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = str(value)
    return values


def _as_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _as_int(raw: str, key: str, minimum: int = 1) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}")
    return value


def _as_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _agent_from(values: dict[str, str], section: str, default_temperature: float) -> AgentConfig:
    provider_raw = values[f"{section}.provider"] or values["code.provider"]
    try:
        provider = Provider(provider_raw)
    except ValueError:
        raise ConfigError(
            f"{section}.provider: unknown provider {provider_raw!r} "
            f"(expected http_chat or replay)"
        ) from None
    temperature_raw = values[f"{section}.temperature"]
    temperature = _as_float(temperature_raw, f"{section}.temperature") if temperature_raw else default_temperature
    kwargs = dict(
        provider=provider,
        model_id=values[f"{section}.model"] or values["code.model"],
        temperature=temperature,
        request_timeout_seconds=_as_int(
            values["code.request_timeout_seconds"], "code.request_timeout_seconds"
        ),
        max_retries=_as_int(values["code.max_retries"], "code.max_retries", minimum=0),
    )
    if provider is Provider.HTTP_CHAT:
        endpoint = values[f"{section}.endpoint"] or values["code.endpoint"]
        if not endpoint:
            raise ConfigError(f"{section}.endpoint: required for the http_chat provider")
        kwargs["endpoint"] = endpoint
        kwargs["api_key_env"] = values[f"{section}.api_key_env"] or values["code.api_key_env"]
    else:
        replay_dir = values[f"{section}.replay_dir"] or values["code.replay_dir"]
        if not replay_dir:
            raise ConfigError(f"{section}.replay_dir: required for the replay provider")
        kwargs["replay_dir"] = replay_dir
    try:
        return AgentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Layer defaults <- config file <- environment <- flags and validate."""
    values = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(_parse_config_file(path))
    elif Path(DEFAULT_CONFIG_FILE).is_file():
        values.update(_parse_config_file(Path(DEFAULT_CONFIG_FILE)))
    values.update(_env_overrides())
    values.update(_flag_overrides(args))

    code_agent = _agent_from(values, "code", default_temperature=0.2)
    review_agent = None
    if _as_bool(values["review.enabled"], "review.enabled"):
        review_agent = _agent_from(values, "review", default_temperature=0.0)

    threshold = _as_float(values["coverage.threshold"], "coverage.threshold")
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("coverage.threshold: must be in (0, 1]")

    tool_timeout = _as_int(values["budget.tool_timeout_seconds"], "budget.tool_timeout_seconds")
    review_budget = Budget(
        max_iterations=_as_int(values["budget.review_iterations"], "budget.review_iterations"),
        max_agent_calls=_as_int(values["budget.review_agent_calls"], "budget.review_agent_calls"),
        tool_timeout_seconds=tool_timeout,
    )
    dv_budget = Budget(
        max_iterations=_as_int(values["budget.dv_iterations"], "budget.dv_iterations"),
        max_agent_calls=_as_int(values["budget.dv_agent_calls"], "budget.dv_agent_calls"),
        tool_timeout_seconds=tool_timeout,
    )
    verbosity = values["log.verbosity"]
    if verbosity not in ("quiet", "info", "debug"):
        raise ConfigError("log.verbosity: expected quiet, info, or debug")
    return RunConfig(
        code_agent=code_agent,
        review_agent=review_agent,
        tool_profile_name=values["tool.profile"],
        review_budget=review_budget,
        dv_budget=dv_budget,
        coverage_threshold=threshold,
        workspace_dir=Path(values["workspace.dir"]),
        jobs=_as_int(values["jobs"], "jobs"),
        verbosity=verbosity,
    )


def _configure_logging(verbosity: str) -> None:
    level = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}[verbosity]
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _build_gateways(config: RunConfig) -> tuple[ChatGateway, Optional[ChatGateway]]:
    """Build agent gateways; replay agents sharing one directory share one cursor."""
    code_gw = build_gateway(config.code_agent)
    review_gw = None
    if config.review_agent is not None:
        if (
            config.code_agent.provider is Provider.REPLAY
            and config.review_agent.provider is Provider.REPLAY
            and config.code_agent.replay_dir == config.review_agent.replay_dir
        ):
            review_gw = code_gw
        else:
            review_gw = build_gateway(config.review_agent)
    return code_gw, review_gw


def _review_config(config: RunConfig, *, interactive: bool) -> AutoReviewConfig:
    return AutoReviewConfig(
        code_agent=config.code_agent,
        tool_profile=get_profile(config.tool_profile_name),
        review_agent=config.review_agent,
        budget=config.review_budget,
        interactive=interactive,
        answer_channel=_terminal_answer_channel if interactive else None,
    )


def _terminal_answer_channel(question: str) -> str:
    print(question, file=sys.stderr)
    try:
        return input("> ")
    except EOFError:
        return ""


def _read_prompt(args: argparse.Namespace) -> Optional[str]:
    """Exactly one of --prompt / --prompt-file; None signals a usage error."""
    if bool(args.prompt) == bool(args.prompt_file):
        return None
    if args.prompt:
        return args.prompt
    return Path(args.prompt_file).read_text(encoding="utf-8")


def _generate_exit_code(outcome: LoopOutcome) -> int:
    if outcome.status is LoopStatus.SUCCESS:
        return EXIT_OK
    if outcome.status is LoopStatus.BUDGET_EXHAUSTED:
        return EXIT_BUDGET
    return EXIT_FAILURE


def _print_generate_summary(outcome: LoopOutcome, ws_root: Path) -> None:
    last_compile = outcome.last_compile_report()
    errors = str(last_compile.error_count) if last_compile is not None else "n/a"
    print(f"workspace: {ws_root}")
    print(f"status: {outcome.status.value}")
    print(f"iterations: {outcome.iterations_used}, errors: {errors}")


def cmd_generate(
    args: argparse.Namespace,
    config: RunConfig,
    gateways: Optional[tuple[ChatGateway, Optional[ChatGateway]]] = None,
) -> int:
    prompt = _read_prompt(args)
    if prompt is None:
        print("error: exactly one of --prompt / --prompt-file is required", file=sys.stderr)
        return EXIT_USAGE
    case = classify_prompt(prompt)
    task = DesignTask(task_id=args.task_id, user_prompt=prompt, case=case)
    review_config = _review_config(config, interactive=args.interactive)
    config.workspace_dir.mkdir(parents=True, exist_ok=True)
    ws = make_workspace(args.task_id, config.workspace_dir)
    code_gw, review_gw = gateways if gateways is not None else _build_gateways(config)
    outcome = run_autoreview(task, review_config, ws, code_gateway=code_gw, review_gateway=review_gw)
    _print_generate_summary(outcome, ws.root)
    return _generate_exit_code(outcome)


def cmd_verify(
    args: argparse.Namespace,
    config: RunConfig,
    gateways: Optional[tuple[ChatGateway, Optional[ChatGateway]]] = None,
) -> int:
    rtl_path = Path(args.rtl)
    if not rtl_path.is_file():
        print(f"error: cannot read RTL input: {rtl_path}", file=sys.stderr)
        return EXIT_USAGE
    rtl_text = rtl_path.read_text(encoding="utf-8")
    task = DesignTask(
        task_id=args.task_id,
        user_prompt=f"Compile and verify the provided design from {rtl_path.name}.",
        case=PromptCase.TASK_BASED,
        provided_rtl=rtl_text,
    )
    dv_config = AutoDVConfig(
        review_config=_review_config(config, interactive=False),
        coverage_threshold=config.coverage_threshold,
        dv_budget=config.dv_budget,
    )
    config.workspace_dir.mkdir(parents=True, exist_ok=True)
    ws = make_workspace(args.task_id, config.workspace_dir)
    code_gw, review_gw = gateways if gateways is not None else _build_gateways(config)
    outcome = run_autodv(task, dv_config, ws, code_gateway=code_gw, review_gateway=review_gw)
    print(f"workspace: {ws.root}")
    print(verification_summary(outcome, config.coverage_threshold), end="")
    if outcome.status is LoopStatus.SUCCESS:
        return EXIT_OK
    if outcome.status is LoopStatus.BUDGET_EXHAUSTED:
        try:
            met_coverage, functional_pass = verification_verdict(outcome, config.coverage_threshold)
        except MissingReports:
            return EXIT_BUDGET
        if functional_pass and not met_coverage:
            return EXIT_COVERAGE_SHORT
        return EXIT_BUDGET
    return EXIT_FAILURE


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> int:
    if args.k > args.n:
        print("error: --k must not exceed --n", file=sys.stderr)
        return EXIT_USAGE
    try:
        dataset = load_dataset(args.dataset)
        if not dataset:
            raise FormatError(f"{args.dataset}: dataset is empty")
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    bench_config = BenchConfig(
        code_agent=config.code_agent,
        tool_profile=get_profile(config.tool_profile_name),
        review_agent=config.review_agent,
        review_budget=config.review_budget,
        dv_budget=config.dv_budget,
        coverage_threshold=config.coverage_threshold,
    )
    out_dir = Path(args.out)
    work_dir = config.workspace_dir / "bench"
    report = run_suite(
        dataset,
        SuiteMode(args.mode),
        n_samples=args.n,
        k=args.k,
        jobs=args.jobs if args.jobs is not None else config.jobs,
        config=bench_config,
        work_dir=work_dir,
    )
    emit_report(report, ReportFormat.JSON, out_dir)
    emit_report(report, ReportFormat.MARKDOWN_TABLE, out_dir)
    print(render_markdown_table(report), end="")
    log.info("reports written to %s", out_dir)
    return EXIT_OK


def cmd_record(args: argparse.Namespace, config: RunConfig) -> int:
    if config.code_agent.provider is not Provider.HTTP_CHAT:
        print("error: record requires a live (http_chat) code agent", file=sys.stderr)
        return EXIT_USAGE
    try:
        recorder = Recorder(args.record_dir, force=args.force)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code_gw = recorder.wrap(build_gateway(config.code_agent))
    review_gw = (
        recorder.wrap(build_gateway(config.review_agent))
        if config.review_agent is not None
        else None
    )
    if args.rtl:
        exit_code = cmd_verify(args, config, gateways=(code_gw, review_gw))
    else:
        exit_code = cmd_generate(args, config, gateways=(code_gw, review_gw))
    print(f"recorded {recorder.calls_recorded} agent responses to {args.record_dir}")
    return exit_code


def cmd_import_dataset(args: argparse.Namespace) -> int:
    try:
        count = convert_verilogeval(args.problems, args.descriptions, args.out)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote {count} tasks to {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with the documented code."""

    def error(self, message: str):  # noqa: D401 - argparse contract
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="config file path (default ./veriloop.conf)")
    parser.add_argument("--provider", choices=["http_chat", "replay"], help="code agent provider")
    parser.add_argument("--model", help="code agent model identifier")
    parser.add_argument("--endpoint", help="chat-completions endpoint URL (http_chat)")
    parser.add_argument("--replay-dir", dest="replay_dir", help="replay responses directory (replay)")
    parser.add_argument("--temperature", type=float, help="code agent sampling temperature")
    parser.add_argument("--tool-profile", dest="tool_profile", choices=["stub", "icarus"], help="EDA tool profile")
    parser.add_argument("--workspace-dir", dest="workspace_dir", help="base directory for run workspaces")
    parser.add_argument("--max-iterations", dest="max_iterations", type=int, help="syntax-repair iteration budget")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")


def _add_prompt_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--prompt", help="design request text")
    parser.add_argument("--prompt-file", dest="prompt_file", help="file containing the design request")
    parser.add_argument("--task-id", dest="task_id", default="task", help="workspace name for this run")
    parser.add_argument("--interactive", action="store_true", help="allow clarifying Q&A for vague prompts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="veriloop",
        description="Agent-driven RTL generation, syntax repair, and verification loops.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_generate = sub.add_parser("generate", help="generate RTL and repair it until it compiles")
    _add_common_flags(p_generate)
    _add_prompt_flags(p_generate)

    p_verify = sub.add_parser("verify", help="run the verification loop on an RTL file")
    _add_common_flags(p_verify)
    p_verify.add_argument("rtl", help="path to the design source to verify")
    p_verify.add_argument("--task-id", dest="task_id", default="verify", help="workspace name for this run")
    p_verify.add_argument(
        "--coverage-threshold",
        dest="coverage_threshold",
        type=float,
        help="aggregate coverage target in (0, 1]",
    )

    p_bench = sub.add_parser("bench", help="run an evaluation suite and report pass@k metrics")
    _add_common_flags(p_bench)
    p_bench.add_argument("dataset", help="line-delimited dataset file")
    p_bench.add_argument("--mode", choices=[m.value for m in SuiteMode], default="autoreview")
    p_bench.add_argument("--n", type=int, default=1, help="samples per task")
    p_bench.add_argument("--k", type=int, default=1, help="pass@k parameter")
    p_bench.add_argument("--jobs", type=int, help="parallel workers")
    p_bench.add_argument("--out", default="bench_out", help="report output directory")

    p_record = sub.add_parser("record", help="run live once, saving agent responses for replay")
    _add_common_flags(p_record)
    _add_prompt_flags(p_record)
    p_record.add_argument("--rtl", help="record a verify run over this RTL file instead")
    p_record.add_argument("--record-dir", dest="record_dir", required=True, help="directory for saved responses")
    p_record.add_argument("--force", action="store_true", help="overwrite a non-empty record directory")
    p_record.add_argument(
        "--coverage-threshold",
        dest="coverage_threshold",
        type=float,
        help="aggregate coverage target in (0, 1]",
    )

    p_import = sub.add_parser("import-dataset", help="convert a VerilogEval-Human distribution")
    p_import.add_argument("problems", help="problems JSONL (task_id/prompt/test)")
    p_import.add_argument("descriptions", help="descriptions JSONL (task_id/detail_description)")
    p_import.add_argument("out", help="output dataset path")

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    if args.command == "import-dataset":
        return cmd_import_dataset(args)

    if getattr(args, "coverage_threshold", None) is not None and not (
        0.0 < args.coverage_threshold <= 1.0
    ):
        print("error: --coverage-threshold must be in (0, 1]", file=sys.stderr)
        return EXIT_USAGE

    try:
        config = resolve_config(args)
        if getattr(args, "verbose", False):
            config = dataclasses.replace(config, verbosity="debug")
        _configure_logging(config.verbosity)
        if args.command == "generate":
            return cmd_generate(args, config)
        if args.command == "verify":
            return cmd_verify(args, config)
        if args.command == "bench":
            return cmd_bench(args, config)
        if args.command == "record":
            return cmd_record(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VeriloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
