"""Tool-agnostic adapters running compile/simulate/coverage as sandboxed processes.

Every invocation is confined to a Workspace directory: sources are written
there, commands run with it as the working directory, and reports carry the
full raw log. Command templates are argument vectors with {design},
{testbench}, {out}, {workdir}, {top} placeholders; an entry consisting of a
single placeholder that resolves empty is elided (so profiles work with and
without a testbench). Timeouts kill the whole process tree and surface
in-band so repair loops can react instead of aborting.
"""

from __future__ import annotations

import os
import re
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from veriloop.distill import ParseRuleSet, load_rules, parse_compile_log, parse_sim_log, parse_coverage_report
from veriloop.errors import MissingArtifact, ToolNotFound
from veriloop.model import (
    AssertionFailure,
    Category,
    CompileReport,
    CoverageReport,
    Diagnostic,
    RtlBundle,
    Severity,
    SimReport,
    is_filesystem_safe,
)

__all__ = [
    "ToolProfile",
    "Workspace",
    "make_workspace",
    "compile_bundle",
    "simulate",
    "measure_coverage",
    "stub_profile",
    "icarus_profile",
    "get_profile",
    "set_max_concurrent_tools",
    "DESIGN_FILE",
    "TESTBENCH_FILE",
    "COMPILED_FILE",
    "DUMP_FILE",
]

DESIGN_FILE = "design.v"
TESTBENCH_FILE = "tb.v"
COMPILED_FILE = "compiled.out"
DUMP_FILE = "dump.vcd"

ALLOWED_PLACEHOLDERS = {"design", "testbench", "out", "workdir", "top"}
_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")

_TIMEOUT_GRACE_SECONDS = 1.0

# Bounds simultaneous external tool processes across all threads.
_tool_semaphore = threading.BoundedSemaphore(os.cpu_count() or 4)


def set_max_concurrent_tools(limit: int) -> None:
    """Replace the global process cap. Call before starting workers, not during."""
    global _tool_semaphore
    if limit < 1:
        raise ValueError("set_max_concurrent_tools: limit must be >= 1")
    _tool_semaphore = threading.BoundedSemaphore(limit)


def _check_template(name: str, template: tuple[str, ...]) -> None:
    if not template:
        raise ValueError(f"ToolProfile.{name}: empty command template")
    for entry in template:
        for token in _PLACEHOLDER_RE.findall(entry):
            if token not in ALLOWED_PLACEHOLDERS:
                raise ValueError(f"ToolProfile.{name}: undeclared placeholder {{{token}}}")


@dataclass(frozen=True, slots=True)
class ToolProfile:
    """Command templates and timeouts for one toolchain.

    coverage_report_cmd exists because some coverage tools split scoring and
    reporting into two invocations; when set, both run and their logs are
    concatenated before parsing.
    """

    tool_id: str
    compile_cmd: tuple[str, ...]
    sim_cmd: tuple[str, ...]
    coverage_cmd: tuple[str, ...]
    coverage_report_cmd: Optional[tuple[str, ...]] = None
    compile_timeout_seconds: int = 60
    sim_timeout_seconds: int = 120
    coverage_timeout_seconds: int = 60
    extra_env: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "compile_cmd", tuple(self.compile_cmd))
        object.__setattr__(self, "sim_cmd", tuple(self.sim_cmd))
        object.__setattr__(self, "coverage_cmd", tuple(self.coverage_cmd))
        if self.coverage_report_cmd is not None:
            object.__setattr__(self, "coverage_report_cmd", tuple(self.coverage_report_cmd))
        for name in ("compile_timeout_seconds", "sim_timeout_seconds", "coverage_timeout_seconds"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ToolProfile.{name}: must be positive")
        _check_template("compile_cmd", self.compile_cmd)
        _check_template("sim_cmd", self.sim_cmd)
        _check_template("coverage_cmd", self.coverage_cmd)
        if self.coverage_report_cmd is not None:
            _check_template("coverage_report_cmd", self.coverage_report_cmd)


@dataclass(frozen=True, slots=True)
class Workspace:
    """A directory all tool I/O for one loop run is confined to."""

    root: Path
    task_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root))
        if not self.root.is_absolute():
            raise ValueError("Workspace.root: must be an absolute path")

    def subspace(self, name: str) -> "Workspace":
        if not is_filesystem_safe(name):
            raise ValueError(f"Workspace.subspace: unsafe name {name!r}")
        child = self.root / name
        child.mkdir(parents=True, exist_ok=True)
        return Workspace(root=child, task_id=self.task_id)


_RUN_DIR_RE = re.compile(r"^run_(\d{3,})$")


def make_workspace(task_id: str, base_dir: str | Path) -> Workspace:
    """Create base_dir/task_id/run_NNN with a monotonically increasing counter."""
    if not is_filesystem_safe(task_id):
        raise ValueError(f"make_workspace: task_id not filesystem-safe: {task_id!r}")
    base = Path(base_dir)
    if not base.is_dir():
        raise OSError(f"make_workspace: base_dir does not exist: {base}")
    task_root = base / task_id
    task_root.mkdir(exist_ok=True)
    taken = [
        int(m.group(1))
        for p in task_root.iterdir()
        if (m := _RUN_DIR_RE.match(p.name))
    ]
    counter = max(taken, default=0) + 1
    while True:
        root = task_root / f"run_{counter:03d}"
        try:
            root.mkdir()
        except FileExistsError:
            counter += 1
            continue
        return Workspace(root=root.resolve(), task_id=task_id)


def _expand(template: tuple[str, ...], values: Mapping[str, str]) -> list[str]:
    argv = []
    for entry in template:
        expanded = entry.format_map(values)
        if not expanded and _PLACEHOLDER_RE.fullmatch(entry):
            continue
        argv.append(expanded)
    return argv


def _scrubbed_env(profile: ToolProfile) -> dict[str, str]:
    env = {"PATH": os.environ.get("PATH", "")}
    env.update(dict(profile.extra_env))
    return env


def _run(
    argv: list[str],
    cwd: Path,
    timeout_seconds: int,
    env: dict[str, str],
) -> tuple[int, str, float, bool]:
    """(returncode, combined_log, wall_seconds, timed_out); kills the tree on timeout."""
    start = time.monotonic()
    try:
        with _tool_semaphore:
            proc = subprocess.Popen(
                argv,
                cwd=str(cwd),
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                env=env,
                start_new_session=True,
            )
            try:
                out, _ = proc.communicate(timeout=timeout_seconds)
                timed_out = False
            except subprocess.TimeoutExpired:
                timed_out = True
                try:
                    os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    proc.kill()
                out, _ = proc.communicate(timeout=_TIMEOUT_GRACE_SECONDS)
    except FileNotFoundError:
        raise ToolNotFound(argv[0]) from None
    wall = time.monotonic() - start
    log = (out or b"").decode("utf-8", errors="replace")
    return proc.returncode, log, wall, timed_out


def _values_for(bundle: RtlBundle, has_testbench: bool) -> dict[str, str]:
    return {
        "design": DESIGN_FILE,
        "testbench": TESTBENCH_FILE if has_testbench else "",
        "out": COMPILED_FILE,
        "workdir": ".",
        "top": bundle.top_module,
    }


def _rules_for(profile: ToolProfile, rules: Optional[ParseRuleSet]) -> ParseRuleSet:
    return rules if rules is not None else load_rules(profile.tool_id)


def compile_bundle(
    profile: ToolProfile,
    bundle: RtlBundle,
    ws: Workspace,
    rules: Optional[ParseRuleSet] = None,
) -> CompileReport:
    """Write sources under the workspace, run the compiler, parse diagnostics.

    A timeout is reported in-band: exit_ok False plus one synthesized
    error-severity diagnostic, never an exception.
    """
    if not bundle.design_source.strip():
        raise ValueError("compile_bundle: design_source must be non-empty")
    ws.root.mkdir(parents=True, exist_ok=True)
    (ws.root / DESIGN_FILE).write_text(bundle.design_source, encoding="utf-8")
    has_tb = bool(bundle.testbench_source.strip())
    if has_tb:
        (ws.root / TESTBENCH_FILE).write_text(bundle.testbench_source, encoding="utf-8")

    rules = _rules_for(profile, rules)
    argv = _expand(profile.compile_cmd, _values_for(bundle, has_tb))
    rc, log, wall, timed_out = _run(
        argv, ws.root, profile.compile_timeout_seconds, _scrubbed_env(profile)
    )
    if timed_out:
        diagnostics = parse_compile_log(rules, log, exit_ok=True)
        diagnostics.append(
            Diagnostic(
                file=DESIGN_FILE,
                line=None,
                severity=Severity.ERROR,
                category=Category.OTHER,
                message=f"compilation killed after {profile.compile_timeout_seconds}s timeout",
            )
        )
        exit_ok = False
    else:
        diagnostics = parse_compile_log(rules, log, exit_ok=(rc == 0))
        exit_ok = rc == 0 and not any(d.severity is Severity.ERROR for d in diagnostics)
    return CompileReport(
        diagnostics=tuple(diagnostics),
        exit_ok=exit_ok,
        raw_log=log,
        tool_id=profile.tool_id,
        wall_seconds=wall,
    )


def simulate(
    profile: ToolProfile,
    ws: Workspace,
    rules: Optional[ParseRuleSet] = None,
) -> SimReport:
    """Run the simulator against the workspace's compiled artifact."""
    if not (ws.root / COMPILED_FILE).exists():
        raise MissingArtifact(f"no compiled artifact in {ws.root}")
    rules = _rules_for(profile, rules)
    has_tb = (ws.root / TESTBENCH_FILE).exists()
    bundle_values = {
        "design": DESIGN_FILE,
        "testbench": TESTBENCH_FILE if has_tb else "",
        "out": COMPILED_FILE,
        "workdir": ".",
        "top": "",
    }
    argv = _expand(profile.sim_cmd, bundle_values)
    rc, log, _wall, timed_out = _run(
        argv, ws.root, profile.sim_timeout_seconds, _scrubbed_env(profile)
    )
    report = parse_sim_log(rules, log, timed_out=timed_out)
    if timed_out:
        failures = report.failed_assertions + (
            AssertionFailure(
                label="timeout",
                sim_time=None,
                message=f"simulation killed after {profile.sim_timeout_seconds}s timeout",
            ),
        )
        report = SimReport(
            failed_assertions=failures,
            mismatch_count=report.mismatch_count,
            passed=False,
            timed_out=True,
            raw_log=report.raw_log,
        )
    elif rc != 0 and report.passed:
        # Simulator crashed without printing failure evidence; don't read it as a pass.
        report = SimReport(
            failed_assertions=(
                AssertionFailure(
                    label="simulator",
                    sim_time=None,
                    message=f"simulator exited with status {rc}",
                ),
            ),
            mismatch_count=report.mismatch_count,
            passed=False,
            timed_out=False,
            raw_log=report.raw_log,
        )
    return report


def measure_coverage(
    profile: ToolProfile,
    bundle: RtlBundle,
    ws: Workspace,
    rules: Optional[ParseRuleSet] = None,
) -> CoverageReport:
    """Run the coverage tool(s) and parse the per-metric covered/total table."""
    if not any(ws.root.glob("*.vcd")):
        raise MissingArtifact(f"no simulation dump file in {ws.root}")
    rules = _rules_for(profile, rules)
    has_tb = (ws.root / TESTBENCH_FILE).exists()
    values = _values_for(bundle, has_tb)
    env = _scrubbed_env(profile)
    rc, log, _wall, _timed_out = _run(
        _expand(profile.coverage_cmd, values), ws.root, profile.coverage_timeout_seconds, env
    )
    if profile.coverage_report_cmd is not None and rc == 0:
        _rc2, log2, _w2, _t2 = _run(
            _expand(profile.coverage_report_cmd, values),
            ws.root,
            profile.coverage_timeout_seconds,
            env,
        )
        log = log + log2
    return parse_coverage_report(rules, log)


# --- built-in profiles -------------------------------------------------------

def stub_profile(timeout_seconds: int = 30) -> ToolProfile:
    """Committed fake-tool scripts; the whole pipeline runs with no EDA install."""
    scripts = Path(__file__).parent / "stubtools"
    py = sys.executable
    return ToolProfile(
        tool_id="stub",
        compile_cmd=(py, str(scripts / "stub_compile.py"), "--out", "{out}", "{design}", "{testbench}"),
        sim_cmd=(py, str(scripts / "stub_sim.py"), "--workdir", "{workdir}", "{out}"),
        coverage_cmd=(py, str(scripts / "stub_cov.py"), "{design}", "{testbench}"),
        compile_timeout_seconds=timeout_seconds,
        sim_timeout_seconds=timeout_seconds,
        coverage_timeout_seconds=timeout_seconds,
    )


def icarus_profile() -> ToolProfile:
    """Icarus Verilog for compile/simulate, Covered for coverage."""
    return ToolProfile(
        tool_id="icarus",
        compile_cmd=("iverilog", "-g2012", "-o", "{out}", "{design}", "{testbench}"),
        sim_cmd=("vvp", "{out}"),
        coverage_cmd=(
            "covered", "score", "-t", "{top}", "-v", "{design}", "-vcd", DUMP_FILE, "-o", "cov.cdd",
        ),
        coverage_report_cmd=("covered", "report", "cov.cdd"),
    )


_PROFILES = {"stub": stub_profile, "icarus": icarus_profile}


def get_profile(name: str) -> ToolProfile:
    try:
        factory = _PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown tool profile {name!r}; known: {sorted(_PROFILES)}") from None
    return factory()
