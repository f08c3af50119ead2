from __future__ import annotations

import dataclasses
import sys
import time
from pathlib import Path

import pytest

from veriloop.eda import (
    COMPILED_FILE,
    ToolProfile,
    Workspace,
    compile_bundle,
    get_profile,
    icarus_profile,
    make_workspace,
    measure_coverage,
    simulate,
    stub_profile,
)
from veriloop.errors import MissingArtifact, ToolNotFound
from veriloop.model import Category, RtlBundle, Severity

from conftest import ADDER_TB, BAD_ADDER, GOOD_ADDER


def _bundle(design=GOOD_ADDER, tb=ADDER_TB, top="adder"):
    return RtlBundle(design_source=design, testbench_source=tb, top_module=top)


@pytest.fixture
def profile():
    return stub_profile(timeout_seconds=20)


# --- workspaces ---------------------------------------------------------------

def test_make_workspace_is_fresh_and_monotonic(tmp_path) -> None:
    first = make_workspace("t1", tmp_path)
    second = make_workspace("t1", tmp_path)
    assert first.root.name == "run_001"
    assert second.root.name == "run_002"
    assert first.root.is_dir() and not any(first.root.iterdir())


def test_make_workspace_rejects_path_separators(tmp_path) -> None:
    with pytest.raises(ValueError):
        make_workspace("a/b", tmp_path)
    with pytest.raises(ValueError):
        make_workspace("..", tmp_path)


def test_make_workspace_requires_existing_base(tmp_path) -> None:
    with pytest.raises(OSError):
        make_workspace("t", tmp_path / "missing")


def test_subspace_requires_safe_name(workspace) -> None:
    with pytest.raises(ValueError):
        workspace.subspace("../escape")


# --- compile ------------------------------------------------------------------

def test_compile_clean_fixture(profile, workspace) -> None:
    report = compile_bundle(profile, _bundle(), workspace)
    assert report.exit_ok
    assert report.error_count == 0
    assert report.tool_id == "stub"
    assert report.wall_seconds >= 0


def test_compile_missing_semicolon_names_design_file(profile, workspace) -> None:
    report = compile_bundle(profile, _bundle(design=BAD_ADDER), workspace)
    assert not report.exit_ok
    errors = [d for d in report.diagnostics if d.severity is Severity.ERROR]
    assert errors
    assert errors[0].file == "design.v"
    assert errors[0].category is Category.SYNTAX
    assert errors[0].line is not None
    assert report.raw_log  # complete raw log always preserved


def test_compile_rejects_empty_design_before_spawn(profile, workspace) -> None:
    bundle = RtlBundle(design_source="m", testbench_source="", top_module="m")
    object.__setattr__(bundle, "design_source", "   ")
    with pytest.raises(ValueError):
        compile_bundle(profile, bundle, workspace)


def test_compile_unknown_instantiated_module_is_elaboration_error(profile, workspace) -> None:
    tb = ADDER_TB.replace("adder dut", "addr dut")
    report = compile_bundle(profile, _bundle(tb=tb), workspace)
    assert not report.exit_ok
    assert any(
        d.category is Category.ELABORATION and "addr" in d.message for d in report.diagnostics
    )


def test_compile_timeout_reports_in_band(workspace) -> None:
    sleeper = ToolProfile(
        tool_id="stub",
        compile_cmd=(sys.executable, "-c", "import time; time.sleep(30)"),
        sim_cmd=(sys.executable, "-c", "pass"),
        coverage_cmd=(sys.executable, "-c", "pass"),
        compile_timeout_seconds=1,
    )
    start = time.monotonic()
    report = compile_bundle(sleeper, _bundle(), workspace)
    elapsed = time.monotonic() - start
    assert not report.exit_ok
    assert any("timeout" in d.message for d in report.diagnostics)
    assert elapsed < 1 + 1 + 1.5  # timeout + grace + spawn slack


def test_tool_not_found_raises(workspace) -> None:
    missing = ToolProfile(
        tool_id="stub",
        compile_cmd=("definitely-not-a-real-binary-9f3", "{design}"),
        sim_cmd=("x",),
        coverage_cmd=("x",),
    )
    with pytest.raises(ToolNotFound) as exc_info:
        compile_bundle(missing, _bundle(), workspace)
    assert "definitely-not-a-real-binary-9f3" in str(exc_info.value)


def test_template_rejects_undeclared_placeholder() -> None:
    with pytest.raises(ValueError):
        ToolProfile(
            tool_id="x",
            compile_cmd=("tool", "{nonsense}"),
            sim_cmd=("tool",),
            coverage_cmd=("tool",),
        )


# --- simulate -----------------------------------------------------------------

def test_simulate_requires_compiled_artifact(profile, workspace) -> None:
    with pytest.raises(MissingArtifact):
        simulate(profile, workspace)


def test_simulate_passing_fixture(profile, workspace) -> None:
    compile_bundle(profile, _bundle(), workspace)
    report = simulate(profile, workspace)
    assert report.passed
    assert "ALL TESTS PASSED" in report.raw_log


def test_simulate_parses_assertion_failure_with_time(profile, workspace) -> None:
    tb = ADDER_TB.replace(
        "// STUB_SIM_EXPECT: assign\\s+q\\s*=\\s*a\\s*\\+\\s*b\\s*;",
        "// STUB_SIM_EXPECT: assign\\s+q\\s*=\\s*a\\s*-\\s*b\\s*;",
    )
    compile_bundle(profile, _bundle(tb=tb), workspace)
    report = simulate(profile, workspace)
    assert not report.passed
    assert report.failed_assertions[0].sim_time == 10


def test_simulate_hang_times_out_within_grace(workspace) -> None:
    profile = stub_profile(timeout_seconds=2)
    tb = "module tb_adder;\n  adder dut();\n  // STUB_SIM: HANG\nendmodule\n"
    compile_bundle(profile, _bundle(tb=tb), workspace)
    start = time.monotonic()
    report = simulate(profile, workspace)
    elapsed = time.monotonic() - start
    assert report.timed_out and not report.passed
    assert any(f.label == "timeout" for f in report.failed_assertions)
    assert elapsed < 2 + 1 + 1.5  # timeout + grace + spawn slack


def test_simulate_nonzero_exit_is_not_a_pass(workspace) -> None:
    profile = stub_profile(timeout_seconds=20)
    tb = "module tb_adder;\n  adder dut();\n  // STUB_SIM: EXIT 3\nendmodule\n"
    compile_bundle(profile, _bundle(tb=tb), workspace)
    report = simulate(profile, workspace)
    assert not report.passed


# --- coverage -----------------------------------------------------------------

def test_measure_coverage_requires_dump(profile, workspace) -> None:
    compile_bundle(profile, _bundle(), workspace)
    with pytest.raises(MissingArtifact):
        measure_coverage(profile, _bundle(), workspace)


def test_coverage_full_on_exhaustive_fixture(profile, workspace) -> None:
    bundle = _bundle(tb=ADDER_TB)  # fixture claims full line coverage
    compile_bundle(profile, bundle, workspace)
    simulate(profile, workspace)
    report = measure_coverage(profile, bundle, workspace)
    points = report.metrics["line"]
    assert points.covered == points.total


def test_coverage_below_one_on_weak_fixture(profile, workspace) -> None:
    tb = ADDER_TB.replace("line 10/10", "line 4/10")
    bundle = _bundle(tb=tb)
    compile_bundle(profile, bundle, workspace)
    simulate(profile, workspace)
    report = measure_coverage(profile, bundle, workspace)
    assert report.aggregate < 1.0


# --- confinement ---------------------------------------------------------------

def test_no_files_created_outside_workspace(tmp_path, profile) -> None:
    outside = tmp_path / "outside"
    outside.mkdir()
    ws = make_workspace("confined", tmp_path)

    def snapshot() -> set[Path]:
        return {
            p.relative_to(tmp_path)
            for p in tmp_path.rglob("*")
            if ws.root not in p.parents and p != ws.root.parent and p != ws.root
        }

    before = snapshot()
    compile_bundle(profile, _bundle(), ws)
    simulate(profile, ws)
    measure_coverage(profile, _bundle(), ws)
    assert snapshot() == before


# --- profiles -----------------------------------------------------------------

def test_get_profile_registry() -> None:
    assert get_profile("stub").tool_id == "stub"
    assert get_profile("icarus").tool_id == "icarus"
    with pytest.raises(ValueError):
        get_profile("quantum")


def test_icarus_profile_shape() -> None:
    profile = icarus_profile()
    assert profile.compile_cmd[0] == "iverilog"
    assert profile.sim_cmd[0] == "vvp"
    assert profile.coverage_cmd[0] == "covered"
    assert profile.coverage_report_cmd is not None


def test_profile_timeouts_must_be_positive() -> None:
    with pytest.raises(ValueError):
        dataclasses.replace(stub_profile(), compile_timeout_seconds=0)
