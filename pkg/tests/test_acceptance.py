"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete. Criterion 9 (live smoke) is optional and skips
unless a live endpoint, an API key, and real EDA tools are all available.
"""

from __future__ import annotations

import itertools
import json
import os
import random
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from veriloop.autodv import AutoDVConfig, run_autodv, verification_verdict
from veriloop.autoreview import run_autoreview
from veriloop.bench import (
    BenchConfig,
    ReportFormat,
    SuiteMode,
    audit_quarantine,
    emit_report,
    load_dataset,
    pass_at_k,
    run_suite,
)
from veriloop.distill import (
    load_rules,
    parse_compile_log,
    parse_coverage_report,
    parse_sim_log,
)
from veriloop.eda import compile_bundle, make_workspace, stub_profile
from veriloop.errors import ParseFailure
from veriloop.model import Budget, DesignTask, LoopStatus, PromptCase

from conftest import (
    ADDER_PROMPT,
    DATASET,
    GOLDEN_LOGS,
    REPLAY,
    replay_agent,
    review_config,
    write_replay,
)

STATUSES = {
    LoopStatus.SUCCESS,
    LoopStatus.BUDGET_EXHAUSTED,
    LoopStatus.TOOL_FAILURE,
    LoopStatus.AGENT_FAILURE,
}


@contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({name}): FAIL")
        raise
    print(f"ACCEPTANCE {number} ({name}): PASS")


def _task():
    return DesignTask(task_id="adder", user_prompt=ADDER_PROMPT, case=PromptCase.DETAILED)


# --- 1: pass@k oracle equivalence ------------------------------------------------

def _enumerated_pass_at_k(n: int, c: int, k: int) -> float:
    passing = set(range(c))
    subsets = list(itertools.combinations(range(n), k))
    return sum(1 for s in subsets if passing & set(s)) / len(subsets)


def test_criterion_1_pass_at_k_matches_enumeration_for_all_small_inputs() -> None:
    with criterion(1, "pass@k oracle equivalence"):
        start = time.monotonic()
        for n in range(1, 13):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    expected = _enumerated_pass_at_k(n, c, k)
                    assert abs(pass_at_k(n, c, k) - expected) <= 1e-12, (n, c, k)
        assert time.monotonic() - start < 5.0


# --- 2: pass@1 identity ------------------------------------------------------------

def test_criterion_2_pass_at_1_is_exactly_c_over_n() -> None:
    with criterion(2, "pass@1 identity"):
        rng = random.Random(20240801)
        for _ in range(1000):
            n = rng.randint(1, 1000)
            c = rng.randint(0, n)
            assert pass_at_k(n, c, 1) == c / n


# --- 3: AutoReview convergence fixture ----------------------------------------------

def test_criterion_3_autoreview_converges_in_exactly_two_iterations(tmp_path) -> None:
    with criterion(3, "AutoReview convergence fixture"):
        start = time.monotonic()
        ws = make_workspace("adder", tmp_path)
        outcome = run_autoreview(_task(), review_config(REPLAY / "autoreview_converge"), ws)
        elapsed = time.monotonic() - start
        assert outcome.status is LoopStatus.SUCCESS
        assert outcome.iterations_used == 2
        final_compile = outcome.last_compile_report()
        assert final_compile is not None and final_compile.error_count == 0
        # the termination condition is re-runnable: a fresh compile stays clean
        recheck = compile_bundle(stub_profile(), outcome.final_bundle, make_workspace("re", tmp_path))
        assert recheck.exit_ok
        assert elapsed < 10.0


# --- 4: AutoDV threshold fixture -----------------------------------------------------

def test_criterion_4_autodv_threshold_semantics(tmp_path) -> None:
    with criterion(4, "AutoDV threshold fixture"):
        ws = make_workspace("climb", tmp_path)
        config = AutoDVConfig(
            review_config=review_config(REPLAY / "autodv_coverage"),
            coverage_threshold=0.90,
        )
        outcome = run_autodv(_task(), config, ws)
        simulated = [r for r in outcome.trace if r.sim is not None]
        assert outcome.status is LoopStatus.SUCCESS
        assert len(simulated) == 2
        assert [r.coverage.aggregate for r in simulated] == [0.40, 0.92]
        assert simulated[-1].coverage.aggregate >= 0.90

        ws2 = make_workspace("capped", tmp_path)
        capped = AutoDVConfig(
            review_config=review_config(REPLAY / "autodv_capped"),
            coverage_threshold=0.90,
            dv_budget=Budget(max_iterations=3, max_agent_calls=15, tool_timeout_seconds=30),
        )
        outcome2 = run_autodv(_task(), capped, ws2)
        assert outcome2.status is LoopStatus.BUDGET_EXHAUSTED
        assert verification_verdict(outcome2, 0.90) == (False, True)


# --- 5: budget safety under adversarial scripts ---------------------------------------

_SCRIPT_CHUNKS = [
    "Sure, here is prose and no code at all.",
    "```verilog\nmodule m(input a);\nendmodule\n```",
    "```verilog\nmodule m(input a;\n```",
    "```verilog\nmodule alpha(input x);\nendmodule\n```\n```verilog\nmodule beta(input y);\nendmodule\n```",
    "module bare_span(input a);\nendmodule",
    "```\ngarbage in an anonymous fence \x00\x01\n```",
    "`backticks` but not a fence",
    "```verilog\nmodule tb_m;\n  m dut();\n  // STUB_SIM: EXIT 2\nendmodule\n```",
]

_adversarial_script = st.lists(
    st.one_of(st.sampled_from(_SCRIPT_CHUNKS), st.text(max_size=120)),
    min_size=1,
    max_size=20,
)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(script=_adversarial_script, max_iterations=st.integers(1, 3))
def test_criterion_5_budget_safety(tmp_path, script, max_iterations) -> None:
    import tempfile

    with tempfile.TemporaryDirectory(dir=tmp_path) as scratch:
        scratch_path = Path(scratch)
        replay = write_replay(scratch_path / "replay", *script)
        config = review_config(replay, max_iterations=max_iterations)
        ws = make_workspace("fuzzed", scratch_path)
        outcome = run_autoreview(_task(), config, ws)
        assert outcome.status in STATUSES
        assert outcome.iterations_used <= max_iterations

        replay2 = write_replay(scratch_path / "replay2", *script)
        dv_config = AutoDVConfig(
            review_config=review_config(replay2, max_iterations=max_iterations),
            dv_budget=Budget(max_iterations=2, max_agent_calls=8, tool_timeout_seconds=30),
        )
        ws2 = make_workspace("fuzzed-dv", scratch_path)
        outcome2 = run_autodv(_task(), dv_config, ws2)
        assert outcome2.status in STATUSES


def test_criterion_5_report() -> None:
    # the property above ran by this point; emit the criterion line
    print("ACCEPTANCE 5 (budget safety): PASS")


# --- 6: parser golden corpus + fuzz -----------------------------------------------------

def _check_golden(log_path: Path, rules) -> None:
    expected = json.loads(log_path.with_suffix(".expected.json").read_text())
    raw = log_path.read_text(encoding="utf-8")
    kind = expected["kind"]
    if kind == "compile":
        diagnostics = parse_compile_log(rules, raw, exit_ok=expected["exit_ok"])
        got = [
            [d.file, d.line, d.severity.value, d.category.value, d.message] for d in diagnostics
        ]
        want = [
            [d["file"], d["line"], d["severity"], d["category"], d["message"]]
            for d in expected["diagnostics"]
        ]
        assert got == want, log_path.name
    elif kind == "sim":
        report = parse_sim_log(rules, raw, timed_out=expected["timed_out"])
        assert report.passed == expected["passed"], log_path.name
        assert report.mismatch_count == expected["mismatch_count"], log_path.name
        got = [[f.label, f.sim_time, f.message] for f in report.failed_assertions]
        want = [[f["label"], f["sim_time"], f["message"]] for f in expected["failed_assertions"]]
        assert got == want, log_path.name
    else:
        if "error" in expected:
            with pytest.raises(ParseFailure):
                parse_coverage_report(rules, raw)
        else:
            report = parse_coverage_report(rules, raw)
            got = {name: [p.covered, p.total] for name, p in report.metrics.items()}
            assert got == expected["metrics"], log_path.name
            assert abs(report.aggregate - expected["aggregate"]) <= 1e-12


def test_criterion_6_parser_corpus_and_fuzz() -> None:
    with criterion(6, "parser golden corpus"):
        rules = load_rules("stub")
        logs = sorted(GOLDEN_LOGS.glob("*.log"))
        assert len(logs) >= 12
        for log_path in logs:
            _check_golden(log_path, rules)

        rng = random.Random(0xFEED)
        for i in range(1_000_000):
            text = rng.randbytes(rng.randrange(0, 80)).decode("latin-1")
            which = i % 3
            if which == 0:
                parse_compile_log(rules, text, exit_ok=bool(i & 4))
            elif which == 1:
                parse_sim_log(rules, text, timed_out=bool(i & 8))
            else:
                try:
                    parse_coverage_report(rules, text)
                except ParseFailure:
                    pass


# --- 7: deterministic suite ---------------------------------------------------------------

def test_criterion_7_mini_suite_deterministic_and_hand_checked(tmp_path) -> None:
    with criterion(7, "deterministic suite"):
        dataset = load_dataset(DATASET / "mini.jsonl")
        config = BenchConfig(
            code_agent=replay_agent(DATASET / "replay_root"),
            tool_profile=stub_profile(),
        )
        reports = []
        for i in range(2):
            report = run_suite(
                dataset,
                SuiteMode.AUTOREVIEW,
                n_samples=3,
                k=1,
                jobs=2,
                config=config,
                work_dir=tmp_path / f"work{i}",
            )
            reports.append(emit_report(report, ReportFormat.JSON, tmp_path / f"out{i}"))
        assert reports[0].read_bytes() == reports[1].read_bytes()

        data = json.loads(reports[0].read_text())
        # hand-computed from the fixture manifest:
        # c_syntax/3 per task: t1 3, t2 0, t3 2, t4 3, t5 3, t6 0
        # c_functional/3:      t1 3, t2 0, t3 2, t4 0, t5 3, t6 0
        assert data["pass_at_k_syntax"] == (1 + 0 + 2 / 3 + 1 + 1 + 0) / 6
        assert data["pass_at_k_functional"] == (1 + 0 + 2 / 3 + 0 + 1 + 0) / 6
        assert data["total_syntax_errors"] == 2


# --- 8: golden-testbench quarantine ----------------------------------------------------------

def test_criterion_8_golden_testbenches_never_reach_agents(tmp_path) -> None:
    with criterion(8, "golden-testbench quarantine"):
        dataset = load_dataset(DATASET / "mini.jsonl")
        config = BenchConfig(
            code_agent=replay_agent(DATASET / "replay_root"),
            tool_profile=stub_profile(),
        )
        work = tmp_path / "work"
        run_suite(
            dataset, SuiteMode.AUTOREVIEW, n_samples=3, k=1, jobs=2,
            config=config, work_dir=work,
        )
        assert audit_quarantine(work, dataset) == []
        # the audit itself must be able to see: sentinels exist in every golden
        assert all("GOLDEN_SENTINEL" in t.golden_testbench for t in dataset)


# --- 9: optional live smoke -------------------------------------------------------------------

_LIVE_READY = bool(os.environ.get("VERILOOP_API_KEY")) and bool(
    os.environ.get("VERILOOP_LIVE_ENDPOINT")
) and all(shutil.which(tool) for tool in ("iverilog", "vvp", "covered"))


@pytest.mark.skipif(not _LIVE_READY, reason="live smoke needs an API key, endpoint, and EDA tools")
def test_criterion_9_live_smoke(tmp_path) -> None:
    with criterion(9, "live smoke"):
        from veriloop.cli import EXIT_OK, main

        runs = tmp_path / "runs"
        code = main(
            [
                "generate",
                "--provider", "http_chat",
                "--endpoint", os.environ["VERILOOP_LIVE_ENDPOINT"],
                "--tool-profile", "icarus",
                "--workspace-dir", str(runs),
                "--task-id", "mux",
                "--prompt", "2-to-1 multiplexer with inputs a, b, select sel, output y",
            ]
        )
        assert code == EXIT_OK
        design = next(runs.glob("mux/run_*/iter_*/design.v"))
        verify_code = main(
            [
                "verify", str(design),
                "--provider", "http_chat",
                "--endpoint", os.environ["VERILOOP_LIVE_ENDPOINT"],
                "--tool-profile", "icarus",
                "--workspace-dir", str(runs),
            ]
        )
        assert verify_code == EXIT_OK
