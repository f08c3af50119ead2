"""veriloop: agent-driven RTL generation, syntax repair, and verification loops.

The package is organized around the pipeline stages:

- model: shared immutable domain types and budget accounting
- gateway: chat interface to any LLM backend (live HTTP or deterministic replay)
- extract: turning agent replies into design/testbench bundles
- eda: sandboxed compile/simulate/coverage adapters for external tools
- distill: log parsing and feedback distillation into review prompts
- autoreview: the syntax-correction loop
- autodv: the functional-verification loop wrapping autoreview
- bench: dataset ingestion, pass@k scoring, and suite reports
- cli: the veriloop command-line entry point
"""

from veriloop.model import (
    AssertionFailure,
    Budget,
    Category,
    CompileReport,
    CoveragePoints,
    CoverageReport,
    DesignTask,
    Diagnostic,
    Issue,
    IterationRecord,
    LoopOutcome,
    LoopStatus,
    Phase,
    PromptCase,
    ReviewFeedback,
    RtlBundle,
    Severity,
    SimReport,
    budget_remaining,
)

__version__ = "0.1.0"

__all__ = [
    "AssertionFailure",
    "Budget",
    "Category",
    "CompileReport",
    "CoveragePoints",
    "CoverageReport",
    "DesignTask",
    "Diagnostic",
    "Issue",
    "IterationRecord",
    "LoopOutcome",
    "LoopStatus",
    "Phase",
    "PromptCase",
    "ReviewFeedback",
    "RtlBundle",
    "Severity",
    "SimReport",
    "budget_remaining",
    "__version__",
]
