"""Exception taxonomy shared across the package.

Loop engines convert these into LoopOutcome statuses at their boundary;
nothing below the engines raises bare Exception subclasses of its own.
"""

from __future__ import annotations


class VeriloopError(Exception):
    """Base class for every error raised by this package."""


# --- agent gateway ---------------------------------------------------------

class GatewayError(VeriloopError):
    """Base for chat-provider failures."""


class TransportError(GatewayError):
    """Network failure or HTTP >= 500 after the configured retries."""


class ProtocolError(GatewayError):
    """Provider answered, but the response body is not a usable completion."""


class ReplayExhausted(GatewayError):
    """The replay directory has no further canned response."""


# --- bundle extraction -----------------------------------------------------

class ExtractionError(VeriloopError):
    """Base for failures turning an agent reply into an RTL bundle."""


class NoCodeFound(ExtractionError):
    """The reply contains no fenced code block and no bare module span."""


class AmbiguousBundle(ExtractionError):
    """Cannot decide which extracted block is the testbench."""


# --- EDA harness -----------------------------------------------------------

class ToolNotFound(VeriloopError):
    """The configured external tool binary is missing."""

    def __init__(self, binary: str):
        super().__init__(f"tool binary not found: {binary}")
        self.binary = binary


class MissingArtifact(VeriloopError):
    """A pipeline stage ran before its prerequisite artifact existed."""


# --- log distillation ------------------------------------------------------

class ParseFailure(VeriloopError):
    """Tool output was unrecognizable; the raw log is preserved in .raw."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class NothingToDistill(VeriloopError):
    """All reports are clean; the caller should have terminated its loop."""


# --- loop engines ----------------------------------------------------------

class InteractionUnavailable(VeriloopError):
    """Clarifying Q&A was requested but no interactive channel is configured."""


class MissingReports(VeriloopError):
    """The outcome never reached the simulation phase, so no verdict exists."""


# --- benchmark harness -----------------------------------------------------

class DomainError(VeriloopError):
    """An argument violates a documented numeric precondition."""


class FormatError(VeriloopError):
    """A dataset or report file does not match its documented schema."""


class DuplicateTaskId(FormatError):
    """Two dataset records share a task_id."""


# --- configuration ---------------------------------------------------------

class ConfigError(VeriloopError):
    """Run configuration is incomplete, contradictory, or has unknown keys."""
