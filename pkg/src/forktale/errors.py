"""Exception types shared across the package."""

from __future__ import annotations


class ForktaleError(Exception):
    """Base class for all errors raised by this package."""


# --- tree errors ---------------------------------------------------------


class InvalidPath(ForktaleError):
    """A storyline path references a hop that does not exist in the tree."""


class AlternateOccupied(ForktaleError):
    """The merge target already has an alternate branch."""


class DepthMismatch(ForktaleError):
    """A merged subtree would break the equal-path-length invariant."""


class PreconditionError(ForktaleError):
    """An operation was called on inputs that violate its preconditions."""


class ParseError(ForktaleError):
    """A persisted document could not be parsed."""


class SchemaVersionMismatch(ParseError):
    """A persisted document declares an unsupported format version."""


# --- prompt errors -------------------------------------------------------


class MissingBinding(ForktaleError):
    """A template placeholder had no value supplied at render time."""

    def __init__(self, stage: str, names: list[str]):
        super().__init__(f"stage {stage!r} is missing bindings for: {', '.join(names)}")
        self.stage = stage
        self.names = names


class UnknownStage(ForktaleError):
    """No template is registered under the requested stage name."""


class OutOfRange(ForktaleError):
    """A numeric argument fell outside its documented range."""


# --- gateway errors ------------------------------------------------------


class GatewayError(ForktaleError):
    """Base class for completion-backend failures."""


class SchemaViolation(GatewayError):
    """The model never produced a document matching the response schema."""

    def __init__(self, message: str, violations: list[str] | None = None, attempts: int = 0):
        super().__init__(message)
        self.violations = violations or []
        self.attempts = attempts


class RetryableViolation(GatewayError):
    """Base for semantic violations that trigger a corrective retry.

    Subclasses are raised by per-stage semantic checks; the gateway catches
    them, appends a corrective message, and re-raises the last one once the
    retry budget is exhausted.
    """


class OrderingViolation(RetryableViolation):
    """Key-event ids were not strictly increasing."""


class InvariantViolation(RetryableViolation):
    """A structurally valid response violated a stage invariant."""


class EmptyField(RetryableViolation):
    """A required response field was present but blank."""


class TransportError(GatewayError):
    """The backend could not be reached or returned a non-success status."""


class RequestTimeout(TransportError):
    """The backend did not answer within the configured timeout."""


class CassetteMiss(GatewayError):
    """Replay mode found no recorded response for a request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no recorded response for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class ConfigError(ForktaleError):
    """The backend or pipeline configuration is unusable."""


# --- pipeline errors -----------------------------------------------------


class EmptyPlot(ForktaleError):
    """The input plot text was empty."""


class TooFewEvents(ForktaleError):
    """Key-event extraction needs at least three events."""


class CountMismatch(ForktaleError):
    """A generated storyline did not contain the required number of events."""


class NodeCountMismatch(ForktaleError):
    """A generated plot tree did not contain the required number of nodes."""


class BudgetExceeded(ForktaleError):
    """The expansion hit its cap on completion calls."""


class IncompleteExpansion(ForktaleError):
    """Expansion finished its frontier but the tree failed completeness checks."""


class CorruptCheckpoint(ParseError):
    """A checkpoint file could not be read back."""


class ConfigDigestMismatch(ForktaleError):
    """A checkpoint was produced under a different configuration."""


# --- export errors -------------------------------------------------------


class MissingNarration(ForktaleError):
    """A tree node has no narration to export."""


class NameCollision(ForktaleError):
    """Two node ids sanitize to the same knot name."""
