"""Exception types shared across the engine, gateway, executor and harness."""


class OrpsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OrpsError):
    """Invalid or inconsistent configuration."""


class DatasetError(OrpsError):
    """Problem set missing, unreadable, or malformed."""


class GatewayUnavailable(OrpsError):
    """Model endpoint failed after exhausting the retry budget."""


class ContextOverflow(OrpsError):
    """Endpoint rejected the prompt as too long."""


class MissingCode(OrpsError):
    """A programmer completion contained no extractable code."""


class MalformedScore(OrpsError):
    """A critic completion contained no parseable ``$$...$$`` score."""


class NoValidTests(OrpsError):
    """Test generation produced zero syntactically valid tests."""


class EmptyExpansion(OrpsError):
    """Every candidate in a round was unparseable; search aborted.

    Carries the partial search result so callers can still inspect the tree.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class ExecutorFault(OrpsError):
    """Sandbox infrastructure failure (runner missing, protocol violation).

    Guest-program failures are never reported through this exception; they
    are encoded in the execution report.
    """


class BudgetTooSmall(OrpsError):
    """The problem statement alone exceeds the context budget."""


class IncomparableProfiles(OrpsError):
    """Profiles measured with different availability classes."""


class DegenerateReference(OrpsError):
    """Reference profile has zero measured time."""
