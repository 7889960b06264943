"""Exception types shared across the toolkit.

The hierarchy separates caller mistakes (bad values, bad wiring) from
runtime failures (remote transport, model queries, per-record processing)
so the command-line layer can map each family to a distinct exit code.
"""


class DetoxError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DetoxError, ValueError):
    """An argument to a library call violates its contract."""


class ConfigError(DetoxError, ValueError):
    """A configuration object or CLI flag combination is invalid."""


class TemplateError(ParameterError):
    """A prompt template is malformed (e.g. the raw-text slot is missing)."""


class TransportError(DetoxError, RuntimeError):
    """A remote endpoint is unreachable or broke protocol framing.

    Raised only after the client has exhausted its retry budget; the
    pipeline treats it as a hard failure and aborts the run.
    """


class BridgeRequestError(DetoxError, RuntimeError):
    """The remote endpoint returned a structured error reply for one request.

    Unlike :class:`TransportError` this is scoped to a single request; the
    fusion stage excludes the affected candidate instead of aborting.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ProviderError(DetoxError, RuntimeError):
    """A distribution provider failed while serving a decode step."""

    def __init__(self, message: str, *, step: int | None = None):
        super().__init__(message)
        self.step = step


class PipelineError(DetoxError, RuntimeError):
    """A corpus record could not be processed."""
