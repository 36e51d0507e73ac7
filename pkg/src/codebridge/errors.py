"""Exception hierarchy shared across the package.

Error classes map onto distinct CLI exit codes (see cli.main).
"""


class CodeBridgeError(Exception):
    """Base class for all package errors."""


class DomainError(CodeBridgeError, ValueError):
    """An argument is outside the operation's mathematical or logical domain."""


class DimensionError(DomainError):
    """Vector or sequence lengths do not agree."""


class DependencyError(CodeBridgeError, RuntimeError):
    """A pipeline stage was requested before the stage it depends on."""


class SandboxError(CodeBridgeError, RuntimeError):
    """The execution sandbox itself failed to start or clean up.

    Distinct from any candidate-program failure: an infrastructure problem
    must never be recorded as a failed sample.
    """
