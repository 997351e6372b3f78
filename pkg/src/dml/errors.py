"""Exception classes shared across the toolkit.

Every user-facing failure derives from DmlError so the CLI can map the
whole family to exit code 1. Errors that originate in a file carry the
path and line so diagnostics always read ``file:line: message``.
"""

from __future__ import annotations


class DmlError(Exception):
    """Base class for all domain errors."""


class XmlLoadError(DmlError):
    """Malformed or unsupported XML input."""

    def __init__(self, message: str, path: str = "<xml>", line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


class ScriptError(DmlError):
    """Syntax error in a command script."""

    def __init__(self, message: str, path: str = "<script>", line: int = 0):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ApplyError(DmlError):
    """A command could not be executed against the document.

    ``report`` carries the partially filled ApplyReport when the error
    surfaces from fail-fast set application, so callers can still see
    how far execution got.
    """

    def __init__(self, message: str, path: str = "<script>", line: int = 0, report=None):
        self.path = path
        self.line = line
        self.reason = message
        self.report = report
        super().__init__(f"{path}:{line}: {message}")


class RuleError(DmlError):
    """Bad generator rule file or template configuration."""


class ManifestError(DmlError):
    """Bad pipeline manifest or exclusion."""


class DiffError(DmlError):
    """The document pair cannot be bridged by an edit script."""


class AuditError(DmlError):
    """A run directory is missing artifacts the audit needs."""
