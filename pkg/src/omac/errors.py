"""Exception types shared across the package."""


class OmacError(Exception):
    """Base class for all package errors."""


class BackendError(OmacError):
    """Completion backend failure ("backend exhausted", "malformed response", ...)."""


class UnscriptedRequestError(BackendError):
    """Scripted backend received a request no rule matches."""


class TemplateError(OmacError):
    """Template rendering failure (missing variable / unknown placeholder)."""


class TaskFileError(OmacError):
    """Task JSONL ingestion failure (malformed line, duplicate id)."""


class EvalError(OmacError):
    """Evaluation run hit task-level hard errors; carries the partial report."""

    def __init__(self, message, report=None, task_errors=None):
        super().__init__(message)
        self.report = report
        self.task_errors = task_errors or []


class OptimizeError(OmacError):
    """Optimizer-level failure (collection too small, empty refinement, ...)."""


class LedgerSealedError(OmacError):
    """Append attempted on a ledger whose last run segment completed."""
