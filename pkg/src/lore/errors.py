"""Exception hierarchy shared by every module."""

from __future__ import annotations


class LoreError(Exception):
    """Base class for all errors raised by this package."""


# -- data / validation -------------------------------------------------------


class ParseError(LoreError):
    """A line-delimited file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(LoreError):
    """A record violates a data-model invariant."""

    def __init__(self, message: str, query_id: str | None = None):
        self.query_id = query_id
        prefix = f"[{query_id}] " if query_id is not None else ""
        super().__init__(prefix + message)


class DistractorNotFalse(ValidationError):
    """A distractor id points at a True-labeled or unknown chunk."""


# -- rewriting / LLM ---------------------------------------------------------


class RelationParseError(LoreError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class LlmTransportError(LoreError):
    """Network failure, timeout, non-2xx status or fixture miss."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class LlmFormatError(LoreError):
    """The model answered but the answer does not follow the response contract."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


# -- numerics ----------------------------------------------------------------


class DegenerateEmbedding(LoreError):
    """Pre-normalization vector is (numerically) zero."""


class DimensionMismatch(LoreError):
    pass


class NotAPositive(LoreError):
    pass


class NoPositives(LoreError):
    def __init__(self, message: str, index: int | None = None, query_id: str | None = None):
        self.index = index
        self.query_id = query_id
        super().__init__(message)


class MissingEmbedding(LoreError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no document embedding for chunk key {key!r}")


class NonFiniteLoss(LoreError):
    def __init__(self, step: int, what: str = "loss"):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class EmptyTier(LoreError):
    pass


class ConfigMismatch(LoreError):
    pass
