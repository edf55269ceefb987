"""Exception taxonomy shared across the toolkit.

The CLI maps these onto process exit codes; library users catch them
directly. Plain ValueError is reserved for caller contract violations
(bad argument values) that indicate a programming error rather than bad
input data.
"""


class QuipforgeError(Exception):
    """Base class for all toolkit errors."""


class SketchFormatError(QuipforgeError):
    """Sketch file is malformed: bad magic, unsupported version, truncated
    payload, checksum mismatch, or unknown hash scheme."""


class ConfigMismatchError(QuipforgeError):
    """Two sketches with different configurations cannot be merged or
    compared query-for-query."""


class InputError(QuipforgeError):
    """Input data (JSONL records, corpus files, payload mappings) violates
    the documented schema. ``field`` names the offending field when known."""

    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line
