"""Exception hierarchy shared by every module.

Each class carries a stable ``code`` (its own name) so callers that marshal
errors across process or language boundaries can match on the code instead
of the Python type.
"""

from __future__ import annotations


class HesError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__

    def __reduce__(self):
        # Subclasses have structured __init__ signatures; pickle by code +
        # message so errors survive process boundaries (worker pools).
        return reconstruct, (self.code, str(self))


def reconstruct(code: str, message: str) -> "HesError":
    """Rebuild a toolkit error from its code and rendered message."""
    cls = globals().get(code)
    if not (isinstance(cls, type) and issubclass(cls, HesError)):
        cls = HesError
    err = cls.__new__(cls)
    Exception.__init__(err, message)
    return err


class EmptyDistribution(HesError):
    """Token observation has neither an entropy value nor top logprobs."""


class MassExceedsOne(HesError):
    """Top-logprob probabilities sum to more than 1 beyond tolerance."""


class EmptySequence(HesError):
    """An operation that needs at least one token got an empty sequence."""


class MalformedLine(HesError):
    """A corpus/score line is not valid JSON."""

    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed record{': ' + detail if detail else ''}")


class SchemaViolation(HesError):
    """A record violates the corpus schema or a field invariant."""

    def __init__(self, line_no: int | None, field: str, detail: str = ""):
        self.line_no = line_no
        self.field = field
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}field '{field}' invalid{': ' + detail if detail else ''}")


class DuplicateSampleId(HesError):
    """The same sample_id appeared twice in one corpus."""

    def __init__(self, sample_id: str, line_no: int | None = None):
        self.sample_id = sample_id
        self.line_no = line_no
        where = f" at line {line_no}" if line_no is not None else ""
        super().__init__(f"duplicate sample_id '{sample_id}'{where}")


class IoFailure(HesError):
    """Reading or writing a file failed."""


class DigestMismatch(HesError):
    """An output's embedded input digest does not match the actual input."""

    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"input digest mismatch: manifest has {expected}, file has {actual}")


class MissingField(HesError):
    """A selection mode needs a field the input rows do not carry."""

    def __init__(self, mode: str, field: str, sample_id: str | None = None):
        self.mode = mode
        self.field = field
        self.sample_id = sample_id
        who = f" (sample '{sample_id}')" if sample_id else ""
        super().__init__(f"mode '{mode}' requires field '{field}'{who}")


class EmptyCorpus(HesError):
    """An operation that needs at least one record got none."""


class MissingCorrectLabel(HesError):
    """A rejection-sampling selection found a record without a correct label."""

    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"sample '{sample_id}' has no correct label")


class EmptyGroup(HesError):
    """A rollout group has no trajectories."""


class GroupTooSmall(HesError):
    """Advantage normalization needs at least two rewards."""


class SingleClassInput(HesError):
    """Separation statistics need both correct and incorrect samples."""


class IdSetMismatch(HesError):
    """Two score sets that must cover the same sample ids do not."""


class InvalidProfile(HesError):
    """A synthetic-corpus generator profile is inconsistent."""
