"""Exception hierarchy shared across the engine.

Every domain error derives from :class:`LateSearchError` so callers (and the
CLI) can distinguish bad input from genuine bugs with one ``except`` clause.
"""


class LateSearchError(Exception):
    """Base class for all errors raised by this package."""


# --- embedding container -------------------------------------------------


class ZeroRow(LateSearchError):
    """A row with (near-)zero Euclidean norm cannot be normalized."""

    def __init__(self, index: int):
        super().__init__(f"row {index} has near-zero norm")
        self.index = index


class FormatError(LateSearchError):
    """The bytes on disk do not form a valid container."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DuplicateId(LateSearchError):
    def __init__(self, doc_id: str):
        super().__init__(f"duplicate id: {doc_id!r}")
        self.doc_id = doc_id


class EmptyMatrix(LateSearchError):
    """A token matrix with zero rows is rejected everywhere."""


class DimMismatch(LateSearchError):
    pass


class KindMismatch(LateSearchError):
    """Operation applied to an embedding set of the wrong kind."""


# --- indexes --------------------------------------------------------------


class KTooLarge(LateSearchError):
    pass


class DimNotPackable(LateSearchError):
    pass


class OrdinalOutOfRange(LateSearchError):
    pass


class EmptyIndex(LateSearchError):
    pass


class BadManifest(LateSearchError):
    pass


class ChecksumMismatch(LateSearchError):
    pass


# --- losses ---------------------------------------------------------------


class DegenerateBatch(LateSearchError):
    pass


class ShapeMismatch(LateSearchError):
    pass


# --- evaluation / cli -----------------------------------------------------


class ParseError(LateSearchError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NoJudgedQueries(LateSearchError):
    pass


class UnknownMetric(LateSearchError):
    pass


class MissingDoc(LateSearchError):
    def __init__(self, doc_id: str):
        super().__init__(f"{doc_id!r} not found in the supplied embeddings")
        self.doc_id = doc_id
