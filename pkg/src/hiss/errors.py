"""Exception hierarchy.

Every error carries a stable ``code`` so the CLI can report it in a
machine-readable way and map it to an exit status.
"""

from __future__ import annotations


class HissError(Exception):
    """Base class for all package errors."""

    code = "HissError"
    #: 1 = infrastructure failure, 2 = method/parse failure
    exit_code = 1


class InvalidRequest(HissError, ValueError):
    code = "InvalidRequest"
    exit_code = 2


# claim-model
class DuplicateLabel(HissError, ValueError):
    code = "DuplicateLabel"
    exit_code = 2


class EmptyScheme(HissError, ValueError):
    code = "EmptyScheme"
    exit_code = 2


# backend
class BackendUnavailable(HissError):
    code = "BackendUnavailable"


class BudgetExceeded(HissError):
    code = "BudgetExceeded"


class ScriptExhausted(HissError):
    code = "ScriptExhausted"


# search
class SearchError(HissError):
    code = "SearchError"


class FrozenCacheMiss(SearchError, KeyError):
    code = "FrozenCacheMiss"

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class SearchUnavailable(SearchError):
    code = "SearchUnavailable"


class MalformedCacheFile(SearchError, ValueError):
    code = "MalformedCacheFile"


class IoFailure(HissError, OSError):
    code = "IoFailure"


# protocol
class ProtocolError(HissError):
    code = "ProtocolError"
    exit_code = 2


class InsufficientDemos(ProtocolError, ValueError):
    code = "InsufficientDemos"


class UnparseableDecomposition(ProtocolError):
    code = "UnparseableDecomposition"


class NoFinalLine(ProtocolError):
    code = "NoFinalLine"


class LabelNotInScheme(ProtocolError, ValueError):
    code = "LabelNotInScheme"


class ClaimFailed(HissError):
    """Wraps any failure of a single claim's run with the claim id.

    ``trace`` holds whatever partial record was produced before the failure.
    """

    code = "ClaimFailed"

    def __init__(self, claim_id: str, cause: BaseException, trace=None):
        super().__init__(f"claim {claim_id!r}: {type(cause).__name__}: {cause}")
        self.claim_id = claim_id
        self.cause = cause
        self.trace = trace
        self.exit_code = getattr(cause, "exit_code", 1)

    @property
    def cause_code(self) -> str:
        return getattr(self.cause, "code", type(self.cause).__name__)


# datasets
class DatasetError(HissError, ValueError):
    code = "DatasetError"
    exit_code = 2


class MalformedRow(DatasetError):
    code = "MalformedRow"


class MalformedRecord(DatasetError):
    code = "MalformedRecord"


class MalformedLine(DatasetError):
    code = "MalformedLine"


class UnknownLabel(DatasetError):
    code = "UnknownLabel"


class InsufficientPool(DatasetError):
    code = "InsufficientPool"


# eval
class LengthMismatch(HissError, ValueError):
    code = "LengthMismatch"
    exit_code = 2


class EmptyMatrix(HissError, ValueError):
    code = "EmptyMatrix"
    exit_code = 2


class UnknownId(HissError, KeyError):
    code = "UnknownId"
    exit_code = 2

    def __str__(self) -> str:
        return Exception.__str__(self)
