"""Exception hierarchy shared by every eXACML component.

Each exception carries a short ``code`` that travels over the wire, so a
client can tell a ``HashMismatch`` from an ``UnknownTable`` without parsing
messages.
"""


class ExacmlError(Exception):
    code = "Error"

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def to_wire(self):
        return {"code": self.code, "message": self.message}


# -- documents -------------------------------------------------------------

class ParseError(ExacmlError):
    code = "ParseError"

    def __init__(self, reason, location=None):
        where = f" at {location}" if location else ""
        super().__init__(f"{reason}{where}")
        self.reason = reason
        self.location = location


class UnsupportedFeature(ExacmlError):
    code = "UnsupportedFeature"


class MissingAttribute(ExacmlError):
    code = "MissingAttribute"


class NotFound(ExacmlError):
    code = "NotFound"


# -- datastore ---------------------------------------------------------------

class DuplicateTable(ExacmlError):
    code = "DuplicateTable"


class SchemaError(ExacmlError):
    code = "SchemaError"


class UnknownTable(ExacmlError):
    code = "UnknownTable"


class UnknownColumn(ExacmlError):
    code = "UnknownColumn"


class RowTypeError(ExacmlError):
    """A CSV cell does not parse under its column type."""

    code = "TypeError"

    def __init__(self, row, column, message=""):
        super().__init__(message or f"row {row}: bad value for column {column!r}")
        self.row = row
        self.column = column


class TypeMismatch(ExacmlError):
    code = "TypeMismatch"


class PredicateSyntaxError(ParseError):
    code = "PredicateSyntaxError"


# -- obligations / enforcement ------------------------------------------------

class InvalidWindow(ExacmlError):
    code = "InvalidWindow"


class ObligationError(ExacmlError):
    code = "ObligationError"


class MissingObligationAttribute(ObligationError):
    code = "MissingObligationAttribute"


class DuplicateObligation(ObligationError):
    code = "DuplicateObligation"


class ApproximationColumnsNotSubset(ObligationError):
    code = "ApproximationColumnsNotSubset"


# -- server ----------------------------------------------------------------

class AlreadyInitialized(ExacmlError):
    code = "AlreadyInitialized"


class NotInitialized(ExacmlError):
    code = "NotInitialized"


class AccessDenied(ExacmlError):
    code = "Deny"


class HashMismatch(ExacmlError):
    code = "HashMismatch"


class NoPendingToken(ExacmlError):
    code = "NoPendingToken"


class RootPolicyProtected(ExacmlError):
    code = "RootPolicyProtected"


class PurgeFailed(ExacmlError):
    code = "PurgeFailed"


# -- proxy / transport --------------------------------------------------------

class UnknownDataId(ExacmlError):
    code = "UnknownDataId"


class MissingJoinColumn(ExacmlError):
    code = "MissingJoinColumn"


class ConstraintColumnUnknown(ExacmlError):
    code = "ConstraintColumnUnknown"


class TransportError(ExacmlError):
    code = "TransportError"


class ProtocolError(ExacmlError):
    code = "ProtocolError"


class InvalidParams(ExacmlError):
    code = "InvalidParams"


_BY_CODE = {}


def _collect(cls):
    for sub in cls.__subclasses__():
        _BY_CODE.setdefault(sub.code, sub)
        _collect(sub)


_collect(ExacmlError)


def from_wire(error):
    """Rebuild an exception from its ``{"code", "message"}`` wire form."""
    cls = _BY_CODE.get(error.get("code"), ExacmlError)
    exc = ExacmlError.__new__(cls)
    Exception.__init__(exc, error.get("message", ""))
    exc.message = error.get("message", "")
    return exc
