"""Exception hierarchy shared by all modules.

Each exception carries a short ``code`` used when the error crosses the
wire inside an ERROR message.
"""


class KProtectError(Exception):
    code = "error"


class InvalidDomainError(KProtectError, ValueError):
    code = "invalid_domain"


class OutOfDomainError(KProtectError, ValueError):
    code = "out_of_domain"


class UnknownCiphertextError(KProtectError, ValueError):
    code = "unknown_ciphertext"


class DuplicateIdError(KProtectError, KeyError):
    code = "duplicate_id"


class NotFoundError(KProtectError, KeyError):
    code = "not_found"


class EmptyRangeError(KProtectError, ValueError):
    code = "empty_range"


class InvalidPolicyError(KProtectError, ValueError):
    code = "invalid_policy"


class MalformedMessageError(KProtectError, ValueError):
    code = "malformed"


class UnsupportedMessageError(KProtectError, ValueError):
    code = "unsupported"


class RateLimitedError(KProtectError):
    code = "rate_limited"


class InsufficientDataError(KProtectError):
    code = "insufficient_data"


class ProtocolViolationError(KProtectError):
    code = "protocol_violation"


class RemoteError(KProtectError):
    """An ERROR response received from a service."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class PlanError(KProtectError, ValueError):
    code = "plan"


class NoParentsError(PlanError):
    code = "no_parents"


class StaleSnapshotError(KProtectError):
    code = "stale_snapshot"


_BY_CODE = {
    cls.code: cls
    for cls in (
        InvalidDomainError,
        OutOfDomainError,
        UnknownCiphertextError,
        DuplicateIdError,
        NotFoundError,
        EmptyRangeError,
        InvalidPolicyError,
        MalformedMessageError,
        UnsupportedMessageError,
        RateLimitedError,
        InsufficientDataError,
        ProtocolViolationError,
    )
}


def error_for_code(code: str, detail: str = "") -> KProtectError:
    cls = _BY_CODE.get(code)
    if cls is None:
        return RemoteError(code, detail)
    return cls(detail or code)
