"""Error codes carried in RPC replies and the exceptions they map to."""

from enum import IntEnum


class Err(IntEnum):
    OK = 0
    NOT_PRIMARY = 1
    SEALED = 2
    EPOCH_CHANGED = 3
    BACKUP = 4
    STALE_EPOCH = 5
    FUTURE_EPOCH = 6
    OUT_OF_ORDER = 7
    RETRY = 8
    WRONG_EPOCH = 9
    REFUSED = 10
    NOT_LEADER = 11
    PAXOS = 12
    TIMEOUT = 13
    UNAVAILABLE = 14


class ProtocolError(Exception):
    """Base for failures reported by a remote handler or a local protocol step."""

    code = Err.UNAVAILABLE

    def __init__(self, msg: str = "", code: Err = None):
        super().__init__(msg or self.__class__.__name__)
        if code is not None:
            self.code = code


class NotPrimaryError(ProtocolError):
    code = Err.NOT_PRIMARY


class SealedError(ProtocolError):
    code = Err.SEALED


class EpochChangedError(ProtocolError):
    code = Err.EPOCH_CHANGED


class BackupError(ProtocolError):
    code = Err.BACKUP


class StaleEpochError(ProtocolError):
    code = Err.STALE_EPOCH


class FutureEpochError(ProtocolError):
    code = Err.FUTURE_EPOCH


class OutOfOrderError(ProtocolError):
    code = Err.OUT_OF_ORDER


class RetryError(ProtocolError):
    code = Err.RETRY


class WrongEpochError(ProtocolError):
    code = Err.WRONG_EPOCH


class RefusedError(ProtocolError):
    code = Err.REFUSED


class NotLeaderError(ProtocolError):
    code = Err.NOT_LEADER


class PaxosError(ProtocolError):
    code = Err.PAXOS


class UnavailableError(ProtocolError):
    code = Err.UNAVAILABLE


_BY_CODE = {
    cls.code: cls
    for cls in (
        NotPrimaryError, SealedError, EpochChangedError, BackupError, StaleEpochError,
        FutureEpochError, OutOfOrderError, RetryError, WrongEpochError, RefusedError,
        NotLeaderError, PaxosError, UnavailableError,
    )
}


def error_for(code: int, msg: str = "") -> ProtocolError:
    cls = _BY_CODE.get(code, ProtocolError)
    return cls(msg, Err(code) if code in Err._value2member_map_ else Err.UNAVAILABLE)


class NodeCrashed(BaseException):
    """Raised inside a task whose node has crashed; unwinds it without running protocol handlers.

    Derives from BaseException so ``except Exception`` in protocol code never swallows it.
    """
