"""Exception hierarchy for the wpmec package."""

from typing import Optional


class WpmecError(Exception):
    """Base class for every error raised by wpmec."""


class ValidationError(WpmecError):
    """Bad shapes, non-finite data, or a violated type invariant."""


class DomainError(WpmecError):
    """A formula was evaluated outside its domain (e.g. a negative rate)."""


class InfeasiblePairError(WpmecError):
    """Offloaded bits requested with a zero-length offloading slot."""


class DualInfeasibleError(WpmecError):
    """The dual function was requested outside the dual domain."""


class CutContractError(WpmecError):
    """A feasibility cut was requested at a dual-feasible point."""


class UnsupportedSizeError(WpmecError):
    """The brute-force oracle was called on an instance it cannot grid."""


class InternalInconsistencyError(WpmecError):
    """A solver produced an allocation that fails its own feasibility check."""


class ConfigError(WpmecError):
    """A config or channels file could not be parsed."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")
