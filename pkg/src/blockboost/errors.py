"""Exception hierarchy shared by every layer of the simulated cluster."""


class BlockBoostError(Exception):
    pass


class LibSVMParseError(BlockBoostError, ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnsupportedLabelError(LibSVMParseError):
    pass


class ConfigError(BlockBoostError, ValueError):
    pass


class CapacityError(BlockBoostError, ValueError):
    """Tree has more leaves than fit in one 64-bit bitvector."""


class InvariantViolation(BlockBoostError, AssertionError):
    pass


class ProtocolError(BlockBoostError):
    pass


class RoutingError(ProtocolError):
    pass


class NotReadyError(ProtocolError):
    """A server-side barrier has not been met yet."""


class CommunicationBoundError(ProtocolError, AssertionError):
    """A pushed sparse tensor exceeds the per-worker entry bound."""
