"""Exception hierarchy shared by the runtime, the simulator and the harness."""


class SmiError(Exception):
    """Base class for all errors raised by this package."""


class MalformedPacketError(SmiError):
    """Raised when wire bytes cannot be decoded into a valid packet."""


class TopologyError(SmiError):
    """Invalid topology document or generator parameters."""


class RoutingError(SmiError):
    """Route generation or table validation failure."""


class UnreachableRankError(RoutingError):
    """Some (source, destination) pairs have no route.

    The offending pairs are kept on the ``pairs`` attribute.
    """

    def __init__(self, pairs):
        self.pairs = tuple(pairs)
        preview = ", ".join(f"{s}->{d}" for s, d in self.pairs[:8])
        more = "" if len(self.pairs) <= 8 else f" (+{len(self.pairs) - 8} more)"
        super().__init__(f"unreachable rank pairs: {preview}{more}")


class FatalRouteError(SmiError):
    """A packet reached a unit whose table has no entry for it."""


class ConfigError(SmiError):
    """Invalid run configuration or port declaration."""


class ChannelError(SmiError):
    """Base class for channel API misuse and protocol failures."""


class PortInUseError(ChannelError):
    """A port was reopened while a prior channel on it is unfinished."""


class ContractViolationError(ChannelError):
    """Push/pop called past the declared element count or on a closed channel."""


class ChannelMismatchError(ChannelError):
    """Sender and receiver descriptors disagree (detected on a mismatched packet)."""


class ProtocolViolationError(ChannelError):
    """Unexpected control traffic or undrained fabric state."""


class DeadlockError(SmiError):
    """Watchdog fired: no progress within the configured idle window.

    Carries a human-readable diagnostic dump of queue occupancies and
    blocked units.
    """

    def __init__(self, message, dump=""):
        self.dump = dump
        super().__init__(message if not dump else f"{message}\n{dump}")
