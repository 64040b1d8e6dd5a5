"""Exception hierarchy shared by every spanprof module."""


class SpanprofError(Exception):
    """Base class for all profiler errors."""


class RootAlreadyExists(SpanprofError):
    pass


class NoOpenFinish(SpanprofError):
    """sync issued without a spawn since task start or the previous sync."""


class EmptySegments(SpanprofError):
    pass


class UnknownNode(SpanprofError, KeyError):
    pass


class BackendUnavailable(SpanprofError):
    """The requested counter backend cannot be used on this host."""


class CrossThreadMarker(SpanprofError):
    pass


class NestedInterval(SpanprofError):
    pass


class WrongBackend(SpanprofError):
    pass


class MismatchedRegion(SpanprofError):
    pass


class CrossTaskRegion(SpanprofError):
    """A causal region was left open across a spawn, sync or task end."""


class InvalidRange(SpanprofError, ValueError):
    pass


class CorruptFile(SpanprofError):
    pass


class ZeroSpan(SpanprofError):
    pass


class UnknownRegion(SpanprofError, KeyError):
    pass
