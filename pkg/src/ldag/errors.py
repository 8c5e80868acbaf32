"""Exception taxonomy shared across the package."""


class LdagError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LdagError):
    """Shapes or extents do not match the operation's contract."""


class DegenerateInputError(LdagError):
    """Input is inside the type but outside the documented domain (zero vector, empty prompt)."""


class ContractError(LdagError):
    """API misuse: non-scalar loss, empty list, out-of-range index, bad map count."""


class FormatError(LdagError):
    """A file does not conform to its on-disk format.

    ``offset`` is the byte offset of the first inconsistency when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateEpisodeError(LdagError):
    """A sampled episode has a single-class support mask at feature resolution."""


class TransportError(LdagError):
    """The chat endpoint is unreachable and no offline fixture exists."""


class ProtocolError(LdagError):
    """The chat endpoint replied, but never in the mandated format.

    Carries the last raw reply for diagnosis.
    """

    def __init__(self, message, raw_reply=""):
        super().__init__(message)
        self.raw_reply = raw_reply


class NotFoundError(LdagError):
    """A named class or resource is absent from its catalog."""


class NanGradientError(LdagError):
    """A gradient buffer contains NaN; names the offending tensor."""
