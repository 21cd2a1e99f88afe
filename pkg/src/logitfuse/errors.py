"""Exception types shared across the package."""


class LogitFuseError(Exception):
    """Base class for all package-specific errors."""


class InvalidLogits(LogitFuseError):
    """A logit vector contains NaN/Inf or has an unexpected shape."""


class VocabMismatch(LogitFuseError):
    """A token id or vector length is inconsistent with a vocabulary."""


class ReplayExhausted(LogitFuseError):
    """A replay-trace provider was queried past the end of its trace."""


class BackendUnavailable(LogitFuseError):
    """The network logit backend is unreachable, overloaded, or timed out."""


class UntokenizableText(LogitFuseError):
    """Some character of the text is covered by no vocabulary token."""


class InsufficientSamples(LogitFuseError):
    """A question has fewer graded samples than the requested k."""


class DomainError(LogitFuseError):
    """Arguments violate a mathematical precondition."""


class InsufficientPairs(LogitFuseError):
    """Requested more preference pairs than are available."""


class EmptyPairSet(LogitFuseError):
    """The DPO objective needs at least one scored pair."""
