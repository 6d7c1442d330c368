"""Exception types raised across the package."""


class SindyError(Exception):
    """Base class for all package errors."""


class IntegrationDiverged(SindyError):
    def __init__(self, message, last_time=None, last_index=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_index = last_index


class EvolutionFailed(SindyError):
    """Model evolution stopped early; ``reason`` is diverged, timeout or stiff."""

    def __init__(self, reason, last_index, partial=None):
        super().__init__(f"evolution failed ({reason}) at index {last_index}")
        self.reason = reason
        self.last_index = last_index
        self.partial = partial


class DegenerateReference(SindyError):
    pass


class WindowTooLong(SindyError):
    pass


class DegeneratePercentile(SindyError):
    pass


class SubsetTooSmall(SindyError):
    pass


class RankDeficient(SindyError):
    def __init__(self, message, rank=None, n_cols=None):
        super().__init__(message)
        self.rank = rank
        self.n_cols = n_cols


class NoCandidates(SindyError):
    pass


class NoViableModel(SindyError):
    pass


class NoTrueOverlap(SindyError):
    pass


class MismatchedLibrary(SindyError):
    pass


class ConfigError(SindyError):
    pass
