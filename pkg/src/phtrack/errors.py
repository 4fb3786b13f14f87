class PhTrackError(Exception):
    """Base class for library errors."""


class DimensionError(PhTrackError, ValueError):
    pass


class DomainError(PhTrackError, ValueError):
    pass


class GainError(PhTrackError, ValueError):
    pass


class SolverError(PhTrackError, RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class CertificationError(PhTrackError):
    pass


class DivergenceError(PhTrackError, RuntimeError):
    """Non-finite state during integration; carries the last finite time and partial output."""

    def __init__(self, msg, last_time=None, partial=None):
        super().__init__(msg)
        self.last_time = last_time
        self.partial = partial


class FitFloorError(PhTrackError, ValueError):
    pass
