class AdvisorError(Exception):
    """Base class for all library errors."""


class ParseError(AdvisorError, ValueError):
    pass


class InvariantError(AdvisorError, ValueError):
    pass


class DimensionError(AdvisorError, ValueError):
    pass


class InfeasibleActionError(AdvisorError, RuntimeError):
    """An action was taken that the feasibility mask forbids."""


class EmptyMaskError(AdvisorError, RuntimeError):
    """No feasible dimension is left to select."""


class PoolTooLargeError(AdvisorError, ValueError):
    pass


class ProtocolError(AdvisorError, RuntimeError):
    """The external cost source broke the wire protocol."""


class CostSourceTimeout(ProtocolError):
    pass


class DivergenceError(AdvisorError, ArithmeticError):
    def __init__(self, message: str, episode: int | None = None):
        super().__init__(message if episode is None else f"episode {episode}: {message}")
        self.episode = episode


class SpawnError(AdvisorError, OSError):
    """The external cost source could not be started."""
