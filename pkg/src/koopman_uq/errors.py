"""Exception hierarchy. The CLI maps each family to its own exit code."""


class KoopmanUQError(Exception):
    """Base class for all package errors."""


class CaseError(KoopmanUQError, ValueError):
    """Malformed or invalid grid case / configuration input."""


class ConfigError(KoopmanUQError, ValueError):
    """Invalid study configuration."""


class NumericalError(KoopmanUQError, ArithmeticError):
    """A numerical procedure failed (singular matrix, blow-up, defective basis)."""


class PowerFlowError(NumericalError):
    pass


class SimulationError(NumericalError):
    """Non-finite state during time integration.

    Attributes
    ----------
    time : float
        Simulation time (s) of the first non-finite snapshot.
    """

    def __init__(self, message, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class FitError(NumericalError):
    pass
