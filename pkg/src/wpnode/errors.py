"""Exception types raised by the toolkit."""


class WPNodeError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(WPNodeError, ValueError):
    """Inconsistent shapes, invalid hyperparameters or malformed inputs."""


class AutodiffError(WPNodeError):
    """Misuse of the reverse-mode machinery (e.g. nothing recorded)."""


class TrainingError(WPNodeError):
    """Optimization diverged or produced non-finite values.

    ``report`` carries the partial training history when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IntegrationError(WPNodeError):
    """Time integration blew up or the adaptive step size underflowed.

    ``last_valid_index`` is the last grid index whose state is trustworthy and
    ``states`` holds the trajectory up to and including that index.
    """

    def __init__(self, message, last_valid_index=-1, states=None):
        super().__init__(message)
        self.last_valid_index = last_valid_index
        self.states = states
