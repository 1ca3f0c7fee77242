"""Exception types raised by kan_ntk."""


class KanError(Exception):
    """Base class for library errors."""


class ShapeError(KanError, ValueError):
    """Array or tensor dimensions do not match the model shape."""


class StaleCacheError(KanError):
    """A ForwardCache was used with parameters or inputs that did not produce it."""


class DivergenceError(KanError):
    """Training produced a non-finite loss or gradient.

    Attributes
    ----------
    step : int
        The step at which the non-finite value appeared.
    trajectory : list
        Records collected before the failure.
    """

    def __init__(self, message, step, trajectory=None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.trajectory = trajectory if trajectory is not None else []


class ConfigError(KanError, ValueError):
    """An experiment or training configuration is invalid."""
