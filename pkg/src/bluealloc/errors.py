"""Exception types shared across the package."""


class BlueAllocError(Exception):
    """Base class for every package-specific error."""


class DegenerateSensor(BlueAllocError):
    """Sensor has zero observation or channel SNR and can never carry information."""


class AllChannelsSilent(BlueAllocError):
    """No sensor contributes to the fusion rule, so the estimate is undefined."""


class InfeasibleTarget(BlueAllocError):
    """The variance target cannot be met even with unbounded transmit power.

    Carries the minimum achievable variance so callers can report how far
    out of reach the request was.
    """

    def __init__(self, message: str, min_achievable_variance: float | None = None):
        super().__init__(message)
        self.min_achievable_variance = min_achievable_variance


Infeasible = InfeasibleTarget


class BracketFailure(BlueAllocError):
    """Root bracketing for the dual multiplier ran out of doublings."""


class ClosedFormMismatch(BlueAllocError):
    """Closed-form stationarity root failed validation and the numeric rescue also failed."""


class BOutOfRange(BlueAllocError):
    """An information-share value lies outside [0, beta)."""


class EmptyCell(BlueAllocError):
    """A quantizer cell has no members, so no representative can be chosen."""


class TooFewTrainingVectors(BlueAllocError):
    """Training set is smaller than the requested codebook."""


class DimensionMismatch(BlueAllocError):
    """Vector lengths or sensor counts do not agree."""


class ConfigError(BlueAllocError):
    """A configuration document failed validation.

    ``path`` points at the offending field, e.g. ``sim.json: sigma_o2_range[1]``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message
