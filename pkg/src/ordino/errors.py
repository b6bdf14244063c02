"""Exception types shared across the package."""


class OrdinoError(Exception):
    """Base class for all package-specific errors."""


class TemplateError(OrdinoError):
    """Malformed rank template or label set (missing slot, bad ordering, overlong label)."""


class UnknownTokenError(OrdinoError):
    """A token is not present in the tokenizer vocabulary or embedding table."""


class ShapeError(OrdinoError):
    """An array does not have the shape a function requires."""


class ZeroFeatureError(OrdinoError):
    """A feature vector is too close to zero to normalize."""


class NonFiniteError(OrdinoError):
    """NaN or infinity encountered where finite values are required."""


class LossError(OrdinoError):
    """Invalid input to a loss function (empty batch, bad probabilities, ...)."""


class DataError(OrdinoError):
    """Dataset construction or loading failed."""


class ConfigError(OrdinoError):
    """Invalid or unknown configuration key/value."""


class BackboneUnavailableError(OrdinoError):
    """A real encoder backbone was requested but could not be loaded."""


class DivergenceError(OrdinoError):
    """Training produced a non-finite loss.

    Carries the optimizer step at which the divergence happened.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class CheckpointError(OrdinoError):
    """Checkpoint file is missing, corrupt, or from an unsupported version."""
