"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class EmptyLossError(ValueError):
    """A loss was requested over an empty set of positions."""


class GradientContractError(RuntimeError):
    """``backward`` was called on an invalid root or a spent graph."""


class DegenerateInputError(ValueError):
    """Input has zero norm or no content where some is required."""


class ConfigurationError(ValueError):
    """Invalid run configuration, image geometry or missing inputs."""


class ValidationError(ValueError):
    """A sample or index set violates its invariants."""


class CheckpointError(IOError):
    """Checkpoint file is truncated or not a checkpoint at all."""


class IncompatibleVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""
