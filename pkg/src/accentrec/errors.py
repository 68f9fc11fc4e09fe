"""Exception hierarchy shared across the kit.

The CLI maps these onto exit codes: configuration/data/input errors exit 2,
numerical failures exit 3.
"""


class AccentrecError(Exception):
    """Base class for all errors raised by the kit."""


class DimensionError(AccentrecError, ValueError):
    """Operand shapes do not conform to a primitive's rules."""


class DomainError(AccentrecError, ValueError):
    """A primitive was evaluated outside its mathematical domain."""


class ContractError(AccentrecError, ValueError):
    """A caller violated an API precondition."""


class ConfigurationError(AccentrecError, ValueError):
    """Invalid configuration value or parameter layout."""


class InputError(AccentrecError, ValueError):
    """Invalid runtime input (empty sequences, bad extents)."""


class InfeasibleTargetError(AccentrecError, ValueError):
    """A CTC target cannot be aligned to the available frames."""

    def __init__(self, frames, length, required):
        self.frames = frames
        self.length = length
        self.required = required
        super().__init__(
            f"CTC target infeasible: T'={frames}, L={length}, need at least {required} frames"
        )


class SizeError(AccentrecError, ValueError):
    """Instance too large for an exhaustive oracle."""


class NumericalError(AccentrecError, ArithmeticError):
    """Base for non-finite values and failed numerical checks."""


class NonFiniteError(NumericalError):
    """NaN or infinity detected where finite values are required."""


class EvaluationError(NumericalError):
    """A function probed by a numerical check returned a non-finite value."""


class DataError(AccentrecError):
    """Problems with manifests, feature files or checkpoints."""


class ManifestNotFoundError(DataError, FileNotFoundError):
    pass


class MalformedRecordError(DataError, ValueError):
    pass


class LabelRangeError(DataError, ValueError):
    pass


class TokenRangeError(DataError, ValueError):
    pass


class CheckpointError(DataError, ValueError):
    pass
