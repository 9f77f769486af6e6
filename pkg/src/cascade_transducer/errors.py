"""Exception types shared across the package."""


class CascadeError(Exception):
    """Base class for package errors."""


class DimensionError(CascadeError, ValueError):
    """Operand shapes are incompatible."""


class VocabularyError(CascadeError, KeyError):
    """A token id or string is outside the vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StateError(CascadeError, ValueError):
    """A recurrent state does not match the layer it is fed to."""


class ModelKindError(CascadeError, TypeError):
    """Input does not match the kind of model it was given to."""


class CapabilityError(CascadeError, AttributeError):
    """The model lacks an optional component (e.g. an LM head)."""


class ConfigError(CascadeError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(CascadeError, ValueError):
    """Malformed corpus, vocabulary or checkpoint content."""


class FingerprintError(DataError):
    """A checkpoint was built for a different vocabulary or configuration."""


class DivergenceError(CascadeError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


class SizeError(CascadeError, ValueError):
    """A brute-force oracle was asked for a problem that is too large."""
