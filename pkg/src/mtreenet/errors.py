"""Exception types shared across the package.

Each maps to a CLI exit code (see cli.py): config problems exit 3, data/corpus
problems exit 4, runtime failures exit 5.
"""


class MtreeError(Exception):
    """Base class for package errors."""


class ConfigError(MtreeError):
    """Invalid or inconsistent configuration value."""


class CorpusIncompleteError(MtreeError):
    """Expected file or directory missing from a dataset root."""


class SchemaViolationError(MtreeError):
    """On-disk file present but inconsistent with its declared schema."""


class FoldArityError(MtreeError):
    """Cross-validation requires exactly five blocks per subject."""


class DegenerateClassError(MtreeError):
    """An operation requires all three classes to be present."""


class ContractError(MtreeError):
    """Tensor shape or value violates a module's input contract."""


class NumericalDivergenceError(MtreeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
