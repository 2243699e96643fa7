"""Exception hierarchy shared across the package.

Every error raised on a validated input path derives from
:class:`DiffusionIqaError`, so callers (and the CLI) can distinguish
usage errors from genuine bugs.
"""


class DiffusionIqaError(Exception):
    """Base class for all package errors."""


class InvalidBoundsError(DiffusionIqaError):
    """Schedule or policy parameters outside their allowed interval."""


class ShapeMismatchError(DiffusionIqaError):
    """Two arrays that must agree in shape do not."""


class TimestepRangeError(DiffusionIqaError):
    """A timestep lies outside [1, T]."""


class TimestepOrderError(DiffusionIqaError):
    """A reverse step was asked to move to a larger (noisier) timestep."""


class TimestepUnderflowError(DiffusionIqaError):
    """A multi-step chain would reach a timestep below 1."""


class ConfigError(DiffusionIqaError):
    """Malformed or inconsistent run configuration."""


class TokenizationError(DiffusionIqaError):
    """Prompt text contains words outside the encoder vocabulary."""


class PromptError(DiffusionIqaError):
    """Invalid prompt pair (e.g. identical positive/negative attributes)."""


class InconsistentTokenCountError(DiffusionIqaError):
    """Attention maps disagree on the number of text tokens M."""


class ManifestError(DiffusionIqaError):
    """Dataset manifest failed to parse or validate."""


class CheckpointError(DiffusionIqaError):
    """Checkpoint archive is unreadable, incomplete, or wrong version."""


class MissingCheckpointError(CheckpointError):
    """An adapter descriptor points at a checkpoint that does not exist."""


class TopologyMismatchError(DiffusionIqaError):
    """An adapter descriptor's block topology disagrees with the model."""


class DegenerateInputError(DiffusionIqaError):
    """A correlation was requested on a constant (rank-free) vector."""


class TrainingDivergedError(DiffusionIqaError):
    """Loss became non-finite during training; carries the sample id."""

    def __init__(self, message: str, sample_id: str | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class EvaluationError(DiffusionIqaError):
    """Evaluation could not produce a single usable prediction."""


class AblationError(DiffusionIqaError):
    """An ablation grid is malformed (unknown name, bad override key)."""
