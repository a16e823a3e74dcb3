# src/utils/errors.py
"""
Error Types

Domain exceptions shared by the tensor core, the training engine and the
command handlers. The command line maps every FlierError to exit code 1
with a one-line cause.

Version: 1.0.0
"""
from typing import Optional


class FlierError(Exception):
    """Base class for all expected failures."""

    pass


class ShapeMismatchError(FlierError, ValueError):
    """Raised when tensor shapes disagree; names the offending dimension."""

    pass


class GradientError(FlierError):
    """Raised on invalid backward passes (non-scalar loss, tape reuse)."""

    pass


class NumericalDivergenceError(FlierError):
    """
    Raised when a loss or sampler state becomes NaN/Inf.

    Carries the stage and position where divergence was detected.
    """

    def __init__(
        self,
        stage: str,
        epoch: Optional[int] = None,
        phase: Optional[str] = None,
        step: Optional[int] = None,
        value: Optional[float] = None,
    ) -> None:
        self.stage = stage
        self.epoch = epoch
        self.phase = phase
        self.step = step
        self.value = value
        parts = [f"stage={stage}"]
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if phase is not None:
            parts.append(f"phase={phase}")
        if step is not None:
            parts.append(f"step={step}")
        if value is not None:
            parts.append(f"value={value}")
        super().__init__("numerical divergence (" + ", ".join(parts) + ")")


class EpisodeError(FlierError, ValueError):
    """Raised when an episode cannot be assembled from the dataset."""

    pass


class InsufficientCacheError(EpisodeError):
    """Raised when a class has fewer cached generations than requested shots."""

    def __init__(self, class_label: int, available: int, required: int) -> None:
        self.class_label = class_label
        self.available = available
        self.required = required
        super().__init__(
            f"generation cache has {available} records for class {class_label}, "
            f"{required} required; rebuild with 'build-cache --count {required} --force' "
            f"or larger"
        )


class ConfigValidationError(FlierError, ValueError):
    """Raised when a configuration file or override is invalid."""

    pass


class ArtifactError(FlierError):
    """Raised when an artifact cannot be read, parsed or written."""

    def __init__(self, path: object, reason: str) -> None:
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{reason}: {self.path}")


class MissingArtifactError(ArtifactError):
    """Raised when a required upstream artifact is absent."""

    def __init__(self, path: object, producer: str) -> None:
        self.producer = producer
        super().__init__(path, f"missing artifact (run '{producer}' first)")


class StructuralInvariantError(FlierError):
    """Raised when model construction violates an architectural invariant."""

    pass
