"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto the process exit codes in :mod:`.exit_codes`.
"""

from __future__ import annotations

from typing import Optional


class AttentionAgeError(Exception):
    """Base class for all attention-age failures."""


class ConfigError(AttentionAgeError, ValueError):
    """Configuration is missing, malformed, or violates an invariant."""

    def __init__(self, message: str, problems: Optional[list[str]] = None):
        self.problems = list(problems or [])
        if self.problems:
            message = f"{message}: {'; '.join(self.problems)}"
        super().__init__(message)


class ShapeMismatchError(AttentionAgeError, ValueError):
    """A tensor shape does not fit the layer that receives it."""

    def __init__(self, message: str, layer_index: Optional[int] = None, layer_kind: Optional[str] = None):
        self.layer_index = layer_index
        self.layer_kind = layer_kind
        if layer_index is not None:
            message = f"layer {layer_index} ({layer_kind}): {message}"
        super().__init__(message)


class MissingCacheError(AttentionAgeError, RuntimeError):
    """backward() was called without cached activations."""

    def __init__(self, message: str = "no cached activations; rerun forward(..., cache=True) before backward()"):
        super().__init__(message)


class NonFiniteError(AttentionAgeError, FloatingPointError):
    """A loss, gradient, or logit became NaN/Inf."""

    def __init__(
        self,
        message: str,
        *,
        sample_id: Optional[str] = None,
        batch: Optional[int] = None,
        epoch: Optional[int] = None,
    ):
        self.sample_id = sample_id
        self.batch = batch
        self.epoch = epoch
        context = []
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if batch is not None:
            context.append(f"batch={batch}")
        if sample_id is not None:
            context.append(f"sample={sample_id}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NoRegionFound(AttentionAgeError):
    """The thresholded attention map contains no pixel."""

    def __init__(self, tau: float, image_id: Optional[str] = None):
        self.tau = tau
        self.image_id = image_id
        where = f" for image {image_id}" if image_id else ""
        super().__init__(f"attention mask is empty at tau={tau:g}{where}; try a lower threshold")


class DatasetFormatError(AttentionAgeError, ValueError):
    """A dataset file is malformed or references a missing image."""

    def __init__(self, message: str, *, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class CheckpointMismatchError(AttentionAgeError):
    """A checkpoint belongs to another phase or another configuration."""


class ExperimentLockedError(AttentionAgeError):
    """Another process owns the experiment directory."""
