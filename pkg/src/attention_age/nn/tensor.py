"""Dense float tensor with an optional gradient buffer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core.errors import NonFiniteError, ShapeMismatchError


@dataclass
class Tensor:
    """N-dimensional float array plus an optional same-shaped gradient.

    ``data`` is stored as a numpy array in row-major order, so ``flat()``
    gives the flat view used by checkpoints and finite-difference checks.
    """

    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if data.ndim == 0:
            data = data.reshape(1)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("tensor contains NaN or Inf values")
        self.data = data
        if self.grad is not None:
            grad = np.asarray(self.grad, dtype=data.dtype)
            if grad.size != data.size:
                raise ShapeMismatchError(
                    f"gradient has {grad.size} values but tensor has {data.size}"
                )
            self.grad = grad.reshape(data.shape)

    @classmethod
    def from_flat(cls, shape: Sequence[int], values: Sequence[float], dtype=np.float32) -> "Tensor":
        """Build a tensor from a shape and a flat row-major value list."""
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeMismatchError(f"shape entries must be positive, got {shape}")
        flat = np.asarray(values, dtype=dtype).ravel()
        if flat.size != int(np.prod(shape)):
            raise ShapeMismatchError(
                f"{flat.size} values do not fill shape {shape} ({int(np.prod(shape))} expected)"
            )
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data


def as_array(value, dtype=None) -> np.ndarray:
    """Accept a Tensor or array-like and return the underlying array."""
    if isinstance(value, Tensor):
        arr = value.data
    else:
        arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return arr
