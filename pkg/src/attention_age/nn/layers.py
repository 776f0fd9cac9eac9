"""Layer kinds supported by :class:`~attention_age.nn.network.Network`.

Activations are channel-last: images are ``(N, H, W, C)`` and flat
features are ``(N, D)``. Per-sample shapes (without the batch axis) are
used for shape inference.

Each layer kind provides:

- ``output_shape(spec, in_shape)``
- ``init(spec, in_shape, rng, dtype)`` returning a dict of parameters
- ``forward(spec, x, params, covariate)`` returning ``(out, cache)``
- ``backward(spec, dout, cache, params)`` returning ``(dx, grads)``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..core.errors import ShapeMismatchError

Shape = Tuple[int, ...]
Params = Dict[str, np.ndarray]

LAYER_KINDS = (
    "conv2d",
    "relu",
    "global_avg_pool",
    "global_max_pool",
    "dense",
    "concat",
    "softmax",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network.

    ``units`` is the number of output channels for ``conv2d``, the output
    width for ``dense``, and the covariate-branch width for ``concat``.
    """

    kind: str
    kernel: int = 0
    stride: int = 1
    units: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind '{self.kind}' (expected one of {', '.join(LAYER_KINDS)})")
        if self.kind == "conv2d":
            if self.kernel < 1 or self.stride < 1 or self.units < 1:
                raise ValueError("conv2d needs positive kernel, stride and units")
        if self.kind in ("dense", "concat") and self.units < 1:
            raise ValueError(f"{self.kind} needs positive units")

    @property
    def trainable(self) -> bool:
        return self.kind in ("conv2d", "dense", "concat")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "conv2d":
            data.update(kernel=self.kernel, stride=self.stride, units=self.units)
        elif self.kind in ("dense", "concat"):
            data["units"] = self.units
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        return cls(
            kind=str(data["kind"]),
            kernel=int(data.get("kernel", 0)),
            stride=int(data.get("stride", 1)),
            units=int(data.get("units", 0)),
        )


# ---------------------------------------------------------------------------
# conv2d (same padding, square kernel)
# ---------------------------------------------------------------------------

def _conv_geometry(spec: LayerSpec, height: int, width: int) -> Tuple[int, int, int]:
    pad = spec.kernel // 2
    out_h = (height + 2 * pad - spec.kernel) // spec.stride + 1
    out_w = (width + 2 * pad - spec.kernel) // spec.stride + 1
    return pad, out_h, out_w


class Conv2D:
    @staticmethod
    def output_shape(spec: LayerSpec, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"conv2d expects (H, W, C) input, got {in_shape}")
        _, out_h, out_w = _conv_geometry(spec, in_shape[0], in_shape[1])
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchError(f"input {in_shape} too small for kernel {spec.kernel}")
        return (out_h, out_w, spec.units)

    @staticmethod
    def init(spec: LayerSpec, in_shape: Shape, rng: np.random.Generator, dtype) -> Params:
        fan_in = spec.kernel * spec.kernel * in_shape[2]
        scale = np.sqrt(2.0 / fan_in)
        weight = rng.standard_normal((spec.kernel, spec.kernel, in_shape[2], spec.units)) * scale
        return {"weight": weight.astype(dtype), "bias": np.zeros(spec.units, dtype=dtype)}

    @staticmethod
    def forward(spec: LayerSpec, x: np.ndarray, params: Params, covariate=None):
        n, height, width, _ = x.shape
        pad, out_h, out_w = _conv_geometry(spec, height, width)
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
        weight = params["weight"]
        out = np.zeros((n, out_h, out_w, spec.units), dtype=x.dtype)
        s = spec.stride
        for i in range(spec.kernel):
            for j in range(spec.kernel):
                window = xp[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :]
                out += window @ weight[i, j]
        out += params["bias"]
        return out, {"xp": xp, "in_shape": x.shape, "pad": pad}

    @staticmethod
    def backward(spec: LayerSpec, dout: np.ndarray, cache: Dict[str, Any], params: Params):
        xp = cache["xp"]
        pad = cache["pad"]
        _, height, width, _ = cache["in_shape"]
        _, out_h, out_w, _ = dout.shape
        weight = params["weight"]
        s = spec.stride
        d_weight = np.zeros_like(weight)
        dxp = np.zeros_like(xp)
        for i in range(spec.kernel):
            for j in range(spec.kernel):
                rows = slice(i, i + s * (out_h - 1) + 1, s)
                cols = slice(j, j + s * (out_w - 1) + 1, s)
                window = xp[:, rows, cols, :]
                d_weight[i, j] = np.tensordot(window, dout, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, rows, cols, :] += dout @ weight[i, j].T
        d_bias = dout.sum(axis=(0, 1, 2))
        dx = dxp[:, pad:pad + height, pad:pad + width, :] if pad else dxp
        return dx, {"weight": d_weight, "bias": d_bias.astype(weight.dtype)}


class ReLU:
    @staticmethod
    def output_shape(spec: LayerSpec, in_shape: Shape) -> Shape:
        return in_shape

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        return {}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype), {"mask": mask}

    @staticmethod
    def backward(spec, dout, cache, params):
        return dout * cache["mask"], {}


class GlobalAvgPool:
    @staticmethod
    def output_shape(spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"global_avg_pool expects (H, W, C) input, got {in_shape}")
        return (in_shape[2],)

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        return {}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        return x.mean(axis=(1, 2)), {"in_shape": x.shape}

    @staticmethod
    def backward(spec, dout, cache, params):
        n, height, width, channels = cache["in_shape"]
        dx = np.broadcast_to(dout[:, None, None, :] / (height * width), (n, height, width, channels))
        return np.ascontiguousarray(dx), {}


class GlobalMaxPool:
    @staticmethod
    def output_shape(spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"global_max_pool expects (H, W, C) input, got {in_shape}")
        return (in_shape[2],)

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        return {}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        n, height, width, channels = x.shape
        flat = x.reshape(n, height * width, channels)
        winners = flat.argmax(axis=1)
        out = np.take_along_axis(flat, winners[:, None, :], axis=1)[:, 0, :]
        return out, {"winners": winners, "in_shape": x.shape}

    @staticmethod
    def backward(spec, dout, cache, params):
        n, height, width, channels = cache["in_shape"]
        dflat = np.zeros((n, height * width, channels), dtype=dout.dtype)
        np.put_along_axis(dflat, cache["winners"][:, None, :], dout[:, None, :], axis=1)
        return dflat.reshape(n, height, width, channels), {}


class Dense:
    @staticmethod
    def output_shape(spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"dense expects flat (D,) input, got {in_shape}")
        return (spec.units,)

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        scale = np.sqrt(2.0 / in_shape[0])
        weight = rng.standard_normal((in_shape[0], spec.units)) * scale
        return {"weight": weight.astype(dtype), "bias": np.zeros(spec.units, dtype=dtype)}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        return x @ params["weight"] + params["bias"], {"x": x}

    @staticmethod
    def backward(spec, dout, cache, params):
        x = cache["x"]
        grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ params["weight"].T, grads


class Concat:
    """Appends a rectified dense embedding of the scalar covariate."""

    @staticmethod
    def output_shape(spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"concat expects flat (D,) input, got {in_shape}")
        return (in_shape[0] + spec.units,)

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        weight = rng.standard_normal((1, spec.units)) * np.sqrt(2.0)
        return {"cov_weight": weight.astype(dtype), "cov_bias": np.zeros(spec.units, dtype=dtype)}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        if covariate is None:
            raise ShapeMismatchError("concat layer needs a covariate value per sample")
        cov = np.asarray(covariate, dtype=x.dtype).reshape(-1, 1)
        if cov.shape[0] != x.shape[0]:
            raise ShapeMismatchError(f"{cov.shape[0]} covariates for a batch of {x.shape[0]}")
        pre = cov @ params["cov_weight"] + params["cov_bias"]
        mask = pre > 0
        branch = np.where(mask, pre, 0).astype(x.dtype)
        return np.concatenate([x, branch], axis=1), {"cov": cov, "mask": mask, "width": x.shape[1]}

    @staticmethod
    def backward(spec, dout, cache, params):
        width = cache["width"]
        d_branch = dout[:, width:] * cache["mask"]
        grads = {"cov_weight": cache["cov"].T @ d_branch, "cov_bias": d_branch.sum(axis=0)}
        return dout[:, :width], grads


class Softmax:
    @staticmethod
    def output_shape(spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"softmax expects flat (D,) input, got {in_shape}")
        return in_shape

    @staticmethod
    def init(spec, in_shape, rng, dtype) -> Params:
        return {}

    @staticmethod
    def forward(spec, x, params, covariate=None):
        shifted = x - x.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        return probs, {"probs": probs}

    @staticmethod
    def backward(spec, dout, cache, params):
        probs = cache["probs"]
        dx = probs * (dout - (dout * probs).sum(axis=1, keepdims=True))
        return dx, {}


LAYER_IMPLS = {
    "conv2d": Conv2D,
    "relu": ReLU,
    "global_avg_pool": GlobalAvgPool,
    "global_max_pool": GlobalMaxPool,
    "dense": Dense,
    "concat": Concat,
    "softmax": Softmax,
}


def kink_signature(kind: str, cache: Optional[Dict[str, Any]]) -> Optional[np.ndarray]:
    """Return the discrete branch choice a layer made, if it has one."""
    if cache is None:
        return None
    if kind in ("relu", "concat"):
        return cache["mask"]
    if kind == "global_max_pool":
        return cache["winners"]
    return None
