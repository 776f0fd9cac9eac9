"""Sequential network over the layer kinds in :mod:`.layers`.

A network is a :class:`NetworkSpec` (architecture plus seed) together with
its parameters. ``run`` is pure and safe to call from several threads on
shared parameters; ``forward(..., cache=True)`` additionally remembers the
activations on the instance so that ``backward`` can follow it.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import MissingCacheError, ShapeMismatchError
from ..core.seeding import rng as seeded_rng
from .layers import LAYER_IMPLS, LayerSpec, Shape, kink_signature
from .tensor import Tensor, as_array

logger = logging.getLogger(__name__)

POOL_KINDS = ("global_avg_pool", "global_max_pool")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers, per-sample input shape ``(H, W, C)`` and init seed."""

    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if any(s <= 0 for s in self.input_shape):
            raise ShapeMismatchError(f"input shape entries must be positive, got {self.input_shape}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        softmax_at = [i for i, layer in enumerate(self.layers) if layer.kind == "softmax"]
        if len(softmax_at) > 1 or (softmax_at and softmax_at[0] != len(self.layers) - 1):
            raise ValueError("a softmax layer is only allowed once, as the last layer")
        self.output_shapes()

    def output_shapes(self) -> List[Shape]:
        """Infer per-sample output shapes, raising on the first incompatible layer."""
        shapes: List[Shape] = []
        current: Shape = self.input_shape
        for index, layer in enumerate(self.layers):
            try:
                current = LAYER_IMPLS[layer.kind].output_shape(layer, current)
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(str(exc), layer_index=index, layer_kind=layer.kind) from None
            shapes.append(current)
        return shapes

    @property
    def has_softmax(self) -> bool:
        return bool(self.layers) and self.layers[-1].kind == "softmax"

    @property
    def has_covariate(self) -> bool:
        return any(layer.kind == "concat" for layer in self.layers)

    @property
    def output_width(self) -> int:
        return int(self.output_shapes()[-1][0])

    def feature_stride(self) -> int:
        """Input pixels between neighbouring cells of the pooled feature map."""
        stride = 1
        end = self.pool_index()
        for layer in self.layers[: end if end is not None else len(self.layers)]:
            if layer.kind == "conv2d":
                stride *= layer.stride
        return stride

    def pool_index(self) -> Optional[int]:
        for index, layer in enumerate(self.layers):
            if layer.kind in POOL_KINDS:
                return index
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "seed": int(self.seed),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(
            layers=tuple(LayerSpec.from_dict(item) for item in data["layers"]),
            input_shape=tuple(data["input_shape"]),
            seed=int(data.get("seed", 0)),
        )


def _conv_stack(channels: Sequence[int], kernel: int, downsample: Optional[int] = None) -> List[LayerSpec]:
    """Conv + ReLU blocks; blocks ``1..downsample`` use stride 2 (all but the first by default)."""
    last = max(len(channels) - 1, 0)
    if downsample is None:
        downsample = last
    if not 0 <= downsample <= last:
        raise ValueError(f"downsample must be in [0, {len(channels) - 1}], got {downsample}")
    layers: List[LayerSpec] = []
    for index, width in enumerate(channels):
        stride = 2 if 1 <= index <= downsample else 1
        layers.append(LayerSpec("conv2d", kernel=kernel, stride=stride, units=int(width)))
        layers.append(LayerSpec("relu"))
    return layers


def classifier_spec(
    input_size: int,
    num_ages: int,
    *,
    channels: Sequence[int] = (8, 16, 32),
    kernel: int = 3,
    pool: str = "max",
    in_channels: int = 1,
    downsample: Optional[int] = None,
    seed: int = 0,
) -> NetworkSpec:
    """Phase I classifier: conv blocks, GAP/GMP, dense over ages, softmax."""
    pool_kind = {"avg": "global_avg_pool", "max": "global_max_pool"}.get(pool, pool)
    if pool_kind not in POOL_KINDS:
        raise ValueError(f"pool must be 'avg' or 'max', got '{pool}'")
    layers = _conv_stack(channels, kernel, downsample)
    layers += [LayerSpec(pool_kind), LayerSpec("dense", units=num_ages), LayerSpec("softmax")]
    return NetworkSpec(tuple(layers), (input_size, input_size, in_channels), seed)


def regressor_spec(
    input_size: int,
    in_channels: int,
    num_ages: int,
    *,
    channels: Sequence[int] = (8, 16, 32),
    kernel: int = 3,
    hidden_units: int = 64,
    gender_units: int = 32,
    head: str = "expectation",
    downsample: Optional[int] = None,
    seed: int = 0,
) -> NetworkSpec:
    """Phase II regressor.

    Conv blocks, one more conv, GMP and a hidden dense layer; the gender
    embedding is concatenated when ``gender_units > 0``. ``head`` selects a
    softmax over ages (expectation regression) or a single output (plain
    l1 regression).
    """
    layers = _conv_stack(channels, kernel, downsample)
    layers += [
        LayerSpec("conv2d", kernel=kernel, stride=1, units=int(channels[-1])),
        LayerSpec("relu"),
        LayerSpec("global_max_pool"),
        LayerSpec("dense", units=hidden_units),
        LayerSpec("relu"),
    ]
    if gender_units > 0:
        layers.append(LayerSpec("concat", units=gender_units))
    if head == "expectation":
        layers += [LayerSpec("dense", units=num_ages), LayerSpec("softmax")]
    elif head == "l1":
        layers.append(LayerSpec("dense", units=1))
    else:
        raise ValueError(f"head must be 'expectation' or 'l1', got '{head}'")
    return NetworkSpec(tuple(layers), (input_size, input_size, in_channels), seed)


@dataclass
class ForwardCache:
    """Per-layer caches and activations of one forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    caches: List[Dict[str, Any]] = field(default_factory=list)
    output: Optional[np.ndarray] = None
    ends_in_softmax: bool = False

    @property
    def logits(self) -> np.ndarray:
        """Input of the final softmax, or the output if there is none."""
        return self.inputs[-1] if self.ends_in_softmax else self.output

    def kink_signature(self, spec: NetworkSpec) -> List[Optional[np.ndarray]]:
        return [kink_signature(layer.kind, cache) for layer, cache in zip(spec.layers, self.caches)]


class Network:
    """Parameters plus forward/backward passes for a :class:`NetworkSpec`."""

    def __init__(
        self,
        spec: NetworkSpec,
        params: Optional[Dict[str, np.ndarray]] = None,
        dtype=np.float32,
    ):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self._shapes = spec.output_shapes()
        self._cache: Optional[ForwardCache] = None
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        if params is None:
            self._init_params()
        else:
            self.load_params(params)

    # -- parameters ---------------------------------------------------------

    def _init_params(self) -> None:
        in_shape: Shape = self.spec.input_shape
        for index, layer in enumerate(self.spec.layers):
            generator = seeded_rng(self.spec.seed, "init", index)
            layer_params = LAYER_IMPLS[layer.kind].init(layer, in_shape, generator, self.dtype)
            for name, value in layer_params.items():
                self.params[f"{index}.{name}"] = value
            in_shape = self._shapes[index]
        logger.debug("Initialised %d parameter arrays (%d values)", len(self.params), self.num_parameters())

    def _layer_params(self, index: int) -> Dict[str, np.ndarray]:
        prefix = f"{index}."
        return {name[len(prefix):]: value for name, value in self.params.items() if name.startswith(prefix)}

    def load_params(self, params: Dict[str, np.ndarray]) -> None:
        if not self.params:
            self._init_params()
        expected = self.params
        missing = set(expected) - set(params)
        if missing:
            raise ShapeMismatchError(f"missing parameters: {', '.join(sorted(missing))}")
        loaded: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, reference in expected.items():
            value = np.asarray(params[name], dtype=self.dtype)
            if value.shape != reference.shape:
                raise ShapeMismatchError(f"parameter {name} has shape {value.shape}, expected {reference.shape}")
            loaded[name] = value.copy()
        self.params = loaded

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return self.params

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    def astype(self, dtype) -> "Network":
        """Return a copy with parameters cast to ``dtype``."""
        return Network(self.spec, {k: v.astype(dtype) for k, v in self.params.items()}, dtype=dtype)

    def copy(self) -> "Network":
        return Network(self.spec, self.params, dtype=self.dtype)

    @staticmethod
    def layer_of(param_name: str) -> int:
        return int(param_name.split(".", 1)[0])

    # -- passes -------------------------------------------------------------

    def _prepare_input(self, x) -> Tuple[np.ndarray, bool]:
        arr = as_array(x, self.dtype)
        expected = self.spec.input_shape
        if arr.shape == expected:
            return arr[None, ...], True
        if arr.ndim == 2 and expected[2] == 1 and arr.shape == expected[:2]:
            return arr[None, :, :, None], True
        if arr.shape[1:] == expected:
            return arr, False
        if arr.ndim == 3 and expected[2] == 1 and arr.shape[1:] == expected[:2]:
            return arr[..., None], False
        raise ShapeMismatchError(f"input shape {arr.shape} does not match network input {expected}", 0, "input")

    def _prepare_covariate(self, covariate, batch: int) -> Optional[np.ndarray]:
        if not self.spec.has_covariate:
            return None
        if covariate is None:
            raise ShapeMismatchError("network has a concat layer but no covariate was given")
        cov = np.asarray(covariate, dtype=self.dtype).reshape(-1)
        if cov.size == 1 and batch > 1:
            cov = np.full(batch, cov[0], dtype=self.dtype)
        if not np.all(np.isin(cov, (-1.0, 1.0))):
            raise ValueError("covariate values must be -1 or +1")
        return cov

    def run(self, x, covariate=None) -> Tuple[np.ndarray, ForwardCache, bool]:
        """Pure forward pass returning ``(output, cache, was_single_sample)``."""
        batch, single = self._prepare_input(x)
        cov = self._prepare_covariate(covariate, batch.shape[0])
        record = ForwardCache()
        current = batch
        for index, layer in enumerate(self.spec.layers):
            record.inputs.append(current)
            current, layer_cache = LAYER_IMPLS[layer.kind].forward(
                layer, current, self._layer_params(index), cov
            )
            record.caches.append(layer_cache)
        record.output = current
        record.ends_in_softmax = self.spec.has_softmax
        return current, record, single

    def forward(self, x, covariate=None, cache: bool = True) -> Tensor:
        """Run the network; with ``cache`` the activations are kept for backward."""
        output, record, single = self.run(x, covariate)
        self._cache = record if cache else None
        return Tensor(output[0] if single else output)

    def features(self, x, covariate=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(F, logits, output)`` where F is the input of the pooling layer."""
        pool = self.spec.pool_index()
        if pool is None:
            raise ShapeMismatchError("network has no global pooling layer")
        output, record, single = self.run(x, covariate)
        feats = record.inputs[pool]
        logits = record.logits
        if single:
            return feats[0], logits[0], output[0]
        return feats, logits, output

    def head_weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Weights ``W (C x T)`` and bias of the dense layer right after pooling."""
        pool = self.spec.pool_index()
        if pool is None or pool + 1 >= len(self.spec.layers) or self.spec.layers[pool + 1].kind != "dense":
            raise ShapeMismatchError("expected a dense layer directly after global pooling")
        params = self._layer_params(pool + 1)
        return params["weight"], params["bias"]

    def backward(self, grad, at: str = "logits", cache: Optional[ForwardCache] = None) -> Dict[str, np.ndarray]:
        """Back-propagate ``grad`` and return gradients for every parameter.

        ``at="logits"`` means ``grad`` is taken with respect to the input of
        the final softmax (how every loss in this package reports it);
        ``at="output"`` means with respect to the network output.
        """
        record = cache if cache is not None else self._cache
        if record is None or not record.caches:
            raise MissingCacheError()
        if at not in ("logits", "output"):
            raise ValueError("at must be 'logits' or 'output'")
        dout = as_array(grad, self.dtype)
        if dout.shape != record.output.shape:
            if dout.reshape((1,) + dout.shape).shape == record.output.shape:
                dout = dout[None, ...]
            else:
                raise ShapeMismatchError(
                    f"gradient shape {dout.shape} does not match output {record.output.shape}"
                )
        last = len(self.spec.layers) - 1
        if at == "logits" and self.spec.has_softmax:
            last -= 1
        grads: Dict[str, np.ndarray] = {name: np.zeros_like(value) for name, value in self.params.items()}
        for index in range(last, -1, -1):
            layer = self.spec.layers[index]
            dout, layer_grads = LAYER_IMPLS[layer.kind].backward(
                layer, dout, record.caches[index], self._layer_params(index)
            )
            for name, value in layer_grads.items():
                grads[f"{index}.{name}"] = value.astype(self.dtype, copy=False)
        return grads


__all__ = [
    "NetworkSpec",
    "Network",
    "ForwardCache",
    "classifier_spec",
    "regressor_spec",
    "POOL_KINDS",
]
