"""The three scaled architecture families and their size bookkeeping.

* ``ff(M)``: 39 -> 100 (ReLU), ``M - 1`` further 100 -> 100 (ReLU) layers,
  then 100 -> 2 softmax.
* ``cnn_small(N, W)``: conv N, pool, conv N/2, pool, conv N/2, flatten,
  dense -> 2, on the 8x8x1 grid with same padding (8 -> 4 -> 2).
* ``cnn_deep(L)``: ``cnn_small(256, 5)`` with ``L - 3`` extra 256-channel
  5x5 convolutions inserted right after the first one, at 8x8 resolution.

Sizes are counted at one byte per parameter (int8), biases included,
scales and zero-points excluded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import GRID_SIDE, INPUT_WIDTH
from .errors import InvalidParam, ShapeMismatch

HIDDEN_WIDTH = 100
N_CLASSES = 2
DEEP_CHANNELS = 256
DEEP_KERNEL = 5
SMALL_MODEL_KIB = 800.0

FAMILIES = ("ff", "cnn_small", "cnn_deep")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv2d | maxpool2x2 | flatten
    in_width: int = 0
    out_width: int = 0
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    activation: str = ""

    @staticmethod
    def dense(in_width: int, out_width: int, activation: str = "relu") -> "LayerSpec":
        if in_width <= 0 or out_width <= 0:
            raise InvalidParam("dense widths must be positive")
        if activation not in ("relu", "softmax"):
            raise InvalidParam(f"unknown activation {activation!r}")
        return LayerSpec("dense", in_width=in_width, out_width=out_width, activation=activation)

    @staticmethod
    def conv2d(kernel: int, in_channels: int, out_channels: int) -> "LayerSpec":
        if kernel not in (2, 3, 4, 5):
            raise InvalidParam(f"kernel side must be in 2..5, got {kernel}")
        if in_channels <= 0 or out_channels <= 0:
            raise InvalidParam("channel counts must be positive")
        return LayerSpec("conv2d", kernel=kernel, in_channels=in_channels,
                         out_channels=out_channels, activation="relu")

    @staticmethod
    def maxpool() -> "LayerSpec":
        return LayerSpec("maxpool2x2")

    @staticmethod
    def flatten() -> "LayerSpec":
        return LayerSpec("flatten")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.in_width, self.out_width)
        if self.kind == "conv2d":
            return (self.kernel, self.kernel, self.in_channels, self.out_channels)
        return ()

    def bias_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.out_width,)
        if self.kind == "conv2d":
            return (self.out_channels,)
        return ()

    def param_count(self) -> int:
        if not self.has_params:
            return 0
        return int(np.prod(self.weight_shape())) + int(np.prod(self.bias_shape()))

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if self.kind == "dense":
            if in_shape != (self.in_width,):
                raise ShapeMismatch(f"dense expects ({self.in_width},), got {in_shape}")
            return (self.out_width,)
        if self.kind == "conv2d":
            if len(in_shape) != 3 or in_shape[2] != self.in_channels:
                raise ShapeMismatch(f"conv2d expects (H, W, {self.in_channels}), got {in_shape}")
            return (in_shape[0], in_shape[1], self.out_channels)
        if self.kind == "maxpool2x2":
            if len(in_shape) != 3 or in_shape[0] < 2 or in_shape[1] < 2:
                raise ShapeMismatch(f"maxpool needs a grid of side >= 2, got {in_shape}")
            return (in_shape[0] // 2, in_shape[1] // 2, in_shape[2])
        if self.kind == "flatten":
            return (int(np.prod(in_shape)),)
        raise InvalidParam(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class FamilyTag:
    family: str
    p1: int
    p2: int | None = None

    def __str__(self) -> str:
        if self.p2 is None:
            return f"{self.family}({self.p1})"
        return f"{self.family}({self.p1},{self.p2})"


def infer_shapes(layers: Sequence[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Shapes after each layer; raises ShapeMismatch if they do not compose."""
    shapes = []
    shape = tuple(input_shape)
    for spec in layers:
        shape = spec.output_shape(shape)
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class Network:
    """Layer specs plus one ``(weight, bias)`` pair per parametrised layer.

    ``params[i]`` is ``None`` for pool/flatten layers. Conv weights are laid
    out ``(kh, kw, c_in, c_out)``, dense weights ``(in, out)``; activations
    are NHWC.
    """

    layers: tuple[LayerSpec, ...]
    params: tuple = ()
    input_shape: tuple[int, ...] = (INPUT_WIDTH,)
    tag: FamilyTag | None = None
    shapes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "shapes", tuple(infer_shapes(self.layers, self.input_shape)))
        if self.params and len(self.params) != len(self.layers):
            raise ShapeMismatch("one params entry per layer required")
        for spec, p in zip(self.layers, self.params):
            if spec.has_params:
                w, b = p
                if w.shape != spec.weight_shape() or b.shape != spec.bias_shape():
                    raise ShapeMismatch(f"{spec.kind}: params {w.shape}/{b.shape} do not match spec")

    @property
    def is_cnn(self) -> bool:
        return len(self.input_shape) == 3

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1] if self.shapes else self.input_shape

    def with_params(self, params) -> "Network":
        return Network(self.layers, tuple(params), self.input_shape, self.tag)


# -- family layer lists ------------------------------------------------------

def ff_layers(M: int) -> list[LayerSpec]:
    if M < 1:
        raise InvalidParam(f"M must be >= 1, got {M}")
    layers = [LayerSpec.dense(INPUT_WIDTH, HIDDEN_WIDTH)]
    layers += [LayerSpec.dense(HIDDEN_WIDTH, HIDDEN_WIDTH) for _ in range(M - 1)]
    layers.append(LayerSpec.dense(HIDDEN_WIDTH, N_CLASSES, "softmax"))
    return layers


def _cnn_tail(N: int, W: int) -> list[LayerSpec]:
    half = N // 2
    side = GRID_SIDE // 4
    return [
        LayerSpec.maxpool(),
        LayerSpec.conv2d(W, N, half),
        LayerSpec.maxpool(),
        LayerSpec.conv2d(W, half, half),
        LayerSpec.flatten(),
        LayerSpec.dense(side * side * half, N_CLASSES, "softmax"),
    ]


def cnn_small_layers(N: int, W: int) -> list[LayerSpec]:
    if N < 2 or N % 2:
        raise InvalidParam(f"N must be even and >= 2, got {N}")
    if W not in (2, 3, 4, 5):
        raise InvalidParam(f"W must be in 2..5, got {W}")
    return [LayerSpec.conv2d(W, 1, N)] + _cnn_tail(N, W)


def cnn_deep_layers(L: int) -> list[LayerSpec]:
    if L < 3:
        raise InvalidParam(f"L must be >= 3, got {L}")
    N, W = DEEP_CHANNELS, DEEP_KERNEL
    inserted = [LayerSpec.conv2d(W, N, N) for _ in range(L - 3)]
    return [LayerSpec.conv2d(W, 1, N)] + inserted + _cnn_tail(N, W)


def family_layers(tag: FamilyTag) -> list[LayerSpec]:
    if tag.family == "ff":
        return ff_layers(tag.p1)
    if tag.family == "cnn_small":
        return cnn_small_layers(tag.p1, tag.p2)
    if tag.family == "cnn_deep":
        return cnn_deep_layers(tag.p1)
    raise InvalidParam(f"unknown family {tag.family!r}")


def input_shape_for(family: str) -> tuple[int, ...]:
    return (INPUT_WIDTH,) if family == "ff" else (GRID_SIDE, GRID_SIDE, 1)


def init_params(layers: Iterable[LayerSpec], seed: int = 0, dtype=np.float32) -> list:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for spec in layers:
        if not spec.has_params:
            params.append(None)
            continue
        wshape = spec.weight_shape()
        fan_in = int(np.prod(wshape[:-1]))
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=wshape).astype(dtype)
        params.append((w, np.zeros(spec.bias_shape(), dtype=dtype)))
    return params


def build(tag: FamilyTag, seed: int = 0, dtype=np.float32) -> Network:
    layers = family_layers(tag)
    return Network(tuple(layers), tuple(init_params(layers, seed, dtype)),
                   input_shape_for(tag.family), tag)


def build_ff(M: int, seed: int = 0, dtype=np.float32) -> Network:
    return build(FamilyTag("ff", M), seed, dtype)


def build_cnn_small(N: int, W: int, seed: int = 0, dtype=np.float32) -> Network:
    return build(FamilyTag("cnn_small", N, W), seed, dtype)


def build_cnn_deep(L: int, seed: int = 0, dtype=np.float32) -> Network:
    return build(FamilyTag("cnn_deep", L), seed, dtype)


def architecture(tag: FamilyTag) -> Network:
    """Parameter-free Network (shapes only), for cost estimation of big models."""
    return Network(tuple(family_layers(tag)), (), input_shape_for(tag.family), tag)


# -- size bookkeeping --------------------------------------------------------

def param_count(model) -> int:
    """Total weight + bias elements of a Network, QuantizedModel or layer list."""
    layers = getattr(model, "layers", model)
    return sum(spec.param_count() for spec in _specs(layers))


def _specs(layers) -> list[LayerSpec]:
    return [getattr(l, "spec", l) for l in layers]


def model_size_kib(model) -> float:
    """int8 parameter bytes / 1024. Accepts a model, a layer list or a count."""
    n = model if isinstance(model, (int, np.integer)) else param_count(model)
    return n / 1024.0


def is_small(size_kib: float) -> bool:
    return size_kib <= SMALL_MODEL_KIB


def sweep_specs(family: str) -> list[FamilyTag]:
    if family == "ff":
        return [FamilyTag("ff", M) for M in (2, 4, 8, 16, 32, 64)]
    if family == "cnn_small":
        return [FamilyTag("cnn_small", N, W) for N in (8, 16, 32, 64, 128, 256) for W in (2, 3, 4, 5)]
    if family == "cnn_deep":
        return [FamilyTag("cnn_deep", L) for L in range(3, 31, 3)]
    raise InvalidParam(f"unknown family {family!r}")


def parse_tag(text: str) -> FamilyTag:
    """Inverse of ``str(FamilyTag)``, e.g. ``cnn_small(16,3)``."""
    text = text.strip()
    try:
        name, rest = text.split("(", 1)
        args = [int(a) for a in rest.rstrip(")").split(",") if a.strip()]
    except ValueError:
        raise InvalidParam(f"cannot parse model tag {text!r}") from None
    if name not in FAMILIES or not 1 <= len(args) <= 2:
        raise InvalidParam(f"cannot parse model tag {text!r}")
    return FamilyTag(name, args[0], args[1] if len(args) == 2 else None)
