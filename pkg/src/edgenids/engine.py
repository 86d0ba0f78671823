"""Integer inference for :class:`~edgenids.quantizer.QuantizedModel`.

Between input quantization and the final logit dequantization every tensor
is int8 and every accumulator int32. Dot products are evaluated with float64
BLAS on the zero-point-corrected integers: operands are bounded by 255 and
127 and reductions here have at most 6400 terms, so every partial sum is an
integer below 2**53 and the result is exact. Requantization multiplies the
accumulator by ``s_in * s_w / s_out`` and rounds half to even.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import INPUT_WIDTH, reshape_grids
from .errors import AccumulatorOverflow, ShapeMismatch, StructureMismatch
from .models import Network
from .quantizer import (
    INT32_MAX, QMAX, QMIN, QLayer, QuantParams, QuantizedModel, dequantize_array, quantize_array,
)
from .trainer import forward, im2col, softmax

INFER_CHUNK = 2048


@dataclass(frozen=True)
class QTensor:
    values: np.ndarray  # int8
    qp: QuantParams

    def dequantize(self) -> np.ndarray:
        return dequantize_array(self.values, self.qp)


def _requantize(acc: np.ndarray, layer: QLayer, relu: bool) -> np.ndarray:
    if np.abs(acc).max(initial=0) > INT32_MAX:
        raise AccumulatorOverflow(f"{layer.spec.kind}: accumulator exceeds int32")
    m = layer.in_qp.scale * layer.w_qp.scale / layer.out_qp.scale
    out = np.rint(acc * m) + layer.out_qp.zero_point
    lo = layer.out_qp.zero_point if relu else QMIN
    return np.clip(out, lo, QMAX).astype(np.int8)


def _check_input_params(x: QTensor, layer: QLayer):
    if x.qp != layer.in_qp:
        raise StructureMismatch("input quantization does not match the layer's calibrated input")


def dense_int8(x: QTensor, layer: QLayer) -> QTensor:
    spec = layer.spec
    if x.values.shape[-1] != spec.in_width:
        raise ShapeMismatch(f"dense expects width {spec.in_width}, got {x.values.shape[-1]}")
    _check_input_params(x, layer)
    xi = x.values.astype(np.float64) - x.qp.zero_point
    acc = (xi @ layer.weight.astype(np.float64)).astype(np.int64) + layer.bias
    return QTensor(_requantize(acc, layer, spec.activation == "relu"), layer.out_qp)


def conv2d_int8(x: QTensor, layer: QLayer) -> QTensor:
    spec = layer.spec
    if x.values.ndim != 4 or x.values.shape[-1] != spec.in_channels:
        raise ShapeMismatch(f"conv2d expects (n, H, W, {spec.in_channels}), got {x.values.shape}")
    _check_input_params(x, layer)
    # zero padding after zero-point removal == padding with the real value 0
    xi = x.values.astype(np.float64) - x.qp.zero_point
    cols = im2col(xi, spec.kernel)
    k2c = spec.kernel * spec.kernel * spec.in_channels
    acc = cols.reshape(-1, k2c) @ layer.weight.reshape(k2c, -1).astype(np.float64)
    acc = acc.astype(np.int64) + layer.bias
    acc = acc.reshape(x.values.shape[:3] + (spec.out_channels,))
    return QTensor(_requantize(acc, layer, True), layer.out_qp)


def maxpool2x2(x: QTensor) -> QTensor:
    v = x.values
    if v.ndim != 4 or v.shape[1] < 2 or v.shape[2] < 2:
        raise ShapeMismatch(f"maxpool needs (n, H>=2, W>=2, C), got {v.shape}")
    n, h, w, c = v.shape
    ho, wo = h // 2, w // 2
    tiles = v[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    return QTensor(tiles.max(axis=(2, 4)), x.qp)


def quantize_input(q: QuantizedModel, batch) -> QTensor:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if q.is_cnn and x.ndim == 2 and x.shape[1] == INPUT_WIDTH:
        x = reshape_grids(x)
    if x.shape[1:] != tuple(q.input_shape):
        raise ShapeMismatch(f"input shape {x.shape[1:]} does not match {q.input_shape}")
    return QTensor(quantize_array(x, q.input_qp), q.input_qp)


def run_layers(q: QuantizedModel, x: QTensor) -> QTensor:
    for layer in q.layers:
        kind = layer.spec.kind
        if kind == "dense":
            x = dense_int8(x, layer)
        elif kind == "conv2d":
            x = conv2d_int8(x, layer)
        elif kind == "maxpool2x2":
            x = maxpool2x2(x)
        elif kind == "flatten":
            x = QTensor(x.values.reshape(x.values.shape[0], -1), x.qp)
    return x


def infer_batch(q: QuantizedModel, batch) -> tuple[np.ndarray, np.ndarray]:
    """Labels and probability pairs for a row-major batch of flow rows."""
    rows = np.asarray(batch, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    labels, probs = [], []
    for start in range(0, len(rows), INFER_CHUNK):
        logits = run_layers(q, quantize_input(q, rows[start:start + INFER_CHUNK])).dequantize()
        p = softmax(logits)
        probs.append(p)
        labels.append(p.argmax(axis=1))  # first maximum: ties go to label 0
    if not probs:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    return np.concatenate(labels), np.concatenate(probs)


def infer(q: QuantizedModel, row) -> tuple[int, np.ndarray]:
    labels, probs = infer_batch(q, np.asarray(row, dtype=np.float64)[None, ...])
    return int(labels[0]), probs[0]


def agreement(net: Network, q, data) -> float:
    """Fraction of rows where the float and quantized argmax coincide.

    ``q`` may also be a Network, in which case both sides use the float path.
    """
    rows = data.data if hasattr(data, "data") else np.asarray(data)
    if len(rows) == 0:
        raise ValueError("agreement needs at least one row")
    other_specs = tuple(getattr(l, "spec", l) for l in q.layers)
    if other_specs != tuple(net.layers):
        raise StructureMismatch("models have different layer structure")
    ref = forward(net, rows).argmax(axis=1)
    if isinstance(q, Network):
        got = forward(q, rows).argmax(axis=1)
    else:
        got = infer_batch(q, rows)[0]
    return float(np.mean(ref == got))
