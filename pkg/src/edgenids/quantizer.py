"""Post-training int8 quantization with per-tensor affine parameters.

Weights are symmetric (zero point 0, values in [-127, 127]); activations are
asymmetric over [-128, 127] with ranges from a percentile calibration pass.
Biases become int32 at scale ``input_scale * weight_scale``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import FeatureMatrix
from .errors import AccumulatorOverflow, EmptyCalibration, RangeMissing
from .models import FamilyTag, LayerSpec, Network, param_count
from .trainer import forward_logits, prepare_batch

QMIN, QMAX = -128, 127
INT32_MAX = 2**31 - 1
MIN_RANGE_WIDTH = 1e-6
MIN_WEIGHT_SCALE = 1e-8
CALIB_PERCENTILES = (0.1, 99.9)
DEFAULT_CALIB_ROWS = 1024


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError("zero_point out of int8 range")


def quantize_array(r, qp: QuantParams) -> np.ndarray:
    q = np.rint(np.asarray(r, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_array(q, qp: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


def activation_params(lo: float, hi: float) -> QuantParams:
    """Asymmetric params for a calibrated range (widened to include 0)."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi - lo < MIN_RANGE_WIDTH:
        hi = lo + MIN_RANGE_WIDTH
    scale = (hi - lo) / (QMAX - QMIN)
    zp = int(np.clip(np.rint(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def weight_params(w: np.ndarray) -> QuantParams:
    peak = float(np.abs(w).max()) if w.size else 0.0
    return QuantParams(max(peak / 127.0, MIN_WEIGHT_SCALE), 0)


def percentile_range(values) -> tuple[float, float]:
    """``[p0.1, p99.9]`` widened to contain 0, at least 1e-6 wide."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = np.percentile(v, CALIB_PERCENTILES)
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi - lo < MIN_RANGE_WIDTH:
        hi = lo + MIN_RANGE_WIDTH
    return lo, hi


def activation_names(net: Network) -> list[str]:
    return ["input"] + [f"layer{i}" for i, s in enumerate(net.layers) if s.has_params]


def calibrate(net: Network, calib, n_rows: int = DEFAULT_CALIB_ROWS) -> dict[str, tuple[float, float]]:
    """Percentile ranges of the input and every dense/conv output tensor.

    Outputs are taken after the ReLU (so their lower bound is 0) and, for the
    final layer, at the logits.
    """
    data = calib.data if isinstance(calib, FeatureMatrix) else np.asarray(calib)
    if len(data) == 0:
        raise EmptyCalibration("calibration set is empty")
    x = prepare_batch(net, np.asarray(data[:n_rows], dtype=np.float64))
    _, caches = forward_logits(_as_float64(net), x, keep=True)
    ranges = {"input": percentile_range(x)}
    for i, spec in enumerate(net.layers):
        if spec.has_params:
            ranges[f"layer{i}"] = percentile_range(caches[i][1])
    return ranges


def _as_float64(net: Network) -> Network:
    return net.with_params([None if p is None else (p[0].astype(np.float64), p[1].astype(np.float64))
                            for p in net.params])


@dataclass(frozen=True)
class QLayer:
    spec: LayerSpec
    in_qp: QuantParams
    out_qp: QuantParams
    weight: np.ndarray | None = None  # int8
    bias: np.ndarray | None = None  # int32
    w_qp: QuantParams | None = None


@dataclass(frozen=True)
class QuantizedModel:
    layers: tuple[QLayer, ...]
    input_qp: QuantParams
    input_shape: tuple[int, ...]
    tag: FamilyTag | None = None
    ranges: dict = field(default_factory=dict, compare=False)

    @property
    def is_cnn(self) -> bool:
        return len(self.input_shape) == 3

    @property
    def size_kib(self) -> float:
        return param_count(self) / 1024.0

    @property
    def specs(self) -> tuple[LayerSpec, ...]:
        return tuple(l.spec for l in self.layers)


def quantize(net: Network, ranges: dict[str, tuple[float, float]]) -> QuantizedModel:
    missing = [n for n in activation_names(net) if n not in ranges]
    if missing:
        raise RangeMissing(f"no calibrated range for {missing}")
    cur = activation_params(*ranges["input"])
    input_qp = cur
    qlayers = []
    for i, (spec, p) in enumerate(zip(net.layers, net.params)):
        if not spec.has_params:
            qlayers.append(QLayer(spec, cur, cur))
            continue
        w, b = (np.asarray(a, dtype=np.float64) for a in p)
        wqp = weight_params(w)
        out = activation_params(*ranges[f"layer{i}"])
        wq = np.clip(np.rint(w / wqp.scale), -127, 127).astype(np.int8)
        bq = np.rint(b / (cur.scale * wqp.scale))
        if np.abs(bq).max(initial=0) > INT32_MAX:
            raise AccumulatorOverflow(f"layer {i}: bias does not fit the int32 accumulator")
        wq.setflags(write=False)
        bq = bq.astype(np.int32)
        bq.setflags(write=False)
        qlayers.append(QLayer(spec, cur, out, wq, bq, wqp))
        cur = out
    return QuantizedModel(tuple(qlayers), input_qp, tuple(net.input_shape), net.tag, dict(ranges))


def quantize_network(net: Network, calib, n_rows: int = DEFAULT_CALIB_ROWS) -> QuantizedModel:
    return quantize(net, calibrate(net, calib, n_rows))


def write_calibration_report(q: QuantizedModel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tensor", "range_lo", "range_hi", "scale", "zero_point"])
        lo, hi = q.ranges.get("input", (np.nan, np.nan))
        w.writerow(["input", repr(lo), repr(hi), repr(q.input_qp.scale), q.input_qp.zero_point])
        for i, layer in enumerate(q.layers):
            if layer.weight is None:
                continue
            lo, hi = q.ranges.get(f"layer{i}", (np.nan, np.nan))
            w.writerow([f"layer{i}", repr(lo), repr(hi), repr(layer.out_qp.scale), layer.out_qp.zero_point])
            w.writerow([f"layer{i}.weight", "", "", repr(layer.w_qp.scale), 0])
