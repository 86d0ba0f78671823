"""Analytical per-inference latency, energy and memory model.

Latency is roofline-style::

    compute = sum_l MACs_l / (peak_mac_rate * util[kind_l])
    stream  = offchip_bytes / offchip_bandwidth
    latency = fixed_overhead + max(compute, stream)
              + overlap_penalty * min(compute, stream)

Weights fill on-chip memory in layer order; whatever does not fit is
re-streamed on every inference. Energy is ``active_power * latency`` and
efficiency is inferences per millijoule.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FormatError, InvalidParam, NonConvergence, Underdetermined
from .kvfile import parse_kv, read_kv, write_kv
from .models import FamilyTag, LayerSpec, architecture, infer_shapes, param_count

SHIPPED_PROFILES = ("accel-default", "cpu-default")
UTIL_KINDS = ("conv2d", "dense")
FREE_PARAMS = ("peak_mac_rate", "util.conv", "util.dense", "fixed_overhead", "offchip_bandwidth")


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    peak_mac_rate: float
    utilization: dict
    onchip_capacity_kib: float
    offchip_bandwidth: float
    fixed_overhead: float
    active_power: float
    overlap_penalty: float = 0.0

    def __post_init__(self):
        for key in ("peak_mac_rate", "onchip_capacity_kib", "offchip_bandwidth", "active_power"):
            if not getattr(self, key) > 0:
                raise InvalidParam(f"profile {self.name}: {key} must be positive")
        if self.fixed_overhead < 0 or not 0 <= self.overlap_penalty <= 1:
            raise InvalidParam(f"profile {self.name}: bad overhead or overlap_penalty")
        for kind in UTIL_KINDS:
            u = self.utilization.get(kind)
            if u is None or not 0 < u <= 1:
                raise InvalidParam(f"profile {self.name}: utilization[{kind}] must lie in (0, 1]")

    def util(self, kind: str) -> float:
        return self.utilization[kind]

    def get(self, param: str) -> float:
        if param.startswith("util."):
            return self.utilization[_util_kind(param)]
        return getattr(self, param)

    def replace(self, **changes) -> "PlatformProfile":
        util = dict(self.utilization)
        for key in list(changes):
            if key.startswith("util."):
                util[_util_kind(key)] = changes.pop(key)
        return dataclasses.replace(self, utilization=util, **changes)


def _util_kind(param: str) -> str:
    short = param.split(".", 1)[1]
    return {"conv": "conv2d", "conv2d": "conv2d", "dense": "dense"}[short]


_PROFILE_KEYS = {
    "peak_mac_rate": "peak_mac_rate",
    "onchip_capacity_kib": "onchip_capacity_kib",
    "offchip_bandwidth": "offchip_bandwidth",
    "fixed_overhead_s": "fixed_overhead",
    "active_power_w": "active_power",
}


def parse_profile(kv: dict[str, str], source: str = "<profile>") -> PlatformProfile:
    try:
        fields = {attr: float(kv[key]) for key, attr in _PROFILE_KEYS.items()}
        util = {"conv2d": float(kv["util.conv"]), "dense": float(kv["util.dense"])}
        return PlatformProfile(
            name=kv["name"], utilization=util,
            overlap_penalty=float(kv.get("overlap_penalty", 0.0)), **fields,
        )
    except KeyError as exc:
        raise FormatError(f"{source}: missing key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def load_profile(name_or_path: str | Path) -> PlatformProfile:
    """Load a shipped profile by name or any profile file by path."""
    if str(name_or_path) in SHIPPED_PROFILES:
        res = resources.files("edgenids").joinpath("profiles", f"{name_or_path}.profile")
        return parse_profile(parse_kv(res.read_text(encoding="utf-8"), str(name_or_path)), str(name_or_path))
    return parse_profile(read_kv(name_or_path), str(name_or_path))


def save_profile(profile: PlatformProfile, path: str | Path) -> None:
    write_kv(path, [
        ("name", profile.name),
        ("peak_mac_rate", repr(profile.peak_mac_rate)),
        ("util.conv", repr(profile.utilization["conv2d"])),
        ("util.dense", repr(profile.utilization["dense"])),
        ("onchip_capacity_kib", repr(profile.onchip_capacity_kib)),
        ("offchip_bandwidth", repr(profile.offchip_bandwidth)),
        ("fixed_overhead_s", repr(profile.fixed_overhead)),
        ("active_power_w", repr(profile.active_power)),
        ("overlap_penalty", repr(profile.overlap_penalty)),
    ])


def default_profiles() -> list[PlatformProfile]:
    return [load_profile(n) for n in SHIPPED_PROFILES]


# -- operation counting ------------------------------------------------------

@dataclass(frozen=True)
class LayerCost:
    kind: str
    macs: int
    param_bytes: int
    onchip_bytes: int = 0
    offchip_bytes: int = 0
    compute_time: float = 0.0
    stream_time: float = 0.0


def _layers_and_input(model) -> tuple[list[LayerSpec], tuple[int, ...]]:
    if isinstance(model, FamilyTag):
        model = architecture(model)
    specs = [getattr(l, "spec", l) for l in model.layers]
    return specs, tuple(model.input_shape)


def layer_macs(spec: LayerSpec, out_shape: tuple[int, ...]) -> int:
    if spec.kind == "dense":
        return spec.in_width * spec.out_width
    if spec.kind == "conv2d":
        h, w, _ = out_shape
        return h * w * spec.kernel * spec.kernel * spec.in_channels * spec.out_channels
    return 0


def mac_count(model) -> tuple[list[int], int]:
    """Per-layer and total multiply-accumulates for one inference."""
    specs, in_shape = _layers_and_input(model)
    shapes = infer_shapes(specs, in_shape)
    per = [layer_macs(s, o) for s, o in zip(specs, shapes)]
    return per, sum(per)


def memory_partition(model_size_kib: float, profile: PlatformProfile) -> tuple[float, float]:
    if model_size_kib < 0:
        raise InvalidParam("model size must be nonnegative")
    onchip = min(model_size_kib, profile.onchip_capacity_kib)
    return onchip, model_size_kib - onchip


@dataclass(frozen=True)
class CostEstimate:
    profile: str
    latency: float  # seconds
    energy: float  # joules per inference
    efficiency: float  # inferences per mJ
    onchip_kib: float
    offchip_kib: float
    compute_time: float
    stream_time: float
    macs: int
    layers: tuple[LayerCost, ...] = field(default=(), compare=False)

    @property
    def latency_ms(self) -> float:
        return self.latency * 1e3


def estimate_latency(model, profile: PlatformProfile) -> CostEstimate:
    specs, in_shape = _layers_and_input(model)
    shapes = infer_shapes(specs, in_shape)
    capacity = profile.onchip_capacity_kib * 1024.0
    used = 0.0
    layers = []
    compute = stream = 0.0
    for spec, out in zip(specs, shapes):
        macs = layer_macs(spec, out)
        nbytes = spec.param_count()
        on = min(nbytes, max(capacity - used, 0.0))
        off = nbytes - on
        used += nbytes
        ct = macs / (profile.peak_mac_rate * profile.util(spec.kind)) if macs else 0.0
        st = off / profile.offchip_bandwidth
        compute += ct
        stream += st
        layers.append(LayerCost(spec.kind, macs, nbytes, int(on), int(off), ct, st))
    size_kib = param_count(specs) / 1024.0
    onchip, offchip = memory_partition(size_kib, profile)
    latency = profile.fixed_overhead + max(compute, stream) + profile.overlap_penalty * min(compute, stream)
    energy = profile.active_power * latency
    return CostEstimate(profile.name, latency, energy, 1e-3 / energy, onchip, offchip,
                        compute, stream, sum(l.macs for l in layers), tuple(layers))


def estimate_energy(model_or_estimate, profile: PlatformProfile) -> CostEstimate:
    """Energy fields at the profile's active power (latency recomputed if needed)."""
    est = model_or_estimate
    if not isinstance(est, CostEstimate):
        est = estimate_latency(est, profile)
    energy = profile.active_power * est.latency
    return dataclasses.replace(est, energy=energy, efficiency=1e-3 / energy)


estimate = estimate_latency


# -- profile fitting ---------------------------------------------------------

@dataclass
class CalibrationResult:
    profile: PlatformProfile
    residuals: np.ndarray  # relative latency errors, one per observation
    iterations: int = 0


def calibrate_profile(
    observations: Sequence[tuple[object, float]],
    initial: PlatformProfile,
    free_params: Sequence[str] = (),
    max_iterations: int = 2000,
) -> CalibrationResult:
    """Least-squares fit of ``free_params`` to measured latencies (seconds).

    Minimises relative latency error. Parameters are fitted in log space;
    utilizations are bounded by 1. ``peak_mac_rate`` and a utilization are
    only jointly identifiable through their product, so free at most one
    of them per layer kind.
    """
    free = list(dict.fromkeys(free_params))
    bad = [p for p in free if p not in FREE_PARAMS]
    if bad:
        raise InvalidParam(f"cannot fit {bad}; choose from {FREE_PARAMS}")
    if len(observations) < 2:
        raise Underdetermined("need at least 2 observations")
    if len(observations) < len(free):
        raise Underdetermined(f"{len(observations)} observations for {len(free)} free parameters")
    models = [m for m, _ in observations]
    measured = np.array([t for _, t in observations], dtype=np.float64)

    def predict(profile):
        return np.array([estimate_latency(m, profile).latency for m in models])

    if not free:
        return CalibrationResult(initial, (predict(initial) - measured) / measured, 0)

    if free == ["fixed_overhead"]:
        # affine in the overhead: weighted mean of residuals, weights 1/y^2
        base = predict(initial.replace(fixed_overhead=0.0))
        w = 1.0 / measured**2
        overhead = max(float(np.sum(w * (measured - base)) / np.sum(w)), 0.0)
        fitted = initial.replace(fixed_overhead=overhead)
        return CalibrationResult(fitted, (predict(fitted) - measured) / measured, 1)

    floor = 1e-12
    x0 = np.log([max(initial.get(p), floor) for p in free])
    upper = np.array([0.0 if p.startswith("util.") else np.inf for p in free])
    x0 = np.minimum(x0, upper - 1e-12)

    def make(x):
        return initial.replace(**dict(zip(free, np.exp(x))))

    def resid(x):
        return (predict(make(x)) - measured) / measured

    res = least_squares(resid, x0, bounds=(np.full(len(free), -np.inf), upper),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_iterations)
    if res.status <= 0:
        raise NonConvergence(f"least squares stopped: {res.message}")
    # a parameter no observation responds to (e.g. bandwidth when every model fits on chip)
    sens = np.linalg.norm(res.jac, axis=0)
    dead = [p for p, v in zip(free, sens) if v <= 1e-9 * max(sens.max(), 1e-300)]
    if dead:
        raise Underdetermined(f"observations do not constrain {dead}")
    fitted = make(res.x)
    return CalibrationResult(fitted, resid(res.x), int(res.nfev))
