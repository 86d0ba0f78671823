"""Curve analysis over sweep results: slope changes, crossovers, ratios."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SLOPE_TOL = 0.05


@dataclass(frozen=True)
class SlopeChange:
    first: int  # index of the first vertex where the slope departs
    last: int  # index of the last vertex of the transition
    location: float  # x where the outer segment lines intersect
    slope_before: float
    slope_after: float


def _rel_diff(a: float, b: float) -> float:
    return abs(b - a) / max(abs(a), abs(b), 1e-300)


def slope_changes(x, y, tol: float = SLOPE_TOL) -> list[SlopeChange]:
    """Vertices where consecutive finite-difference slopes differ by > ``tol``.

    A kink that falls strictly between two grid points leaves one segment
    whose slope is a blend of its neighbours; two adjacent flagged vertices
    around such a segment are reported as one change.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    s = np.diff(y) / np.diff(x)
    flagged = [i for i in range(1, len(s)) if _rel_diff(s[i - 1], s[i]) > tol]
    events = []
    i = 0
    while i < len(flagged):
        v = flagged[i]
        seg_before, seg_after = v - 1, v
        last = v
        if i + 1 < len(flagged) and flagged[i + 1] == v + 1:
            lo, hi = sorted((s[v - 1], s[v + 1]))
            if lo < s[v] < hi:
                seg_after, last = v + 1, v + 1
                i += 1
        sb, sa = s[seg_before], s[seg_after]
        # intersect the line through segment seg_before with that through seg_after
        xb, yb = x[seg_before], y[seg_before]
        xa, ya = x[seg_after], y[seg_after]
        loc = (ya - yb + sb * xb - sa * xa) / (sb - sa) if sb != sa else x[v]
        events.append(SlopeChange(v, last, float(loc), float(sb), float(sa)))
        i += 1
    return events


def latency_crossover(sizes, accel_latency, cpu_latency) -> float | None:
    """Largest size at which the CPU is strictly faster, or None.

    Only meaningful when :func:`crossover_is_clean` holds.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    cpu_faster = np.asarray(cpu_latency) < np.asarray(accel_latency)
    return float(sizes[cpu_faster].max()) if cpu_faster.any() else None


def crossover_is_clean(sizes, accel_latency, cpu_latency) -> bool:
    """CPU strictly faster on a prefix of the size-sorted sweep, slower after."""
    order = np.argsort(np.asarray(sizes, dtype=np.float64))
    cpu_faster = (np.asarray(cpu_latency) < np.asarray(accel_latency))[order]
    flips = np.count_nonzero(np.diff(cpu_faster.astype(np.int8)))
    return flips == 0 or (flips == 1 and bool(cpu_faster[0]))


def count_crossings(values, level: float = 1.0) -> int:
    """Number of times the sequence changes side of ``level``."""
    side = np.sign(np.asarray(values, dtype=np.float64) - level)
    side = side[side != 0]
    return int(np.count_nonzero(np.diff(side)))


def matched_efficiency_ratio(ff_sizes, ff_accel_eff, ff_cpu_eff,
                             cnn_sizes, cnn_accel_eff, cnn_cpu_eff,
                             extrapolate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """How much more the accelerator gains over the CPU on CNNs than on FFs.

    For every CNN point inside the FF size range the accelerator/CPU
    efficiency ratio of the CNN is divided by the FF ratio at the same size.
    FF energies (1/efficiency) are interpolated linearly in size. Returns the
    matched sizes and the ratios.

    With ``extrapolate`` every CNN point is kept and FF energies come from a
    least-squares line in size, which is exact while FF models fit on chip
    (their MAC count is affine in parameter count).
    """
    fs = np.asarray(ff_sizes, dtype=np.float64)
    order = np.argsort(fs)
    fs = fs[order]
    fa = 1.0 / np.asarray(ff_accel_eff, dtype=np.float64)[order]
    fc = 1.0 / np.asarray(ff_cpu_eff, dtype=np.float64)[order]
    cs = np.asarray(cnn_sizes, dtype=np.float64)
    mask = np.ones(len(cs), bool) if extrapolate else (cs >= fs[0]) & (cs <= fs[-1])
    cs = cs[mask]
    cnn_gain = np.asarray(cnn_accel_eff, dtype=np.float64)[mask] / np.asarray(cnn_cpu_eff, dtype=np.float64)[mask]
    if extrapolate:
        ff_gain = np.polyval(np.polyfit(fs, fc, 1), cs) / np.polyval(np.polyfit(fs, fa, 1), cs)
    else:
        ff_gain = np.interp(cs, fs, fc) / np.interp(cs, fs, fa)
    return cs, cnn_gain / ff_gain
