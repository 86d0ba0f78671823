"""Sweep orchestration, host timing and report emission.

``results.csv`` columns, in order::

    family, param1, param2, size_kib, macro_f1,
    <profile>_latency_ms, <profile>_eff_per_mj, <profile>_onchip_kib, <profile>_offchip_kib  (per profile)
    host_latency_ms, seed, timestamp, error

Floats are written with ``repr`` so a parse of the file reproduces the
table bit for bit. Empty cells mean "absent" (``param2`` of one-parameter
families, host latency when not measured, error on success).
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import svgplot
from .costmodel import PlatformProfile, estimate_latency
from .dataset import INPUT_WIDTH, FeatureMatrix, load_flow_csv, load_matrix, split_table, stratified_sample, stratified_split, synth_flows
from .engine import infer, infer_batch
from .errors import EmptyTable, FormatError, InvalidParam, MissingFile, UnwritableOutput
from .modelio import save_model
from .models import FamilyTag, architecture, build, is_small, model_size_kib, sweep_specs
from .quantizer import QuantizedModel, quantize_network
from .trainer import TrainConfig, report_from_predictions, train

logger = logging.getLogger(__name__)

BASE_COLUMNS = ("family", "param1", "param2", "size_kib", "macro_f1")
PLATFORM_FIELDS = ("latency_ms", "eff_per_mj", "onchip_kib", "offchip_kib")
TRAILING_COLUMNS = ("host_latency_ms", "seed", "timestamp", "error")
DEFAULT_ROWS = 100_000
FAMILY_ORDER = ("ff", "cnn_small", "cnn_deep")


@dataclass(frozen=True)
class PlatformCost:
    latency_ms: float
    eff_per_mj: float
    onchip_kib: float
    offchip_kib: float


@dataclass
class SweepRow:
    family: str
    param1: int
    param2: int | None
    size_kib: float
    macro_f1: float
    platforms: dict[str, PlatformCost] = field(default_factory=dict)
    host_latency_ms: float | None = None
    seed: int = 0
    timestamp: str = ""
    error: str = ""

    @property
    def tag(self) -> FamilyTag:
        return FamilyTag(self.family, self.param1, self.param2)

    @property
    def ok(self) -> bool:
        return not self.error


def _cost_row(model, profiles: Sequence[PlatformProfile]) -> dict[str, PlatformCost]:
    out = {}
    for p in profiles:
        est = estimate_latency(model, p)
        out[p.name] = PlatformCost(est.latency_ms, est.efficiency, est.onchip_kib, est.offchip_kib)
    return out


# -- data sources ------------------------------------------------------------

def load_splits(source: str | Path, n_rows: int = DEFAULT_ROWS, seed: int = 0,
                class_ratio: float = 0.5) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]:
    """Train/validation/test splits from ``"synth"``, a flow CSV or an encoded ``.npz``."""
    if str(source) == "synth":
        return stratified_split(synth_flows(n_rows, class_ratio, seed), seed=seed)
    path = Path(source)
    if not path.is_file():
        raise MissingFile(str(path))
    if path.suffix == ".npz":
        m = load_matrix(path)
        if len(m) > n_rows:
            m = stratified_split(m, (n_rows / len(m), 1 - n_rows / len(m)), seed)[0]
        return stratified_split(m, seed=seed)
    table = stratified_sample(load_flow_csv(path), n_rows, seed)
    return split_table(table, seed=seed)[1]


# -- one sweep point ---------------------------------------------------------

@dataclass(frozen=True)
class PointJob:
    tag: FamilyTag
    profiles: tuple[PlatformProfile, ...]
    cfg: TrainConfig
    splits: tuple | None  # None: cost-only, no training
    measure_reps: int = 0
    model_dir: str | None = None


def run_point(job: PointJob) -> SweepRow:
    """Build, train, quantize, score and cost one spec. Never raises."""
    tag, seed = job.tag, job.cfg.seed
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        size = model_size_kib(architecture(tag))
    except Exception:
        size = math.nan
    try:
        if job.splits is None:
            return SweepRow(tag.family, tag.p1, tag.p2, size, math.nan,
                            _cost_row(architecture(tag), job.profiles), None, seed, stamp)
        tr, va, te = job.splits
        result = train(build(tag, seed), tr, va, job.cfg)
        q = quantize_network(result.net, tr)
        f1 = report_from_predictions(te.labels, infer_batch(q, te.data)[0]).macro_f1
        host = None
        if job.measure_reps:
            host = measure_host_latency(q, job.measure_reps, te.data[0]).median_ms
        if job.model_dir:
            save_model(q, Path(job.model_dir) / f"{tag}.enid")
        return SweepRow(tag.family, tag.p1, tag.p2, q.size_kib, float(f1),
                        _cost_row(q, job.profiles), host, seed, stamp)
    except Exception as exc:  # recorded, the sweep goes on
        logger.warning("sweep point %s failed: %s", tag, exc)
        return SweepRow(tag.family, tag.p1, tag.p2, size, math.nan, {}, None, seed, stamp,
                        f"{type(exc).__name__}: {exc}".replace("\n", " "))


def run_sweep(
    family: str,
    data,
    profiles: Sequence[PlatformProfile],
    cfg: TrainConfig | None = None,
    out_dir: str | Path | None = None,
    *,
    train_models: bool = True,
    workers: int = 1,
    specs: Sequence[FamilyTag] | None = None,
    measure_reps: int = 0,
    save_models: bool = False,
    progress: Callable[[SweepRow], None] | None = None,
) -> list[SweepRow]:
    """One row per spec, in sweep order.

    ``data`` is a ``(train, val, test)`` tuple or a source accepted by
    :func:`load_splits`. With ``out_dir`` the sweep is resumable: rows already
    in ``results.csv`` without an error are kept and not recomputed, and the
    file is rewritten after every completed point.
    """
    cfg = cfg or TrainConfig()
    specs = list(specs) if specs is not None else sweep_specs(family)
    profiles = tuple(profiles)
    if not profiles:
        raise InvalidParam("at least one platform profile is required")
    done: dict[tuple, SweepRow] = {}
    csv_path = None
    if out_dir is not None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UnwritableOutput(f"{out}: {exc}") from None
        csv_path = out / "results.csv"
        if csv_path.exists():
            for row in read_results_csv(csv_path):
                if row.ok and row.seed == cfg.seed:
                    done[(row.family, row.param1, row.param2)] = row
    todo = [t for t in specs if (t.family, t.p1, t.p2) not in done]
    splits = None
    if train_models and todo:
        splits = tuple(data) if isinstance(data, (tuple, list)) else load_splits(data, seed=cfg.seed)
    model_dir = None
    if save_models and out_dir is not None:
        model_dir = str(Path(out_dir) / "models")
        os.makedirs(model_dir, exist_ok=True)
    jobs = [PointJob(t, profiles, cfg, splits, measure_reps, model_dir) for t in todo]

    def record(row: SweepRow):
        done[(row.family, row.param1, row.param2)] = row
        if progress:
            progress(row)
        if csv_path is not None:
            ordered = [done[k] for k in ((t.family, t.p1, t.p2) for t in specs) if k in done]
            write_results_csv(ordered, csv_path, [p.name for p in profiles])

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(run_point, jobs):
                record(row)
    else:
        for job in jobs:
            record(run_point(job))
    return [done[(t.family, t.p1, t.p2)] for t in specs]


# -- host timing -------------------------------------------------------------

@dataclass(frozen=True)
class HostLatency:
    median_ms: float
    iqr_ms: float
    samples: int


def summarize_timings(seconds: Sequence[float], warmup_fraction: float = 0.1) -> HostLatency:
    """Median and interquartile range after discarding the first runs."""
    t = np.asarray(seconds, dtype=np.float64)
    if t.size == 0:
        raise InvalidParam("no timings")
    warm = t[int(len(t) * warmup_fraction):]
    q1, med, q3 = np.percentile(warm, [25, 50, 75])
    return HostLatency(float(med) * 1e3, float(q3 - q1) * 1e3, int(warm.size))


def measure_host_latency(q: QuantizedModel, repetitions: int = 100, row=None,
                         clock: Callable[[], float] = time.perf_counter) -> HostLatency:
    """Wall-clock time of single-row integer inference on this machine."""
    if repetitions < 10:
        raise InvalidParam("repetitions must be >= 10")
    if row is None:
        row = np.full(INPUT_WIDTH, 0.5)
    times = []
    for _ in range(repetitions):
        t0 = clock()
        infer(q, row)
        times.append(clock() - t0)
    return summarize_timings(times)


# -- CSV ---------------------------------------------------------------------

def results_header(profile_names: Sequence[str]) -> list[str]:
    cols = list(BASE_COLUMNS)
    for name in profile_names:
        cols += [f"{name}_{f}" for f in PLATFORM_FIELDS]
    return cols + list(TRAILING_COLUMNS)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _profile_names(rows: Sequence[SweepRow]) -> list[str]:
    names: list[str] = []
    for r in rows:
        for n in r.platforms:
            if n not in names:
                names.append(n)
    return names


def write_results_csv(rows: Sequence[SweepRow], path: str | Path,
                      profile_names: Sequence[str] | None = None) -> None:
    names = list(profile_names) if profile_names is not None else _profile_names(rows)
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(results_header(names))
            for r in rows:
                cells = [r.family, r.param1, r.param2, float(r.size_kib), float(r.macro_f1)]
                for n in names:
                    c = r.platforms.get(n)
                    cells += [None] * 4 if c is None else [float(c.latency_ms), float(c.eff_per_mj),
                                                          float(c.onchip_kib), float(c.offchip_kib)]
                host = None if r.host_latency_ms is None else float(r.host_latency_ms)
                cells += [host, r.seed, r.timestamp, r.error]
                w.writerow([_fmt(c) for c in cells])
        os.replace(tmp, path)
    except OSError as exc:
        raise UnwritableOutput(f"{path}: {exc}") from None


def read_results_csv(path: str | Path) -> list[SweepRow]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:5]) != BASE_COLUMNS or tuple(header[-4:]) != TRAILING_COLUMNS:
            raise FormatError(f"{path}: not a results table")
        middle = header[5:-4]
        if len(middle) % 4:
            raise FormatError(f"{path}: platform columns come in groups of four")
        names = [middle[i][: -len("_latency_ms")] for i in range(0, len(middle), 4)]
        if results_header(names) != header:
            raise FormatError(f"{path}: unexpected column order")
        rows = []
        for line in reader:
            if len(line) != len(header):
                raise FormatError(f"{path}: row has {len(line)} cells, expected {len(header)}")
            fam, p1, p2, size, f1 = line[:5]
            plats = {}
            for k, n in enumerate(names):
                cells = line[5 + 4 * k: 9 + 4 * k]
                if all(cells):
                    plats[n] = PlatformCost(*(float(c) for c in cells))
            host, seed, stamp, err = line[-4:]
            rows.append(SweepRow(fam, int(p1), int(p2) if p2 else None, float(size), float(f1), plats,
                                 float(host) if host else None, int(seed), stamp, err))
    return rows


# -- plots -------------------------------------------------------------------

def _by_family(rows):
    fams = sorted({r.family for r in rows}, key=lambda f: (FAMILY_ORDER + (f,)).index(f))
    for fam in fams:
        sel = sorted((r for r in rows if r.family == fam), key=lambda r: r.size_kib)
        yield fam, sel


def emit_report(table: Sequence[SweepRow], out_dir: str | Path,
                accelerator: str | None = None, cpu: str | None = None) -> list[Path]:
    """Write results.csv and the SVG figure set; returns the written paths.

    The ratio plot compares ``accelerator`` against ``cpu`` (default: the
    first two profiles in the table). ``memory_vs_size`` is only drawn when
    the table holds at least one large model (> 800 KiB), since below that
    every model sits entirely on chip.
    """
    rows = list(table)
    if not rows:
        raise EmptyTable("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritableOutput(f"{out}: {exc}") from None
    names = _profile_names(rows)
    written = [out / "results.csv"]
    write_results_csv(rows, written[0], names)
    good = [r for r in rows if r.ok]

    charts: dict[str, svgplot.Chart] = {}
    c = svgplot.Chart("Macro-F1 vs model size", "model size (KiB)", "macro-F1", logx=True)
    for fam, sel in _by_family(good):
        c.add(fam, [r.size_kib for r in sel], [r.macro_f1 for r in sel])
    charts["f1_vs_size"] = c

    c = svgplot.Chart("Latency vs model size", "model size (KiB)", "latency (ms)", logx=True, logy=True)
    e = svgplot.Chart("Energy efficiency vs model size", "model size (KiB)", "inferences per mJ",
                      logx=True, logy=True)
    for fam, sel in _by_family(good):
        for n in names:
            pts = [r for r in sel if n in r.platforms]
            c.add(f"{fam} / {n}", [r.size_kib for r in pts], [r.platforms[n].latency_ms for r in pts])
            e.add(f"{fam} / {n}", [r.size_kib for r in pts], [r.platforms[n].eff_per_mj for r in pts])
        host = [r for r in sel if r.host_latency_ms is not None]
        if host:
            c.add(f"{fam} / host measured", [r.size_kib for r in host], [r.host_latency_ms for r in host],
                  dashed=True)
    charts["latency_vs_size"] = c
    charts["efficiency_vs_size"] = e

    if any(not is_small(r.size_kib) for r in good):
        m = svgplot.Chart("On-chip / off-chip memory vs model size", "model size (KiB)", "memory (KiB)",
                          y2label="latency (ms)")
        for fam, sel in _by_family(good):
            for n in names:
                pts = [r for r in sel if n in r.platforms]
                x = [r.size_kib for r in pts]
                m.add(f"{fam} / {n} on-chip", x, [r.platforms[n].onchip_kib for r in pts])
                m.add(f"{fam} / {n} off-chip", x, [r.platforms[n].offchip_kib for r in pts])
                m.add(f"{fam} / {n} latency", x, [r.platforms[n].latency_ms for r in pts], secondary=True)
        charts["memory_vs_size"] = m

    if len(names) >= 2 or (accelerator and cpu):
        acc = accelerator or names[0]
        ref = cpu or names[1]
        r_ = svgplot.Chart(f"Efficiency ratio {acc} / {ref}", "model size (KiB)", "efficiency ratio",
                           logx=True, logy=True, hline=1.0)
        for fam, sel in _by_family(good):
            pts = [r for r in sel if acc in r.platforms and ref in r.platforms]
            r_.add(fam, [r.size_kib for r in pts],
                   [r.platforms[acc].eff_per_mj / r.platforms[ref].eff_per_mj for r in pts])
        charts["efficiency_ratio_vs_size"] = r_

    for name, chart in charts.items():
        path = out / f"{name}.svg"
        try:
            svgplot.write(chart, path)
        except OSError as exc:
            raise UnwritableOutput(f"{path}: {exc}") from None
        written.append(path)
    return written
