"""Acceptance gate: one PASS/FAIL line per criterion, with measured values.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed
straight to the terminal even when output capture is on.
"""
import os
import time

import numpy as np
import pytest

from edgenids.analysis import (
    count_crossings, crossover_is_clean, latency_crossover, matched_efficiency_ratio, slope_changes,
)
from edgenids.bench import load_splits
from edgenids.costmodel import calibrate_profile, default_profiles, estimate_latency, memory_partition
from edgenids.dataset import stratified_split, synth_flows
from edgenids.engine import agreement
from edgenids.gradcheck import KINDS, run_gradcheck
from edgenids.models import (
    FamilyTag, architecture, build, is_small, model_size_kib, param_count, sweep_specs,
)
from edgenids.quantizer import calibrate, percentile_range, quantize
from edgenids.trainer import TrainConfig, evaluate, forward_logits, prepare_batch, train

TONIOT_ENV = "EDGENIDS_TONIOT_CSV"


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail, seconds):
        with capsys.disabled():
            status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
            print(f"\n[acceptance {number:>2}] {status}  {title}: {detail} ({seconds:.2f} s)")
    return emit


def family_curves(family, profiles):
    tags = sweep_specs(family)
    sizes = np.array([model_size_kib(architecture(t)) for t in tags])
    order = np.argsort(sizes, kind="stable")
    ests = [[estimate_latency(tags[i], p) for i in order] for p in profiles]
    lat = [np.array([e.latency for e in row]) for row in ests]
    eff = [np.array([e.efficiency for e in row]) for row in ests]
    return sizes[order], lat, eff


def test_01_memory_partition(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    acc = default_profiles()[0]
    sizes = rng.uniform(0, 80_000, 1000)
    bad = 0
    for s in sizes:
        on, off = memory_partition(float(s), acc)
        bad += not (on == min(s, 8000.0) and off == s - on)
    dt = time.perf_counter() - t0
    ok = bad == 0 and acc.onchip_capacity_kib == 8000 and dt < 1.0
    report(1, "memory partition law", ok, f"{bad} mismatches over 1000 sizes", dt)
    assert ok


def test_02_bimodal_latency(report):
    t0 = time.perf_counter()
    acc, cpu = default_profiles()
    sizes, (la, lc), _ = family_curves("cnn_deep", (acc, cpu))
    changes = slope_changes(sizes, la)
    cpu_changes = slope_changes(sizes, lc)
    first_large = int(np.argmax(sizes > 8000))
    ok = len(changes) == 1
    detail = f"{len(changes)} slope change(s)"
    if ok:
        c = changes[0]
        near = c.first <= first_large + 1 and c.last >= first_large - 1
        ok = near and c.slope_after > c.slope_before
        detail = (f"one change at vertices {c.first}..{c.last} (first size > 8000 KiB is index "
                  f"{first_large}), kink near {c.location:.0f} KiB, slopes {c.slope_before:.3g} -> "
                  f"{c.slope_after:.3g} s/KiB")
    dt = time.perf_counter() - t0
    ok = ok and not cpu_changes and dt < 5.0
    report(2, "bi-modal accelerator latency", ok, f"{detail}; CPU changes {len(cpu_changes)}", dt)
    assert ok


@pytest.mark.parametrize("family,lo,hi", [("ff", 100, 200), ("cnn_small", 15, 40)])
def test_03_platform_crossover(report, family, lo, hi):
    t0 = time.perf_counter()
    acc, cpu = default_profiles()
    sizes, (la, lc), _ = family_curves(family, (acc, cpu))
    x = latency_crossover(sizes, la, lc)
    clean = crossover_is_clean(sizes, la, lc)
    dt = time.perf_counter() - t0
    ok = x is not None and lo <= x <= hi and clean and dt < 5.0
    nxt = sizes[sizes > x].min() if x is not None and (sizes > x).any() else None
    report(3, f"platform crossover ({family})", ok,
           f"CPU faster up to {x} KiB, accelerator faster from {nxt} KiB; target [{lo}, {hi}]; "
           f"prefix clean={clean}", dt)
    assert ok


def test_04_efficiency_ratio(report):
    t0 = time.perf_counter()
    profiles = default_profiles()
    curves = {f: family_curves(f, profiles) for f in ("ff", "cnn_small", "cnn_deep")}
    fs, _, (fa, fc) = curves["ff"]
    cs, _, (ca, cc) = curves["cnn_small"]
    matched, ratios = matched_efficiency_ratio(fs, fa, fc, cs, ca, cc)
    crossings = {f: count_crossings(eff[0] / eff[1]) for f, (_, _, eff) in curves.items()}
    dt = time.perf_counter() - t0
    in_band = len(ratios) > 0 and bool(np.all((ratios >= 6) & (ratios <= 12)))
    ok = in_band and all(n == 1 for n in crossings.values()) and dt < 5.0
    report(4, "CNN/FF efficiency ratio", ok,
           f"{len(ratios)} matched sizes {matched.min():.1f}..{matched.max():.1f} KiB, ratio "
           f"{ratios.min():.2f}..{ratios.max():.2f} (band [6, 12]); accelerator/CPU crossings of 1: "
           f"{crossings}", dt)
    assert ok


def test_05_desk_scale_f1(report):
    t0 = time.perf_counter()
    path = os.environ.get(TONIOT_ENV)
    if path:
        tr, va, te = load_splits(path, 100_000, seed=0)
        source = f"ToN-IoT subset from {path}"
    else:
        tr, va, te = stratified_split(synth_flows(100_000, 0.5, seed=0), seed=0)
        source = f"synthetic fixture ({TONIOT_ENV} unset, the published F1 was not checked)"
    scores = {}
    for tag in (FamilyTag("ff", 2), FamilyTag("cnn_small", 16, 3)):
        net = train(build(tag, 0), tr, va, TrainConfig(seed=0)).net
        scores[str(tag)] = evaluate(net, te).macro_f1
    dt = time.perf_counter() - t0
    ok = all(v >= 0.95 for v in scores.values()) and dt <= 30 * 60
    detail = ", ".join(f"{k} macro-F1 {v:.4f}" for k, v in scores.items())
    report(5, "desk-scale classification", ok, f"{detail} on {len(te)} test rows of {source}", dt)
    assert ok


def test_06_gradients(report):
    t0 = time.perf_counter()
    results = run_gradcheck(n_configs=50, seed=0)
    worst = {k: max(r.max_rel_error for r in results if r.kind == k) for k in KINDS}
    dt = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and len(results) == 200 and dt < 30
    report(6, "gradient check", ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()), dt)
    assert ok


FIDELITY_CFG = TrainConfig(epochs=2, batch_size=32, seed=0)


def _full_range(net, calib):
    # diagnostic only: min/max calibration instead of percentiles
    x = prepare_batch(net, np.asarray(calib.data[:1024], dtype=np.float64))
    _, caches = forward_logits(net, x, keep=True)
    ranges = {"input": percentile_range(x)}
    for i, spec in enumerate(net.layers):
        if spec.has_params:
            v = caches[i][1]
            ranges[f"layer{i}"] = (min(float(v.min()), 0.0), max(float(v.max()), 0.0))
    return ranges


def test_07_quantization_fidelity(report):
    t0 = time.perf_counter()
    tr, va, held = stratified_split(synth_flows(16_000, 0.5, seed=7), (0.3, 0.075, 0.625), seed=7)
    assert len(held) == 10_000
    tags = [t for f in ("ff", "cnn_small") for t in sweep_specs(f) if is_small(model_size_kib(architecture(t)))]
    results = {}
    for tag in tags:
        net = train(build(tag, 0), tr, va, FIDELITY_CFG).net
        q = quantize(net, calibrate(net, tr))
        results[str(tag)] = (agreement(net, q, held), net)
    dt = time.perf_counter() - t0
    failing = {k: a for k, (a, _) in results.items() if a < 0.98}
    worst = min(results, key=lambda k: results[k][0])
    detail = f"{len(tags)} specs, min agreement {results[worst][0]:.4f} ({worst})"
    if failing:
        diag = []
        for k in failing:
            net = results[k][1]
            diag.append(f"{k} {failing[k]:.4f} (min/max ranges: "
                        f"{agreement(net, quantize(net, _full_range(net, tr)), held):.4f})")
        detail += "; below 0.98: " + ", ".join(diag)
    ok = not failing and len(tags) == 29 and dt < 600
    report(7, "quantization fidelity", ok, detail, dt)
    assert ok


def _cnn_small_count(n, w):
    h = n // 2
    return (w * w * n + n) + (w * w * n * h + h) + (w * w * h * h + h) + (2 * 2 * h * 2 + 2)


def _closed_form(tag):
    if tag.family == "ff":
        return (39 * 100 + 100) + (tag.p1 - 1) * (100 * 100 + 100) + (100 * 2 + 2)
    if tag.family == "cnn_small":
        return _cnn_small_count(tag.p1, tag.p2)
    return _cnn_small_count(256, 5) + (tag.p1 - 3) * (5 * 5 * 256 * 256 + 256)


def test_08_parameter_counts(report):
    t0 = time.perf_counter()
    tags = [t for f in ("ff", "cnn_small", "cnn_deep") for t in sweep_specs(f)]
    mismatches = [str(t) for t in tags if param_count(architecture(t)) != _closed_form(t)]
    anchors = {FamilyTag("ff", 2): 14_302, FamilyTag("ff", 64): 640_502, FamilyTag("cnn_small", 8, 2): 274,
               FamilyTag("cnn_deep", 6): 6_152_706, FamilyTag("cnn_deep", 9): 11_068_674}
    anchor_bad = [str(t) for t, n in anchors.items() if param_count(architecture(t)) != n]
    dt = time.perf_counter() - t0
    ok = len(tags) == 40 and not mismatches and not anchor_bad and dt < 1.0
    report(8, "parameter-count oracles", ok,
           f"{len(tags)} specs, {len(mismatches)} formula mismatches, {len(anchor_bad)} anchor mismatches", dt)
    assert ok


def test_09_calibration_round_trip(report):
    t0 = time.perf_counter()
    tags = [t for f in ("ff", "cnn_small", "cnn_deep") for t in sweep_specs(f)]
    acc, cpu = default_profiles()
    cases = [
        (acc, ["peak_mac_rate", "util.dense", "fixed_overhead", "offchip_bandwidth"]),
        # nothing leaves the CPU's memory, so its bandwidth is not observable
        (cpu, ["peak_mac_rate", "util.dense", "fixed_overhead"]),
    ]
    worst = 0.0
    for truth, free in cases:
        obs = [(t, estimate_latency(t, truth).latency) for t in tags]
        start = truth.replace(peak_mac_rate=3 * truth.peak_mac_rate, **{"util.dense": 0.3},
                              fixed_overhead=5 * truth.fixed_overhead + 1e-5,
                              offchip_bandwidth=truth.offchip_bandwidth / 4)
        fitted = calibrate_profile(obs, start, free).profile
        worst = max([worst] + [abs(fitted.get(p) / truth.get(p) - 1) for p in free])
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and dt < 5.0
    report(9, "profile calibration round trip", ok, f"worst relative parameter error {worst:.2e}", dt)
    assert ok


def test_10_not_reproducible(report):
    report(10, "absolute device latency/energy and large-model F1 drop", "NOT CHECKED",
           "not checked: requires the physical devices and the original training budget; "
           "the sweep reports this harness's own curves", 0.0)
