"""Acceptance criteria, one parametrized test each.

Every criterion prints a single ``[PASS]`` / ``[FAIL]`` line, shown even
under pytest's output capture. Running this file as a
script prints the same lines without pytest.
"""

import io
import itertools
import math
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from magtrack.association import AssociationConfig, g_association
from magtrack.domain import (
    Detection,
    DetectionBatch,
    Lane,
    LayoutConfig,
    SensorLayout,
    SensorNode,
    build_layout,
    preprocess,
    write_detections,
)
from magtrack.evaluate import track_accuracy
from magtrack.matching import max_weight_matching
from magtrack.motion import (
    A_MAX_DEFAULT,
    MotionModelConfig,
    covariance_trace,
    predict_arrival_ca,
    predict_arrival_cv,
)
from magtrack.sim import Scenario, simulate
from magtrack.stream import StreamTracker, replay, write_tracks

NOMINAL_LAYOUT = LayoutConfig(n_lanes=2, lane_length_m=1500.0, spacing_m=15.0)
NOMINAL = dict(
    layout=NOMINAL_LAYOUT,
    duration_s=600.0,
    arrival_rate_vps=100 / 600,  # 200 vehicles over both lanes
    speed_range=(8.0, 25.0),
    motion="CV",
    p_l=0.05,
    sigma_dt_s=0.05,
)


def report(num, name, ok, detail, echo=None):
    line = f"[{'PASS' if ok else 'FAIL'}] {num}. {name}: {detail}"
    if echo is not None:
        with echo():
            print(line)
    else:
        print(line)
    assert ok, line


_PERMS = {n: np.array(list(itertools.permutations(range(n)))) for n in range(2, 8)}


def _brute(scores):
    n = len(scores)
    return float(scores[np.arange(n), _PERMS[n]].sum(axis=1).max())


def criterion_1_matching_oracle(echo=None):
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    elapsed = 0.0  # solver time only; the oracle is not under test
    for n in range(2, 8):
        for _ in range(1000):
            s = rng.normal(size=(n, n)) if rng.random() < 0.5 else np.log(rng.random((n, n)))
            t0 = time.perf_counter()
            got = max_weight_matching(s)
            elapsed += time.perf_counter() - t0
            worst = max(worst, abs(got.total_weight - _brute(s)))
            checked += 1
    ok = worst <= 1e-9 and elapsed < 10.0
    report(1, "matching vs exhaustive search", ok,
           f"{checked} matrices n=2..7, max |diff|={worst:.2e} (tol 1e-9), {elapsed:.2f}s (limit 10s)", echo)


def _run_scenario(sc):
    batch, truth = simulate(sc)
    _, done = g_association(preprocess(batch), build_layout(sc.layout))
    return track_accuracy(done, truth)


def criterion_2_nominal_accuracy(echo=None):
    t0 = time.perf_counter()
    accs = [_run_scenario(Scenario(**NOMINAL, seed=seed)).track_accuracy for seed in range(10)]
    elapsed = time.perf_counter() - t0
    mean = float(np.mean(accs))
    ok = mean >= 0.95 and elapsed < 60.0
    report(2, "nominal track accuracy", ok,
           f"mean={mean:.4f} (>= 0.95), min={min(accs):.4f}, 10 seeds in {elapsed:.1f}s (limit 60s)", echo)


def criterion_3_perfect_conditions(echo=None):
    sigma_t = AssociationConfig().sigma_t_s
    # a time headway of 5*sigma_t is a distance headway of 5*sigma_t*v at every speed
    sc = dict(NOMINAL, p_l=0.0, sigma_dt_s=0.0, p_false=0.0, min_headway_s=5 * sigma_t)
    reps = [_run_scenario(Scenario(**sc, seed=seed)) for seed in range(10)]
    ok = all(r.track_accuracy == 1.0 and r.id_swaps == 0 for r in reps)
    report(3, "perfect-conditions exactness", ok,
           f"accuracies={sorted({r.track_accuracy for r in reps})}, swaps={sum(r.id_swaps for r in reps)} over 10 seeds",
           echo)


def criterion_4_riccati_ordering(echo=None):
    configs = {
        "CV": MotionModelConfig(kind="CV"),
        "CA(0.5a)": MotionModelConfig(kind="CA", q_a=(0.5 * A_MAX_DEFAULT) ** 2),
        "CA(a)": MotionModelConfig(kind="CA", q_a=A_MAX_DEFAULT**2),
    }
    finals = {}
    converged = True
    for name, cfg in configs.items():
        tr = covariance_trace(cfg, 100_000)
        converged &= abs(tr[-1] - tr[-2]) < 1e-9
        finals[name] = tr[-1]
    ordered = finals["CV"] < finals["CA(0.5a)"] < finals["CA(a)"]
    report(4, "Riccati convergence and CV < CA ordering", converged and ordered,
           ", ".join(f"{k}={v:.4f}" for k, v in finals.items()) + f", converged={converged}", echo)


def _random_scenario(rng, seed):
    return Scenario(
        layout=LayoutConfig(n_lanes=int(rng.integers(1, 3)), lane_length_m=float(rng.uniform(100, 400))),
        duration_s=float(rng.uniform(120, 300)),
        arrival_rate_vps=float(rng.uniform(0.05, 0.3)),
        motion=str(rng.choice(["CV", "CA"])),
        p_l=float(rng.uniform(0, 0.15)),
        sigma_dt_s=float(rng.uniform(0, 0.1)),
        p_false=float(rng.uniform(0, 0.02)),
        false_above_fraction=float(rng.uniform(0, 1)),
        seed=seed,
    )


def criterion_5_streamed_equals_batch(echo=None):
    import tempfile

    rng = np.random.default_rng(55)
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        ev = Path(tmp) / "events.jsonl"
        for k in range(20):
            sc = _random_scenario(rng, 1000 + k)
            layout = build_layout(sc.layout)
            batch, _ = simulate(sc)
            write_detections(batch.all(), ev)
            _, done = g_association(preprocess(batch), layout)
            oracle = io.StringIO()
            write_tracks(done, oracle)
            for w in (5, 30, 3600):
                out = io.StringIO()
                write_tracks(replay(ev, w, layout).all_tracks(), out)
                if out.getvalue() != oracle.getvalue():
                    mismatches.append((k, w))
    report(5, "streamed replay equals batch", not mismatches,
           f"20 scenarios x windows 5/30/3600 s, mismatches={mismatches}", echo)


def _formula_check(sc):
    """(passages, mismatches, max |CA-CV| at the limit) for one noiseless scenario."""
    layout = build_layout(sc.layout)
    batch, truth = simulate(sc)
    observed = {(d.sensor_id, truth.labels[d.key]): d.t_us for d in batch}
    n = bad = 0
    for v in truth.vehicles.values():
        chain = [layout.chainage(s.sensor_id) for s in v.samples]
        t = v.samples[0].t_us
        s = v.samples[0].speed_mps
        for k, smp in enumerate(v.samples):
            if k:
                d = chain[k] - chain[k - 1]
                if sc.motion == "CV":
                    t = predict_arrival_cv(t, s, d)
                else:
                    t = predict_arrival_ca(t, s, v.accel_mps2, d)
                    s = math.sqrt(s * s + 2 * v.accel_mps2 * d)
            n += 1
            bad += observed[(smp.sensor_id, v.vehicle_id)] != t
    return n, bad


def criterion_6_arrival_formula_exactness(echo=None):
    base = dict(NOMINAL, p_l=0.0, sigma_dt_s=0.0, p_false=0.0)
    cases = [
        Scenario(**base, seed=1),
        Scenario(**dict(base, motion="CA", accel_range=(-0.5, 0.5)), seed=2),
        Scenario(**dict(base, motion="CA", accel_range=(1e-6, 1e-6), duration_s=200), seed=3),
        Scenario(**dict(base, motion="CA", accel_range=(-1e-6, -1e-6), duration_s=200), seed=4),
    ]
    total = bad = 0
    for sc in cases:
        n, b = _formula_check(sc)
        total += n
        bad += b
    # the CA -> CV limit, checked directly on the formulas
    rng = np.random.default_rng(6)
    limit_gap = 0
    for _ in range(10_000):
        t, s, d = int(rng.integers(0, 10**15)), float(rng.uniform(5, 30)), float(rng.uniform(0, 15))
        for a in (1e-6, -1e-6):
            limit_gap = max(limit_gap, abs(predict_arrival_ca(t, s, a, d) - predict_arrival_cv(t, s, d)))
    ok = bad == 0 and total >= 10_000 and limit_gap <= 1
    report(6, "arrival formula exactness", ok,
           f"{total} passages (CV, CA, |a|=1e-6), mismatches={bad}, max CA-CV gap at |a|=1e-6: {limit_gap} us (tol 1)",
           echo)


def _dense_step(n, cfg):
    lay = SensorLayout([Lane(0, (SensorNode("up", 0, 0.0), SensorNode("dn", 0, 15.0)))])
    dets = []
    for i in range(n):
        dets.append(Detection("up", i * 10_000, (0.0, 0.0, 1.0), 300.0))
        dets.append(Detection("dn", 900_000 + i * 10_000 + 3 * i, (0.0, 0.0, 1.0), 300.0))
    batch = DetectionBatch.from_detections(dets)
    best = math.inf
    for _ in range(3):
        t0 = time.perf_counter()
        _, done = g_association(batch, lay, cfg)
        best = min(best, time.perf_counter() - t0)
    assert len(done) == n
    return best


def criterion_7_complexity_shape(echo=None):
    # huge time scale and no inflation: every track gates to every detection
    cfg = AssociationConfig(sigma_t_s=30.0, sigma_t_max_s=30.0, inflate_sigma=False)
    sizes = [25, 50, 100, 200]
    times = [_dense_step(n, cfg) for n in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    ok = slope <= 3.3 and times[-1] < 1.0
    report(7, "association cost growth", ok,
           f"times={[round(t, 4) for t in times]}s, log-log slope={slope:.2f} (<= 3.3), n=200 step {times[-1]:.3f}s (< 1s)",
           echo)


def criterion_8_fuzzed_ingest(echo=None):
    layout = build_layout(LayoutConfig(n_lanes=1, lane_length_m=150))
    tracker = StreamTracker(layout)
    rnd = random.Random(8)
    valid = b'{"sensor_id": "L0S0000", "t_us": 1000, "direction": [0.0, 0.0, 1.0], "strength_nT": 120.0}'
    counts = {}
    unexplained = 0
    for i in range(100_000):
        if i % 4 == 0:
            # mutate a valid record so parsing gets past the first byte
            raw = bytearray(valid)
            for _ in range(rnd.randint(1, 6)):
                raw[rnd.randrange(len(raw))] = rnd.randrange(256)
            line = bytes(raw)
        else:
            line = rnd.randbytes(rnd.randint(0, 120))
        res = tracker.ingest(line)
        key = "accepted" if res.accepted else res.reason
        if key not in {"accepted", "malformed", "duplicate", "too_late"}:
            unexplained += 1
        counts[key] = counts.get(key, 0) + 1
    report(8, "fuzzed JSONL ingestion", unexplained == 0 and sum(counts.values()) == 100_000,
           f"100000 lines, outcomes={dict(sorted(counts.items()))}", echo)


CRITERIA = [
    criterion_1_matching_oracle,
    criterion_2_nominal_accuracy,
    criterion_3_perfect_conditions,
    criterion_4_riccati_ordering,
    criterion_5_streamed_equals_batch,
    criterion_6_arrival_formula_exactness,
    criterion_7_complexity_shape,
    criterion_8_fuzzed_ingest,
]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_acceptance(criterion, capsys):
    criterion(capsys.disabled)


if __name__ == "__main__":
    failed = 0
    for fn in CRITERIA:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
