import itertools
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gecco.bench import CSV_HEADER, BenchReport, bench_inference, bench_sweep, random_images, to_csv
from gecco.model import GeccoModel, ModelConfig

CFG = ModelConfig(image_h=8, image_w=8, d_out=12, batch_size=8)


def fake_clock(durations_s):
    """Clock whose successive start/stop pairs are ``durations_s`` apart."""
    t = [0.0]
    it = iter(durations_s)
    phase = itertools.cycle([0, 1])

    def clock():
        if next(phase) == 1:
            t[0] += next(it)
        return t[0]
    return clock


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-5, 1.0), min_size=2, max_size=12), st.integers(1, 16))
def test_report_statistics_and_identity(durations, b):
    cfg = CFG.replace(batch_size=b)
    model = GeccoModel.init(cfg, 0).eval()
    rep = bench_inference(model, random_images(cfg, b), warmup_runs=1, timed_runs=len(durations),
                          clock=fake_clock(durations))
    lat = [d * 1e3 for d in durations]
    assert rep.latency_ms == pytest.approx(lat, rel=1e-9)
    assert min(rep.latency_ms) <= rep.latency_mean <= max(rep.latency_ms)
    assert rep.latency_mean == pytest.approx(statistics.fmean(lat), rel=1e-9)
    assert rep.latency_std == pytest.approx(statistics.stdev(lat), rel=1e-9, abs=1e-12)
    for t, l in zip(rep.throughput, rep.latency_ms):
        assert abs(t * l - b) <= 1e-9 * b


def test_argument_checks():
    model = GeccoModel.init(CFG, 0)
    imgs = random_images(CFG, 8)
    with pytest.raises(ValueError, match="eval"):
        bench_inference(model, imgs)
    model.eval()
    with pytest.raises(ValueError):
        bench_inference(model, imgs, timed_runs=1)
    with pytest.raises(ValueError):
        bench_inference(model, imgs, warmup_runs=0)
    with pytest.raises(RuntimeError):
        bench_inference(model, imgs, timed_runs=2, clock=lambda: 1.0)


def test_warmup_runs_are_not_timed():
    calls = []
    clock_values = iter(np.arange(100, dtype=float))

    def clock():
        calls.append(1)
        return next(clock_values)
    bench_inference(GeccoModel.init(CFG, 0).eval(), random_images(CFG, 8), warmup_runs=5, timed_runs=3, clock=clock)
    assert len(calls) == 6


def test_sweep_and_csv():
    cfgs = [CFG.replace(batch_size=b) for b in (1, 4)]
    reps = bench_sweep(lambda c: GeccoModel.init(c, 0), cfgs, warmup_runs=1, timed_runs=3)
    assert [r.batch_size for r in reps] == [1, 4]
    lines = to_csv(reps).strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 3
    assert "imgs/ms" in reps[0].to_text()


def test_report_row():
    rep = BenchReport(2, 2, [1.0, 3.0], [2.0, 2 / 3])
    assert rep.row()[:4] == [2, 2, 2.0, pytest.approx(2 ** 0.5)]
