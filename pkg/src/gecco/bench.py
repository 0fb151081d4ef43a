"""Batch inference latency and throughput.

Latency is the wall time of one batched forward pass (vectorisation
included, data loading excluded); throughput is images per millisecond.
"""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .model import GeccoModel, ModelConfig, forward, vectorize

CSV_HEADER = ["batch", "runs", "latency_ms_mean", "latency_ms_std", "throughput_mean", "throughput_std"]


@dataclass
class BenchReport:
    batch_size: int
    runs: int
    latency_ms: list[float]
    throughput: list[float]  # images per ms

    @property
    def latency_mean(self) -> float:
        return statistics.fmean(self.latency_ms)

    @property
    def latency_std(self) -> float:
        return statistics.stdev(self.latency_ms)

    @property
    def throughput_mean(self) -> float:
        return statistics.fmean(self.throughput)

    @property
    def throughput_std(self) -> float:
        return statistics.stdev(self.throughput)

    def row(self) -> list:
        return [self.batch_size, self.runs, self.latency_mean, self.latency_std,
                self.throughput_mean, self.throughput_std]

    def to_text(self) -> str:
        return (f"batch {self.batch_size}  runs {self.runs}  "
                f"latency {self.latency_mean:.4f} +- {self.latency_std:.4f} ms  "
                f"throughput {self.throughput_mean:.3f} +- {self.throughput_std:.3f} imgs/ms")


def bench_inference(model: GeccoModel, images: np.ndarray, warmup_runs: int = 3, timed_runs: int = 20,
                    clock=time.perf_counter) -> BenchReport:
    """Time ``timed_runs`` forward passes over ``images`` (B x H x W) after warming up."""
    if warmup_runs < 1:
        raise ValueError("need at least one warmup run")
    if timed_runs < 2:
        raise ValueError("need at least two timed runs for a standard deviation")
    if model.mode != "eval":
        raise ValueError("benchmark an eval-mode model; dropout would change the work done")
    batch = len(images)
    for _ in range(warmup_runs):
        forward(model, vectorize(images))
    latencies, throughputs = [], []
    for _ in range(timed_runs):
        start = clock()
        forward(model, vectorize(images))
        ms = (clock() - start) * 1e3
        if ms <= 0:
            raise RuntimeError("clock did not advance during a timed run")
        latencies.append(ms)
        throughputs.append(batch / ms)
    return BenchReport(batch, timed_runs, latencies, throughputs)


def random_images(config: ModelConfig, batch_size: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((batch_size, config.image_h, config.image_w), dtype=np.float32)


def bench_sweep(model_factory, configs, warmup_runs: int = 3, timed_runs: int = 20, seed: int = 0) -> list[BenchReport]:
    """One report per config, in the order given; ``model_factory(config)`` builds each model."""
    reports = []
    for cfg in configs:
        model = model_factory(cfg).eval()
        reports.append(bench_inference(model, random_images(cfg, cfg.batch_size, seed), warmup_runs, timed_runs))
    return reports


def to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
