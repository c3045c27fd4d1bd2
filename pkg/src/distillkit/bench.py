"""Wall-clock microbenchmarks for the loss kernels and the evaluator.

Warmup iterations run first and are discarded; the reported statistics
(mean, sample std, p50, p95 by nearest rank) cover only the measured
runs.  Timings are the one non-deterministic output of the toolkit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

from .cwd import CwdConfig, cwd_loss
from .deteval import EvalConfig, evaluate
from .fixtures import synthetic_eval_scene
from .mgd import MgdConfig, mgd_loss
from .tensor import Rng, Tensor4, sample_mask

__all__ = ["BenchResult", "run_bench", "measure"]

DEFAULT_SIZE = (2, 16, 96, 96)


@dataclass
class BenchResult:
    op: str
    warmup: int
    runs: int
    mean_ms: float
    std_ms: float
    p50_ms: float
    p95_ms: float
    times_ms: list[float]

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "warmup": self.warmup,
            "runs": self.runs,
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "times_ms": self.times_ms,
        }


def _percentile(sorted_times: list[float], q: float) -> float:
    idx = max(0, min(len(sorted_times) - 1, int(round(q * (len(sorted_times) - 1)))))
    return sorted_times[idx]


def measure(fn: Callable[[], object], warmup: int, runs: int, op: str = "custom") -> BenchResult:
    if runs < 2:
        raise ValueError("need at least two measured runs")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter_ns()
        fn()
        times.append((time.perf_counter_ns() - t0) / 1e6)
    mean = sum(times) / runs
    var = sum((t - mean) ** 2 for t in times) / (runs - 1)
    ordered = sorted(times)
    return BenchResult(op, warmup, runs, mean, var**0.5, _percentile(ordered, 0.50), _percentile(ordered, 0.95), times)


def run_bench(
    op: str,
    warmup: int = 2,
    runs: int = 10,
    size: tuple[int, int, int, int] = DEFAULT_SIZE,
    boxes: int = 1000,
    seed: int = 0,
) -> BenchResult:
    """Benchmark one of the kernel ops at a given problem size."""
    rng = Rng(seed)
    if op == "cwd":
        n, c, h, w = size
        teacher = Tensor4(rng.split(0).uniform_signed(n * c * h * w).reshape(size))
        student = Tensor4(rng.split(1).uniform_signed(n * c * h * w).reshape(size))
        cfg = CwdConfig(temperature=2.0)
        return measure(lambda: cwd_loss(teacher, student, cfg), warmup, runs, "cwd")
    if op == "mgd":
        n, c, h, w = size
        teacher = Tensor4(rng.split(0).uniform_signed(n * c * h * w).reshape(size))
        student = Tensor4(rng.split(1).uniform_signed(n * c * h * w).reshape(size))
        cfg = MgdConfig.create(rng.split(2), c, c)
        mask = sample_mask(rng.split(3), (h, w), 0.5)
        return measure(lambda: mgd_loss(teacher, student, mask, cfg), warmup, runs, "mgd")
    if op == "eval":
        dets, gts = synthetic_eval_scene(rng.split(4), boxes)
        cfg = EvalConfig()
        return measure(lambda: evaluate(dets, gts, cfg), warmup, runs, "eval")
    raise ValueError("op must be one of cwd, mgd, eval")
