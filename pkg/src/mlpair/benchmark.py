"""Forward-latency measurement for the relation models."""

from __future__ import annotations

import os
import platform
import statistics
import time

import numpy as np

from .autograd import Tensor, no_grad
from .baselines import build_model
from .relation import ModelConfig


def host_info() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpus": os.cpu_count(),
    }


def measure_latency(model, x: np.ndarray, iters: int = 100, warmup: int = 10) -> dict:
    """Median / p10 / p90 eval-mode forward time in microseconds."""
    if iters < 1:
        raise ValueError("iters must be positive")
    model.eval()
    xt = Tensor(x)
    samples = []
    with no_grad():
        for _ in range(warmup):
            model(xt)
        for _ in range(iters):
            t0 = time.perf_counter_ns()
            model(xt)
            samples.append((time.perf_counter_ns() - t0) / 1e3)
    samples.sort()
    return {
        "median_us": statistics.median(samples),
        "p10_us": samples[int(0.1 * (len(samples) - 1))],
        "p90_us": samples[int(0.9 * (len(samples) - 1))],
        "iters": iters,
    }


def bench(methods, block_counts, frames: int = 9, actors: int = 12, dim: int = 256,
          iters: int = 100, warmup: int = 10, batch: int = 1, seed: int = 0) -> dict:
    """Latency per (method, blocks) at identical input dims; keys are ``(method, blocks)``."""
    x = np.random.default_rng(seed).normal(size=(batch, frames, actors, dim))
    out = {}
    for method in methods:
        for b in block_counts:
            cfg = ModelConfig(method=method, frames=frames, actors=actors, dim=dim, blocks=b, seed=seed)
            out[(method, b)] = measure_latency(build_model(cfg), x, iters, warmup)
    return out
