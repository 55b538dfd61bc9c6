"""Latency and memory measurement for the deployment engine."""

from __future__ import annotations

import gc
import json
import os
import resource
import time
import tracemalloc
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BenchError
from .store import InferenceEngine, load_for_inference


@dataclass
class BenchReport:
    n_inferences: int
    mean_latency_us: float
    p50_us: float
    p95_us: float
    max_us: float
    peak_alloc_bytes: Optional[int]
    load_peak_alloc_bytes: Optional[int]
    peak_rss_bytes: int
    model_file_bytes: int

    def __post_init__(self):
        if self.n_inferences < 1:
            raise BenchError("benchmark needs at least one timed inference")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        mem = "n/a" if self.peak_alloc_bytes is None else f"{self.peak_alloc_bytes / 1024:.0f} KB"
        rows = [
            ("Model Size", f"{self.model_file_bytes / 1024:.0f} KB"),
            ("Inference Time", f"{self.mean_latency_us / 1000:.3f} ms"
                               f"  (p50 {self.p50_us / 1000:.3f}, p95 {self.p95_us / 1000:.3f},"
                               f" max {self.max_us / 1000:.3f})"),
            ("RAM (tracked)", mem),
            ("RSS (process)", f"{self.peak_rss_bytes / 1024:.0f} KB"),
            ("Inferences", str(self.n_inferences)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def time_inference(engine: InferenceEngine, texts: Sequence[str], warmup: int = 50, repeat: int = 1,
                   clock: Callable[[], int] = time.perf_counter_ns) -> np.ndarray:
    """Per-utterance wall time in nanoseconds of ``engine.infer`` (tokenize through argmax)."""
    if not texts:
        raise BenchError("no utterances to benchmark")
    for i in range(warmup):
        engine.infer(texts[i % len(texts)])
    out = np.empty(len(texts) * repeat, dtype=np.int64)
    k = 0
    for _ in range(repeat):
        for text in texts:
            t0 = clock()
            engine.infer(text)
            t1 = clock()
            if t1 < t0:
                raise BenchError("clock went backwards")
            out[k] = t1 - t0
            k += 1
    return out


def measure_memory(model_path, texts: Sequence[str], warmup: int = 50) -> dict:
    """Allocation peaks of the inference path, tracked with tracemalloc.

    ``load_peak`` covers file parsing and dequantization. ``steady_peak`` is
    the peak while serving requests after warmup, i.e. resident engine plus
    per-call scratch. ``growth`` is the net change across the timed loop.
    """
    gc.collect()
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        engine = load_for_inference(model_path)
        gc.collect()
        load_peak = tracemalloc.get_traced_memory()[1] - base
        for i in range(warmup):
            engine.infer(texts[i % len(texts)])
        gc.collect()
        before = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        for text in texts:
            engine.infer(text)
        after, peak = tracemalloc.get_traced_memory()
        result = {"load_peak": load_peak, "steady_peak": peak - base,
                  "resident": before - base, "growth": after - before}
        del engine
        return result
    finally:
        if not was_tracing:
            tracemalloc.stop()


def peak_rss_bytes() -> int:
    # ru_maxrss is KiB on Linux
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


def run_benchmark(model_path, texts: Sequence[str], warmup: int = 50, repeat: int = 1,
                  track_memory: bool = True) -> BenchReport:
    engine = load_for_inference(model_path)
    lat_us = time_inference(engine, texts, warmup, repeat) / 1000.0
    mem = measure_memory(model_path, texts, warmup) if track_memory else None
    return BenchReport(
        n_inferences=len(lat_us),
        mean_latency_us=float(lat_us.mean()),
        p50_us=float(np.percentile(lat_us, 50)),
        p95_us=float(np.percentile(lat_us, 95)),
        max_us=float(lat_us.max()),
        peak_alloc_bytes=mem["steady_peak"] if mem else None,
        load_peak_alloc_bytes=mem["load_peak"] if mem else None,
        peak_rss_bytes=peak_rss_bytes(),
        model_file_bytes=os.path.getsize(model_path),
    )
