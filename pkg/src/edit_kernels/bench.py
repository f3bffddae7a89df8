"""Latency sweeps: median wall time per (mechanism, grid), CSV output, log-log slopes."""

from __future__ import annotations

from contextlib import contextmanager
import csv
from dataclasses import asdict, dataclass
import io
import statistics
import time

import numpy as np

from .config import AttentionConfig
from .flops import flop_model
from .mechanisms import build_runner, make_inputs, seeded_store

CSV_HEADER = ("mechanism", "H", "W", "n_image", "n_prompt", "d", "heads", "wall_ms", "flops", "seed")
SLOPE_PREFIX = "# slope"


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    H: int
    W: int
    n_image: int
    n_prompt: int
    d: int
    heads: int
    wall_ms: float
    flops: int
    seed: int
    iters: int = 5
    warmup: int = 2

    def __post_init__(self):
        if not self.wall_ms > 0:
            raise ValueError(f"non-positive wall time {self.wall_ms}")
        if self.n_image != self.H * self.W:
            raise ValueError("n_image must equal H*W")

    def row(self) -> list:
        return [self.mechanism, self.H, self.W, self.n_image, self.n_prompt, self.d, self.heads,
                f"{self.wall_ms:.6f}", self.flops, self.seed]


@contextmanager
def single_threaded():
    """Pin BLAS/OpenMP pools to one thread for the duration of a timing run."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def time_call(fn, iters: int = 5, warmup: int = 2) -> float:
    """Median wall time in milliseconds over ``iters`` calls after ``warmup`` discarded calls."""
    if iters < 1 or warmup < 0:
        raise ValueError("iters must be >= 1 and warmup >= 0")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - t0) / 1e6)
    # perf_counter_ns can tick coarser than a tiny kernel
    return max(statistics.median(samples), 1e-6)


def bench_one(cfg: AttentionConfig, seed: int = 0, iters: int = 5, warmup: int = 2,
              store=None) -> BenchRecord:
    store = seeded_store(cfg, seed) if store is None else store
    run = build_runner(cfg, store)
    grid, prompt = make_inputs(cfg, seed)
    ms = time_call(lambda: run(grid, prompt), iters, warmup)
    return BenchRecord(cfg.label, cfg.height, cfg.width, cfg.n_image,
                       cfg.n_prompt if cfg.multimodal else 0, cfg.d, cfg.heads, ms,
                       flop_model(cfg).total, seed, iters, warmup)


def run_sweep(configs, grids, seed: int = 0, iters: int = 5, warmup: int = 2,
              threads_one: bool = True, progress=None) -> list[BenchRecord]:
    """Benchmark every config at every ``(H, W)`` sequentially."""
    records = []
    ctx = single_threaded() if threads_one else _null()
    with ctx:
        for cfg in configs:
            for h, w in grids:
                rec = bench_one(cfg.with_grid(h, w), seed, iters, warmup)
                records.append(rec)
                if progress:
                    progress(rec)
    return records


@contextmanager
def _null():
    yield


def loglog_slope(ns, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(n)``."""
    x = np.log(np.asarray(ns, np.float64))
    y = np.log(np.asarray(times, np.float64))
    if x.size < 2 or np.ptp(x) == 0:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def slopes(records) -> dict[str, float]:
    by_mech: dict[str, list[BenchRecord]] = {}
    for r in records:
        by_mech.setdefault(r.mechanism, []).append(r)
    return {m: loglog_slope([r.n_image for r in rs], [r.wall_ms for r in rs])
            for m, rs in by_mech.items()}


def write_csv(records, fh, include_slopes: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    if include_slopes:
        for mech, s in slopes(records).items():
            fh.write(f"{SLOPE_PREFIX},{mech},{s:.4f}\n")


def read_csv(fh) -> tuple[list[dict], dict[str, float]]:
    """Parse a bench CSV; returns ``(rows, slopes)`` with trailing slope lines split off."""
    text = fh.read() if hasattr(fh, "read") else fh
    body, slope_map = [], {}
    for line in text.splitlines():
        if line.startswith(SLOPE_PREFIX):
            _, mech, val = line.split(",")
            slope_map[mech] = float(val)
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return rows, slope_map


def records_as_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]
