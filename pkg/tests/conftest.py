import os

# Pin BLAS to one thread before numpy loads: kernels must be reproducible bit for bit.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from edit_kernels.config import AttentionConfig
from edit_kernels.mechanisms import seeded_store
from edit_kernels.tokens import ImageTokenGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def uniform(rng, shape, lo=-3.0, hi=3.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


def make_grid(rng, h, w, d, lo=-3.0, hi=3.0):
    return ImageTokenGrid(uniform(rng, (h * w, d), lo, hi), h, w)


def edit_store(d, seed=0, mech="edit"):
    return seeded_store(AttentionConfig(mech, d=d, heads=1, height=1, width=1), seed)


# acceptance lines collected during the run, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
