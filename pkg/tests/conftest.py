import time

import numpy as np
import pytest
import torch

from bvinet.config import RunConfig
from bvinet.data_synthesis import synth_clip
from bvinet.pipeline import train
from bvinet.toydata import panning_clip

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def natural_sources():
    """Two panning GT clips over skimage photographs plus a 3-image content pool."""
    from skimage import data

    gts = [
        panning_clip(data.astronaut(), 8, 48, 48, (2, 1), origin=(100, 150)),
        panning_clip(data.immunohistochemistry(), 8, 48, 48, (-1, 2), origin=(200, 200)),
    ]
    pool = [("chelsea", data.chelsea() / 255.0), ("rocket", data.rocket() / 255.0), ("coffee", data.coffee() / 255.0)]
    return gts, pool


def toy_clips(fill="natural"):
    gts, pool = natural_sources()
    return [synth_clip(y, pool, seed=i, fill=fill) for i, y in enumerate(gts)]


class Overfit:
    """Lazily trained toy runs shared by every test in the session."""

    def __init__(self):
        self.clips = toy_clips()
        self._runs = {}
        self.seconds = {}

    def run(self, **overrides):
        key = tuple(sorted(overrides.items()))
        if key not in self._runs:
            start = time.perf_counter()
            self._runs[key] = train(RunConfig(**overrides), None, clips=self.clips)
            self.seconds[key] = time.perf_counter() - start
        return self._runs[key]


@pytest.fixture(scope="session")
def overfit():
    return Overfit()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name} -- {detail}")
