import os
import time

import numpy as np
import pytest

from dialogsep import dataset as ds
from dialogsep import toy

ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail, seconds):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append((number, f"criterion {number} {status} ({seconds:.1f} s) {title}: {detail}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


class Timed:
    def __init__(self, value, seconds):
        self.value = value
        self.seconds = seconds


@pytest.fixture(scope="session")
def toy_classifier():
    t = time.perf_counter()
    model = toy.train_toy_classifier()
    return Timed(model, time.perf_counter() - t)


@pytest.fixture(scope="session")
def toy_denoiser():
    """Model trained on 16 toy clips plus 6 held-out examples."""
    t = time.perf_counter()
    model = toy.train_toy_denoiser(16, seed=0)
    held_out = toy.denoiser_corpus(6, held_out=True)
    return Timed((model, held_out), time.perf_counter() - t)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """16-item corpus (48 clips) rendered to disk with synthetic pools."""
    out = tmp_path_factory.mktemp("corpus")
    t = time.perf_counter()
    plan = ds.DatasetPlan(items=16, seed=3)
    entries = ds.plan_dataset(plan, *ds.synthetic_pools(16, 8, seed=3))
    entries = ds.render_dataset(entries, out)
    return Timed((out, entries), time.perf_counter() - t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def full_corpus_enabled():
    return os.environ.get("DIALOGSEP_FULL_CORPUS") == "1"
