import time

import numpy as np
import pytest

from locatlas.atlas import TrainBConfig, train_part_b
from locatlas.hypermodel import TrainAConfig, normalize_cloud, train_part_a
from locatlas.shapes import SyntheticShape

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere_cloud():
    return normalize_cloud(SyntheticShape("sphere", n=512, seed=0).sample())


@pytest.fixture(scope="session")
def torus_cloud():
    return normalize_cloud(SyntheticShape("torus", n=512, seed=1).sample())


SPHERE_A = TrainAConfig(epochs=200, prior_samples=512, seed=0)
SPHERE_B = TrainBConfig(epochs=300, seed=0)
TORUS_A = TrainAConfig(epochs=300, prior_samples=512, seed=0)
TORUS_B = TrainBConfig(epochs=300, seed=0)


@pytest.fixture(scope="session")
def sphere_a(sphere_cloud):
    res, secs = timed(train_part_a, [sphere_cloud], SPHERE_A)
    res.seconds = secs
    return res


@pytest.fixture(scope="session")
def sphere_b(sphere_a, sphere_cloud):
    res, secs = timed(train_part_b, sphere_a.model, [sphere_cloud], SPHERE_B)
    res.seconds = secs
    return res


@pytest.fixture(scope="session")
def torus_a(torus_cloud):
    res, secs = timed(train_part_a, [torus_cloud], TORUS_A)
    res.seconds = secs
    return res


@pytest.fixture(scope="session")
def torus_b(torus_a, torus_cloud):
    res, secs = timed(train_part_b, torus_a.model, [torus_cloud], TORUS_B)
    res.seconds = secs
    return res


@pytest.fixture(scope="session")
def torus_b_unregularized(torus_a, torus_cloud):
    from dataclasses import replace

    return train_part_b(torus_a.model, [torus_cloud], replace(TORUS_B, lam=0.0))
