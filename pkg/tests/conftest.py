from pathlib import Path

import numpy as np
import pytest

from longirad.cohortmodel import ImageVolume, load_cohort
from longirad.registration import RigidTransform
from longirad.simcohort import GroundTruth

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def tiny_cohort():
    return load_cohort(DATA / "tiny_cohort")


@pytest.fixture(scope="session")
def tiny_truth():
    return GroundTruth.read(DATA / "tiny_cohort_truth.json")


def render_phantom(T: RigidTransform, n: int = 32, spacing: float = 4.0) -> ImageVolume:
    """Smooth body with four blobs; voxel p shows the anatomy at T^-1(p)."""
    zz, yy, xx = np.meshgrid(*(np.arange(n) * spacing,) * 3, indexing="ij")
    P = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], 1)
    A = T.inverse().apply(P)
    c = np.full(3, n * spacing / 2)
    r = np.linalg.norm((A - c) / [50, 40, 45], axis=1)
    v = 100 / (1 + np.exp((r - 1) * 12))
    for cen, rad, amp in [((40, 50, 60), 10, 300), ((80, 70, 50), 8, -150), ((60, 90, 70), 12, 200), ((70, 40, 80), 6, 400)]:
        v = v + amp * np.exp(-np.sum((A - np.array(cen)) ** 2, 1) / (2 * rad**2))
    return ImageVolume(v.reshape(n, n, n), (spacing,) * 3, (0.0, 0.0, 0.0))


def pytest_terminal_summary(terminalreporter):
    from sys import modules

    mod = modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
