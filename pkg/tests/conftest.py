import numpy as np
import pytest

from obser.eds import LabeledSet
from obser.synthenv import SyntheticEnvSpec, sample_environment


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_unit_rows(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def point_mass_classes(prototypes, counts, labels=None):
    """LabeledSet of repeated prototype points, `counts[i]` copies each."""
    prototypes = np.asarray(prototypes, dtype=float)
    rows, labs = [], []
    names = labels or [f"c{i}" for i in range(len(prototypes))]
    for proto, count, name in zip(prototypes, counts, names):
        rows.extend([proto] * count)
        labs.extend([name] * count)
    return LabeledSet(np.vstack(rows), labs)


@pytest.fixture
def vmf_fixture():
    """Well-separated 10-class environment: d=16, kappa=200, n=1000."""
    spec = SyntheticEnvSpec(
        dim=16, num_classes=10, samples_per_env=1000, kappa=200.0,
        occurrence="uniform",
    )
    data, truth = sample_environment(spec, seed=20240 + 7)
    return data, truth


@pytest.fixture
def small_vmf_fixture():
    """3-class fixture small enough for brute-force oracles."""
    spec = SyntheticEnvSpec(
        dim=8, num_classes=3, samples_per_env=90, kappa=50.0,
        occurrence="uniform",
    )
    data, truth = sample_environment(spec, seed=99)
    return data, truth
