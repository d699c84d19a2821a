"""Synthetic sub-environments with exact ground truth.

Environments generated here are mixtures of von Mises-Fisher class
clusters on the unit sphere: one prototype direction per class, a shared
concentration, and an occurrence law over classes (uniform, Zipf, or
explicit).  Because every generated set carries its exact occurrence
vector and prototypes, these environments serve as the oracle against
which the estimators and their bounds are tested.

Generation is deterministic per seed and single-threaded; run distinct
seeds concurrently if throughput matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eds import LabeledSet
from .estimators import exact_kl
from .kernel import as_unit_vector, as_unit_vectors

__all__ = [
    "SyntheticEnvSpec",
    "GroundTruth",
    "zipf_occurrence",
    "entropy",
    "sample_vmf",
    "orthogonal_prototypes",
    "simplex_prototypes",
    "sample_environment",
    "make_scenario",
    "SCENARIOS",
]


def zipf_occurrence(num_classes: int, alpha: float) -> np.ndarray:
    """Power-law occurrence weights ``w(c) ~ c ** -alpha``, c = 1..C.

    Nonincreasing in the class index; ``alpha = 0`` gives the uniform
    vector.  Models the long-tailed class frequencies of real
    environments.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    ranks = np.arange(1, num_classes + 1, dtype=float)
    w = ranks ** -alpha
    return w / w.sum()


def entropy(omega) -> float:
    """Shannon entropy of an occurrence vector, natural log."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("occurrence entries must be nonnegative")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError(f"occurrence sums to {w.sum()!r}, expected 1 within 1e-9")
    pos = w[w > 0]
    return float(-np.sum(pos * np.log(pos)))


@dataclass(frozen=True)
class SyntheticEnvSpec:
    """Recipe for one synthetic sub-environment.

    ``occurrence`` is ``"uniform"``, ``"zipf"`` (weight exponent
    ``zipf_alpha``), or an explicit weight sequence.  ``kappa`` is the
    vMF concentration shared by all classes; pass a per-class sequence
    only for robustness studies, since a shared value is what makes
    class-wise distributions consistent across environments.  ``kappa``
    of 0 samples uniformly on the sphere, ``inf`` collapses every sample
    onto its prototype.
    """

    dim: int
    num_classes: int
    samples_per_env: int
    kappa: float | tuple = 100.0
    occurrence: str | tuple = "uniform"
    zipf_alpha: float = 0.5
    prototype_layout: str = "orthogonal"  # "orthogonal" | "simplex" | "explicit"
    prototypes: tuple | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.samples_per_env < 1:
            raise ValueError("samples_per_env must be >= 1")
        for k in self.kappas():
            if not (k >= 0):
                raise ValueError(f"kappa must be >= 0, got {k}")
        if isinstance(self.occurrence, str):
            if self.occurrence not in ("uniform", "zipf"):
                raise ValueError(f"unknown occurrence law {self.occurrence!r}")
        else:
            w = np.asarray(self.occurrence, dtype=float)
            if w.shape != (self.num_classes,):
                raise ValueError("explicit occurrence length != num_classes")
            if np.any(w <= 0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("explicit occurrence must be positive and sum to 1")
        if self.prototype_layout not in ("orthogonal", "simplex", "explicit"):
            raise ValueError(f"unknown prototype layout {self.prototype_layout!r}")
        if self.prototype_layout == "explicit" and self.prototypes is None:
            raise ValueError("explicit layout requires prototypes")

    def kappas(self) -> np.ndarray:
        if isinstance(self.kappa, (int, float)):
            return np.full(self.num_classes, float(self.kappa))
        arr = np.asarray(self.kappa, dtype=float)
        if arr.shape != (self.num_classes,):
            raise ValueError("per-class kappa length != num_classes")
        return arr

    def omega(self) -> np.ndarray:
        if isinstance(self.occurrence, str):
            if self.occurrence == "uniform":
                return np.full(self.num_classes, 1.0 / self.num_classes)
            return zipf_occurrence(self.num_classes, self.zipf_alpha)
        return np.asarray(self.occurrence, dtype=float)


@dataclass(frozen=True)
class GroundTruth:
    """What the generator actually used and produced for one draw."""

    omega: np.ndarray
    prototypes: np.ndarray
    realized_fractions: np.ndarray

    def to_json_dict(self, kappa=None, seed=None) -> dict:
        out = {
            "omega": [float(v) for v in self.omega],
            "realized_fractions": [float(v) for v in self.realized_fractions],
        }
        if kappa is not None:
            out["kappa"] = kappa
        if seed is not None:
            out["seed"] = seed
        return out


def _random_orthogonal(rng, dim: int) -> np.ndarray:
    # QR with the sign convention that makes the factorization unique
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def orthogonal_prototypes(rng, dim: int, num_classes: int) -> np.ndarray:
    """Rows of a random orthogonal frame, extended with antipodes.

    Pairwise cosines are 0 (or -1 for an antipodal pair), which pins the
    cross-class kernel at or below exp(-1/tau) regardless of the draw.
    Supports up to ``2 * dim`` classes.
    """
    if num_classes > 2 * dim:
        raise ValueError(
            f"orthogonal layout supports at most {2 * dim} classes in "
            f"dimension {dim}, got {num_classes}"
        )
    q = _random_orthogonal(rng, dim)
    frame = np.vstack([q, -q])
    return frame[:num_classes]


def simplex_prototypes(rng, dim: int, num_classes: int) -> np.ndarray:
    """Vertices of a regular simplex (pairwise cosine -1/(C-1)), randomly
    rotated into the ambient dimension.  Requires ``dim >= C - 1``.
    """
    c = num_classes
    if c == 1:
        v = rng.standard_normal(dim)
        return (v / np.linalg.norm(v))[None, :]
    if dim < c - 1:
        raise ValueError(
            f"simplex layout needs dim >= {c - 1} for {c} classes, got {dim}"
        )
    gram = (np.eye(c) - np.full((c, c), 1.0 / c)) * (c / (c - 1.0))
    vals, vecs = np.linalg.eigh(gram)
    keep = vals > 1e-9
    coords = vecs[:, keep] * np.sqrt(vals[keep])
    protos = np.zeros((c, dim))
    protos[:, : coords.shape[1]] = coords
    protos = protos @ _random_orthogonal(rng, dim).T
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def sample_vmf(rng, mu, kappa: float, size: int) -> np.ndarray:
    """Draw ``size`` von Mises-Fisher samples around direction ``mu``.

    Rejection-samples the cosine against ``mu`` and completes each sample
    with an independent tangent direction.  ``kappa = 0`` falls back to
    the uniform sphere; ``kappa = inf`` returns copies of ``mu``.
    """
    mu = as_unit_vector(mu, name="mu")
    d = mu.shape[0]
    if size == 0:
        return np.empty((0, d))
    if math.isinf(kappa):
        return np.tile(mu, (size, 1))
    if kappa == 0:
        g = rng.standard_normal((size, d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    m = d - 1
    b = m / (math.sqrt(4.0 * kappa * kappa + m * m) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    log_c = kappa * x0 + m * math.log(1.0 - x0 * x0)
    ws = np.empty(0)
    while ws.size < size:
        batch = max(2 * (size - ws.size), 64)
        z = rng.beta(m / 2.0, m / 2.0, size=batch)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=batch)
        ok = kappa * w + m * np.log1p(-x0 * w) - log_c >= np.log(u)
        ws = np.concatenate([ws, w[ok]])
    w = ws[:size]

    g = rng.standard_normal((size, d))
    t = g - (g @ mu)[:, None] * mu
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    samples = w[:, None] * mu + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * t
    return samples / np.linalg.norm(samples, axis=1, keepdims=True)


def _class_labels(num_classes: int) -> list:
    width = max(2, len(str(num_classes - 1)))
    return [f"c{i:0{width}d}" for i in range(num_classes)]


def _prototypes_for(spec: SyntheticEnvSpec, rng) -> np.ndarray:
    if spec.prototype_layout == "orthogonal":
        return orthogonal_prototypes(rng, spec.dim, spec.num_classes)
    if spec.prototype_layout == "simplex":
        return simplex_prototypes(rng, spec.dim, spec.num_classes)
    protos = as_unit_vectors(np.asarray(spec.prototypes, dtype=float))
    if protos.shape != (spec.num_classes, spec.dim):
        raise ValueError("explicit prototypes have the wrong shape")
    return protos


def sample_environment(spec: SyntheticEnvSpec, seed: int):
    """Generate one labeled environment and its ground truth.

    Class assignments are i.i.d. draws from the occurrence vector; each
    sample then comes from its class's vMF cluster.  Identical
    ``(spec, seed)`` pairs produce bit-identical output.
    """
    rng = np.random.default_rng(seed)
    prototypes = _prototypes_for(spec, rng)
    omega = spec.omega()
    kappas = spec.kappas()
    n = spec.samples_per_env
    draws = rng.choice(spec.num_classes, size=n, p=omega)
    vectors = np.empty((n, spec.dim))
    for c in range(spec.num_classes):
        idx = np.flatnonzero(draws == c)
        if idx.size:
            vectors[idx] = sample_vmf(rng, prototypes[c], kappas[c], idx.size)
    labels = _class_labels(spec.num_classes)
    counts = np.bincount(draws, minlength=spec.num_classes)
    data = LabeledSet(vectors, [labels[c] for c in draws])
    truth = GroundTruth(
        omega=omega,
        prototypes=prototypes,
        realized_fractions=counts / n,
    )
    return data, truth


# Two-group scenario fixtures: class count, group sizes, group fractions
# for each side, and the default number of samples per side.
SCENARIOS = {
    "S1": (2, (1, 1), (0.5, 0.5), (0.1, 0.9), 1000),
    "S2": (2, (1, 1), (0.2, 0.8), (0.8, 0.2), 1000),
    "C-Scenario1": (10, (5, 5), (0.4, 0.6), (0.6, 0.4), 1000),
    "C-Scenario2": (10, (5, 5), (0.2, 0.8), (0.8, 0.2), 1000),
    "C-Scenario3": (40, (20, 20), (0.2, 0.8), (0.8, 0.2), 4000),
}


def _per_class_omega(group_sizes, group_fractions) -> np.ndarray:
    parts = []
    for size, frac in zip(group_sizes, group_fractions):
        parts.extend([frac / size] * size)
    return np.asarray(parts)


def _exact_counts(omega: np.ndarray, n: int) -> np.ndarray:
    # largest-remainder rounding so realized fractions match omega as
    # closely as integers allow
    raw = omega * n
    counts = np.floor(raw).astype(int)
    remainder = n - int(counts.sum())
    order = np.lexsort((np.arange(omega.size), -(raw - counts)))
    counts[order[:remainder]] += 1
    return counts


def make_scenario(
    scenario: str,
    dim: int,
    kappa: float,
    seed: int,
    samples_per_env: int | None = None,
    num_classes: int | None = None,
):
    """Build a paired-environment fixture with a known exact divergence.

    Both sides share the same class prototypes and concentration and
    differ only in their occurrence vectors, built from two class groups
    whose fractions swap between the sides.  Per-class sample counts are
    rounded deterministically to the occurrence vector, so the realized
    composition matches it as closely as integers allow.

    ``num_classes`` overrides the scenario's native class count (split
    evenly between the two groups) for desk-scale variants of the same
    fraction configuration; the exact divergence depends only on the
    group fractions, not the count.

    Returns ``(mu, nu, exact)`` where ``exact`` is the closed-form KL
    divergence between the two occurrence vectors.
    """
    if scenario not in SCENARIOS:
        raise ValueError(
            f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}"
        )
    native_classes, group_sizes, mu_groups, nu_groups, default_n = SCENARIOS[scenario]
    if num_classes is None:
        num_classes = native_classes
    else:
        if num_classes < 2 or num_classes % 2:
            raise ValueError("num_classes override must be even and >= 2")
        group_sizes = (num_classes // 2, num_classes // 2)
    n = default_n if samples_per_env is None else samples_per_env
    omega_mu = _per_class_omega(group_sizes, mu_groups)
    omega_nu = _per_class_omega(group_sizes, nu_groups)
    exact = exact_kl(omega_mu, omega_nu)

    rng = np.random.default_rng(seed)
    prototypes = orthogonal_prototypes(rng, dim, num_classes)
    labels = _class_labels(num_classes)

    def build(omega):
        counts = _exact_counts(omega, n)
        vectors = np.empty((n, dim))
        labs = []
        at = 0
        for c in range(num_classes):
            k = int(counts[c])
            vectors[at : at + k] = sample_vmf(rng, prototypes[c], kappa, k)
            labs.extend([labels[c]] * k)
            at += k
        return LabeledSet(vectors, labs)

    return build(omega_mu), build(omega_nu), exact
