"""Embedding geometry and kernel-density primitives on the unit hypersphere.

Every quantity in this package is built from one similarity kernel between
unit-norm embeddings,

    kernel(a, b) = exp((a . b - 1) / temperature),

which reads as a [0, 1]-valued belief that two observations show the same
kind of object: 1 for identical embeddings, exp(-2/temperature) for
antipodal ones.  Averaging the kernel against a set of stored embeddings
gives the kernel density of a point under that set's empirical
distribution, the backbone of all estimators in :mod:`obser.estimators`.

All functions here are pure and operate on immutable inputs; they are safe
to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateMeanError",
    "KernelConfig",
    "ObservationSet",
    "as_unit_vector",
    "as_unit_vectors",
    "kernel",
    "kernel_density",
    "log_kernel_density",
    "mean_direction",
    "density_matrix",
]

# Ingestion accepts norms within this window of 1 and renormalizes.
NORM_INGEST_TOL = 1e-3
# After ingestion every stored vector satisfies | |v| - 1 | <= this.
NORM_UNIT_TOL = 1e-6
# Below this temperature plain-domain kernel sums risk underflow, so
# densities are accumulated in the log domain (exp(-2/tau) underflows in
# float64 near tau ~ 0.0029).
LOG_STABLE_TAU = 0.05

_DEGENERATE_RESULTANT = 1e-9


class DegenerateMeanError(ValueError):
    """The resultant of the averaged directions is numerically zero."""


@dataclass(frozen=True)
class KernelConfig:
    """Similarity-kernel settings shared across the package.

    Parameters
    ----------
    temperature:
        Positive smoothing scale.  Small values sharpen the kernel (only
        near-identical embeddings register as similar); large values
        flatten it toward 1 everywhere.
    family:
        Kernel family name.  Only ``"cosine-exponential"`` is supported;
        the field exists so configs serialize self-descriptively.
    """

    temperature: float
    family: str = "cosine-exponential"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.family != "cosine-exponential":
            raise ValueError(f"unsupported kernel family: {self.family!r}")

    @property
    def floor(self) -> float:
        """Smallest attainable kernel value, exp(-2/temperature)."""
        return float(np.exp(-2.0 / self.temperature))


def as_unit_vectors(vectors, *, name: str = "vectors") -> np.ndarray:
    """Validate and normalize a batch of embeddings to unit norm.

    Accepts anything array-like of shape ``(n, d)`` with ``d >= 2``.
    Norms within ``NORM_INGEST_TOL`` of 1 are silently renormalized
    (serialization rounding); larger deviations raise, since they signal
    wrong data rather than rounding.
    """
    arr = np.array(vectors, dtype=np.float64)  # fresh copy: callers keep theirs
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise ValueError(f"{name} must have dimension >= 2, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    norms = np.linalg.norm(arr, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > NORM_INGEST_TOL):
        i = int(np.argmax(off))
        raise ValueError(
            f"{name}[{i}] has norm {norms[i]:.6f}, outside the "
            f"renormalization window 1 +/- {NORM_INGEST_TOL}"
        )
    # only touch rows that actually deviate: keeps normalization
    # idempotent, so save/load round trips are bit-exact
    needs = off > NORM_UNIT_TOL
    if np.any(needs):
        arr[needs] /= norms[needs, None]
    return arr


def as_unit_vector(vector, *, name: str = "vector") -> np.ndarray:
    """Validate and normalize a single embedding; returns shape ``(d,)``."""
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D array, got shape {arr.shape}")
    return as_unit_vectors(arr[None, :], name=name)[0]


class ObservationSet:
    """An immutable batch of unit-norm embeddings with optional metadata.

    This is the empirical distribution of a sub-environment: whatever
    embeddings an agent has collected there.  ``labels`` and ``positions``
    are carried through but only interpreted by modules that need them.

    Parameters
    ----------
    vectors:
        Array-like of shape ``(n, d)``; rows are normalized on ingestion.
    ids:
        Per-observation string ids, unique within the set.  Defaults to
        zero-padded indices so lexicographic id order matches row order.
    labels:
        Optional per-observation class labels (strings).
    region:
        Optional region id this set was observed in.
    positions:
        Optional ``(n, 3)`` array of observation positions.  Never
        interpreted by this package, only stored and serialized.
    """

    __slots__ = ("vectors", "ids", "labels", "region", "positions")

    def __init__(self, vectors, ids=None, labels=None, region=None, positions=None):
        vecs = as_unit_vectors(vectors)
        vecs.setflags(write=False)
        n = vecs.shape[0]
        if ids is None:
            width = max(1, len(str(max(n - 1, 0))))
            ids = tuple(str(i).zfill(width) for i in range(n))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != n:
                raise ValueError(f"got {len(ids)} ids for {n} vectors")
            if len(set(ids)) != n:
                raise ValueError("observation ids must be unique")
        if labels is not None:
            labels = tuple(str(l) for l in labels)
            if len(labels) != n:
                raise ValueError(f"got {len(labels)} labels for {n} vectors")
        if positions is not None:
            positions = np.asarray(positions, dtype=np.float64)
            if positions.shape != (n, 3):
                raise ValueError(f"positions must have shape ({n}, 3)")
            positions.setflags(write=False)
        self.vectors = vecs
        self.ids = ids
        self.labels = labels
        self.region = None if region is None else str(region)
        self.positions = positions

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, indices) -> "ObservationSet":
        idx = np.asarray(indices, dtype=int)
        return ObservationSet(
            self.vectors[idx],
            ids=[self.ids[i] for i in idx],
            labels=None if self.labels is None else [self.labels[i] for i in idx],
            region=self.region,
            positions=None if self.positions is None else self.positions[idx],
        )

    def __repr__(self) -> str:
        lab = "labeled" if self.labels is not None else "unlabeled"
        reg = f", region={self.region!r}" if self.region is not None else ""
        return f"ObservationSet(n={len(self)}, dim={self.dim}, {lab}{reg})"


def vectors_of(samples) -> np.ndarray:
    """Extract the ``(n, d)`` unit-vector array from a set or raw array."""
    vecs = getattr(samples, "vectors", None)
    if vecs is not None:
        return vecs
    return as_unit_vectors(samples)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"embedding dimensions differ: {a.shape[-1]} vs {b.shape[-1]}"
        )


def kernel(a, b, cfg: KernelConfig) -> float:
    """Belief in [exp(-2/tau), 1] that ``a`` and ``b`` share a class.

    Symmetric in its arguments and equal to 1 exactly when the embeddings
    coincide.  The cosine is clipped to [-1, 1] so accumulated rounding in
    unit vectors can never push the value above 1.
    """
    av = as_unit_vector(a, name="a")
    bv = as_unit_vector(b, name="b")
    _check_dims(av, bv)
    cos = float(np.clip(av @ bv, -1.0, 1.0))
    return float(np.exp((cos - 1.0) / cfg.temperature))


def cosine_matrix(rows, cols) -> np.ndarray:
    """Pairwise cosines, clipped to [-1, 1]; rows x cols."""
    rv = vectors_of(rows)
    cv = vectors_of(cols)
    _check_dims(rv, cv)
    return np.clip(rv @ cv.T, -1.0, 1.0)


def density_matrix(rows, cols, cfg: KernelConfig) -> np.ndarray:
    """Matrix of kernel beliefs: entry ``(i, j)`` is ``kernel(rows[i], cols[j])``."""
    return np.exp((cosine_matrix(rows, cols) - 1.0) / cfg.temperature)


def _logmeanexp(log_terms: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(mean(exp(log_terms))) along ``axis``, stable for very negative input."""
    m = np.max(log_terms, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(
        np.mean(np.exp(log_terms - m), axis=axis)
    )
    return out


def log_kernel_density(x, samples, cfg: KernelConfig) -> float:
    """log of ``kernel_density`` computed without intermediate underflow.

    Useful directly for divergence estimation, where only log densities
    enter, and as the stable path for small temperatures.
    """
    xv = as_unit_vector(x, name="x")
    sv = vectors_of(samples)
    if sv.shape[0] == 0:
        raise ValueError("sample set is empty")
    _check_dims(xv, sv)
    log_terms = (np.clip(sv @ xv, -1.0, 1.0) - 1.0) / cfg.temperature
    return float(_logmeanexp(log_terms))


def kernel_density(x, samples, cfg: KernelConfig) -> float:
    """Mean kernel belief of ``x`` against every sample: the estimated
    density of ``x`` under the samples' empirical distribution.

    Lies in [exp(-2/tau), 1].  For ``temperature < LOG_STABLE_TAU`` the
    mean is accumulated in the log domain to avoid underflow.
    """
    if cfg.temperature < LOG_STABLE_TAU:
        return float(np.exp(log_kernel_density(x, samples, cfg)))
    xv = as_unit_vector(x, name="x")
    sv = vectors_of(samples)
    if sv.shape[0] == 0:
        raise ValueError("sample set is empty")
    _check_dims(xv, sv)
    return float(np.mean(np.exp((np.clip(sv @ xv, -1.0, 1.0) - 1.0) / cfg.temperature)))


def mean_direction(queries) -> np.ndarray:
    """Unit-normalized arithmetic mean of a nonempty batch of embeddings.

    Raises :class:`DegenerateMeanError` when the resultant is numerically
    zero (for example an exactly antipodal pair), since no direction is
    then defined.
    """
    qv = vectors_of(queries)
    if qv.shape[0] == 0:
        raise ValueError("cannot average an empty set of embeddings")
    resultant = qv.mean(axis=0)
    norm = float(np.linalg.norm(resultant))
    if norm <= _DEGENERATE_RESULTANT:
        raise DegenerateMeanError(
            f"mean of {qv.shape[0]} embeddings has resultant norm {norm:.2e}"
        )
    return resultant / norm
