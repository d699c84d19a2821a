"""Epsilon-delta separability (EDS) of labeled embedding sets.

A feature map is useful for class-level inference when embeddings of the
same class score high kernel density against each other (concentration,
``delta``) while embeddings of different classes score low density
(separability, ``epsilon``).  This module measures both from a labeled
set, derives the classifier those densities induce, and verifies the
quantitative bounds that tie the delta/epsilon ratio to how far that
classifier can drift from the labels.

Conventions
-----------
* Within-class densities exclude the self-pair (leave-one-out): a sample's
  kernel against itself is identically 1 and would inflate ``delta`` for
  small classes.  The divergence estimator in :mod:`obser.estimators`
  deliberately does NOT do this; see there.
* Trimming drops the tail that violates each bound: the lowest
  within-class densities for the ``delta`` side, the highest cross-class
  densities for the ``epsilon`` side.  ``floor(trim_fraction * count)``
  values are dropped.
* Mean fields (``delta``, ``epsilon``) are unweighted means across
  classes and power reporting; worst-case fields (``delta_worst``,
  ``epsilon_worst``) are the min/max over the kept per-sample values and
  power bound verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernel import (
    KernelConfig,
    ObservationSet,
    as_unit_vector,
    as_unit_vectors,
)

__all__ = [
    "LabeledSet",
    "EDSReport",
    "GapDecomposition",
    "concat_labeled",
    "eds_from_kernel_matrix",
    "measure_eds",
    "bayes_classify",
    "kl_joint_gap",
    "kl_gap_bound",
]

EDS_CSV_HEADER = (
    "tau,trim,delta,epsilon,delta_worst,epsilon_worst,k,dH,num_classes"
)


class LabeledSet:
    """Unit-norm embeddings partitioned into classes by a label per row.

    Classes with exactly one member are carried but flagged: after
    self-pair exclusion they have no within-class density, so they
    contribute nothing to ``delta`` and make the classifier-gap
    computation ill-defined.
    """

    __slots__ = ("vectors", "labels", "ids", "classes", "class_indices")

    def __init__(self, vectors, labels, ids=None):
        vecs = as_unit_vectors(vectors)
        vecs.setflags(write=False)
        n = vecs.shape[0]
        labels = tuple(str(l) for l in labels)
        if len(labels) != n:
            raise ValueError(f"got {len(labels)} labels for {n} vectors")
        if n == 0:
            raise ValueError("labeled set is empty")
        if ids is None:
            width = max(1, len(str(n - 1)))
            ids = tuple(str(i).zfill(width) for i in range(n))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != n or len(set(ids)) != n:
                raise ValueError("ids must be unique and match the vector count")
        self.vectors = vecs
        self.labels = labels
        self.ids = ids
        self.classes = tuple(sorted(set(labels)))
        idx = {c: [] for c in self.classes}
        for i, l in enumerate(labels):
            idx[l].append(i)
        self.class_indices = {c: np.asarray(v, dtype=int) for c, v in idx.items()}

    @classmethod
    def from_observations(cls, obs: ObservationSet) -> "LabeledSet":
        if obs.labels is None:
            raise ValueError("observation set carries no labels")
        return cls(obs.vectors, obs.labels, ids=obs.ids)

    def to_observation_set(self, region=None) -> ObservationSet:
        return ObservationSet(
            self.vectors, ids=self.ids, labels=self.labels, region=region
        )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_count(self, c) -> int:
        return len(self.class_indices[str(c)])

    def fractions(self, classes=None) -> np.ndarray:
        """Empirical class fractions, ordered by ``classes`` (default: own)."""
        order = self.classes if classes is None else [str(c) for c in classes]
        n = len(self)
        return np.array(
            [len(self.class_indices.get(c, ())) / n for c in order], dtype=float
        )

    @property
    def singleton_classes(self):
        return tuple(c for c in self.classes if len(self.class_indices[c]) == 1)

    def __repr__(self) -> str:
        return (
            f"LabeledSet(n={len(self)}, dim={self.dim}, "
            f"classes={self.num_classes})"
        )


def concat_labeled(*sets: LabeledSet) -> LabeledSet:
    """Pool labeled sets into one; ids are prefixed with the block index."""
    if not sets:
        raise ValueError("nothing to concatenate")
    vectors = np.vstack([s.vectors for s in sets])
    labels = [l for s in sets for l in s.labels]
    ids = [f"{b}/{i}" for b, s in enumerate(sets) for i in s.ids]
    return LabeledSet(vectors, labels, ids=ids)


@dataclass(frozen=True)
class EDSReport:
    """Separability measurement of one labeled set at one temperature.

    ``epsilon``-side fields are ``None`` for single-class input (there is
    no cross-class density to measure), and ``k`` with them.  When the
    aggregate ordering ``0 <= epsilon <= delta <= 1`` fails this is
    reported via ``ordering_violated`` rather than clamped, since a
    violation means the labels carry no kernel-visible structure.
    """

    per_class_delta: dict
    per_class_epsilon: dict | None
    delta: float
    epsilon: float | None
    delta_worst: float
    epsilon_worst: float | None
    k: float | None
    trim_fraction: float
    tau: float
    num_classes: int
    singleton_classes: tuple
    ordering_violated: bool

    def csv_row(self) -> str:
        """Flat CSV row matching ``EDS_CSV_HEADER``; absent fields empty."""
        dh = ""
        if self.k is not None:
            dh = repr(kl_gap_bound(self, self.num_classes))
        cells = [
            repr(self.tau),
            repr(self.trim_fraction),
            repr(self.delta),
            "" if self.epsilon is None else repr(self.epsilon),
            repr(self.delta_worst),
            "" if self.epsilon_worst is None else repr(self.epsilon_worst),
            "" if self.k is None else repr(self.k),
            dh,
            str(self.num_classes),
        ]
        return ",".join(cells)

    def to_json_dict(self) -> dict:
        return {
            "tau": self.tau,
            "trim_fraction": self.trim_fraction,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "delta_worst": self.delta_worst,
            "epsilon_worst": self.epsilon_worst,
            "k": self.k,
            "num_classes": self.num_classes,
            "per_class_delta": dict(self.per_class_delta),
            "per_class_epsilon": None
            if self.per_class_epsilon is None
            else dict(self.per_class_epsilon),
            "singleton_classes": list(self.singleton_classes),
            "ordering_violated": self.ordering_violated,
        }


def _drop_lowest(values: np.ndarray, frac: float) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    return v[int(math.floor(frac * v.size)) :]

def _drop_highest(values: np.ndarray, frac: float) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    k = int(math.floor(frac * v.size))
    return v if k == 0 else v[:-k]


def _row_block_density(log_block: np.ndarray, exclude_diag: bool) -> np.ndarray:
    """Per-row mean of exp(log_block), optionally leaving out the diagonal.

    Accumulates via logsumexp so tiny temperatures cannot underflow the
    row mean to zero before averaging.
    """
    lb = log_block
    if exclude_diag:
        lb = lb.copy()
        np.fill_diagonal(lb, -np.inf)
    m = np.max(lb, axis=1, keepdims=True)
    # all -inf cannot happen: exclude_diag requires >= 2 columns upstream
    denom = lb.shape[1] - (1 if exclude_diag else 0)
    return np.exp(m.squeeze(1)) * np.sum(np.exp(lb - m), axis=1) / denom


def class_density_table(data: LabeledSet, cfg: KernelConfig):
    """Per-sample kernel densities against every class's empirical distribution.

    Returns ``(within, cross)`` where ``within[c]`` holds the leave-one-out
    densities of class ``c``'s members against their own class (``None``
    for singleton classes) and ``cross[c]`` is an ``(n_c, C-1)`` array of
    densities against every other class, columns ordered by the remaining
    class ids.
    """
    log_k = (
        np.clip(data.vectors @ data.vectors.T, -1.0, 1.0) - 1.0
    ) / cfg.temperature
    within, cross = {}, {}
    for c in data.classes:
        rows = data.class_indices[c]
        block = log_k[np.ix_(rows, rows)]
        if rows.size >= 2:
            within[c] = _row_block_density(block, exclude_diag=True)
        else:
            within[c] = None
        others = [c2 for c2 in data.classes if c2 != c]
        if others:
            cols = np.empty((rows.size, len(others)), dtype=float)
            for j, c2 in enumerate(others):
                sub = log_k[np.ix_(rows, data.class_indices[c2])]
                cols[:, j] = _row_block_density(sub, exclude_diag=False)
            cross[c] = cols
        else:
            cross[c] = None
    return within, cross


def measure_eds(
    data: LabeledSet, cfg: KernelConfig, trim_fraction: float = 0.05
) -> EDSReport:
    """Measure the (epsilon, delta) separability of a labeled set.

    Per class ``c``, ``delta_c`` is the trimmed mean of its members'
    leave-one-out within-class densities and ``epsilon_c`` the trimmed
    mean of their densities against every other class.  Aggregates are
    unweighted class means; worst-case fields take the min/max over all
    kept per-sample values, so they bound the sample pointwise when
    ``trim_fraction`` is 0.

    Single-class input yields ``epsilon``-side fields of ``None``.
    Expect O(n^2) time and memory in the number of samples.
    """
    if not 0.0 <= trim_fraction <= 0.2:
        raise ValueError(f"trim_fraction must be in [0, 0.2], got {trim_fraction}")
    within, cross = class_density_table(data, cfg)

    per_delta, kept_within = {}, []
    for c in data.classes:
        if within[c] is None:
            per_delta[c] = float("nan")
            continue
        kept = _drop_lowest(within[c], trim_fraction)
        per_delta[c] = float(np.mean(kept))
        kept_within.append(kept)
    defined = [v for v in per_delta.values() if not math.isnan(v)]
    if not defined:
        raise ValueError(
            "no class has >= 2 members; within-class density is undefined"
        )
    delta = float(np.mean(defined))
    delta_worst = float(min(np.min(k) for k in kept_within))

    if data.num_classes < 2:
        per_eps = epsilon = epsilon_worst = k_ratio = None
        ordering_violated = not (0.0 <= delta <= 1.0 + 1e-12)
    else:
        per_eps, kept_cross = {}, []
        for c in data.classes:
            kept = _drop_highest(cross[c].ravel(), trim_fraction)
            per_eps[c] = float(np.mean(kept))
            kept_cross.append(kept)
        epsilon = float(np.mean(list(per_eps.values())))
        epsilon_worst = float(max(np.max(k) for k in kept_cross))
        k_ratio = delta_worst / epsilon_worst
        ordering_violated = not (0.0 <= epsilon <= delta <= 1.0 + 1e-12)

    return EDSReport(
        per_class_delta=per_delta,
        per_class_epsilon=per_eps,
        delta=delta,
        epsilon=epsilon,
        delta_worst=delta_worst,
        epsilon_worst=epsilon_worst,
        k=k_ratio,
        trim_fraction=trim_fraction,
        tau=cfg.temperature,
        num_classes=data.num_classes,
        singleton_classes=data.singleton_classes,
        ordering_violated=ordering_violated,
    )


def eds_from_kernel_matrix(
    kernel_matrix: np.ndarray,
    labels,
    trim_fraction: float = 0.05,
    tau: float = float("nan"),
) -> EDSReport:
    """``measure_eds`` for a precomputed symmetric kernel matrix.

    Lets callers measure separability under kernels outside the public
    sphere API (the toy trainer's Euclidean-head ablation uses a Gaussian
    kernel).  ``kernel_matrix[i, j]`` must be the belief between samples
    ``i`` and ``j``; the diagonal is ignored on the within side.
    """
    if not 0.0 <= trim_fraction <= 0.2:
        raise ValueError(f"trim_fraction must be in [0, 0.2], got {trim_fraction}")
    K = np.asarray(kernel_matrix, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or n != len(labels):
        raise ValueError("kernel matrix shape does not match the labels")
    labels = [str(l) for l in labels]
    classes = sorted(set(labels))
    idx = {c: np.asarray([i for i, l in enumerate(labels) if l == c]) for c in classes}

    per_delta, kept_within, singletons = {}, [], []
    for c in classes:
        rows = idx[c]
        if rows.size < 2:
            per_delta[c] = float("nan")
            singletons.append(c)
            continue
        block = K[np.ix_(rows, rows)]
        vals = (block.sum(axis=1) - np.diag(block)) / (rows.size - 1)
        kept = _drop_lowest(vals, trim_fraction)
        per_delta[c] = float(np.mean(kept))
        kept_within.append(kept)
    defined = [v for v in per_delta.values() if not math.isnan(v)]
    if not defined:
        raise ValueError("no class has >= 2 members")
    delta = float(np.mean(defined))
    delta_worst = float(min(np.min(k) for k in kept_within))

    if len(classes) < 2:
        per_eps = epsilon = epsilon_worst = k_ratio = None
        ordering_violated = not (0.0 <= delta <= 1.0 + 1e-12)
    else:
        per_eps, kept_cross = {}, []
        for c in classes:
            rows = idx[c]
            vals = np.concatenate(
                [K[np.ix_(rows, idx[c2])].mean(axis=1) for c2 in classes if c2 != c]
            )
            kept = _drop_highest(vals, trim_fraction)
            per_eps[c] = float(np.mean(kept))
            kept_cross.append(kept)
        epsilon = float(np.mean(list(per_eps.values())))
        epsilon_worst = float(max(np.max(k) for k in kept_cross))
        k_ratio = delta_worst / epsilon_worst
        ordering_violated = not (0.0 <= epsilon <= delta <= 1.0 + 1e-12)

    return EDSReport(
        per_class_delta=per_delta,
        per_class_epsilon=per_eps,
        delta=delta,
        epsilon=epsilon,
        delta_worst=delta_worst,
        epsilon_worst=epsilon_worst,
        k=k_ratio,
        trim_fraction=trim_fraction,
        tau=tau,
        num_classes=len(classes),
        singleton_classes=tuple(singletons),
        ordering_violated=ordering_violated,
    )


def bayes_classify(x, data: LabeledSet, cfg: KernelConfig) -> dict:
    """Class posterior of ``x`` induced by per-class kernel densities.

    Weights each class's density against ``x`` by its empirical fraction
    and normalizes:

        p(c | x) = w_c * density(x; class c) / sum_c' w_c' * density(x; class c')

    Computed in the log domain, so the result sums to 1 within 1e-9 at
    any temperature.  ``x`` is treated as an external query; no self-pair
    handling applies even if it coincides with a stored sample.
    """
    xv = as_unit_vector(x, name="x")
    if xv.shape[0] != data.dim:
        raise ValueError(f"query dim {xv.shape[0]} != data dim {data.dim}")
    n = len(data)
    logits = np.empty(data.num_classes)
    for j, c in enumerate(data.classes):
        rows = data.class_indices[c]
        log_terms = (np.clip(data.vectors[rows] @ xv, -1.0, 1.0) - 1.0) / cfg.temperature
        m = float(np.max(log_terms))
        log_phi = m + math.log(float(np.mean(np.exp(log_terms - m))))
        logits[j] = math.log(rows.size / n) + log_phi
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return {c: float(p) for c, p in zip(data.classes, probs)}


class GapDecomposition(NamedTuple):
    """KL divergence between the labeled joint and the classifier joint,

    split into the density-ratio term (mean of ``log density(x; all) -
    log density(x; own class)``, both leave-one-out) and the label
    entropy.  ``value`` is their sum.
    """

    value: float
    log_ratio_term: float
    entropy_term: float


def kl_joint_gap(data: LabeledSet, cfg: KernelConfig) -> GapDecomposition:
    """How far the kernel classifier's joint drifts from the labeled joint.

    Empirical over the given samples with self-pairs excluded from both
    densities.  Nonnegative up to the leave-one-out bias, which is at
    most ``log(1 - 1/n) - sum_c w_c log(1 - 1/n_c)`` in magnitude and
    vanishes as class counts grow.
    """
    if data.singleton_classes:
        raise ValueError(
            "class(es) with a single member make the leave-one-out "
            f"within-class density undefined: {', '.join(data.singleton_classes)}"
        )
    n = len(data)
    log_k = (
        np.clip(data.vectors @ data.vectors.T, -1.0, 1.0) - 1.0
    ) / cfg.temperature
    np.fill_diagonal(log_k, -np.inf)

    m_all = log_k.max(axis=1, keepdims=True)
    log_phi_mu = m_all.squeeze(1) + np.log(
        np.sum(np.exp(log_k - m_all), axis=1) / (n - 1)
    )
    log_phi_plus = np.empty(n)
    for c in data.classes:
        rows = data.class_indices[c]
        block = log_k[np.ix_(rows, rows)]
        m = block.max(axis=1, keepdims=True)
        log_phi_plus[rows] = m.squeeze(1) + np.log(
            np.sum(np.exp(block - m), axis=1) / (rows.size - 1)
        )

    log_ratio_term = float(np.mean(log_phi_mu - log_phi_plus))
    w = data.fractions()
    entropy_term = float(-np.sum(w * np.log(w)))
    return GapDecomposition(log_ratio_term + entropy_term, log_ratio_term, entropy_term)


def kl_gap_bound(report: EDSReport, num_classes: int) -> float:
    """Upper bound ``log(1 + (num_classes - 1) / k)`` on the classifier gap.

    ``k`` is the report's worst-case concentration/separability ratio;
    the bound collapses to ``log(num_classes)`` at ``k = 1`` and to 0 as
    ``k`` grows.
    """
    k = report.k
    if k is None or (isinstance(k, float) and math.isnan(k)):
        raise ValueError("report has no defined k (single-class input?)")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    return math.log1p((num_classes - 1) / k)
