"""Retrieval, occurrence, and divergence estimators over observation sets.

Three relationships between a query and an environment's observations are
estimated here, all from the same kernel densities:

* object-object: rank stored observations by kernel belief against a
  query (:func:`retrieve_object`);
* object-environment: estimate what fraction of an environment shows the
  queried kind of object (:func:`estimate_occurrence`);
* environment-environment: estimate the KL divergence between two
  environments' observation distributions (:func:`estimate_kl`).

The checks at the bottom verify the error bounds that separability
(:mod:`obser.eds`) puts on the occurrence and divergence estimates.

Note on self-pairs: :func:`estimate_kl` computes each sample's density
against its own environment *including* the sample itself, matching the
plain empirical-distribution reading (and making the divergence of a set
against itself exactly zero).  A ``leave_one_out`` flag provides the
bias-reduced variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eds import LabeledSet, concat_labeled, measure_eds
from .kernel import (
    KernelConfig,
    ObservationSet,
    as_unit_vector,
    mean_direction,
    vectors_of,
)

__all__ = [
    "InfiniteDivergenceError",
    "OccurrenceEstimate",
    "KLEstimate",
    "KLBoundCheck",
    "OccurrenceBoundCheck",
    "retrieve_object",
    "estimate_occurrence",
    "estimate_occurrence_direct",
    "estimate_kl",
    "exact_kl",
    "check_kl_bound",
    "check_occurrence_bound",
    "jensen_shannon",
    "mean_classifier",
    "knn_classifier",
]


class InfiniteDivergenceError(ValueError):
    """A target occurrence of zero where the source is positive."""


def retrieve_object(query, candidates: ObservationSet, cfg: KernelConfig, top_k: int):
    """Rank candidate observations by kernel belief against the query.

    Returns the ``top_k`` pairs ``(observation id, belief)`` in
    descending belief, ties broken by ascending id so rankings are
    deterministic.  The ordering is the same for every temperature.
    """
    n = len(candidates)
    if n == 0:
        raise ValueError("candidate set is empty")
    if not 1 <= top_k <= n:
        raise ValueError(f"top_k must be in [1, {n}], got {top_k}")
    qv = as_unit_vector(query, name="query")
    cos = np.clip(candidates.vectors @ qv, -1.0, 1.0)
    beliefs = np.exp((cos - 1.0) / cfg.temperature)
    order = sorted(range(n), key=lambda i: (-beliefs[i], candidates.ids[i]))
    return [(candidates.ids[i], float(beliefs[i])) for i in order[:top_k]]


@dataclass(frozen=True)
class OccurrenceEstimate:
    """Estimated fraction of an environment occupied by the queried class."""

    value: float
    tolerance: float | None
    query_mean: np.ndarray
    mode: str  # "adaptive" | "direct"

    def to_json_dict(self, n: int | None = None, tau: float | None = None) -> dict:
        out = {"value": self.value, "tolerance": self.tolerance, "mode": self.mode}
        if n is not None:
            out["n"] = n
        if tau is not None:
            out["tau"] = tau
        return out


def estimate_occurrence(
    queries, env: ObservationSet, cfg: KernelConfig, multiplier: float = 0.25
) -> OccurrenceEstimate:
    """Adaptive occurrence estimate: threshold densities at a query-derived
    tolerance and count.

    The mean query direction ``r`` represents the class; every environment
    sample scores a belief against ``r``, and the estimate is the fraction
    scoring strictly above ``multiplier`` times the queries' own mean
    belief against ``r``.  Scaling the tolerance to the query cluster's
    tightness is what keeps the count calibrated across temperatures.
    """
    env_vecs = vectors_of(env)
    if env_vecs.shape[0] == 0:
        raise ValueError("environment is empty")
    q_vecs = vectors_of(queries)
    if q_vecs.shape[0] == 0:
        raise ValueError("query set is empty")
    r = mean_direction(q_vecs)
    env_beliefs = np.exp((np.clip(env_vecs @ r, -1.0, 1.0) - 1.0) / cfg.temperature)
    q_beliefs = np.exp((np.clip(q_vecs @ r, -1.0, 1.0) - 1.0) / cfg.temperature)
    tol = multiplier * float(np.mean(q_beliefs))
    value = float(np.mean(env_beliefs > tol))
    return OccurrenceEstimate(value=value, tolerance=tol, query_mean=r, mode="adaptive")


def estimate_occurrence_direct(
    queries, env: ObservationSet, cfg: KernelConfig
) -> OccurrenceEstimate:
    """Occurrence as the raw kernel density of the mean query direction.

    No thresholding: cross-class kernel mass leaks into the value, so
    small classes read high at large temperatures and concentrated ones
    read low at small temperatures.  Kept as the ablation baseline for
    the adaptive estimator.
    """
    env_vecs = vectors_of(env)
    if env_vecs.shape[0] == 0:
        raise ValueError("environment is empty")
    q_vecs = vectors_of(queries)
    if q_vecs.shape[0] == 0:
        raise ValueError("query set is empty")
    r = mean_direction(q_vecs)
    value = float(
        np.mean(np.exp((np.clip(env_vecs @ r, -1.0, 1.0) - 1.0) / cfg.temperature))
    )
    return OccurrenceEstimate(value=value, tolerance=None, query_mean=r, mode="direct")


def _row_log_densities(
    x_vecs: np.ndarray, s_vecs: np.ndarray, cfg: KernelConfig, exclude_diag: bool = False
) -> np.ndarray:
    """Per-row log kernel density of ``x_vecs`` against ``s_vecs``."""
    log_k = (np.clip(x_vecs @ s_vecs.T, -1.0, 1.0) - 1.0) / cfg.temperature
    count = s_vecs.shape[0]
    if exclude_diag:
        np.fill_diagonal(log_k, -np.inf)
        count -= 1
    m = log_k.max(axis=1, keepdims=True)
    return m.squeeze(1) + np.log(np.sum(np.exp(log_k - m), axis=1) / count)


@dataclass(frozen=True)
class KLEstimate:
    """Sample-based KL divergence estimate between two observation sets."""

    value: float
    per_sample_log_ratios: np.ndarray
    n_mu: int
    n_nu: int
    tau: float

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "n_mu": self.n_mu,
            "n_nu": self.n_nu,
            "tau": self.tau,
        }


def estimate_kl(
    mu, nu, cfg: KernelConfig, leave_one_out: bool = False
) -> KLEstimate:
    """Estimate KL(mu || nu) from samples via log kernel-density ratios.

    For every sample ``x`` of ``mu`` the log ratio
    ``log density(x; mu) - log density(x; nu)`` is taken, and the estimate
    is their mean.  Everything is accumulated in the log domain; the
    bounded kernel keeps every density strictly positive, so the value is
    always finite.

    With ``leave_one_out`` the sample itself is dropped from its own
    density (bias-reduced variant); the default keeps it, so identical
    sample lists give exactly zero.
    """
    mu_vecs = vectors_of(mu)
    nu_vecs = vectors_of(nu)
    if mu_vecs.shape[0] == 0 or nu_vecs.shape[0] == 0:
        raise ValueError("both sample sets must be nonempty")
    if leave_one_out and mu_vecs.shape[0] < 2:
        raise ValueError("leave-one-out needs at least 2 samples in mu")
    # identical sample lists must give exactly zero; computing both sides
    # would not (BLAS takes a different code path for A @ A.T than for
    # A @ B.T, so even bit-equal copies drift by an ulp)
    same = mu_vecs.shape == nu_vecs.shape and np.array_equal(mu_vecs, nu_vecs)
    log_mu = _row_log_densities(mu_vecs, mu_vecs, cfg, exclude_diag=leave_one_out)
    if same and not leave_one_out:
        log_nu = log_mu
    else:
        log_nu = _row_log_densities(mu_vecs, nu_vecs, cfg)
    ratios = log_mu - log_nu
    return KLEstimate(
        value=float(np.mean(ratios)),
        per_sample_log_ratios=ratios,
        n_mu=mu_vecs.shape[0],
        n_nu=nu_vecs.shape[0],
        tau=cfg.temperature,
    )


def exact_kl(omega_mu, omega_nu) -> float:
    """Closed-form KL divergence between two occurrence vectors.

    Natural log.  Zero iff the vectors are equal; raises
    :class:`InfiniteDivergenceError` when the target gives zero weight to
    a class the source occupies.
    """
    wm = np.asarray(omega_mu, dtype=float)
    wn = np.asarray(omega_nu, dtype=float)
    if wm.shape != wn.shape or wm.ndim != 1:
        raise ValueError("occurrence vectors must be 1-D and the same length")
    if np.any(wm < 0) or np.any(wn < 0):
        raise ValueError("occurrence vectors must be nonnegative")
    for name, w in (("omega_mu", wm), ("omega_nu", wn)):
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{name} sums to {w.sum()!r}, expected 1 within 1e-9")
    support = wm > 0
    if np.any(support & (wn == 0)):
        raise InfiniteDivergenceError(
            "omega_nu is zero on a class where omega_mu is positive"
        )
    return float(np.sum(wm[support] * np.log(wm[support] / wn[support])))


@dataclass(frozen=True)
class KLBoundCheck:
    """Whether the KL estimate sits within its separability-implied band.

    ``center`` is the closed-form value the estimate approaches given the
    pooled set's worst-case cross-class density; ``slack`` is
    ``-log(delta_worst)``, the half-width allowed by the worst within-class
    density.
    """

    estimate: float
    center: float
    slack: float
    holds: bool
    delta_worst: float
    epsilon_worst: float

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "center": self.center,
            "slack": self.slack,
            "holds": self.holds,
        }


def check_kl_bound(
    mu: LabeledSet, nu: LabeledSet, cfg: KernelConfig, trim_fraction: float = 0.0
) -> KLBoundCheck:
    """Verify the divergence estimate against its separability band.

    Both sets must be labeled over the same class universe.  Worst-case
    (delta, epsilon) are measured on the pooled set; the default
    ``trim_fraction`` of 0 keeps them pointwise bounds over every sample,
    which is what the band presumes.
    """
    if set(mu.classes) != set(nu.classes):
        raise ValueError(
            f"class universe mismatch: {sorted(mu.classes)} vs {sorted(nu.classes)}"
        )
    pooled = concat_labeled(mu, nu)
    report = measure_eds(pooled, cfg, trim_fraction=trim_fraction)
    eps_w = report.epsilon_worst if report.epsilon_worst is not None else 0.0
    classes = list(mu.classes)
    wm = mu.fractions(classes)
    wn = nu.fractions(classes)
    center = float(
        np.sum(wm * np.log((wm + (1 - wm) * eps_w) / (wn + (1 - wn) * eps_w)))
    )
    slack = -math.log(report.delta_worst)
    estimate = estimate_kl(mu.vectors, nu.vectors, cfg).value
    holds = abs(estimate - center) <= slack + 1e-6
    return KLBoundCheck(
        estimate=estimate,
        center=center,
        slack=slack,
        holds=holds,
        delta_worst=report.delta_worst,
        epsilon_worst=eps_w,
    )


@dataclass(frozen=True)
class OccurrenceBoundCheck:
    """Whether per-sample densities respect the occurrence bound.

    For every member ``x`` of the query class, ``ratio(x)`` divides the
    sample's density against the whole environment by
    ``w + epsilon_worst * (1 - w)``; separability requires each ratio to
    lie in [delta_worst, 1].
    """

    ratios: np.ndarray
    holds: bool
    delta_worst: float
    epsilon_worst: float
    omega: float

    def to_json_dict(self) -> dict:
        return {
            "ratio_min": float(np.min(self.ratios)),
            "ratio_max": float(np.max(self.ratios)),
            "holds": self.holds,
        }


def check_occurrence_bound(
    query_class, env: LabeledSet, cfg: KernelConfig, trim_fraction: float = 0.0
) -> OccurrenceBoundCheck:
    """Verify the density-as-occurrence reading for one class.

    Densities here include the self-pair, as the occurrence measure does.
    For a single-class environment the denominator degenerates to 1.
    """
    c = str(query_class)
    if c not in env.class_indices:
        raise KeyError(f"class {c!r} absent from the environment")
    report = measure_eds(env, cfg, trim_fraction=trim_fraction)
    eps_w = report.epsilon_worst if report.epsilon_worst is not None else 0.0
    rows = env.class_indices[c]
    omega = rows.size / len(env)
    log_phi = _row_log_densities(env.vectors[rows], env.vectors, cfg)
    ratios = np.exp(log_phi) / (omega + eps_w * (1.0 - omega))
    holds = bool(
        report.delta_worst - 1e-6 <= float(np.min(ratios))
        and float(np.max(ratios)) <= 1.0 + 1e-6
    )
    return OccurrenceBoundCheck(
        ratios=ratios,
        holds=holds,
        delta_worst=report.delta_worst,
        epsilon_worst=eps_w,
        omega=omega,
    )


def jensen_shannon(mu, nu, cfg: KernelConfig) -> float:
    """Jensen-Shannon divergence between two observation sets.

    Each side's KL estimate is taken against the pooled multiset of both
    sample lists.  Pooled densities are combined per block with
    ``logaddexp``, which makes the result exactly symmetric in its
    arguments.
    """
    mu_vecs = vectors_of(mu)
    nu_vecs = vectors_of(nu)
    if mu_vecs.shape[0] == 0 or nu_vecs.shape[0] == 0:
        raise ValueError("both sample sets must be nonempty")
    n_mu, n_nu = mu_vecs.shape[0], nu_vecs.shape[0]
    log_n = math.log(n_mu + n_nu)

    def half(x_vecs, own_vecs, other_vecs, n_own, n_other):
        log_own = _row_log_densities(x_vecs, own_vecs, cfg)
        log_other = _row_log_densities(x_vecs, other_vecs, cfg)
        log_pooled = (
            np.logaddexp(log_own + math.log(n_own), log_other + math.log(n_other))
            - log_n
        )
        return float(np.mean(log_own - log_pooled))

    kl_mu = half(mu_vecs, mu_vecs, nu_vecs, n_mu, n_nu)
    kl_nu = half(nu_vecs, nu_vecs, mu_vecs, n_nu, n_mu)
    return 0.5 * (kl_mu + kl_nu)


def mean_classifier(train: LabeledSet, test) -> list:
    """Predict by cosine to each class's mean direction.

    Ties resolve to the first class in sorted class-id order.
    """
    test_vecs = vectors_of(test)
    means = np.vstack([mean_direction(train.vectors[train.class_indices[c]])
                       for c in train.classes])
    scores = test_vecs @ means.T
    return [train.classes[int(i)] for i in np.argmax(scores, axis=1)]


def knn_classifier(train: LabeledSet, test, k: int, cfg: KernelConfig) -> list:
    """Majority vote among the k nearest training samples by cosine.

    Vote ties break by the tied classes' summed kernel belief among the
    k neighbors, then by ascending class id.  Neighbor selection itself
    ties by training index, so predictions are deterministic.
    """
    n = len(train)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    test_vecs = vectors_of(test)
    cos = np.clip(test_vecs @ train.vectors.T, -1.0, 1.0)
    predictions = []
    for row in cos:
        order = np.lexsort((np.arange(n), -row))[:k]
        votes, weights = {}, {}
        for i in order:
            c = train.labels[i]
            votes[c] = votes.get(c, 0) + 1
            weights[c] = weights.get(c, 0.0) + math.exp(
                (row[i] - 1.0) / cfg.temperature
            )
        best = min(votes, key=lambda c: (-votes[c], -weights[c], c))
        predictions.append(best)
    return predictions
