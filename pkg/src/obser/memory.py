"""Episodic memory and chained environment inference.

An episodic memory is an ordered list of previously visited
sub-environments: each entry pairs the observations collected there with
a region id (and, through the observation set, the positions they were
collected at — carried but never interpreted here).

Given a query, inference chains three lookups:

1. recall the memory entry whose observations score the highest kernel
   density against the query,
2. rank a target environment's regions by estimated divergence from that
   entry (most similar first),
3. rank the observations inside the best regions by kernel belief
   against the query.

:func:`segment_trajectory` is the other direction: split a stream of
waypoint observation sets into sub-environments wherever the divergence
from the current pivot waypoint exceeds a threshold.

Inference functions are read-only; an :class:`EpisodicMemory` tolerates
one writer or any number of concurrent readers, not both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .estimators import estimate_kl, retrieve_object
from .kernel import KernelConfig, ObservationSet, kernel_density, mean_direction, vectors_of

__all__ = [
    "MemoryEntry",
    "EpisodicMemory",
    "Environment",
    "Segment",
    "ChainedInferenceResult",
    "recall",
    "retrieve_subenv",
    "find_object",
    "chained_inference",
    "segment_trajectory",
]


@dataclass(frozen=True)
class MemoryEntry:
    """One remembered sub-environment: observations plus a region id."""

    observations: ObservationSet
    region: str

    def __post_init__(self):
        if len(self.observations) == 0:
            raise ValueError("a memory entry needs at least one observation")
        object.__setattr__(self, "region", str(self.region))


class EpisodicMemory:
    """Ordered collection of memory entries with unique region ids."""

    def __init__(self, entries=()):
        self.entries: list[MemoryEntry] = []
        for e in entries:
            self.add(e)

    def add(self, entry: MemoryEntry):
        if any(e.region == entry.region for e in self.entries):
            raise ValueError(f"region {entry.region!r} already stored")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def regions(self) -> list:
        return [e.region for e in self.entries]

    def __repr__(self) -> str:
        return f"EpisodicMemory(entries={len(self.entries)})"


class Environment:
    """Sub-environments by region, with optional reachability between them.

    ``reachability`` maps a region id to the set of candidate regions an
    agent located there could move to; when absent (or missing a key),
    every region is considered reachable.
    """

    def __init__(self, sub_environments, reachability=None):
        self._by_region = {}
        self._order = []
        for obs, region in sub_environments:
            region = str(region)
            if region in self._by_region:
                raise ValueError(f"duplicate region id {region!r}")
            if len(obs) == 0:
                raise ValueError(f"region {region!r} has no observations")
            self._by_region[region] = obs
            self._order.append(region)
        self.reachability = None
        if reachability is not None:
            self.reachability = {
                str(k): frozenset(str(v) for v in vs) for k, vs in reachability.items()
            }

    def regions(self) -> list:
        return list(self._order)

    def observations(self, region) -> ObservationSet:
        region = str(region)
        if region not in self._by_region:
            raise KeyError(f"unknown region {region!r}")
        return self._by_region[region]

    def candidates_from(self, region) -> list:
        """Regions reachable from ``region``; all regions by default."""
        if self.reachability is None:
            return self.regions()
        allowed = self.reachability.get(str(region))
        if allowed is None:
            return self.regions()
        return [r for r in self._order if r in allowed]

    def __len__(self) -> int:
        return len(self._order)

    def __repr__(self) -> str:
        return f"Environment(regions={len(self._order)})"


def recall(query, memory: EpisodicMemory, cfg: KernelConfig, mode: str = "mean"):
    """Pick the memory entry most likely to contain the queried objects.

    ``mode="mean"`` scores each entry by the kernel density of the mean
    query direction (the multi-query convention used throughout);
    ``mode="per-query"`` averages each query's density instead.  Returns
    ``(entry index, score)``; ties go to the earliest entry.
    """
    if len(memory) == 0:
        raise ValueError("episodic memory is empty")
    q_vecs = vectors_of(query)
    if q_vecs.shape[0] == 0:
        raise ValueError("query is empty")
    if mode == "mean":
        r = mean_direction(q_vecs)
        scores = [kernel_density(r, e.observations, cfg) for e in memory.entries]
    elif mode == "per-query":
        scores = [
            float(
                sum(kernel_density(q, e.observations, cfg) for q in q_vecs)
                / q_vecs.shape[0]
            )
            for e in memory.entries
        ]
    else:
        raise ValueError(f"unknown recall mode {mode!r}")
    best = max(range(len(scores)), key=lambda m: (scores[m], -m))
    return best, float(scores[best])


def retrieve_subenv(
    entry: MemoryEntry, env: Environment, cfg: KernelConfig, top_k: int
):
    """Rank candidate regions by estimated divergence from a memory entry.

    Candidates come from the environment's reachability of the entry's
    region (all regions when no map is supplied).  Returns the ``top_k``
    pairs ``(region id, divergence)`` ascending, ties by region id.
    """
    candidates = env.candidates_from(entry.region)
    if not candidates:
        raise ValueError(f"no candidate regions reachable from {entry.region!r}")
    if not 1 <= top_k <= len(candidates):
        raise ValueError(f"top_k must be in [1, {len(candidates)}], got {top_k}")
    scored = [
        (r, estimate_kl(entry.observations, env.observations(r), cfg).value)
        for r in candidates
    ]
    scored.sort(key=lambda rv: (rv[1], rv[0]))
    return scored[:top_k]


def find_object(query, region, env: Environment, cfg: KernelConfig, top_k: int):
    """Rank one region's observations by belief against the query."""
    return retrieve_object(query, env.observations(region), cfg, top_k)


@dataclass(frozen=True)
class ChainedInferenceResult:
    """All three stages of a chained lookup, each fully ranked."""

    memory_index: int
    memory_region: str
    recall_score: float
    regions: list  # (region id, estimated divergence), ascending
    objects: list  # (region id, observation id, belief), descending belief

    def to_json_dict(self) -> dict:
        return {
            "recall": {
                "index": self.memory_index,
                "region": self.memory_region,
                "score": self.recall_score,
            },
            "regions": [{"region": r, "kl": v} for r, v in self.regions],
            "objects": [
                {"region": r, "id": i, "belief": b} for r, i, b in self.objects
            ],
        }


def chained_inference(
    query,
    memory: EpisodicMemory,
    env: Environment,
    cfg: KernelConfig,
    rooms_k: int,
    objects_k: int,
) -> ChainedInferenceResult:
    """recall -> rank regions -> rank objects, pooled over the top regions.

    The query may hold several embeddings; their mean direction drives
    both the recall score and the final object beliefs.  Object rankings
    from the ``rooms_k`` best regions merge into one list ordered by
    belief, ties by region id then observation id.  With ``rooms_k``
    equal to the region count this degenerates to direct retrieval over
    the whole environment.
    """
    m_idx, m_score = recall(query, memory, cfg)
    entry = memory.entries[m_idx]
    rooms = retrieve_subenv(entry, env, cfg, rooms_k)
    q_dir = mean_direction(vectors_of(query))
    pooled = []
    for region, _ in rooms:
        obs = env.observations(region)
        for obj_id, belief in retrieve_object(q_dir, obs, cfg, len(obs)):
            pooled.append((region, obj_id, belief))
    if not 1 <= objects_k <= len(pooled):
        raise ValueError(f"objects_k must be in [1, {len(pooled)}], got {objects_k}")
    pooled.sort(key=lambda t: (-t[2], t[0], t[1]))
    return ChainedInferenceResult(
        memory_index=m_idx,
        memory_region=entry.region,
        recall_score=m_score,
        regions=rooms,
        objects=pooled[:objects_k],
    )


class Segment(NamedTuple):
    """Half-open waypoint range [start, end) opened by ``pivot``."""

    start: int
    end: int
    pivot: int


def segment_trajectory(waypoints, threshold: float, cfg: KernelConfig):
    """Split a waypoint stream into sub-environment segments.

    Walks the waypoints holding a pivot (initially the first waypoint);
    whenever the estimated divergence from the pivot strictly exceeds
    ``threshold``, the current segment closes and the offending waypoint
    becomes the new pivot.  A threshold of 0 therefore never splits
    identical circumstances.  Segments are contiguous, ordered, and cover
    every waypoint.
    """
    waypoints = list(waypoints)
    if not waypoints:
        raise ValueError("waypoint list is empty")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    for i, w in enumerate(waypoints):
        if len(w) == 0:
            raise ValueError(f"waypoint {i} has an empty observation set")
    segments = []
    pivot = 0
    for i in range(1, len(waypoints)):
        if estimate_kl(waypoints[pivot], waypoints[i], cfg).value > threshold:
            segments.append(Segment(pivot, i, pivot))
            pivot = i
    segments.append(Segment(pivot, len(waypoints), pivot))
    return segments
