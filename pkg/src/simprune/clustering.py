"""Agglomerative clustering of channels under a single distance threshold.

Merging continues while the smallest inter-cluster linkage value is strictly
below the threshold, so a threshold of 0 leaves every channel alone.  Ties
are broken lexicographically on (smallest member of first cluster, smallest
member of second cluster), which makes results fully deterministic.

``brute_force_cluster`` is an independent naive re-implementation kept as a
test oracle for small inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .distance import DistanceMatrix

BRUTE_FORCE_LIMIT = 8


class Linkage(enum.Enum):
    COMPLETE = "complete"
    SINGLE = "single"
    AVERAGE = "average"


@dataclass(frozen=True)
class ClusterAssignment:
    """Flat cluster labels, canonicalized by first occurrence.

    Channel 0 always has label 0 and new labels appear in channel order, so
    two assignments describe the same partition iff their labels are equal.
    """

    labels: np.ndarray
    num_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        seen = set(labels.tolist())
        if seen != set(range(self.num_clusters)):
            raise ValueError(
                f"labels must cover 0..{self.num_clusters - 1} exactly, got {sorted(seen)}"
            )

    @classmethod
    def from_clusters(cls, clusters: list[list[int]], num_channels: int) -> "ClusterAssignment":
        labels = np.full(num_channels, -1, dtype=np.int64)
        ordered = sorted(clusters, key=min)
        for cid, members in enumerate(ordered):
            for m in members:
                if labels[m] != -1:
                    raise ValueError(f"channel {m} assigned twice")
                labels[m] = cid
        if (labels == -1).any():
            raise ValueError("some channels are unassigned")
        return cls(labels, len(ordered))

    @property
    def num_channels(self) -> int:
        return self.labels.shape[0]

    def clusters(self) -> list[list[int]]:
        """Member lists, each sorted, ordered by smallest member."""
        out: list[list[int]] = [[] for _ in range(self.num_clusters)]
        for ch, lab in enumerate(self.labels.tolist()):
            out[lab].append(ch)
        return out


def hierarchical_cluster(
    matrix: DistanceMatrix,
    threshold: float,
    linkage: Linkage = Linkage.COMPLETE,
) -> ClusterAssignment:
    """Agglomerative clustering by repeated closest-pair merging.

    Parameters
    ----------
    matrix : DistanceMatrix
        Pairwise channel distances, normally normalized to [0, 1] first.
    threshold : float
        Merging stops once the smallest linkage value is >= threshold.
    linkage : Linkage
        complete = max pairwise distance, single = min, average = mean.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    c = matrix.size
    if c == 1:
        return ClusterAssignment(np.zeros(1, dtype=np.int64), 1)

    # work[i, j] holds the linkage value between the clusters rooted at
    # slots i and j; a slot index is always its cluster's smallest member,
    # so row-major argmin realizes the lexicographic tie-break.
    work = matrix.values.astype(np.float64).copy()
    np.fill_diagonal(work, np.inf)
    upper = np.triu(np.ones((c, c), dtype=bool), k=1)
    members: dict[int, list[int]] = {i: [i] for i in range(c)}
    sizes = np.ones(c, dtype=np.float64)
    alive = np.ones(c, dtype=bool)

    while len(members) > 1:
        masked = np.where(upper, work, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, c)
        if not masked[i, j] < threshold:
            break
        # fold cluster j into cluster i (i < j keeps the smallest-member root)
        others = alive.copy()
        others[i] = others[j] = False
        if linkage is Linkage.COMPLETE:
            merged = np.maximum(work[i], work[j])
        elif linkage is Linkage.SINGLE:
            merged = np.minimum(work[i], work[j])
        else:
            merged = (sizes[i] * work[i] + sizes[j] * work[j]) / (sizes[i] + sizes[j])
        work[i, others] = merged[others]
        work[others, i] = merged[others]
        work[j, :] = np.inf
        work[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members[j])
        del members[j]
        alive[j] = False

    return ClusterAssignment.from_clusters(list(members.values()), c)


def _pair_linkage(base: np.ndarray, a: list[int], b: list[int], linkage: Linkage) -> float:
    cross = [base[x][y] for x in a for y in b]
    if linkage is Linkage.COMPLETE:
        return max(cross)
    if linkage is Linkage.SINGLE:
        return min(cross)
    return sum(cross) / len(cross)


def brute_force_cluster(
    matrix: DistanceMatrix,
    threshold: float,
    linkage: Linkage = Linkage.COMPLETE,
) -> ClusterAssignment:
    """Naive merge scan over all cluster pairs; oracle for small matrices."""
    c = matrix.size
    if c > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} channels, got {c}")
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    base = matrix.values.tolist()
    clusters = [[i] for i in range(c)]  # kept ordered by smallest member
    while len(clusters) > 1:
        best_pair = None
        best_val = np.inf
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                val = _pair_linkage(base, clusters[a], clusters[b], linkage)
                if val < best_val:
                    best_val = val
                    best_pair = (a, b)
        if not best_val < threshold:
            break
        a, b = best_pair
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return ClusterAssignment.from_clusters(clusters, c)
