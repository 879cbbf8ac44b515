"""Channel distance metrics and per-layer distance matrices.

Two routes to the same quantity: the empirical route averages squared
differences over actual activations, the probabilistic route evaluates the
closed form ``(mu_i - mu_j)^2 + var_i + var_j`` from per-channel statistics.
For batch-normalized channels the statistics are simply (beta, gamma^2).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .tensor import BnParams, Tensor4

# below this off-diagonal spread a matrix carries no usable similarity
# structure and normalization is refused
DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True)
class ChannelStats:
    """First two moments of one channel's activation distribution."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")


def bn_channel_stats(bn: BnParams) -> list[ChannelStats]:
    """Post-BN channel statistics: mean beta, variance gamma^2."""
    return [
        ChannelStats(float(b), float(g) ** 2)
        for g, b in zip(bn.gamma.astype(np.float64), bn.beta.astype(np.float64))
    ]


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric nonnegative C x C matrix with a zero diagonal.

    ``degenerate`` marks a matrix whose off-diagonal range was too small to
    normalize; such layers are left unpruned downstream.
    """

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError(f"distance matrix must be square, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("distance matrix contains non-finite entries")
        if (vals < 0).any():
            raise ValueError("distance matrix contains negative entries")
        if (np.diagonal(vals) != 0).any():
            raise ValueError("distance matrix diagonal must be zero")
        if not np.array_equal(vals, vals.T):
            raise ValueError("distance matrix must be symmetric")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def off_diagonal(self) -> np.ndarray:
        """Upper-triangle entries as a flat array (empty for size <= 1)."""
        iu = np.triu_indices(self.size, k=1)
        return self.values[iu]


def empirical_channel_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference between two channel slices of equal shape."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"channel shapes differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def probabilistic_channel_distance(si: ChannelStats, sj: ChannelStats) -> float:
    """Closed-form limit of the empirical distance for independent channels.

    Note the value for two distinct channels with identical statistics is
    2*sigma2, not 0: independent draws from the same distribution still
    differ sample by sample.
    """
    return (si.mu - sj.mu) ** 2 + si.sigma2 + sj.sigma2


def build_distance_matrix(layer_stats: list[ChannelStats]) -> DistanceMatrix:
    """Pairwise closed-form distances for one layer; diagonal fixed to 0."""
    if not layer_stats:
        raise ValueError("layer must have at least one channel")
    mu = np.array([s.mu for s in layer_stats], dtype=np.float64)
    s2 = np.array([s.sigma2 for s in layer_stats], dtype=np.float64)
    # grouping keeps each entry's summation order symmetric in (i, j), so
    # the matrix is exactly symmetric in floating point
    vals = (mu[:, None] - mu[None, :]) ** 2 + (s2[:, None] + s2[None, :])
    np.fill_diagonal(vals, 0.0)
    return DistanceMatrix(vals)


def empirical_distance_matrix(activations: Tensor4) -> DistanceMatrix:
    """Pairwise empirical distances over a tensor's channels."""
    c = activations.channels
    x = activations.data.reshape(c, -1).astype(np.float64)
    sq = np.einsum("ij,ij->i", x, x)
    gram = x @ x.T
    vals = (sq[:, None] + sq[None, :] - 2.0 * gram) / x.shape[1]
    vals = np.maximum((vals + vals.T) / 2.0, 0.0)  # exact symmetry, clip fp negatives
    np.fill_diagonal(vals, 0.0)
    return DistanceMatrix(vals)


def normalize(matrix: DistanceMatrix) -> DistanceMatrix:
    """Affinely map off-diagonal entries onto [0, 1].

    Min and max are taken over off-diagonal entries only; the diagonal stays
    0.  A matrix whose off-diagonal range is below ``DEGENERATE_RANGE`` is
    returned unchanged with the degenerate flag set (all pairs equally
    similar: nothing to rank).  Size <= 1 is an identity.
    """
    if matrix.size <= 1:
        return matrix
    off = matrix.off_diagonal()
    lo, hi = off.min(), off.max()
    if hi - lo < DEGENERATE_RANGE:
        return DistanceMatrix(matrix.values, degenerate=True)
    vals = (matrix.values - lo) / (hi - lo)
    np.fill_diagonal(vals, 0.0)
    vals = np.maximum(vals, 0.0)  # guard fp dust below the off-diagonal min
    return DistanceMatrix(vals)


def matrix_to_csv(matrix: DistanceMatrix) -> str:
    """Full square matrix as CSV, 9 significant digits, row-major."""
    buf = io.StringIO()
    for row in matrix.values:
        buf.write(",".join(format(v, ".9g") for v in row))
        buf.write("\n")
    return buf.getvalue()
