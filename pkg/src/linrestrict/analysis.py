"""Line-based analyses: decision boundaries, partition density, gradient drift.

Decision segmentation finds the exact class along every point of a query
line: within each linear partition the output vector is affine in the
ratio, so argmax changes are located by the same argmax-following used
for pooling windows, applied to the output-space segment.  Density and
gradient-deviation summarize how nonlinear the network is along a line;
the perturbation helpers build the comparison directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, UndefinedError
from .exactline import LineQuery, PartitionedLine, canonicalize, exactline_network
from .network import AFFINE_LAYERS, Network, ReLU, batch_gradient, gradient, validate_network


@dataclass(frozen=True)
class ClassSegment:
    alpha_lo: float
    alpha_hi: float
    class_index: int


@dataclass(eq=False)
class DensityReport:
    partition_count: int
    length: float  # Euclidean distance between the query endpoints
    density: float  # partitions per unit input distance
    gradient_deviation: float | None = None


def decision_segments(net: Network, query: LineQuery) -> list[ClassSegment]:
    """Maximal constant-argmax intervals of the network output along the line.

    The returned segments tile [0, 1] with no gaps; adjacent segments
    carry different classes.  A ratio exactly on a boundary is classified
    with the segment to its right.
    """
    validate_network(net)
    if net.output_size < 2:
        raise DimensionError("decision segments need at least two outputs")
    part = canonicalize(exactline_network(net, query))
    flat = part.postimages.reshape(part.n_endpoints, -1)
    qwin = flat[:-1][:, None, :]
    rwin = flat[1:][:, None, :]
    _, cross = _kernels.maxpool_crossings(qwin, rwin, part.alphas)
    # partition endpoints stay in the tiling: a class flip can sit exactly
    # on one, where the in-partition argmax follower sees nothing
    bounds = np.sort(np.concatenate([part.alphas, cross]))
    # classify each interval at its midpoint; argmax ties take the lowest index
    mids = (bounds[:-1] + bounds[1:]) / 2.0
    classes = [
        int(np.argmax(_interp(part, m))) for m in mids
    ]
    segments: list[ClassSegment] = []
    for lo, hi, cls in zip(bounds[:-1], bounds[1:], classes):
        if segments and segments[-1].class_index == cls:
            segments[-1] = ClassSegment(segments[-1].alpha_lo, float(hi), cls)
        else:
            segments.append(ClassSegment(float(lo), float(hi), cls))
    return segments


def _interp(part: PartitionedLine, alpha: float) -> np.ndarray:
    i = int(np.searchsorted(part.alphas, alpha)) - 1
    i = min(max(i, 0), part.n_endpoints - 2)
    t = (alpha - part.alphas[i]) / (part.alphas[i + 1] - part.alphas[i])
    flat = part.postimages.reshape(part.n_endpoints, -1)
    return (1.0 - t) * flat[i] + t * flat[i + 1]


def partition_density(net: Network, query: LineQuery) -> DensityReport:
    """Canonical partition count per unit Euclidean length of the query."""
    validate_network(net)
    part = canonicalize(exactline_network(net, query))
    length = query.length()
    return DensityReport(
        partition_count=part.n_partitions,
        length=length,
        density=part.n_partitions / length,
    )


def gradient_deviation(net: Network, query: LineQuery, output_index: int) -> float:
    """Length-weighted mean relative L1 drift of per-partition gradients.

    Compares the gradient inside every partition against the gradient at
    the query start; weights are partition ratio-lengths (summing to 1).
    Requires a ReLU/affine network and a nonzero base gradient.
    """
    validate_network(net)
    for k, layer in enumerate(net.layers):
        if not isinstance(layer, AFFINE_LAYERS + (ReLU,)):
            raise UndefinedError(
                f"layer {k} ({type(layer).__name__}): gradient deviation requires "
                "a ReLU/affine network"
            )
    g0 = gradient(net, query.start, output_index).reshape(-1)
    norm0 = float(np.abs(g0).sum())
    if norm0 == 0.0:
        raise UndefinedError("gradient at the query start is zero")
    part = canonicalize(exactline_network(net, query))
    a = part.alphas
    q = query.start.reshape(-1)
    r = query.end.reshape(-1)
    mids = q + ((a[:-1] + a[1:]) / 2.0)[:, None] * (r - q)
    grads = batch_gradient(
        net, mids.reshape((-1,) + net.input_shape), output_index
    ).reshape(mids.shape[0], -1)
    weights = np.diff(a)
    drift = np.abs(grads - g0).sum(axis=1) / norm0
    return float((weights * drift).sum())


def fgsm_direction(
    net: Network, x: np.ndarray, epsilon: float, label: int
) -> np.ndarray:
    """One signed-gradient step of size epsilon decreasing the labeled score.

    Components with exactly zero gradient are left unchanged, so a zero
    gradient returns x itself.
    """
    x = np.asarray(x, dtype=np.float64)
    g = gradient(net, x, label)
    return x - epsilon * np.sign(g)


def random_direction(x: np.ndarray, epsilon: float, seed: int) -> np.ndarray:
    """x displaced by a seeded uniformly random +-epsilon sign vector.

    The max-norm of the displacement is exactly epsilon, matching the
    signed-gradient step's magnitude for fair density comparisons.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=x.shape) * 2 - 1
    return x + epsilon * signs
