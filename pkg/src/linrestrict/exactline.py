"""Exact linear restrictions of networks along input line segments.

The central object is the partitioned line: endpoints at ratios
``0 = a_1 < ... < a_n = 1`` along a query segment such that the network
(restricted to the layers applied so far) is affine between adjacent
endpoints.  Affine layers never split a partition; ReLU splits where a
component of the image crosses zero; max pooling splits where a window's
argmax changes.  Ratios found inside a partition are mapped back to the
query line linearly, which is exact because affine maps preserve ratios
along lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import QueryError, RangeError, ShapeError
from .network import (
    MaxPool,
    Network,
    ReLU,
    apply_layer,
    layer_shapes,
    pool_window_indices,
    validate_network,
)

#: origin_layers value for the two input endpoints
INPUT_ORIGIN = -1

#: tolerance used for collinear-endpoint removal in canonicalize
CANONICAL_TOL = 1e-9

#: segments per block when chunking kernel calls (bounds transient memory)
_BLOCK_ELEMS = 16 * 1024 * 1024


@dataclass(frozen=True, eq=False)
class LineQuery:
    """Ordered pair of distinct input points defining the restriction domain."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.start, dtype=np.float64)
        r = np.asarray(self.end, dtype=np.float64)
        if q.shape != r.shape:
            raise QueryError(f"endpoint shapes differ: {q.shape} vs {r.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise QueryError("query endpoints must be finite")
        if np.array_equal(q, r):
            raise QueryError("query endpoints are identical")
        object.__setattr__(self, "start", q)
        object.__setattr__(self, "end", r)

    def point_at(self, alpha: float) -> np.ndarray:
        return self.start + alpha * (self.end - self.start)

    def length(self) -> float:
        return float(np.linalg.norm((self.end - self.start).ravel()))


@dataclass(eq=False)
class PartitionedLine:
    """Sorted endpoints of a linear partitioning of a restricted network.

    ``alphas[i]`` is the ratio of endpoint i along start->end,
    ``postimages[i]`` its image under the layers applied so far, and
    ``origin_layers[i]`` the index of the layer that introduced it
    (INPUT_ORIGIN for the two query endpoints).  Preimages are derived
    on demand from the ratios rather than stored.
    """

    query: LineQuery
    alphas: np.ndarray  # (n,), strictly increasing, alphas[0]=0, alphas[-1]=1
    postimages: np.ndarray  # (n, *output_shape)
    origin_layers: np.ndarray  # (n,), int

    @property
    def n_endpoints(self) -> int:
        return self.alphas.shape[0]

    @property
    def n_partitions(self) -> int:
        return self.alphas.shape[0] - 1

    @property
    def preimages(self) -> np.ndarray:
        q = self.query.start.reshape(-1)
        r = self.query.end.reshape(-1)
        pts = q + self.alphas[:, None] * (r - q)
        return pts.reshape((-1,) + self.query.start.shape)

    def preimage_at(self, alpha: float) -> np.ndarray:
        return self.query.point_at(alpha)


def check_partitioned_line(p: PartitionedLine) -> None:
    """Raise if structural invariants are violated (used by tests)."""
    a = p.alphas
    if a.shape[0] < 2 or p.postimages.shape[0] != a.shape[0]:
        raise AssertionError("endpoint arrays inconsistent or too short")
    if a[0] != 0.0 or a[-1] != 1.0:
        raise AssertionError("partition must span [0, 1]")
    if np.any(np.diff(a) <= _kernels.MERGE_TOL):
        raise AssertionError("ratios must increase by more than the merge tolerance")
    if not np.all(np.isfinite(p.postimages)):
        raise AssertionError("postimages must be finite")


# ---------------------------------------------------------------------------
# Single-layer restrictions


def exactline_affine(net: Network, query: LineQuery) -> PartitionedLine:
    """Restriction of an affine-only network: just the two query endpoints."""
    validate_network(net)
    if any(isinstance(l, (ReLU, MaxPool)) for l in net.layers):
        raise ShapeError("exactline_affine requires an affine-only network")
    return exactline_network(net, query)


def exactline_relu(q_post: np.ndarray, r_post: np.ndarray):
    """Zero-crossing ratios of one image segment under componentwise max(.,0).

    Returns ``(ratios, images)`` where ratios lie strictly inside (0, 1)
    and images holds the rectified values at the first endpoint, each
    crossing, and the second endpoint, in order.
    """
    q = np.asarray(q_post, dtype=np.float64).reshape(-1)
    r = np.asarray(r_post, dtype=np.float64).reshape(-1)
    pair = np.stack([q, r])
    _, ratios = _kernels.relu_crossings(pair, np.array([0.0, 1.0]))
    pre = q + ratios[:, None] * (r - q)
    images = np.maximum(np.concatenate([q[None], pre, r[None]]), 0.0)
    return ratios, images


def _window_pair(q_post, r_post, pool: MaxPool, in_shape):
    win = pool_window_indices(in_shape, pool.window, pool.stride)
    q = np.asarray(q_post, dtype=np.float64).reshape(-1)
    r = np.asarray(r_post, dtype=np.float64).reshape(-1)
    return q[None][:, win], r[None][:, win]


def exactline_maxpool(q_post, r_post, pool: MaxPool, in_shape) -> np.ndarray:
    """Argmax-change ratios of one image segment under max pooling.

    Follows each window's maximum from the first endpoint, solving for
    the next ratio at which another component overtakes it; the union
    over windows is sorted and deduplicated.
    """
    qwin, rwin = _window_pair(q_post, r_post, pool, in_shape)
    _, ratios = _kernels.maxpool_crossings(qwin, rwin, np.array([0.0, 1.0]))
    return ratios


def exactline_relu_maxpool(q_post, r_post, pool: MaxPool, in_shape) -> np.ndarray:
    """Crossing ratios for max pooling fused with an adjacent ReLU.

    Argmax changes are suppressed while the window maximum stays
    non-positive on both sides; ratios where the maximum crosses zero
    are emitted instead.
    """
    qwin, rwin = _window_pair(q_post, r_post, pool, in_shape)
    _, ratios = _kernels.relu_maxpool_crossings(qwin, rwin, np.array([0.0, 1.0]))
    return ratios


def exactline_pwl_hyperplanes(normals, offsets, q_post, r_post) -> np.ndarray:
    """Ratios where the segment strictly crosses any of the hyperplanes.

    Hyperplanes are given as normal.x = offset; only planes with the two
    endpoint residuals of strictly opposite sign (both beyond 1e-12 in
    magnitude) contribute.  Works for any piecewise-linear layer whose
    pieces are convex polytopes with these faces.
    """
    normals = np.asarray(normals, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    q = np.asarray(q_post, dtype=np.float64).reshape(-1)
    r = np.asarray(r_post, dtype=np.float64).reshape(-1)
    sq = normals @ q - offsets
    sr = normals @ r - offsets
    mask = (np.abs(sq) > 1e-12) & (np.abs(sr) > 1e-12) & (sq * sr < 0.0)
    ratios = np.sort(sq[mask] / (sq[mask] - sr[mask]))
    if ratios.size > 1:
        keep = np.concatenate([[True], np.diff(ratios) > _kernels.MERGE_TOL])
        ratios = ratios[keep]
    return ratios


# ---------------------------------------------------------------------------
# Whole-network propagation


class _SplitNeeded(Exception):
    pass


def _insert_crossings(alphas, flat_pre, origin, seg, new_alphas, layer_idx):
    """Interleave crossing points (sorted by segment then ratio) into the line.

    New preimages under the current layer stack are linear interpolations
    of the bracketing endpoints' values.
    """
    n = alphas.shape[0]
    m = seg.shape[0]
    t = (new_alphas - alphas[seg]) / (alphas[seg + 1] - alphas[seg])
    new_pre = flat_pre[seg] + t[:, None] * (flat_pre[seg + 1] - flat_pre[seg])
    counts = np.bincount(seg, minlength=n - 1)
    prefix = np.concatenate([[0], np.cumsum(counts)])
    old_pos = np.arange(n) + prefix
    new_pos = seg + 1 + np.arange(m)
    out_alphas = np.empty(n + m)
    out_pre = np.empty((n + m, flat_pre.shape[1]))
    out_origin = np.empty(n + m, dtype=np.int64)
    out_alphas[old_pos] = alphas
    out_alphas[new_pos] = new_alphas
    out_pre[old_pos] = flat_pre
    out_pre[new_pos] = new_pre
    out_origin[old_pos] = origin
    out_origin[new_pos] = layer_idx
    return out_alphas, out_pre, out_origin


def _blocked_relu_crossings(flat, alphas):
    n, d = flat.shape
    block = max(1, _BLOCK_ELEMS // max(d, 1))
    if n - 1 <= block:
        return _kernels.relu_crossings(flat, alphas)
    segs, als = [], []
    for s in range(0, n - 1, block):
        e = min(n - 1, s + block)
        bs, ba = _kernels.relu_crossings(flat[s : e + 1], alphas[s : e + 1])
        segs.append(bs + s)
        als.append(ba)
    return np.concatenate(segs), np.concatenate(als)


def _blocked_window_crossings(flat, alphas, win, fused):
    n = flat.shape[0]
    per_seg = win.size
    block = max(1, _BLOCK_ELEMS // max(per_seg, 1))
    fn = _kernels.relu_maxpool_crossings if fused else _kernels.maxpool_crossings
    segs, als = [], []
    for s in range(0, n - 1, block):
        e = min(n - 1, s + block)
        qwin = flat[s:e][:, win]
        rwin = flat[s + 1 : e + 1][:, win]
        bs, ba = fn(qwin, rwin, alphas[s : e + 1])
        segs.append(bs + s)
        als.append(ba)
    return np.concatenate(segs), np.concatenate(als)


def exactline_network(
    net: Network,
    query: LineQuery,
    *,
    fuse_relu_maxpool: bool = True,
    max_endpoints: int | None = None,
    _depth: int = 0,
) -> PartitionedLine:
    """Linear partitioning of the whole network over the query segment.

    Layers are applied in order; each nonlinearity splits the existing
    partitions at its crossing ratios, composed back to ratios along the
    original segment.  A partition whose endpoint images coincide is kept
    as-is and never subdivided.  With ``max_endpoints`` set, queries whose
    endpoint list outgrows the budget are processed as independent
    sub-segments (split at exact ratios) and concatenated.
    """
    validate_network(net)
    if query.start.shape != net.input_shape:
        raise ShapeError(
            f"query shape {query.start.shape} != network input {net.input_shape}"
        )
    if max_endpoints is not None and max_endpoints < 2:
        raise ValueError("max_endpoints must be at least 2")
    try:
        return _propagate(net, query, fuse_relu_maxpool, max_endpoints, _depth)
    except _SplitNeeded:
        mid = query.point_at(0.5)
        left = exactline_network(
            net,
            LineQuery(query.start, mid),
            fuse_relu_maxpool=fuse_relu_maxpool,
            max_endpoints=max_endpoints,
            _depth=_depth + 1,
        )
        right = exactline_network(
            net,
            LineQuery(mid, query.end),
            fuse_relu_maxpool=fuse_relu_maxpool,
            max_endpoints=max_endpoints,
            _depth=_depth + 1,
        )
        alphas = np.concatenate([left.alphas * 0.5, 0.5 + right.alphas[1:] * 0.5])
        alphas[0], alphas[-1] = 0.0, 1.0
        post = np.concatenate([left.postimages, right.postimages[1:]])
        origin = np.concatenate([left.origin_layers, right.origin_layers[1:]])
        return PartitionedLine(query, alphas, post, origin)


def _propagate(net, query, fuse, max_endpoints, depth):
    shapes = layer_shapes(net)
    alphas = np.array([0.0, 1.0])
    post = np.stack([query.start, query.end]).astype(np.float64)
    origin = np.array([INPUT_ORIGIN, INPUT_ORIGIN], dtype=np.int64)

    k = 0
    n_layers = len(net.layers)
    while k < n_layers:
        layer = net.layers[k]
        in_shape = shapes[k]
        n = alphas.shape[0]
        flat = post.reshape(n, -1)

        if isinstance(layer, ReLU) and not (
            fuse and k + 1 < n_layers and isinstance(net.layers[k + 1], MaxPool)
        ):
            seg, new_alphas = _blocked_relu_crossings(flat, alphas)
            alphas, flat, origin = _insert_crossings(
                alphas, flat, origin, seg, new_alphas, k
            )
            np.maximum(flat, 0.0, out=flat)  # merged buffer is engine-owned
            post = flat.reshape((-1,) + in_shape)
            k += 1
        elif isinstance(layer, MaxPool) and not (
            fuse and k + 1 < n_layers and isinstance(net.layers[k + 1], ReLU)
        ):
            win = pool_window_indices(in_shape, layer.window, layer.stride)
            seg, new_alphas = _blocked_window_crossings(flat, alphas, win, fused=False)
            alphas, flat, origin = _insert_crossings(
                alphas, flat, origin, seg, new_alphas, k
            )
            post = apply_layer(layer, flat.reshape((-1,) + in_shape), in_shape)
            k += 1
        elif isinstance(layer, (ReLU, MaxPool)):
            # fused pair: max(.,0) and window-max commute, so one pass
            # finds the crossings of the composite on the raw values
            if isinstance(layer, ReLU):
                pool = net.layers[k + 1]
                pool_shape = shapes[k + 1]
            else:
                pool = layer
                pool_shape = in_shape
            win = pool_window_indices(pool_shape, pool.window, pool.stride)
            seg, new_alphas = _blocked_window_crossings(flat, alphas, win, fused=True)
            alphas, flat, origin = _insert_crossings(
                alphas, flat, origin, seg, new_alphas, k
            )
            pooled = apply_layer(pool, flat.reshape((-1,) + pool_shape), pool_shape)
            post = np.maximum(pooled, 0.0)
            k += 2
        else:
            post = apply_layer(layer, post, in_shape)
            k += 1

        if (
            max_endpoints is not None
            and alphas.shape[0] > max_endpoints
            and k < n_layers
            and depth < 32
        ):
            raise _SplitNeeded()

    return PartitionedLine(query, alphas, post, origin)


# ---------------------------------------------------------------------------
# Canonical form and interpolation


def _collinear_mask(alphas, flat):
    """Boolean mask over interior endpoints lying on the chord of their
    neighbours, within CANONICAL_TOL relative to component magnitude."""
    t = (alphas[1:-1] - alphas[:-2]) / (alphas[2:] - alphas[:-2])
    lerp = flat[:-2] + t[:, None] * (flat[2:] - flat[:-2])
    dev = np.abs(flat[1:-1] - lerp).max(axis=1)
    scale = np.maximum(
        np.abs(flat[:-2]), np.maximum(np.abs(flat[1:-1]), np.abs(flat[2:]))
    ).max(axis=1)
    return dev <= CANONICAL_TOL * (1.0 + scale)


def canonicalize(p: PartitionedLine) -> PartitionedLine:
    """Minimal equivalent partitioning: drop endpoints collinear with
    their neighbours.  Idempotent."""
    alphas = p.alphas
    flat = p.postimages.reshape(p.n_endpoints, -1)
    origin = p.origin_layers
    while alphas.shape[0] > 2:
        if not np.any(_collinear_mask(alphas, flat)):
            break
        keep = [0]
        for i in range(1, alphas.shape[0]):
            keep.append(i)
            while len(keep) >= 3:
                a, b, c = keep[-3], keep[-2], keep[-1]
                t = (alphas[b] - alphas[a]) / (alphas[c] - alphas[a])
                lerp = flat[a] + t * (flat[c] - flat[a])
                dev = np.abs(flat[b] - lerp).max()
                scale = max(
                    np.abs(flat[a]).max(), np.abs(flat[b]).max(), np.abs(flat[c]).max()
                )
                if dev <= CANONICAL_TOL * (1.0 + scale):
                    del keep[-2]
                else:
                    break
        idx = np.asarray(keep)
        if idx.shape[0] == alphas.shape[0]:
            break
        alphas, flat, origin = alphas[idx], flat[idx], origin[idx]
    post = flat.reshape((-1,) + p.postimages.shape[1:])
    return PartitionedLine(p.query, alphas, post, origin)


def interpolate_output(p: PartitionedLine, alpha: float) -> np.ndarray:
    """Network output at ratio `alpha`, reconstructed from the partition.

    Exact endpoint ratios return the stored postimage; interior ratios
    interpolate linearly within the bracketing partition.
    """
    if not 0.0 <= alpha <= 1.0:
        raise RangeError(f"ratio {alpha} outside [0, 1]")
    i = int(np.searchsorted(p.alphas, alpha))
    if i < p.alphas.shape[0] and p.alphas[i] == alpha:
        return p.postimages[i].copy()
    i -= 1
    t = (alpha - p.alphas[i]) / (p.alphas[i + 1] - p.alphas[i])
    return (1.0 - t) * p.postimages[i] + t * p.postimages[i + 1]
