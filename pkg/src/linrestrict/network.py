"""Piecewise-linear feedforward networks and their evaluation.

Networks are immutable sequences of layers over a declared input shape.
Supported layers: dense, 2-D convolution (channels-first, zero padding),
per-channel normalization, flatten, ReLU, and 2-D max pooling.  All
arithmetic is 64-bit floating point.

Evaluation is batched: every helper operates on arrays of shape
``(n, *shape)`` so callers can push many points through the network with
a single sequence of matrix operations.  ``forward`` and ``gradient``
are pure functions; networks can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ShapeError


def _as_f64(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeError("tensor contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (out, in), row-major
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_f64(self.weights))
        object.__setattr__(self, "bias", _as_f64(self.bias))
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("dense expects a 2-D weight matrix and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"dense weight rows ({self.weights.shape[0]}) != bias length "
                f"({self.bias.shape[0]})"
            )


@dataclass(frozen=True, eq=False)
class Conv2D:
    kernel: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_f64(self.kernel))
        object.__setattr__(self, "bias", _as_f64(self.bias))
        object.__setattr__(self, "stride", (int(self.stride[0]), int(self.stride[1])))
        object.__setattr__(self, "padding", (int(self.padding[0]), int(self.padding[1])))
        if self.kernel.ndim != 4:
            raise ShapeError("conv2d kernel must have 4 axes (out, in, kh, kw)")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError("conv2d bias length must equal output channels")
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeError("conv2d stride must be positive and padding non-negative")


@dataclass(frozen=True, eq=False)
class Normalize:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_f64(self.mean))
        object.__setattr__(self, "std", _as_f64(self.std))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("normalize mean/std must be 1-D and equally long")
        if np.any(self.std <= 0):
            raise ShapeError("normalize std must be strictly positive")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True, eq=False)
class MaxPool:
    window: tuple[int, int]
    stride: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))
        object.__setattr__(self, "stride", (int(self.stride[0]), int(self.stride[1])))
        if min(self.window) < 1 or min(self.stride) < 1:
            raise ShapeError("maxpool window and stride must be strictly positive")


Layer = Union[Dense, Conv2D, Normalize, Flatten, ReLU, MaxPool]

AFFINE_LAYERS = (Dense, Conv2D, Normalize, Flatten)


@dataclass(frozen=True, eq=False)
class Network:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_shape(self) -> tuple[int, ...]:
        return layer_shapes(self)[-1]

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))


def layer_output_shape(layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by `layer` on an input of shape `in_shape`."""
    if isinstance(layer, Dense):
        if len(in_shape) != 1 or in_shape[0] != layer.weights.shape[1]:
            raise ShapeError(
                f"dense expects 1-D input of size {layer.weights.shape[1]}, "
                f"got {in_shape}"
            )
        return (layer.weights.shape[0],)
    if isinstance(layer, Conv2D):
        out_ch, in_ch, kh, kw = layer.kernel.shape
        if len(in_shape) != 3 or in_shape[0] != in_ch:
            raise ShapeError(
                f"conv2d expects input (channels={in_ch}, h, w), got {in_shape}"
            )
        _, h, w = in_shape
        sh, sw = layer.stride
        ph, pw = layer.padding
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if h + 2 * ph < kh or w + 2 * pw < kw:
            raise ShapeError(f"conv2d kernel {kh}x{kw} exceeds padded input {in_shape}")
        return (out_ch, ho, wo)
    if isinstance(layer, Normalize):
        channels = in_shape[0]
        if layer.mean.shape[0] != channels:
            raise ShapeError(
                f"normalize expects {layer.mean.shape[0]} channels, input has {channels}"
            )
        return in_shape
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, ReLU):
        return in_shape
    if isinstance(layer, MaxPool):
        wh, ww = layer.window
        sh, sw = layer.stride
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects input (channels, h, w), got {in_shape}")
        c, h, w = in_shape
        if h < wh or w < ww:
            raise ShapeError(f"maxpool window {wh}x{ww} exceeds input {in_shape}")
        return (c, (h - wh) // sh + 1, (w - ww) // sw + 1)
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


def layer_shapes(net: Network) -> list[tuple[int, ...]]:
    """Input shape followed by the output shape of every layer."""
    shapes = [net.input_shape]
    for k, layer in enumerate(net.layers):
        try:
            shapes.append(layer_output_shape(layer, shapes[-1]))
        except ShapeError as exc:
            raise ShapeError(f"layer {k}: {exc}") from None
    return shapes


def validate_network(net: Network) -> None:
    """Raise ShapeError naming the first offending layer, or return None."""
    if any(d <= 0 for d in net.input_shape) or not net.input_shape:
        raise ShapeError(f"input shape {net.input_shape} must be positive")
    if not net.layers:
        raise ShapeError("network has no layers")
    layer_shapes(net)


# ---------------------------------------------------------------------------
# Convolution / pooling geometry


def _conv_gather_indices(in_shape, kernel_shape, stride, padding):
    """Index arrays mapping a padded (c, hp, wp) tensor to im2col columns.

    Returns (idx_c, idx_i, idx_j), each of shape (c*kh*kw, out_h*out_w).
    """
    c, h, w = in_shape
    _, _, kh, kw = kernel_shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    ci, ki, kj = np.meshgrid(
        np.arange(c), np.arange(kh), np.arange(kw), indexing="ij"
    )
    ci, ki, kj = ci.ravel(), ki.ravel(), kj.ravel()
    oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    oi, oj = oi.ravel(), oj.ravel()
    idx_c = np.broadcast_to(ci[:, None], (c * kh * kw, ho * wo))
    idx_i = ki[:, None] + oi[None, :] * sh
    idx_j = kj[:, None] + oj[None, :] * sw
    return idx_c, idx_i, idx_j


def pool_window_indices(in_shape, window, stride) -> np.ndarray:
    """Flat indices of each pooling window, shape (n_windows, window_size).

    Windows are enumerated channel-major then row-major over output
    positions; entries within a window are in ascending flat-index order,
    which fixes the argmax tie-break.
    """
    c, h, w = in_shape
    wh, ww = window
    sh, sw = stride
    ho = (h - wh) // sh + 1
    wo = (w - ww) // sw + 1
    base = np.arange(c)[:, None, None] * (h * w)
    rows = np.arange(ho)[None, :, None] * sh
    cols = np.arange(wo)[None, None, :] * sw
    origin = (base + rows * w + cols).reshape(-1)  # (c*ho*wo,)
    offs = (np.arange(wh)[:, None] * w + np.arange(ww)[None, :]).reshape(-1)
    return origin[:, None] + offs[None, :]


# Cap on the transient im2col buffer built per conv chunk.
_CONV_CHUNK_BYTES = 64 * 1024 * 1024


def _conv_chunk_rows(ckk: int, l: int) -> int:
    return max(1, _CONV_CHUNK_BYTES // (ckk * l * 8))


# ---------------------------------------------------------------------------
# Batched layer application


def apply_layer(layer: Layer, v: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    """Apply one layer to a batch `v` of shape (n, *in_shape)."""
    n = v.shape[0]
    if isinstance(layer, Dense):
        return v @ layer.weights.T + layer.bias
    if isinstance(layer, Conv2D):
        return _conv_forward(layer, v, in_shape)
    if isinstance(layer, Normalize):
        extra = (1,) * (len(in_shape) - 1)
        mean = layer.mean.reshape((-1,) + extra)
        std = layer.std.reshape((-1,) + extra)
        return (v - mean) / std
    if isinstance(layer, Flatten):
        return v.reshape(n, -1)
    if isinstance(layer, ReLU):
        return np.maximum(v, 0.0)
    if isinstance(layer, MaxPool):
        win = pool_window_indices(in_shape, layer.window, layer.stride)
        c, h, w = in_shape
        wh, ww = layer.window
        sh, sw = layer.stride
        out = v.reshape(n, -1)[:, win].max(axis=2)
        return out.reshape(n, c, (h - wh) // sh + 1, (w - ww) // sw + 1)
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


def _conv_forward(layer: Conv2D, v: np.ndarray, in_shape) -> np.ndarray:
    n = v.shape[0]
    out_ch, in_ch, kh, kw = layer.kernel.shape
    c, h, w = in_shape
    ph, pw = layer.padding
    idx_c, idx_i, idx_j = _conv_gather_indices(
        in_shape, layer.kernel.shape, layer.stride, layer.padding
    )
    l = idx_c.shape[1]
    sh, sw = layer.stride
    kh, kw = layer.kernel.shape[2:]
    k2d = layer.kernel.reshape(out_ch, -1)
    out = np.empty((n, out_ch, l))
    step = _conv_chunk_rows(k2d.shape[1], l)
    for s in range(0, n, step):
        e = min(n, s + step)
        b = e - s
        padded = np.zeros((b, c, h + 2 * ph, w + 2 * pw))
        padded[:, :, ph : ph + h, pw : pw + w] = v[s:e]
        # one strided copy into (batch, position, taps) order feeds the
        # whole chunk to a single contiguous GEMM
        view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
        view = view[:, :, ::sh, ::sw]
        cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(b * l, c * kh * kw)
        prod = cols @ k2d.T
        out[s:e] = prod.reshape(b, l, out_ch).transpose(0, 2, 1)
    out += layer.bias[:, None]
    ho = (h + 2 * ph - kh) // layer.stride[0] + 1
    return out.reshape(n, out_ch, ho, l // ho)


def batch_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of inputs, shape (n, *input_shape)."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(
            f"input batch shape {tuple(x.shape[1:])} != network input "
            f"{net.input_shape}"
        )
    shapes = layer_shapes(net)
    v = x
    for layer, in_shape in zip(net.layers, shapes):
        v = apply_layer(layer, v, in_shape)
    return v


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network at a single input point."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != net.input_shape:
        raise ShapeError(f"input shape {tuple(x.shape)} != {net.input_shape}")
    return batch_forward(net, x[None])[0]


# ---------------------------------------------------------------------------
# Gradients

# A ReLU unit sitting exactly at zero counts as inactive, and a pooling
# window tie routes to the lowest flat index; both make gradients
# deterministic on activation boundaries.


def batch_gradient(net: Network, x: np.ndarray, output_index: int) -> np.ndarray:
    """Gradient of the selected scalar output at each point of the batch.

    The activation pattern is frozen at each input point, so on boundary
    points this returns the one-sided gradient fixed by the conventions
    above.  Output shape is (n, *input_shape).
    """
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(
            f"input batch shape {tuple(x.shape[1:])} != network input "
            f"{net.input_shape}"
        )
    shapes = layer_shapes(net)
    out_size = int(np.prod(shapes[-1]))
    if not 0 <= output_index < out_size:
        raise IndexError(f"output index {output_index} out of range [0, {out_size})")

    n = x.shape[0]
    caches = []
    v = x
    for layer, in_shape in zip(net.layers, shapes):
        if isinstance(layer, ReLU):
            caches.append(v > 0)
        elif isinstance(layer, MaxPool):
            win = pool_window_indices(in_shape, layer.window, layer.stride)
            gathered = v.reshape(n, -1)[:, win]
            caches.append(win[np.arange(win.shape[0]), gathered.argmax(axis=2)])
        else:
            caches.append(None)
        v = apply_layer(layer, v, in_shape)

    g = np.zeros((n, out_size))
    g[:, output_index] = 1.0
    g = g.reshape((n,) + shapes[-1])
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        in_shape = shapes[k]
        if isinstance(layer, Dense):
            g = g @ layer.weights
        elif isinstance(layer, Conv2D):
            g = _conv_backward(layer, g, in_shape)
        elif isinstance(layer, Normalize):
            extra = (1,) * (len(in_shape) - 1)
            g = g / layer.std.reshape((-1,) + extra)
        elif isinstance(layer, Flatten):
            g = g.reshape((n,) + in_shape)
        elif isinstance(layer, ReLU):
            g = g * caches[k]
        elif isinstance(layer, MaxPool):
            pos = caches[k]  # (n, n_windows) flat argmax positions
            flat = np.zeros((n, int(np.prod(in_shape))))
            np.add.at(flat, (np.arange(n)[:, None], pos), g.reshape(n, -1))
            g = flat.reshape((n,) + in_shape)
    return g


def _conv_backward(layer: Conv2D, g: np.ndarray, in_shape) -> np.ndarray:
    n = g.shape[0]
    out_ch = layer.kernel.shape[0]
    c, h, w = in_shape
    ph, pw = layer.padding
    idx_c, idx_i, idx_j = _conv_gather_indices(
        in_shape, layer.kernel.shape, layer.stride, layer.padding
    )
    k2d = layer.kernel.reshape(out_ch, -1)
    g_cols = np.tensordot(g.reshape(n, out_ch, -1), k2d, axes=(1, 0)).transpose(0, 2, 1)
    g_pad = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    np.add.at(
        g_pad,
        (np.arange(n)[:, None, None], idx_c[None], idx_i[None], idx_j[None]),
        g_cols,
    )
    return g_pad[:, :, ph : ph + h, pw : pw + w]


def gradient(net: Network, x: np.ndarray, output_index: int) -> np.ndarray:
    """Gradient of output component `output_index` with respect to `x`."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != net.input_shape:
        raise ShapeError(f"input shape {tuple(x.shape)} != {net.input_shape}")
    return batch_gradient(net, x[None], output_index)[0]


# ---------------------------------------------------------------------------
# Affine folding


def _compose_affine(state, layer):
    """Fold `layer` into an accumulated flat affine map.

    The state is ('diag', scale, shift) for componentwise maps or
    ('dense', W, b); diagonal maps are kept as vectors until a dense
    layer forces materialization.
    """
    if isinstance(layer, Flatten):
        return state
    if isinstance(layer, Normalize):
        s = 1.0 / layer.std
        t = -layer.mean / layer.std
        if state is None:
            return ("diag", s, t)
        kind = state[0]
        if kind == "diag":
            return ("diag", s * state[1], s * state[2] + t)
        return ("dense", state[1] * s[:, None], state[2] * s + t)
    if isinstance(layer, Dense):
        w, b = layer.weights, layer.bias
        if state is None:
            return ("dense", w, b)
        kind = state[0]
        if kind == "diag":
            return ("dense", w * state[1][None, :], w @ state[2] + b)
        return ("dense", w @ state[1], w @ state[2] + b)
    raise ShapeError(f"cannot fold layer {type(layer).__name__}")


def fold_affine_layers(net: Network) -> Network:
    """Collapse each maximal dense/normalize/flatten run into one dense step.

    Convolutions are left in place: zero padding makes a normalize-into-conv
    rewrite position dependent at the borders, so conv layers act as fold
    barriers alongside ReLU and pooling.  Runs whose output is not 1-D
    (e.g. a lone normalize between convolutions) are also left unchanged.
    Forward outputs are preserved up to last-ulp rounding.
    """
    validate_network(net)
    shapes = layer_shapes(net)
    foldable = (Dense, Normalize, Flatten)
    out_layers: list[Layer] = []
    k = 0
    while k < len(net.layers):
        if not isinstance(net.layers[k], foldable):
            out_layers.append(net.layers[k])
            k += 1
            continue
        j = k
        while j < len(net.layers) and isinstance(net.layers[j], foldable):
            j += 1
        run = net.layers[k:j]
        run_in, run_out = shapes[k], shapes[j]
        has_weights = any(isinstance(l, (Dense, Normalize)) for l in run)
        if len(run_out) != 1 or not has_weights:
            out_layers.extend(run)  # nothing to gain or shape-preserving fold impossible
        else:
            state = None
            for layer in run:
                state = _compose_affine(state, layer)
            if state[0] == "diag":
                w, b = np.diag(state[1]), state[2]
            else:
                w, b = state[1], state[2]
            if len(run_in) > 1:
                out_layers.append(Flatten())
            out_layers.append(Dense(w, b))
        k = j
    return Network(net.input_shape, tuple(out_layers))
