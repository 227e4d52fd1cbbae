"""Trainable grayscale dilation/erosion layers and opening/closing blocks.

Dilation slides an additive structuring element over each channel:

    out[c, y, x] = max over (i, j) of  in[c, y+i, x+j] + se[c, i, j]

and erosion takes the min of ``in[c, y+i, x+j] - se[c, i, j]``.  The window
offsets run over {0..m-1} x {0..n-1} anchored at the output pixel, so the
(0, 0) offset is always present; out-of-bounds neighbors are simply
excluded from the max/min rather than padded.  Because the winner of each
max/min is a single window offset, the backward pass is exact: the full
upstream gradient of an output pixel is routed to the cached winning
offset (and to the corresponding input pixel), and every other position
receives zero.  Ties are broken by the first offset in row-major (i, j)
scan order so gradients are reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .maps import check_feature_map, load_map, save_map

DILATE = "dilate"
ERODE = "erode"


class StaleCacheError(RuntimeError):
    """Backward invoked without a matching forward pass on the same layer."""


class StructuringElement:
    """Additive weights of a non-flat structuring element plus its gradient.

    Freshly constructed elements are all-zero; a zero element makes
    dilation/erosion degenerate to their flat counterparts.
    """

    def __init__(self, channels, m, n, weights=None, trainable=True):
        if channels <= 0 or m <= 0 or n <= 0:
            raise ValueError("structuring element dimensions must be positive")
        if weights is None:
            weights = np.zeros((channels, m, n), dtype=np.float64)
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (channels, m, n):
                raise ValueError(
                    f"weights shape {weights.shape} != ({channels}, {m}, {n})"
                )
            weights = weights.copy()
        self.weights = weights
        self.grad = np.zeros_like(weights)
        self.trainable = trainable

    @property
    def channels(self):
        return self.weights.shape[0]

    @property
    def m(self):
        return self.weights.shape[1]

    @property
    def n(self):
        return self.weights.shape[2]

    def zero_grad(self):
        self.grad[:] = 0.0

    def __repr__(self):
        c, m, n = self.weights.shape
        kind = "trainable" if self.trainable else "frozen"
        return f"StructuringElement({c}x{m}x{n}, {kind})"


def _window_scores(x, se, kind):
    """Stack in[c, y+i, x+j] +/- se[c, i, j] over window offsets.

    Returns an array of shape (m*n, C, H, W); out-of-bounds slots hold
    -inf (dilation) or +inf (erosion) so they never win.
    """
    c, h, w = x.shape
    m, n = se.m, se.n
    pad = -np.inf if kind == DILATE else np.inf
    dtype = np.result_type(x.dtype, se.weights.dtype)
    stack = np.full((m * n, c, h, w), pad, dtype=dtype)
    sign = 1.0 if kind == DILATE else -1.0
    for i in range(m):
        for j in range(n):
            k = i * n + j
            shifted = x[:, i:, j:]
            stack[k, :, : h - i, : w - j] = shifted + sign * se.weights[:, i, j][:, None, None]
    return stack


class MorphLayer:
    """One dilation or erosion layer with its argmax/argmin cache.

    The cache binds a forward pass to the matching backward pass; it is
    consumed by ``backward`` and must be repopulated before the next one.
    """

    def __init__(self, kind, se):
        if kind not in (DILATE, ERODE):
            raise ValueError(f"unknown layer kind {kind!r}")
        self.kind = kind
        self.se = se
        self._cache = None

    def forward(self, x, collect_margins=False):
        x = check_feature_map(x, "layer input")
        se = self.se
        c, h, w = x.shape
        if c != se.channels:
            raise ValueError(f"input has {c} channels, structuring element has {se.channels}")
        if se.m > h or se.n > w:
            raise ValueError(f"window {se.m}x{se.n} larger than map {h}x{w}")
        stack = _window_scores(x, se, self.kind)
        if self.kind == DILATE:
            winners = np.argmax(stack, axis=0)
            out = np.max(stack, axis=0)
        else:
            winners = np.argmin(stack, axis=0)
            out = np.min(stack, axis=0)
        margins = None
        if collect_margins:
            if stack.shape[0] == 1:
                margins = np.full((c, h, w), np.inf)
                runners = winners.copy()
            else:
                order = np.sort(stack, axis=0)
                if self.kind == DILATE:
                    margins = order[-1] - order[-2]
                    second = order[-2]
                else:
                    margins = order[1] - order[0]
                    second = order[1]
                # First offset in scan order attaining the runner-up value.
                is_second = (stack == second[None]) & (
                    np.arange(stack.shape[0])[:, None, None, None] != winners[None]
                )
                runners = np.argmax(is_second, axis=0)
            margins = np.where(np.isfinite(margins), margins, np.inf)
        self._cache = {
            "in_shape": x.shape,
            "winners": winners,
            "margins": margins,
            "runners": runners if collect_margins else None,
        }
        return out

    def backward(self, grad_out):
        """Route upstream gradient to winning offsets.

        Accumulates dL/dSE into ``se.grad`` (negated for erosion, which
        subtracts the element) and returns dL/dinput.  Consumes the cache.
        """
        if self._cache is None:
            raise StaleCacheError("backward without a preceding forward pass")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != self._cache["in_shape"]:
            raise StaleCacheError(
                f"upstream gradient shape {grad_out.shape} does not match "
                f"cached forward shape {self._cache['in_shape']}"
            )
        winners = self._cache["winners"]
        self._cache = None
        c, h, w = grad_out.shape
        n = self.se.n
        off_i = winners // n
        off_j = winners % n
        cidx = np.broadcast_to(np.arange(c)[:, None, None], (c, h, w))
        sign = 1.0 if self.kind == DILATE else -1.0
        if self.se.trainable:
            np.add.at(self.se.grad, (cidx, off_i, off_j), sign * grad_out)
        grad_in = np.zeros((c, h, w), dtype=np.float64)
        rows = np.arange(h)[None, :, None] + off_i
        cols = np.arange(w)[None, None, :] + off_j
        np.add.at(grad_in, (cidx, rows, cols), grad_out)
        return grad_in

    def margin_info(self):
        """Winner/runner-up offsets and margins from the last forward pass."""
        if self._cache is None or self._cache["margins"] is None:
            raise StaleCacheError("margins require forward(collect_margins=True)")
        return self._cache["winners"], self._cache["runners"], self._cache["margins"]


def dilate(x, se):
    """One-shot dilation of a map by a structuring element."""
    return MorphLayer(DILATE, se).forward(x)


def erode(x, se):
    """One-shot erosion of a map by a structuring element."""
    return MorphLayer(ERODE, se).forward(x)


class MorphBlock:
    """An ordered chain of morphology layers, optionally residual.

    With the residual flag on, the block outputs ``input + chain(input)``
    so it learns a correction rather than a replacement; an empty residual
    block therefore doubles its input.
    """

    def __init__(self, layers, residual=False, name=""):
        self.layers = list(layers)
        self.residual = residual
        self.name = name

    def forward(self, x, collect_margins=False):
        x = check_feature_map(x, "block input")
        out = x
        for layer in self.layers:
            out = layer.forward(out, collect_margins=collect_margins)
        if self.residual:
            out = x + out
        return out

    def backward(self, grad_out):
        grad = np.asarray(grad_out, dtype=np.float64)
        chain_grad = grad
        for layer in reversed(self.layers):
            chain_grad = layer.backward(chain_grad)
        if self.residual:
            return chain_grad + grad
        return chain_grad

    def structuring_elements(self):
        return [layer.se for layer in self.layers]

    def trainable_elements(self):
        return [se for se in self.structuring_elements() if se.trainable]

    def zero_grads(self):
        for se in self.structuring_elements():
            se.zero_grad()

    def __repr__(self):
        kinds = ",".join(layer.kind[0] for layer in self.layers)
        res = "+residual" if self.residual else ""
        return f"MorphBlock({self.name or kinds}{res})"


def _build(kinds, channels, se_size, trainable, init):
    layers = []
    for kind in kinds:
        if init is None:
            se = StructuringElement(channels, se_size, se_size, trainable=trainable)
        else:
            se = StructuringElement(
                channels,
                se_size,
                se_size,
                weights=np.full((channels, se_size, se_size), init),
                trainable=trainable,
            )
        layers.append(MorphLayer(kind, se))
    return layers


def trainable_opening(channels, se_size=2, depth=2, residual=True):
    """Opening block: ``depth`` erosions then ``depth`` dilations.

    Defaults to two 2x2 layers of each kind with zero-initialized trainable
    elements and a residual connection, the configuration that suppresses
    small spurious detections without over-processing.
    """
    kinds = [ERODE] * depth + [DILATE] * depth
    return MorphBlock(_build(kinds, channels, se_size, True, None), residual=residual, name="opening")


def trainable_closing(channels=1, se_size=3, depth=4, residual=True):
    """Closing block: ``depth`` dilations then ``depth`` erosions.

    Defaults to four 3x3 layers of each kind, trainable, residual; deep
    enough to bridge gaps between neighboring segments while training
    decides how far links may stretch.
    """
    kinds = [DILATE] * depth + [ERODE] * depth
    return MorphBlock(_build(kinds, channels, se_size, True, None), residual=residual, name="closing")


def classical_opening(channels, se_size=2, depth=1):
    """Frozen flat all-ones opening (erosion then dilation), no residual."""
    kinds = [ERODE] * depth + [DILATE] * depth
    return MorphBlock(_build(kinds, channels, se_size, False, 1.0), residual=False, name="flat-opening")


def classical_closing(channels=1, se_size=3, depth=1):
    """Frozen flat all-ones closing (dilation then erosion), no residual."""
    kinds = [DILATE] * depth + [ERODE] * depth
    return MorphBlock(_build(kinds, channels, se_size, False, 1.0), residual=False, name="flat-closing")


def save_block(directory, block):
    """Checkpoint a block: a manifest plus one map container per element."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"name {block.name}", f"residual {int(block.residual)}", f"layers {len(block.layers)}"]
    for idx, layer in enumerate(block.layers):
        se = layer.se
        fname = f"layer{idx:02d}.fmap"
        lines.append(
            f"layer {idx} {layer.kind} {se.channels} {se.m} {se.n} "
            f"{int(se.trainable)} {fname}"
        )
        save_map(os.path.join(directory, fname), se.weights.astype(np.float32))
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_block(directory):
    """Restore a checkpointed block (weights widen exactly from float32)."""
    manifest = os.path.join(directory, "manifest.txt")
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = dict(ln.split(" ", 1) for ln in lines[:3])
    layers = []
    for ln in lines[3:]:
        parts = ln.split()
        if parts[0] != "layer" or len(parts) != 8:
            raise ValueError(f"bad manifest line in {manifest}: {ln!r}")
        _, _, kind, c, m, n, trainable, fname = parts
        weights = load_map(os.path.join(directory, fname)).astype(np.float64)
        se = StructuringElement(int(c), int(m), int(n), weights=weights, trainable=bool(int(trainable)))
        layers.append(MorphLayer(kind, se))
    return MorphBlock(layers, residual=bool(int(header["residual"])), name=header.get("name", ""))
