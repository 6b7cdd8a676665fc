"""Patch-by-patch reference: the unoptimized ground truth and baseline.

Runs the ORIGINAL strided network on one cropped patch per pixel, exactly the
redundant computation the dense engine eliminates. It shares the feature-map
utilities and the scalar conventions of the dense engine (window summation
order, first-wins pooling ties, relu'(0)=0) but none of its convolution or
pooling code: layers here walk strided windows directly, so agreement between
the two paths checks the dilation construction itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fmap
from .backward import GradientSet, nonlin_backward
from .forward import nonlin_forward
from .netspec import (ConvLayerSpec, NetworkSpec, PoolLayerSpec,
                      padding_margins, patch_size)


@dataclass
class PatchResult:
    scores: np.ndarray  # (out_channels,) score vector for one patch


def _strided_taps(x: np.ndarray, c: int, i: int, j: int, stride: int,
                  mo: int, no: int) -> np.ndarray:
    """Window entries at tap (i, j) for every output position of a strided layer."""
    return x[c, i:i + (mo - 1) * stride + 1:stride, j:j + (no - 1) * stride + 1:stride]


def _out_side(size: int, kernel: int, stride: int) -> int:
    if size < kernel or (size - kernel) % stride != 0:
        raise ValueError(
            f"{kernel}x{kernel}/{stride} windows do not tile a size-{size} input exactly"
        )
    return (size - kernel) // stride + 1


def conv_strided(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                 stride: int) -> np.ndarray:
    """Original strided correlation; per-entry order: bias, then (c, i, j) taps."""
    cout, cin, l, _ = weights.shape
    mo = _out_side(x.shape[1], l, stride)
    no = _out_side(x.shape[2], l, stride)
    y = np.empty((cout, mo, no), dtype=x.dtype)
    y[:] = bias[:, None, None]
    for c in range(cin):
        for i in range(l):
            for j in range(l):
                y += weights[:, c, i, j][:, None, None] * _strided_taps(x, c, i, j, stride, mo, no)
    return y


def maxpool_strided(x: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    p = kernel
    mo = _out_side(x.shape[1], p, stride)
    no = _out_side(x.shape[2], p, stride)
    channels = x.shape[0]
    y = np.empty((channels, mo, no), dtype=x.dtype)
    arg = np.zeros((channels, mo, no), dtype=np.int32)
    for c in range(channels):
        y[c] = _strided_taps(x, c, 0, 0, stride, mo, no)
        for i in range(p):
            for j in range(p):
                if i == 0 and j == 0:
                    continue
                tap = _strided_taps(x, c, i, j, stride, mo, no)
                upd = tap > y[c]
                y[c][upd] = tap[upd]
                arg[c][upd] = i * p + j
    return y, arg


def avgpool_strided(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    p = kernel
    mo = _out_side(x.shape[1], p, stride)
    no = _out_side(x.shape[2], p, stride)
    channels = x.shape[0]
    y = np.empty((channels, mo, no), dtype=x.dtype)
    for c in range(channels):
        y[c] = _strided_taps(x, c, 0, 0, stride, mo, no)
        for i in range(p):
            for j in range(p):
                if i == 0 and j == 0:
                    continue
                y[c] += _strided_taps(x, c, i, j, stride, mo, no)
    return y / (p * p)


def cast_weights(spec: NetworkSpec, dtype) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    return {
        k: (np.ascontiguousarray(l.weights, dtype=dtype),
            np.ascontiguousarray(l.bias, dtype=dtype))
        for k, l in spec.conv_layers()
    }


def run_layer_strided(layer, x: np.ndarray, weights=None, bias=None):
    """One original-network layer; returns (y, argmax-or-None)."""
    if isinstance(layer, ConvLayerSpec):
        w = layer.weights.astype(x.dtype) if weights is None else weights
        b = layer.bias.astype(x.dtype) if bias is None else bias
        return conv_strided(x, w, b, layer.stride), None
    if isinstance(layer, PoolLayerSpec):
        if layer.kind == "max":
            return maxpool_strided(x, layer.kernel_size, layer.stride)
        return avgpool_strided(x, layer.kernel_size, layer.stride), None
    return nonlin_forward(x, layer.kind), None


def _forward_cached(spec: NetworkSpec, patch: np.ndarray, wb):
    inputs = []
    argmax: dict[int, np.ndarray] = {}
    x = patch
    for k, layer in enumerate(spec.layers):
        inputs.append(x)
        if isinstance(layer, ConvLayerSpec):
            w, b = wb[k]
            x, arg = run_layer_strided(layer, x, w, b)
        else:
            x, arg = run_layer_strided(layer, x)
        if arg is not None:
            argmax[k] = arg
    return inputs, argmax, x


def patch_forward(spec: NetworkSpec, patch: np.ndarray) -> PatchResult:
    """Run the original strided network on one full patch down to 1x1 scores."""
    n = patch_size(spec)
    if patch.shape[0] != spec.input_channels:
        raise ValueError(
            f"patch has {patch.shape[0]} channels, spec wants {spec.input_channels}"
        )
    if patch.shape[1] != n or patch.shape[2] != n:
        raise ValueError(f"patch must be {n}x{n}, got {patch.shape[1]}x{patch.shape[2]}")
    wb = cast_weights(spec, patch.dtype)
    _, _, out = _forward_cached(spec, patch, wb)
    return PatchResult(scores=out.reshape(-1).copy())


def scan_forward(spec: NetworkSpec, image: np.ndarray,
                 pixels=None) -> np.ndarray:
    """Crop the patch at every pixel (or a subset) and score it independently."""
    if image.shape[0] != spec.input_channels:
        raise ValueError(
            f"image has {image.shape[0]} channels, spec wants {spec.input_channels}"
        )
    n = patch_size(spec)
    lead, trail = padding_margins(spec)
    padded = fmap.pad_rect(image, lead, trail, lead, trail, 0.0)
    h, w = image.shape[1], image.shape[2]
    wb = cast_weights(spec, image.dtype)
    out = np.zeros((spec.output_channels, h, w), dtype=image.dtype)
    if pixels is None:
        pixels = [(y, x) for y in range(h) for x in range(w)]
    for y, x in pixels:
        patch = fmap.crop_patch(padded, y + lead, x + lead, n)
        _, _, scores = _forward_cached(spec, patch, wb)
        out[:, y, x] = scores.reshape(-1)
    return out


def _conv_backward_patch(x, weights, stride, delta, need_dx=True):
    """Textbook strided conv backward: (delta_in, dw, db) for one patch."""
    cout, cin, l, _ = weights.shape
    mo, no = delta.shape[1], delta.shape[2]
    dx = np.zeros_like(x) if need_dx else None
    dw = np.empty_like(weights)
    for i in range(l):
        for j in range(l):
            window = _strided_taps_all(x, i, j, stride, mo, no)
            dw[:, :, i, j] = np.tensordot(delta, window, axes=([1, 2], [1, 2]))
            if need_dx:
                tap_grad = np.tensordot(weights[:, :, i, j], delta, axes=(0, 0))
                dx[:, i:i + (mo - 1) * stride + 1:stride,
                      j:j + (no - 1) * stride + 1:stride] += tap_grad
    db = delta.sum(axis=(1, 2))
    return dx, dw, db


def _strided_taps_all(x, i, j, stride, mo, no):
    return x[:, i:i + (mo - 1) * stride + 1:stride, j:j + (no - 1) * stride + 1:stride]


def _maxpool_backward_patch(x_shape, arg, p, stride, delta):
    dx = np.zeros(x_shape, dtype=delta.dtype)
    for i in range(p):
        for j in range(p):
            sel = arg == i * p + j
            if not sel.any():
                continue
            cc, uu, vv = np.nonzero(sel)
            dx[cc, uu * stride + i, vv * stride + j] += delta[sel]
    return dx


def _avgpool_backward_patch(x_shape, p, stride, delta):
    dx = np.zeros(x_shape, dtype=delta.dtype)
    q = delta / (p * p)
    mo, no = delta.shape[1], delta.shape[2]
    for i in range(p):
        for j in range(p):
            dx[:, i:i + (mo - 1) * stride + 1:stride,
                  j:j + (no - 1) * stride + 1:stride] += q
    return dx


def _backward_one(spec, wb, inputs, argmax, delta, grads: GradientSet,
                  skip_first_data: bool = True):
    for k in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[k]
        x_in = inputs[k]
        if isinstance(layer, ConvLayerSpec):
            w, _ = wb[k]
            need_dx = k > 0 or not skip_first_data
            dx, dw, db = _conv_backward_patch(x_in, w, layer.stride, delta, need_dx)
            grads.kernel[k] += dw
            grads.bias[k] += db
            if not need_dx:
                return
            delta = dx
        elif isinstance(layer, PoolLayerSpec):
            if layer.kind == "max":
                delta = _maxpool_backward_patch(x_in.shape, argmax[k],
                                                layer.kernel_size, layer.stride, delta)
            else:
                delta = _avgpool_backward_patch(x_in.shape, layer.kernel_size,
                                                layer.stride, delta)
        else:
            delta = nonlin_backward(delta, x_in, layer.kind)


def patch_backward_batch(spec: NetworkSpec, image: np.ndarray, pixels,
                         deltas) -> GradientSet:
    """Per-patch forward+backward for each selected pixel; gradients summed.

    `deltas` holds one (out_channels,) error vector per pixel, matching what a
    mask keeps of the last-layer dense error map at that pixel.
    """
    pixels = list(pixels)
    deltas = list(deltas)
    if len(pixels) != len(deltas):
        raise ValueError(f"{len(pixels)} pixels but {len(deltas)} delta vectors")
    n = patch_size(spec)
    lead, trail = padding_margins(spec)
    h, w = image.shape[1], image.shape[2]
    for y, x in pixels:
        if not (0 <= y < h and 0 <= x < w):
            raise ValueError(f"pixel ({y}, {x}) outside {h}x{w} image")
    padded = fmap.pad_rect(image, lead, trail, lead, trail, 0.0)
    wb = cast_weights(spec, image.dtype)
    grads = GradientSet.zeros(spec, dtype=image.dtype)
    for (y, x), delta_vec in zip(pixels, deltas):
        patch = fmap.crop_patch(padded, y + lead, x + lead, n)
        inputs, argmax, _ = _forward_cached(spec, patch, wb)
        delta = np.asarray(delta_vec, dtype=image.dtype).reshape(spec.output_channels, 1, 1)
        _backward_one(spec, wb, inputs, argmax, delta, grads)
    return grads
