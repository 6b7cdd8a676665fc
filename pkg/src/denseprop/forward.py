"""Dense one-pass forward propagation over a whole padded image.

Each plan layer runs with stride 1; conv/pool kernels skip their dilation
zeros. The output keeps one score vector per original pixel, and the returned
cache holds every layer input plus max-pool argmax maps so the backward pass
can run without recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend, fmap
from .plan import DensePlan, DilatedConv, DilatedPool


@dataclass
class ForwardCache:
    plan: DensePlan
    inputs: list[np.ndarray]          # x_k per layer; inputs[0] is the padded image
    argmax: dict[int, np.ndarray]     # layer index -> int32 (C, Ho, Wo), value i*p+j
    output: np.ndarray                # y_K, spatial size equals the unpadded image


def _check_dtype(x: np.ndarray) -> np.ndarray:
    if x.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise TypeError(f"expected float32/float64 feature map, got {x.dtype}")
    return np.ascontiguousarray(x)


def _check_extent(x: np.ndarray, extent: int, what: str) -> None:
    if x.shape[1] < extent or x.shape[2] < extent:
        raise ValueError(
            f"{what}: input {x.shape[1]}x{x.shape[2]} is smaller than the "
            f"{extent}x{extent} dilated window"
        )


def dilated_conv_forward(x: np.ndarray, layer: DilatedConv,
                         threads: int | None = None) -> np.ndarray:
    x = _check_dtype(x)
    _check_extent(x, layer.extent, "dilated conv")
    w = np.ascontiguousarray(layer.base.weights, dtype=x.dtype)
    b = np.ascontiguousarray(layer.base.bias, dtype=x.dtype)
    threads = backend.default_threads() if threads is None else threads
    return backend.kernels().conv_forward(x, w, b, layer.dilation, threads)


def dilated_maxpool_forward(x: np.ndarray, layer: DilatedPool,
                            threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    x = _check_dtype(x)
    _check_extent(x, layer.extent, "dilated max pool")
    threads = backend.default_threads() if threads is None else threads
    return backend.kernels().maxpool_forward(x, layer.base.kernel_size,
                                             layer.dilation, threads)


def dilated_avgpool_forward(x: np.ndarray, layer: DilatedPool,
                            threads: int | None = None) -> np.ndarray:
    x = _check_dtype(x)
    _check_extent(x, layer.extent, "dilated avg pool")
    threads = backend.default_threads() if threads is None else threads
    return backend.kernels().avgpool_forward(x, layer.base.kernel_size,
                                             layer.dilation, threads)


def nonlin_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "identity":
        return x
    raise ValueError(f"unknown nonlinearity {kind!r}")


def run_plan_layer(plan: DensePlan, index: int, x: np.ndarray,
                   threads: int | None = None):
    """Apply plan layer `index` to x; returns (y, argmax-or-None)."""
    layer = plan.layers[index]
    if isinstance(layer, DilatedConv):
        x = _check_dtype(x)
        _check_extent(x, layer.extent, "dilated conv")
        w, b = plan.conv_weights(index, x.dtype)
        threads = backend.default_threads() if threads is None else threads
        return backend.kernels().conv_forward(x, w, b, layer.dilation, threads), None
    if isinstance(layer, DilatedPool):
        if layer.base.kind == "max":
            return dilated_maxpool_forward(x, layer, threads)
        return dilated_avgpool_forward(x, layer, threads), None
    return nonlin_forward(x, layer.kind), None


def pad_image(plan: DensePlan, image: np.ndarray) -> np.ndarray:
    return fmap.pad_rect(image, plan.lead_margin, plan.trail_margin,
                         plan.lead_margin, plan.trail_margin, 0.0)


def dense_forward(plan: DensePlan, image: np.ndarray,
                  threads: int | None = None) -> ForwardCache:
    """Pad the raw image, run every plan layer at stride 1, keep the cache."""
    image = _check_dtype(image)
    if image.ndim != 3:
        raise ValueError(f"image must be (channels, height, width), got {image.shape}")
    if image.shape[0] != plan.source.input_channels:
        raise ValueError(
            f"image has {image.shape[0]} channels, spec wants "
            f"{plan.source.input_channels}"
        )
    if image.shape[1] < 1 or image.shape[2] < 1:
        raise ValueError("image must be at least 1x1")
    h, w = image.shape[1], image.shape[2]
    x = pad_image(plan, image)
    inputs = []
    argmax: dict[int, np.ndarray] = {}
    for k in range(len(plan.layers)):
        inputs.append(x)
        x, arg = run_plan_layer(plan, k, x, threads)
        if arg is not None:
            argmax[k] = arg
    if x.shape[1] != h or x.shape[2] != w:
        raise AssertionError(
            f"dense output is {x.shape[1]}x{x.shape[2]}, expected {h}x{w}; "
            "plan and padding disagree"
        )
    return ForwardCache(plan=plan, inputs=inputs, argmax=argmax, output=x)
