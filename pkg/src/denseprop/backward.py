"""Dense one-pass backward propagation with pixel-selection masks.

The error map entering the last layer is masked so only chosen pixels carry
gradient, then errors flow in reverse through the stride-1 dilated layers.
Kernel gradients come out shaped like the original compact kernels; the
dilation zeros never receive gradient or storage. Because the full error map
is propagated regardless of how many pixels the mask keeps, the cost of a
backward pass does not depend on the mask size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .forward import ForwardCache
from .netspec import ConvLayerSpec, NetworkSpec
from .plan import DensePlan, DilatedConv, DilatedPool


@dataclass(frozen=True)
class ErrorMask:
    height: int
    width: int
    selected: frozenset  # of (y, x) pixel coordinates
    _bool: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sel = np.zeros((self.height, self.width), dtype=bool)
        for y, x in self.selected:
            if not (0 <= y < self.height and 0 <= x < self.width):
                raise ValueError(
                    f"mask pixel ({y}, {x}) outside {self.height}x{self.width}"
                )
            sel[y, x] = True
        object.__setattr__(self, "_bool", sel)

    @classmethod
    def of(cls, height: int, width: int, pixels) -> "ErrorMask":
        return cls(height, width, frozenset((int(y), int(x)) for y, x in pixels))

    @classmethod
    def full(cls, height: int, width: int) -> "ErrorMask":
        return cls.of(height, width, ((y, x) for y in range(height) for x in range(width)))

    @classmethod
    def parse(cls, text: str, height: int, width: int) -> "ErrorMask":
        """Mask file body: literal `all`, or one `y x` pair per line."""
        body = text.strip()
        if body == "all":
            return cls.full(height, width)
        pixels = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"mask line {line_no}: expected `y x`, got {raw!r}")
            pixels.append((int(parts[0]), int(parts[1])))
        return cls.of(height, width, pixels)

    def __len__(self) -> int:
        return len(self.selected)


@dataclass
class GradientSet:
    """Per-layer kernel/bias gradients, aligned with spec.layers (None elsewhere)."""
    kernel: list[np.ndarray | None]
    bias: list[np.ndarray | None]
    input_delta: np.ndarray | None = None

    @classmethod
    def zeros(cls, spec: NetworkSpec, dtype=np.float64) -> "GradientSet":
        kernel: list[np.ndarray | None] = []
        bias: list[np.ndarray | None] = []
        for layer in spec.layers:
            if isinstance(layer, ConvLayerSpec):
                kernel.append(np.zeros_like(layer.weights, dtype=dtype))
                bias.append(np.zeros_like(layer.bias, dtype=dtype))
            else:
                kernel.append(None)
                bias.append(None)
        return cls(kernel, bias)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        kernel = [None if a is None else a + b for a, b in zip(self.kernel, other.kernel)]
        bias = [None if a is None else a + b for a, b in zip(self.bias, other.bias)]
        return GradientSet(kernel, bias)

    def max_abs_diff(self, other: "GradientSet") -> float:
        worst = 0.0
        for mine, theirs in zip(self.kernel + self.bias, other.kernel + other.bias):
            if mine is None:
                continue
            worst = max(worst, float(np.max(np.abs(mine - theirs))))
        return worst

    def max_abs(self) -> float:
        worst = 0.0
        for arr in self.kernel + self.bias:
            if arr is not None and arr.size:
                worst = max(worst, float(np.max(np.abs(arr))))
        return worst


def apply_mask(delta_last: np.ndarray, mask: ErrorMask) -> np.ndarray:
    """Keep selected pixels across all channels, zero everything else."""
    if delta_last.shape[1:] != (mask.height, mask.width):
        raise ValueError(
            f"delta spatial dims {delta_last.shape[1:]} != mask {mask.height}x{mask.width}"
        )
    out = np.zeros(delta_last.shape, dtype=delta_last.dtype)  # C-order always
    out[:, mask._bool] = delta_last[:, mask._bool]
    return out


def _threads(threads: int | None) -> int:
    return backend.default_threads() if threads is None else threads


def conv_backward_data(delta_out: np.ndarray, layer: DilatedConv,
                       threads: int | None = None) -> np.ndarray:
    delta_out = np.ascontiguousarray(delta_out)
    w = np.ascontiguousarray(layer.base.weights, dtype=delta_out.dtype)
    return backend.kernels().conv_backward_data(delta_out, w, layer.dilation,
                                                _threads(threads))


def conv_backward_kernel(x_in: np.ndarray, delta_out: np.ndarray,
                         layer: DilatedConv,
                         threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    expect = x_in.shape[1] - layer.extent + 1
    if delta_out.shape[1] != expect or delta_out.shape[2] != x_in.shape[2] - layer.extent + 1:
        raise ValueError(
            f"delta spatial dims {delta_out.shape[1:]} do not match the conv "
            f"output for input {x_in.shape[1:]} (extent {layer.extent})"
        )
    if delta_out.shape[0] != layer.base.out_channels:
        raise ValueError(
            f"delta has {delta_out.shape[0]} channels, conv outputs "
            f"{layer.base.out_channels}"
        )
    return backend.kernels().conv_backward_kernel(
        np.ascontiguousarray(x_in), np.ascontiguousarray(delta_out),
        layer.base.kernel_size, layer.dilation, _threads(threads))


def maxpool_backward(delta_out: np.ndarray, argmax: np.ndarray, layer: DilatedPool,
                     threads: int | None = None) -> np.ndarray:
    if delta_out.shape != argmax.shape:
        raise ValueError(f"delta shape {delta_out.shape} != argmax shape {argmax.shape}")
    hi = delta_out.shape[1] + layer.extent - 1
    wi = delta_out.shape[2] + layer.extent - 1
    return backend.kernels().maxpool_backward(
        np.ascontiguousarray(delta_out), np.ascontiguousarray(argmax),
        layer.base.kernel_size, layer.dilation, hi, wi, _threads(threads))


def avgpool_backward(delta_out: np.ndarray, layer: DilatedPool,
                     threads: int | None = None) -> np.ndarray:
    hi = delta_out.shape[1] + layer.extent - 1
    wi = delta_out.shape[2] + layer.extent - 1
    return backend.kernels().avgpool_backward(
        np.ascontiguousarray(delta_out), layer.base.kernel_size, layer.dilation,
        hi, wi, _threads(threads))


def nonlin_backward(delta_out: np.ndarray, x_in: np.ndarray, kind: str) -> np.ndarray:
    if delta_out.shape != x_in.shape:
        raise ValueError(f"delta shape {delta_out.shape} != input shape {x_in.shape}")
    if kind == "tanh":
        t = np.tanh(x_in)
        return delta_out * (1.0 - t * t)
    if kind == "relu":
        return delta_out * (x_in > 0)  # derivative at exactly 0 is 0
    if kind == "identity":
        return delta_out
    raise ValueError(f"unknown nonlinearity {kind!r}")


def dense_backward(plan: DensePlan, cache: ForwardCache, delta_last: np.ndarray,
                   mask: ErrorMask, threads: int | None = None,
                   with_input_grad: bool = False) -> GradientSet:
    """Mask the last-layer error map, sweep it backward, collect gradients.

    Kernel/bias gradients are unweighted sums over the selected pixels; divide
    by the pixel count outside the engine if mini-batch averaging is wanted.
    With `with_input_grad` the error is also propagated through the first
    layer and cropped to the raw image, in `GradientSet.input_delta`.
    """
    if delta_last.shape != cache.output.shape:
        raise ValueError(
            f"delta shape {delta_last.shape} != forward output shape {cache.output.shape}"
        )
    grads = GradientSet.zeros(plan.source, dtype=delta_last.dtype)
    delta = apply_mask(delta_last, mask)
    for k in range(len(plan.layers) - 1, -1, -1):
        layer = plan.layers[k]
        x_in = cache.inputs[k]
        if isinstance(layer, DilatedConv):
            dw, db = conv_backward_kernel(x_in, delta, layer, threads)
            grads.kernel[k] = dw
            grads.bias[k] = db
            if k == 0 and not with_input_grad:
                return grads  # image gradient is off by default
            delta = conv_backward_data(delta, layer, threads)
        elif isinstance(layer, DilatedPool):
            if layer.base.kind == "max":
                delta = maxpool_backward(delta, cache.argmax[k], layer, threads)
            else:
                delta = avgpool_backward(delta, layer, threads)
        else:
            delta = nonlin_backward(delta, x_in, layer.kind)
    if with_input_grad:
        lead = plan.lead_margin
        h = cache.output.shape[1]
        w = cache.output.shape[2]
        grads.input_delta = delta[:, lead:lead + h, lead:lead + w].copy()
    return grads
