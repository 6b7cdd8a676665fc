"""Compile a strided patchwise network into a dense whole-image plan.

Every layer of the plan runs with stride 1. A layer whose original position
followed strided layers gets a dilation factor d equal to the product of
those strides, and its kernel taps are spread d pixels apart. Kernels are
kept in their original compact form together with d; execution skips the
implied zero positions instead of materializing them. `materialize_dilated_kernel`
exists only so tests can cross-check the skip-zero arithmetic against the
explicit zero-inserted kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netspec import ConvLayerSpec, NetworkSpec, NonlinLayerSpec, PoolLayerSpec
from .netspec import padding_margins, patch_size


def effective_extent(kernel_size: int, dilation: int) -> int:
    """Spatial span of a kernel whose taps sit `dilation` pixels apart."""
    if kernel_size < 1 or dilation < 1:
        raise ValueError("kernel_size and dilation must be >= 1")
    return (kernel_size - 1) * dilation + 1


@dataclass
class DilatedConv:
    base: ConvLayerSpec
    dilation: int

    @property
    def extent(self) -> int:
        return effective_extent(self.base.kernel_size, self.dilation)


@dataclass
class DilatedPool:
    base: PoolLayerSpec
    dilation: int

    @property
    def extent(self) -> int:
        return effective_extent(self.base.kernel_size, self.dilation)


PlanLayer = DilatedConv | DilatedPool | NonlinLayerSpec


@dataclass
class DensePlan:
    source: NetworkSpec
    layers: list[PlanLayer]
    dilations: list[int]           # d for layer k (1 for nonlin layers)
    patch_size: int
    lead_margin: int
    trail_margin: int
    _weight_cache: dict = field(default_factory=dict, repr=False)

    @property
    def padding_margin(self) -> int:
        return self.lead_margin

    def conv_weights(self, index: int, dtype) -> tuple[np.ndarray, np.ndarray]:
        """Original kernel and bias of plan layer `index`, cast to dtype."""
        key = (index, np.dtype(dtype))
        cached = self._weight_cache.get(key)
        if cached is None:
            layer = self.layers[index]
            cached = (
                np.ascontiguousarray(layer.base.weights, dtype=dtype),
                np.ascontiguousarray(layer.base.bias, dtype=dtype),
            )
            self._weight_cache[key] = cached
        return cached


def compile_plan(spec: NetworkSpec) -> DensePlan:
    """Assign each layer the product of all preceding strides as its dilation."""
    layers: list[PlanLayer] = []
    dilations: list[int] = []
    d = 1
    for layer in spec.layers:
        if isinstance(layer, ConvLayerSpec):
            layers.append(DilatedConv(layer, d))
            dilations.append(d)
            d *= layer.stride
        elif isinstance(layer, PoolLayerSpec):
            layers.append(DilatedPool(layer, d))
            dilations.append(d)
            d *= layer.stride
        else:
            layers.append(layer)
            dilations.append(d)
    lead, trail = padding_margins(spec)
    return DensePlan(
        source=spec,
        layers=layers,
        dilations=dilations,
        patch_size=patch_size(spec),
        lead_margin=lead,
        trail_margin=trail,
    )


def materialize_dilated_kernel(base: np.ndarray, dilation: int) -> np.ndarray:
    """Explicit zero-inserted kernel: base taps at (i*d, j*d), zeros elsewhere.

    Test-oracle helper only; the engine never touches the zero positions.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    if dilation == 1:
        return base.copy()
    k = base.shape[-1]
    if base.shape[-2] != k:
        raise ValueError("kernel must be square in its last two dims")
    e = effective_extent(k, dilation)
    out = np.zeros(base.shape[:-2] + (e, e), dtype=base.dtype)
    out[..., ::dilation, ::dilation] = base
    return out
