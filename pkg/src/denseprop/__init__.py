"""denseprop: dense whole-image propagation for patchwise pixel-classification CNNs.

Converts a strided patch classifier into an equivalent stride-1 network whose
kernels carry dilation factors, so one forward pass scores every pixel and one
masked backward pass gathers the gradients of any pixel subset — matching the
naive patch-by-patch scan bit-for-bit in float64.
"""

from .backward import (ErrorMask, GradientSet, apply_mask, avgpool_backward,
                       conv_backward_data, conv_backward_kernel, dense_backward,
                       maxpool_backward, nonlin_backward)
from .fmap import crop_patch, max_abs_diff, pad, read_fmap, write_fmap
from .forward import (ForwardCache, dense_forward, dilated_avgpool_forward,
                      dilated_conv_forward, dilated_maxpool_forward, nonlin_forward)
from .netspec import (ConvLayerSpec, NetworkSpec, NonlinLayerSpec, PoolLayerSpec,
                      SpecError, format_spec, padding_margin, parse_spec, patch_size)
from .oracle import PatchResult, patch_backward_batch, patch_forward, scan_forward
from .plan import (DensePlan, DilatedConv, DilatedPool, compile_plan,
                   effective_extent, materialize_dilated_kernel)
from .bench import bench_mask_sweep, run_bench, theoretical_speedup

__version__ = "0.1.0"

__all__ = [
    "ConvLayerSpec", "DensePlan", "DilatedConv", "DilatedPool", "ErrorMask",
    "ForwardCache", "GradientSet", "NetworkSpec", "NonlinLayerSpec",
    "PatchResult", "PoolLayerSpec", "SpecError",
    "apply_mask", "avgpool_backward", "bench_mask_sweep", "compile_plan",
    "conv_backward_data", "conv_backward_kernel", "crop_patch", "dense_backward",
    "dense_forward", "dilated_avgpool_forward", "dilated_conv_forward",
    "dilated_maxpool_forward", "effective_extent", "format_spec",
    "materialize_dilated_kernel", "max_abs_diff", "maxpool_backward",
    "nonlin_backward", "nonlin_forward", "pad", "padding_margin",
    "parse_spec", "patch_backward_batch", "patch_forward", "patch_size",
    "read_fmap", "run_bench", "scan_forward", "theoretical_speedup", "write_fmap",
]
