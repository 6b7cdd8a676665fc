"""Timing harness and the analytic speedup model.

Times the dense engine layer by layer (medians over repetitions after a
warm-up), optionally against the patch-by-patch baseline on a sub-sampled
pixel grid with linear extrapolation to the full image. Runs single-threaded
by default so measured ratios compare algorithms, not thread counts.

Speedup magnitudes depend entirely on the machine; what carries over across
hardware is the analytic model per conv layer, s^2 * m^2 / (s + m)^2 for an
s-wide image and m-wide patch at that layer, and its trends in s and m.
"""

from __future__ import annotations

import csv as _csv
import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import backend, fmap
from .backward import (ErrorMask, avgpool_backward, conv_backward_data,
                       conv_backward_kernel, dense_backward,
                       maxpool_backward, nonlin_backward)
from .forward import dense_forward, pad_image, run_plan_layer
from .netspec import (ConvLayerSpec, NetworkSpec, NonlinLayerSpec, PoolLayerSpec,
                      layer_input_sizes, padding_margins, patch_size)
from .oracle import run_layer_strided, cast_weights
from .plan import DensePlan, DilatedConv, DilatedPool, compile_plan

CSV_COLUMNS = ("layer", "kernel", "stride", "dilation", "dense_fwd_ms",
               "dense_bwd_ms", "oracle_fwd_ms", "speedup_fwd", "speedup_theory")


@dataclass
class LayerTiming:
    index: int
    name: str
    kind: str
    kernel: int | None
    stride: int | None
    dilation: int | None
    dense_fwd_ms: float
    dense_bwd_ms: float
    oracle_fwd_ms: float | None = None
    speedup_fwd: float | None = None
    speedup_theory: float | None = None


@dataclass
class BenchReport:
    image_side: int
    patch_size: int
    reps: int
    dtype: str
    backend_name: str
    threads: int
    oracle_step: int | None          # sampling stride on the pixel grid, None = no oracle
    oracle_scale: float | None       # extrapolation factor applied to oracle times
    layers: list[LayerTiming] = field(default_factory=list)
    overall_fwd_ms: float = 0.0
    overall_bwd_ms: float = 0.0
    overall_oracle_fwd_ms: float | None = None
    overall_speedup_fwd: float | None = None
    warnings: list[str] = field(default_factory=list)

    def header_lines(self) -> list[str]:
        lines = [
            "# denseprop bench: single-core CPU wall times; absolute speedups are "
            "machine-dependent, only the redundancy-elimination trends transfer",
            f"# image {self.image_side}x{self.image_side}  patch {self.patch_size}  "
            f"dtype {self.dtype}  reps {self.reps}  backend {self.backend_name}  "
            f"threads {self.threads}",
        ]
        if self.oracle_step is not None:
            lines.append(
                f"# oracle sampled every {self.oracle_step} pixels per axis and "
                f"scaled x{self.oracle_scale:.1f} to the full image"
            )
        for w in self.warnings:
            lines.append(f"# warning: {w}")
        return lines

    def rows(self) -> list[list[str]]:
        def cell(v, fmt="{:.3f}"):
            return "-" if v is None else (fmt.format(v) if isinstance(v, float) else str(v))

        out = [list(CSV_COLUMNS)]
        for t in self.layers:
            out.append([
                t.name, cell(t.kernel), cell(t.stride), cell(t.dilation),
                cell(t.dense_fwd_ms), cell(t.dense_bwd_ms), cell(t.oracle_fwd_ms),
                cell(t.speedup_fwd, "{:.1f}"), cell(t.speedup_theory, "{:.1f}"),
            ])
        out.append([
            "overall", "-", "-", "-",
            cell(self.overall_fwd_ms), cell(self.overall_bwd_ms),
            cell(self.overall_oracle_fwd_ms),
            cell(self.overall_speedup_fwd, "{:.1f}"), "-",
        ])
        return out

    def format_table(self) -> str:
        lines = self.header_lines()
        lines.extend("\t".join(row) for row in self.rows())
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            _csv.writer(fh).writerows(self.rows())


def layer_names(spec: NetworkSpec) -> list[str]:
    counts: dict[str, int] = {}
    names = []
    for layer in spec.layers:
        if isinstance(layer, ConvLayerSpec):
            kind = "conv"
        elif isinstance(layer, PoolLayerSpec):
            kind = "pool"
        else:
            kind = layer.kind
        counts[kind] = counts.get(kind, 0) + 1
        names.append(f"{kind}{counts[kind]}")
    return names


def theoretical_speedup(spec: NetworkSpec, image_side: int) -> dict[int, float]:
    """s^2 m^2 / (s+m)^2 per conv layer, m = patch side entering that layer."""
    if image_side < 1:
        raise ValueError("image_side must be >= 1")
    sizes = layer_input_sizes(spec)
    s = float(image_side)
    out = {}
    for k, layer in enumerate(spec.layers):
        if isinstance(layer, ConvLayerSpec):
            m = float(sizes[k])
            out[k] = s * s * m * m / ((s + m) * (s + m))
    return out


def _bench_image(spec: NetworkSpec, image_side: int, dtype, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5, 0.5, (spec.input_channels, image_side, image_side)).astype(dtype)


def _time_dense_layers(plan: DensePlan, image: np.ndarray, reps: int,
                       threads: int, rng: np.random.Generator):
    """Per-layer forward and backward medians (ms) plus the cached run."""
    nlayers = len(plan.layers)
    fwd = [[] for _ in range(nlayers)]
    bwd = [[] for _ in range(nlayers)]
    delta_last = None
    for rep in range(reps + 1):  # rep 0 is the warm-up
        x = pad_image(plan, image)
        inputs = []
        argmax = {}
        for k in range(nlayers):
            inputs.append(x)
            t0 = time.perf_counter()
            x, arg = run_plan_layer(plan, k, x, threads)
            t1 = time.perf_counter()
            if arg is not None:
                argmax[k] = arg
            if rep:
                fwd[k].append((t1 - t0) * 1e3)
        if delta_last is None:
            delta_last = rng.uniform(-1.0, 1.0, x.shape).astype(image.dtype)
        delta = delta_last
        for k in range(nlayers - 1, -1, -1):
            layer = plan.layers[k]
            t0 = time.perf_counter()
            if isinstance(layer, DilatedConv):
                conv_backward_kernel(inputs[k], delta, layer, threads)
                if k > 0:
                    delta = conv_backward_data(delta, layer, threads)
            elif isinstance(layer, DilatedPool):
                if layer.base.kind == "max":
                    delta = maxpool_backward(delta, argmax[k], layer, threads)
                else:
                    delta = avgpool_backward(delta, layer, threads)
            else:
                delta = nonlin_backward(delta, inputs[k], layer.kind)
            t1 = time.perf_counter()
            if rep:
                bwd[k].append((t1 - t0) * 1e3)
    return [median(t) for t in fwd], [median(t) for t in bwd], delta_last


def _time_oracle_layers(spec: NetworkSpec, image: np.ndarray, step: int):
    """Accumulated per-layer strided times over a step x step pixel grid."""
    n = patch_size(spec)
    lead, trail = padding_margins(spec)
    padded = fmap.pad_rect(image, lead, trail, lead, trail, 0.0)
    h, w = image.shape[1], image.shape[2]
    wb = cast_weights(spec, image.dtype)
    pixels = [(y, x) for y in range(0, h, step) for x in range(0, w, step)]
    times = [0.0] * len(spec.layers)
    t_total0 = time.perf_counter()
    for y, x in pixels:
        patch = fmap.crop_patch(padded, y + lead, x + lead, n)
        a = patch
        for k, layer in enumerate(spec.layers):
            t0 = time.perf_counter()
            if isinstance(layer, ConvLayerSpec):
                a, _ = run_layer_strided(layer, a, *wb[k])
            else:
                a, _ = run_layer_strided(layer, a)
            t1 = time.perf_counter()
            times[k] += t1 - t0
    total = time.perf_counter() - t_total0
    scale = (h * w) / len(pixels)
    return [t * 1e3 * scale for t in times], total * 1e3 * scale, scale


def run_bench(spec: NetworkSpec, image_side: int, reps: int,
              with_oracle: bool = False, dtype=np.float32, threads: int = 1,
              seed: int = 0, oracle_step: int = 8) -> BenchReport:
    """Layerwise dense timings, optionally with the extrapolated baseline."""
    if reps < 3:
        raise ValueError("reps must be >= 3")
    plan = compile_plan(spec)
    image = _bench_image(spec, image_side, dtype, seed)
    rng = np.random.default_rng(seed + 1)
    report = BenchReport(
        image_side=image_side,
        patch_size=plan.patch_size,
        reps=reps,
        dtype=np.dtype(dtype).name,
        backend_name=backend.active(),
        threads=threads,
        oracle_step=None,
        oracle_scale=None,
    )

    fwd_ms, bwd_ms, delta_last = _time_dense_layers(plan, image, reps, threads, rng)

    oracle_ms = [None] * len(spec.layers)
    if with_oracle:
        step = max(1, min(oracle_step, image_side))
        oracle_ms, oracle_total, scale = _time_oracle_layers(spec, image, step)
        report.oracle_step = step
        report.oracle_scale = scale
        report.overall_oracle_fwd_ms = oracle_total

    theory = theoretical_speedup(spec, image_side)
    names = layer_names(spec)
    tick = time.get_clock_info("perf_counter").resolution * 10 * 1e3
    for k, layer in enumerate(spec.layers):
        if isinstance(layer, ConvLayerSpec):
            kernel, stride = layer.kernel_size, layer.stride
        elif isinstance(layer, PoolLayerSpec):
            kernel, stride = layer.kernel_size, layer.stride
        else:
            kernel = stride = None
        dilation = plan.dilations[k] if not isinstance(layer, NonlinLayerSpec) else None
        speedup = None
        if oracle_ms[k] is not None and fwd_ms[k] > 0:
            speedup = oracle_ms[k] / fwd_ms[k]
        report.layers.append(LayerTiming(
            index=k, name=names[k],
            kind=layer.kind if not isinstance(layer, ConvLayerSpec) else "conv",
            kernel=kernel, stride=stride, dilation=dilation,
            dense_fwd_ms=fwd_ms[k], dense_bwd_ms=bwd_ms[k],
            oracle_fwd_ms=oracle_ms[k], speedup_fwd=speedup,
            speedup_theory=theory.get(k),
        ))
        if fwd_ms[k] < tick:
            report.warnings.append(
                f"layer {names[k]} forward ran under 10 timer ticks; its timing "
                "is below the clock's useful resolution"
            )

    # whole-pass medians; per-layer instrumentation is excluded here
    full_fwd, full_bwd = [], []
    mask = ErrorMask.full(image_side, image_side)
    cache = dense_forward(plan, image, threads)
    for _ in range(reps):
        t0 = time.perf_counter()
        cache = dense_forward(plan, image, threads)
        t1 = time.perf_counter()
        dense_backward(plan, cache, delta_last, mask, threads)
        t2 = time.perf_counter()
        full_fwd.append((t1 - t0) * 1e3)
        full_bwd.append((t2 - t1) * 1e3)
    report.overall_fwd_ms = median(full_fwd)
    report.overall_bwd_ms = median(full_bwd)
    if report.overall_oracle_fwd_ms is not None and report.overall_fwd_ms > 0:
        report.overall_speedup_fwd = report.overall_oracle_fwd_ms / report.overall_fwd_ms
    return report


@dataclass
class MaskSweepReport:
    image_side: int
    sizes: list
    times_ms: list[float]
    spread: float
    ok: bool

    def format_table(self) -> str:
        lines = ["mask_size\tbackward_ms"]
        for size, t in zip(self.sizes, self.times_ms):
            lines.append(f"{size}\t{t:.3f}")
        lines.append(f"# spread {self.spread * 100:.1f}% "
                     f"({'ok' if self.ok else 'VIOLATES the <10% constant-complexity budget'})")
        return "\n".join(lines) + "\n"


def bench_mask_sweep(spec: NetworkSpec, image_side: int, mask_sizes,
                     reps: int = 5, dtype=np.float32, threads: int = 1,
                     seed: int = 0) -> MaskSweepReport:
    """Backward wall time per mask size; flags spreads above 10%."""
    plan = compile_plan(spec)
    image = _bench_image(spec, image_side, dtype, seed)
    cache = dense_forward(plan, image, threads)
    rng = np.random.default_rng(seed + 1)
    delta = rng.uniform(-1.0, 1.0, cache.output.shape).astype(image.dtype)
    total = image_side * image_side
    masks = []
    for size in mask_sizes:
        if size == "all":
            masks.append(ErrorMask.full(image_side, image_side))
            continue
        if not 0 <= size <= total:
            raise ValueError(f"mask size {size} exceeds the {total}-pixel image")
        flat = rng.choice(total, size=size, replace=False)
        masks.append(ErrorMask.of(image_side, image_side,
                                  ((int(i) // image_side, int(i) % image_side) for i in flat)))
    # interleave reps round-robin so allocator/clock drift hits all sizes alike
    samples: list[list[float]] = [[] for _ in masks]
    for mask in masks:
        dense_backward(plan, cache, delta, mask, threads)  # warm-up
    for _ in range(reps):
        for slot, mask in enumerate(masks):
            t0 = time.perf_counter()
            dense_backward(plan, cache, delta, mask, threads)
            samples[slot].append((time.perf_counter() - t0) * 1e3)
    times = [median(s) for s in samples]
    spread = (max(times) - min(times)) / min(times) if times else 0.0
    return MaskSweepReport(image_side=image_side, sizes=list(mask_sizes),
                           times_ms=times, spread=spread, ok=spread <= 0.10)


@dataclass
class BackendCompareReport:
    image_side: int
    reps: int
    rows: list[tuple[str, float, float]]  # backend, fwd ms, bwd ms

    def format_table(self) -> str:
        lines = ["backend\tdense_fwd_ms\tdense_bwd_ms"]
        for name, f, b in self.rows:
            lines.append(f"{name}\t{f:.3f}\t{b:.3f}")
        if len(self.rows) == 2:
            (a, fa, ba), (b_, fb, bb) = self.rows
            lines.append(f"# {a} vs {b_}: forward x{fb / fa:.1f}, backward x{bb / ba:.1f}")
        return "\n".join(lines) + "\n"


def compare_backends(spec: NetworkSpec, image_side: int, reps: int = 3,
                     dtype=np.float32, threads: int = 1,
                     seed: int = 0) -> BackendCompareReport:
    """Same workload on every available kernel backend (compiled vs numpy)."""
    plan = compile_plan(spec)
    image = _bench_image(spec, image_side, dtype, seed)
    rng = np.random.default_rng(seed + 1)
    mask = ErrorMask.full(image_side, image_side)
    rows = []
    previous = backend.active()
    try:
        for name in backend.available():
            backend.use(name)
            cache = dense_forward(plan, image, threads)  # warm-up
            delta = rng.uniform(-1.0, 1.0, cache.output.shape).astype(image.dtype)
            fwd, bwd = [], []
            for _ in range(reps):
                t0 = time.perf_counter()
                cache = dense_forward(plan, image, threads)
                t1 = time.perf_counter()
                dense_backward(plan, cache, delta, mask, threads)
                t2 = time.perf_counter()
                fwd.append((t1 - t0) * 1e3)
                bwd.append((t2 - t1) * 1e3)
            rows.append((name, median(fwd), median(bwd)))
    finally:
        backend.use(previous)
    return BackendCompareReport(image_side=image_side, reps=reps, rows=rows)
