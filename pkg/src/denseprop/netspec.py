"""Description of the original strided (patchwise) network.

A network is a linear chain of conv / pool / nonlin layers operating on one
image patch at a time and shrinking it to a 1x1 score vector. This module
parses the text description, validates it, and does the receptive-field
arithmetic that the dense engine builds on: the patch size the chain implies
and the image padding needed so every pixel owns a full patch.

Spec document grammar (one directive per line, '#' starts a comment):

    input channels=<u32>
    conv out=<u32> in=<u32> k=<u32> stride=<u32> weights=<path|seed:<u64>>
    pool kind=<max|avg> k=<u32> stride=<u32>
    nonlin kind=<tanh|relu|identity>

A `weights=` path points to an FMAP stream holding one (in, k, k) record per
output channel followed by a (1, 1, out) bias record. `seed:<u64>` draws
weights then bias uniformly from [-0.5, 0.5] with numpy's default generator.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import fmap

POOL_KINDS = ("max", "avg")
NONLIN_KINDS = ("tanh", "relu", "identity")


class SpecError(ValueError):
    """Malformed network description (syntax, dimensions, or channel chain)."""


@dataclass
class ConvLayerSpec:
    out_channels: int
    in_channels: int
    kernel_size: int
    stride: int
    weights: np.ndarray  # (out, in, k, k) float64
    bias: np.ndarray     # (out,) float64
    weights_source: str | None = None  # original `weights=` token, for round-trips

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise SpecError("conv kernel_size and stride must be >= 1")
        want = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        if self.weights.shape != want:
            raise SpecError(f"conv weights shape {self.weights.shape} != {want}")
        if self.bias.shape != (self.out_channels,):
            raise SpecError(f"conv bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def kind(self) -> str:
        return "conv"


@dataclass
class PoolLayerSpec:
    kind: str  # "max" | "avg"
    kernel_size: int
    stride: int

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise SpecError(f"pool kind must be one of {POOL_KINDS}, got {self.kind!r}")
        if self.kernel_size < 1 or self.stride < 1:
            raise SpecError("pool kernel_size and stride must be >= 1")


@dataclass
class NonlinLayerSpec:
    kind: str  # "tanh" | "relu" | "identity"

    def __post_init__(self):
        if self.kind not in NONLIN_KINDS:
            raise SpecError(f"nonlin kind must be one of {NONLIN_KINDS}, got {self.kind!r}")


LayerSpec = ConvLayerSpec | PoolLayerSpec | NonlinLayerSpec


@dataclass
class NetworkSpec:
    input_channels: int
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.input_channels < 1:
            raise SpecError("input channels must be >= 1")
        if not self.layers:
            raise SpecError("network has no layers")
        chain = self.input_channels
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayerSpec):
                if layer.in_channels != chain:
                    raise SpecError(
                        f"layer {idx}: conv expects {layer.in_channels} input channels "
                        f"but the chain carries {chain}"
                    )
                chain = layer.out_channels
        self.output_channels = chain
        # every valid chain must shrink an n x n patch to 1x1 with exact fit
        _simulate_patch(self, patch_size(self))

    def conv_layers(self) -> list[tuple[int, ConvLayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ConvLayerSpec)]


def seeded_weights(out_channels: int, in_channels: int, kernel_size: int,
                   seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic init: weights then bias, uniform [-0.5, 0.5]."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.5, 0.5, (out_channels, in_channels, kernel_size, kernel_size))
    b = rng.uniform(-0.5, 0.5, out_channels)
    return w, b


def _load_weight_file(path: str, out_channels: int, in_channels: int,
                      kernel_size: int) -> tuple[np.ndarray, np.ndarray]:
    records = fmap.read_fmap_all(path)
    if len(records) != out_channels + 1:
        raise SpecError(
            f"{path}: expected {out_channels} kernel records + 1 bias record, "
            f"got {len(records)}"
        )
    want = (in_channels, kernel_size, kernel_size)
    for i, rec in enumerate(records[:-1]):
        if rec.shape != want:
            raise SpecError(f"{path}: kernel record {i} has shape {rec.shape}, expected {want}")
    bias_rec = records[-1]
    if bias_rec.shape != (1, 1, out_channels):
        raise SpecError(
            f"{path}: bias record has shape {bias_rec.shape}, expected (1, 1, {out_channels})"
        )
    w = np.stack([r.astype(np.float64) for r in records[:-1]])
    b = bias_rec.reshape(out_channels).astype(np.float64)
    return w, b


def save_weight_file(path: str, weights: np.ndarray, bias: np.ndarray) -> None:
    """Inverse of the `weights=<path>` loader."""
    out_channels = weights.shape[0]
    records = [weights[o] for o in range(out_channels)]
    records.append(bias.reshape(1, 1, out_channels))
    fmap.write_fmap_all(path, records)


def _fields(parts: list[str], line_no: int, keys: tuple[str, ...]) -> dict[str, str]:
    got = {}
    for part in parts:
        if "=" not in part:
            raise SpecError(f"line {line_no}: expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        if key not in keys:
            raise SpecError(f"line {line_no}: unknown field {key!r}")
        if key in got:
            raise SpecError(f"line {line_no}: duplicate field {key!r}")
        got[key] = value
    missing = [k for k in keys if k not in got]
    if missing:
        raise SpecError(f"line {line_no}: missing field(s) {', '.join(missing)}")
    return got


def _u32(value: str, line_no: int, key: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise SpecError(f"line {line_no}: {key}={value!r} is not an integer") from None
    if not 0 <= n < 2 ** 32:
        raise SpecError(f"line {line_no}: {key}={n} out of u32 range")
    return n


def parse_spec(text: str, base_dir: str | None = None) -> NetworkSpec:
    """Parse a spec document; weight paths resolve relative to base_dir."""
    input_channels = None
    layers: list[LayerSpec] = []
    chain = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        directive, rest = parts[0], parts[1:]
        if directive == "input":
            if input_channels is not None:
                raise SpecError(f"line {line_no}: duplicate input directive")
            if layers:
                raise SpecError(f"line {line_no}: input directive must come first")
            input_channels = _u32(_fields(rest, line_no, ("channels",))["channels"], line_no, "channels")
            if input_channels < 1:
                raise SpecError(f"line {line_no}: input channels must be >= 1")
            chain = input_channels
        elif directive == "conv":
            if input_channels is None:
                raise SpecError(f"line {line_no}: conv before input directive")
            f = _fields(rest, line_no, ("out", "in", "k", "stride", "weights"))
            out = _u32(f["out"], line_no, "out")
            inc = _u32(f["in"], line_no, "in")
            k = _u32(f["k"], line_no, "k")
            stride = _u32(f["stride"], line_no, "stride")
            if min(out, inc, k, stride) < 1:
                raise SpecError(f"line {line_no}: conv dimensions must be >= 1")
            if inc != chain:
                raise SpecError(
                    f"line {line_no}: conv expects in={inc} but the channel chain carries {chain}"
                )
            source = f["weights"]
            if source.startswith("seed:"):
                try:
                    seed = int(source[len("seed:"):])
                except ValueError:
                    raise SpecError(f"line {line_no}: bad seed token {source!r}") from None
                if not 0 <= seed < 2 ** 64:
                    raise SpecError(f"line {line_no}: seed {seed} out of u64 range")
                w, b = seeded_weights(out, inc, k, seed)
            else:
                path = source if base_dir is None else os.path.join(base_dir, source)
                w, b = _load_weight_file(path, out, inc, k)
            layers.append(ConvLayerSpec(out, inc, k, stride, w, b, weights_source=source))
            chain = out
        elif directive == "pool":
            if input_channels is None:
                raise SpecError(f"line {line_no}: pool before input directive")
            f = _fields(rest, line_no, ("kind", "k", "stride"))
            k = _u32(f["k"], line_no, "k")
            stride = _u32(f["stride"], line_no, "stride")
            if min(k, stride) < 1:
                raise SpecError(f"line {line_no}: pool dimensions must be >= 1")
            if f["kind"] not in POOL_KINDS:
                raise SpecError(f"line {line_no}: pool kind must be max or avg")
            layers.append(PoolLayerSpec(f["kind"], k, stride))
        elif directive == "nonlin":
            if input_channels is None:
                raise SpecError(f"line {line_no}: nonlin before input directive")
            f = _fields(rest, line_no, ("kind",))
            if f["kind"] not in NONLIN_KINDS:
                raise SpecError(f"line {line_no}: nonlin kind must be tanh, relu or identity")
            layers.append(NonlinLayerSpec(f["kind"]))
        else:
            raise SpecError(f"line {line_no}: unknown directive {directive!r}")
    if input_channels is None:
        raise SpecError("missing input directive")
    return NetworkSpec(input_channels, layers)


def format_spec(spec: NetworkSpec) -> str:
    """Render back to document form. Conv layers need a weights_source token."""
    lines = [f"input channels={spec.input_channels}"]
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, ConvLayerSpec):
            if layer.weights_source is None:
                raise SpecError(
                    f"layer {idx}: in-memory weights have no source token; "
                    "save them with save_weight_file first"
                )
            lines.append(
                f"conv out={layer.out_channels} in={layer.in_channels} "
                f"k={layer.kernel_size} stride={layer.stride} weights={layer.weights_source}"
            )
        elif isinstance(layer, PoolLayerSpec):
            lines.append(f"pool kind={layer.kind} k={layer.kernel_size} stride={layer.stride}")
        else:
            lines.append(f"nonlin kind={layer.kind}")
    return "\n".join(lines) + "\n"


def patch_size(spec: NetworkSpec) -> int:
    """Input side n that the strided chain maps to a 1x1 output.

    Backward recurrence from the 1x1 output: size <- (size-1)*stride + kernel
    through conv/pool layers; nonlinearities preserve size.
    """
    size = 1
    for layer in reversed(spec.layers):
        if isinstance(layer, (ConvLayerSpec, PoolLayerSpec)):
            size = (size - 1) * layer.stride + layer.kernel_size
    return size


def _simulate_patch(spec: NetworkSpec, n: int) -> list[int]:
    """Forward size arithmetic on an n x n patch; errors name the bad layer."""
    sizes = [n]
    size = n
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, (ConvLayerSpec, PoolLayerSpec)):
            if size < layer.kernel_size:
                raise SpecError(
                    f"layer {idx} ({layer.kind} k={layer.kernel_size}): "
                    f"window larger than its {size}x{size} input"
                )
            if (size - layer.kernel_size) % layer.stride != 0:
                raise SpecError(
                    f"layer {idx} ({layer.kind} k={layer.kernel_size} stride={layer.stride}): "
                    f"windows do not tile a {size}x{size} input exactly"
                )
            size = (size - layer.kernel_size) // layer.stride + 1
        sizes.append(size)
    if size != 1:
        raise SpecError(f"patch of size {n} ends at {size}x{size}, not 1x1")
    return sizes


def layer_input_sizes(spec: NetworkSpec) -> list[int]:
    """Patch side seen by each layer in the original strided run (plus final 1)."""
    return _simulate_patch(spec, patch_size(spec))


def padding_margin(spec: NetworkSpec) -> int:
    """Leading-side image padding: floor(patch_size / 2)."""
    return patch_size(spec) // 2


def padding_margins(spec: NetworkSpec) -> tuple[int, int]:
    """(leading, trailing) margins; they differ only for even patch sizes."""
    n = patch_size(spec)
    return n // 2, n - 1 - n // 2
