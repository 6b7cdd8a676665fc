"""Differential verification: dense engine vs patch-by-patch vs finite differences.

The dense engine and the strided reference must agree exactly in float64 and
to 1e-6 in float32; gradients must additionally match central finite
differences. This module packages those three comparisons so the CLI `check`
subcommand can run them on any spec, and the test suite reuses it.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .backward import ErrorMask, dense_backward
from .fmap import max_abs_diff
from .forward import dense_forward
from .netspec import ConvLayerSpec, NetworkSpec
from .oracle import patch_backward_batch, scan_forward
from .plan import compile_plan

TOLERANCES = {
    np.dtype(np.float64): {"forward": 0.0, "backward": 1e-10, "fd_rel": 1e-4},
    np.dtype(np.float32): {"forward": 1e-6, "backward": 1e-6, "fd_rel": 1e-4},
}


def random_image(spec: NetworkSpec, side: int, seed: int, dtype=np.float64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5, 0.5, (spec.input_channels, side, side)).astype(dtype)


def forward_equivalence(spec: NetworkSpec, image: np.ndarray,
                        threads: int | None = None) -> float:
    """Max abs difference between the dense map and per-pixel patch scores."""
    plan = compile_plan(spec)
    dense = dense_forward(plan, image, threads).output
    scanned = scan_forward(spec, image)
    return max_abs_diff(dense, scanned)


def backward_equivalence(spec: NetworkSpec, image: np.ndarray, pixels,
                         seed: int = 0, threads: int | None = None) -> float:
    """Max abs difference between dense masked gradients and summed patch gradients."""
    plan = compile_plan(spec)
    cache = dense_forward(plan, image, threads)
    rng = np.random.default_rng(seed)
    delta_last = rng.uniform(-1.0, 1.0, cache.output.shape).astype(image.dtype)
    pixels = list(pixels)
    mask = ErrorMask.of(image.shape[1], image.shape[2], pixels)
    dense_grads = dense_backward(plan, cache, delta_last, mask, threads)
    deltas = [delta_last[:, y, x] for y, x in pixels]
    patch_grads = patch_backward_batch(spec, image, pixels, deltas)
    return dense_grads.max_abs_diff(patch_grads)


def _min_pool_gap(spec: NetworkSpec, image: np.ndarray) -> float:
    """Smallest nonzero best-vs-second margin over all max-pool windows.

    Windows whose top two taps are bitwise equal are exact ties from the
    constant zero-padding border; those resolve to the same argmax under any
    parameter perturbation and are ignored here. Near-ties between distinct
    values are what finite differencing cannot tolerate.
    """
    plan = compile_plan(spec)
    cache = dense_forward(plan, image)
    gap = np.inf
    for k, layer in enumerate(plan.layers):
        if k not in cache.argmax:
            continue
        p = layer.base.kernel_size
        if p == 1:
            continue
        d = layer.dilation
        x = cache.inputs[k]
        e = layer.extent
        ho, wo = x.shape[1] - e + 1, x.shape[2] - e + 1
        taps = np.stack([
            x[:, i * d:i * d + ho, j * d:j * d + wo]
            for i in range(p) for j in range(p)
        ])
        order = np.sort(taps, axis=0)
        margins = order[-1] - order[-2]
        nonzero = margins[margins > 0]
        if nonzero.size:
            gap = min(gap, float(np.min(nonzero)))
    return gap


@dataclass
class FiniteDiffResult:
    max_rel_err: float
    worst_param: tuple[int, str, int]  # layer index, "weights"/"bias", flat index
    checked: int


def finite_diff_check(spec: NetworkSpec, image: np.ndarray, seed: int = 0,
                      step: float = 1e-5, max_params: int | None = None,
                      threads: int | None = None) -> FiniteDiffResult:
    """Compare analytic gradients to central finite differences in float64.

    Loss is a linear functional of the output map restricted to a random mask,
    so delta_last equals the coefficient map. The image is jittered until all
    max-pool decisions have a comfortable margin, keeping the loss smooth over
    the +-step weight perturbations. With max_params set, a seeded sample of
    parameters is checked instead of all of them.
    """
    spec = copy.deepcopy(spec)  # perturbed in place below
    image = image.astype(np.float64)
    rng = np.random.default_rng(seed)
    # a +-step weight perturbation moves pool inputs by well under 10*step,
    # so a 10x wider margin keeps every argmax decision stable during FD
    for _ in range(64):
        if _min_pool_gap(spec, image) >= max(100.0 * step, 1e-4):
            break
        image = image + rng.uniform(-0.02, 0.02, image.shape)
    else:
        raise RuntimeError("could not jitter the image away from max-pool ties")

    plan = compile_plan(spec)
    cache = dense_forward(plan, image, threads)
    h, w = cache.output.shape[1], cache.output.shape[2]
    npick = max(1, (h * w) // 2)
    flat = rng.choice(h * w, size=npick, replace=False)
    mask = ErrorMask.of(h, w, ((int(i) // w, int(i) % w) for i in flat))
    coeff = rng.uniform(-1.0, 1.0, cache.output.shape)

    def loss() -> float:
        out = dense_forward(compile_plan(spec), image, threads).output
        return float(np.sum(out[:, mask._bool] * coeff[:, mask._bool]))

    analytic = dense_backward(plan, cache, coeff, mask, threads)

    params = []
    for k, layer in enumerate(spec.layers):
        if isinstance(layer, ConvLayerSpec):
            params.extend((k, "weights", i) for i in range(layer.weights.size))
            params.extend((k, "bias", i) for i in range(layer.bias.size))
    if not params:  # conv-free chain: nothing to differentiate
        return FiniteDiffResult(max_rel_err=0.0, worst_param=(-1, "", 0), checked=0)
    if max_params is not None and len(params) > max_params:
        picked = rng.choice(len(params), size=max_params, replace=False)
        params = [params[int(i)] for i in picked]

    worst = 0.0
    worst_param = params[0]
    for k, field, idx in params:
        array = getattr(spec.layers[k], field)
        keep = array.flat[idx]
        array.flat[idx] = keep + step
        up = loss()
        array.flat[idx] = keep - step
        down = loss()
        array.flat[idx] = keep
        fd = (up - down) / (2.0 * step)
        a = float((analytic.kernel if field == "weights" else analytic.bias)[k].flat[idx])
        denom = max(abs(a), abs(fd))
        if denom < 1e-10:
            continue
        rel = abs(a - fd) / denom
        if rel > worst:
            worst, worst_param = rel, (k, field, idx)
    return FiniteDiffResult(max_rel_err=worst, worst_param=worst_param,
                            checked=len(params))


@dataclass
class CheckResult:
    dtype: str
    forward_diff: float
    backward_diffs: dict[str, float]
    fd: FiniteDiffResult
    tolerances: dict[str, float]

    @property
    def ok(self) -> bool:
        tol = self.tolerances
        return (self.forward_diff <= tol["forward"]
                and all(d <= tol["backward"] for d in self.backward_diffs.values())
                and self.fd.max_rel_err < tol["fd_rel"])

    def format_lines(self) -> list[str]:
        tol = self.tolerances
        lines = [f"dtype\t{self.dtype}"]

        def verdict(value, bound):
            return "PASS" if value <= bound else "FAIL"

        lines.append(f"forward_max_abs_diff\t{self.forward_diff:.3e}\t"
                     f"tol {tol['forward']:.0e}\t{verdict(self.forward_diff, tol['forward'])}")
        for label, diff in self.backward_diffs.items():
            lines.append(f"backward_max_abs_diff[mask={label}]\t{diff:.3e}\t"
                         f"tol {tol['backward']:.0e}\t{verdict(diff, tol['backward'])}")
        lines.append(f"finite_diff_max_rel_err\t{self.fd.max_rel_err:.3e}\t"
                     f"tol {tol['fd_rel']:.0e}\t"
                     f"{'PASS' if self.fd.max_rel_err < tol['fd_rel'] else 'FAIL'}"
                     f"\t({self.fd.checked} params)")
        return lines


def run_check(spec: NetworkSpec, side: int, seed: int, dtype=np.float64,
              mask_sizes=(1, 5, "all"), fd_params: int | None = 128,
              threads: int | None = None) -> CheckResult:
    dtype = np.dtype(dtype)
    tol = TOLERANCES[dtype]
    image = random_image(spec, side, seed, dtype)
    fwd = forward_equivalence(spec, image, threads)
    rng = np.random.default_rng(seed + 1)
    h, w = side, side
    bwd = {}
    for size in mask_sizes:
        if size == "all":
            pixels = [(y, x) for y in range(h) for x in range(w)]
        else:
            flat = rng.choice(h * w, size=min(size, h * w), replace=False)
            pixels = [(int(i) // w, int(i) % w) for i in flat]
        bwd[str(size)] = backward_equivalence(spec, image, pixels,
                                              seed=seed + 2, threads=threads)
    fd = finite_diff_check(spec, image, seed=seed + 3, max_params=fd_params,
                           threads=threads)
    return CheckResult(dtype=dtype.name, forward_diff=fwd, backward_diffs=bwd,
                       fd=fd, tolerances=tol)
