"""Command-line front end.

Subcommands: compile, forward, backward, oracle forward|backward, bench,
check, fixture. Exit codes: 0 success, 1 validation/usage error, 2 check
verification failure. Engine thread count comes from --threads or the
DENSEPROP_THREADS environment variable; the kernel backend from --backend or
DENSEPROP_BACKEND.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import backend, fixtures, fmap
from .backward import ErrorMask, dense_backward
from .bench import bench_mask_sweep, compare_backends, run_bench
from .check import run_check
from .forward import dense_forward
from .netspec import ConvLayerSpec, NetworkSpec, SpecError, parse_spec
from .oracle import patch_backward_batch, scan_forward
from .plan import DilatedConv, DilatedPool, compile_plan


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _dtype(bits: str):
    return np.float32 if bits == "32" else np.float64


def _add_engine_flags(p: argparse.ArgumentParser, dtype_default: str = "64"):
    p.add_argument("--threads", type=int, default=None,
                   help="engine threads (default: DENSEPROP_THREADS or 1)")
    p.add_argument("--backend", choices=["auto", "compiled", "python"],
                   default=None, help="kernel backend override")
    p.add_argument("--dtype", choices=["32", "64"], default=dtype_default,
                   help=f"float width (default {dtype_default})")


def _load_spec(path: str) -> NetworkSpec:
    with open(path) as fh:
        text = fh.read()
    return parse_spec(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _load_image(path: str, dtype) -> np.ndarray:
    return fmap.read_fmap(path).astype(dtype)


def _parse_mask_arg(text: str, height: int, width: int) -> ErrorMask:
    if text == "all":
        return ErrorMask.full(height, width)
    with open(text) as fh:
        return ErrorMask.parse(fh.read(), height, width)


def _parse_sizes(text: str):
    sizes = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        sizes.append("all" if token == "all" else int(token))
    if not sizes:
        raise ValueError("empty size list")
    return sizes


def build_parser() -> _Parser:
    parser = _Parser(prog="denseprop",
                     description="dense whole-image CNN propagation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", parents=[], help="print the dense plan for a spec")
    p.add_argument("--spec", required=True)

    p = sub.add_parser("forward", help="dense forward pass over an image")
    p.add_argument("--spec", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-layers", metavar="DIR",
                   help="also write every layer input map into DIR")
    _add_engine_flags(p)

    p = sub.add_parser("backward", help="dense masked backward pass")
    p.add_argument("--spec", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--target", required=True,
                   help="target map; the error is prediction - target")
    p.add_argument("--mask", required=True,
                   help="mask file (`y x` per line) or the literal `all`")
    p.add_argument("--out", required=True, help="directory for gradient FMAPs")
    p.add_argument("--input-grad", action="store_true",
                   help="also write the error propagated to the input image")
    _add_engine_flags(p)

    p = sub.add_parser("oracle", help="patch-by-patch reference runs")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    po = osub.add_parser("forward", help="scan every pixel patch independently")
    po.add_argument("--spec", required=True)
    po.add_argument("--image", required=True)
    po.add_argument("--out", required=True)
    _add_engine_flags(po)
    po = osub.add_parser("backward", help="summed per-patch gradients")
    po.add_argument("--spec", required=True)
    po.add_argument("--image", required=True)
    po.add_argument("--target", required=True)
    po.add_argument("--mask", required=True)
    po.add_argument("--out", required=True)
    _add_engine_flags(po)

    p = sub.add_parser("bench", help="layerwise timing harness")
    p.add_argument("--spec", required=True)
    p.add_argument("--size", type=int, required=True, help="square image side")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true",
                   help="also time the patch-by-patch baseline (sub-sampled)")
    p.add_argument("--oracle-step", type=int, default=8,
                   help="pixel grid stride for baseline sampling")
    p.add_argument("--mask-sweep", metavar="SIZES",
                   help="comma list of mask sizes (int or `all`) to time backward with")
    p.add_argument("--compare-backends", action="store_true",
                   help="time every available kernel backend on the same workload")
    p.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    _add_engine_flags(p, dtype_default="32")

    p = sub.add_parser("check", help="dense-vs-oracle and finite-difference verification")
    p.add_argument("--spec", required=True)
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks", default="1,5,all",
                   help="comma list of backward mask sizes (int or `all`)")
    p.add_argument("--fd-params", type=int, default=128,
                   help="how many parameters to finite-difference (0 = all)")
    _add_engine_flags(p)

    p = sub.add_parser("fixture", help="write deterministic spec/image fixtures")
    p.add_argument("--kind", choices=fixtures.KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--image-size", type=int, default=None)

    return parser


def _cmd_compile(args) -> int:
    spec = _load_spec(args.spec)
    plan = compile_plan(spec)
    print(f"patch_size\t{plan.patch_size}")
    print(f"padding_margin\t{plan.lead_margin}")
    print("layer\tkind\tkernel\tstride\tdilation\textent")
    for k, layer in enumerate(plan.layers):
        if isinstance(layer, DilatedConv):
            base = layer.base
            print(f"{k}\tconv\t{base.kernel_size}\t{base.stride}\t"
                  f"{layer.dilation}\t{layer.extent}")
        elif isinstance(layer, DilatedPool):
            base = layer.base
            print(f"{k}\tpool/{base.kind}\t{base.kernel_size}\t{base.stride}\t"
                  f"{layer.dilation}\t{layer.extent}")
        else:
            print(f"{k}\tnonlin/{layer.kind}\t-\t-\t-\t-")
    return 0


def _cmd_forward(args) -> int:
    spec = _load_spec(args.spec)
    plan = compile_plan(spec)
    image = _load_image(args.image, _dtype(args.dtype))
    cache = dense_forward(plan, image, args.threads)
    fmap.write_fmap(args.out, cache.output)
    if args.dump_layers:
        os.makedirs(args.dump_layers, exist_ok=True)
        for k, x in enumerate(cache.inputs):
            fmap.write_fmap(os.path.join(args.dump_layers, f"x{k:02d}.fmap"), x)
        fmap.write_fmap(os.path.join(args.dump_layers, "output.fmap"), cache.output)
    print(f"wrote {args.out} ({cache.output.shape[0]}x"
          f"{cache.output.shape[1]}x{cache.output.shape[2]})")
    return 0


def _write_gradients(out_dir: str, spec: NetworkSpec, grads) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for k, layer in enumerate(spec.layers):
        if not isinstance(layer, ConvLayerSpec):
            continue
        kpath = os.path.join(out_dir, f"layer{k:02d}.kernel.fmap")
        records = [grads.kernel[k][o] for o in range(layer.out_channels)]
        fmap.write_fmap_all(kpath, records)
        bpath = os.path.join(out_dir, f"layer{k:02d}.bias.fmap")
        fmap.write_fmap(bpath, grads.bias[k].reshape(1, 1, -1))
    if grads.input_delta is not None:
        fmap.write_fmap(os.path.join(out_dir, "input_delta.fmap"), grads.input_delta)


def _cmd_backward(args) -> int:
    spec = _load_spec(args.spec)
    plan = compile_plan(spec)
    image = _load_image(args.image, _dtype(args.dtype))
    target = _load_image(args.target, _dtype(args.dtype))
    cache = dense_forward(plan, image, args.threads)
    if target.shape != cache.output.shape:
        raise ValueError(
            f"target shape {target.shape} != output shape {cache.output.shape}")
    delta = cache.output - target  # squared-error helper: d/dy of 0.5*(y-t)^2
    mask = _parse_mask_arg(args.mask, image.shape[1], image.shape[2])
    grads = dense_backward(plan, cache, delta, mask, args.threads,
                           with_input_grad=args.input_grad)
    _write_gradients(args.out, spec, grads)
    print(f"wrote gradients for {len(spec.conv_layers())} conv layers to {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    spec = _load_spec(args.spec)
    image = _load_image(args.image, _dtype(args.dtype))
    if args.oracle_command == "forward":
        out = scan_forward(spec, image)
        fmap.write_fmap(args.out, out)
        print(f"wrote {args.out} ({out.shape[0]}x{out.shape[1]}x{out.shape[2]})")
        return 0
    target = _load_image(args.target, _dtype(args.dtype))
    plan = compile_plan(spec)
    cache = dense_forward(plan, image, args.threads)
    if target.shape != cache.output.shape:
        raise ValueError(
            f"target shape {target.shape} != output shape {cache.output.shape}")
    delta = cache.output - target
    mask = _parse_mask_arg(args.mask, image.shape[1], image.shape[2])
    pixels = sorted(mask.selected)
    deltas = [delta[:, y, x] for y, x in pixels]
    grads = patch_backward_batch(spec, image, pixels, deltas)
    _write_gradients(args.out, spec, grads)
    print(f"wrote per-patch gradients for {len(pixels)} pixels to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    spec = _load_spec(args.spec)
    dtype = _dtype(args.dtype)
    threads = args.threads if args.threads is not None else backend.default_threads()
    if args.compare_backends:
        report = compare_backends(spec, args.size, max(args.reps, 3),
                                  dtype=dtype, threads=threads, seed=args.seed)
        sys.stdout.write(report.format_table())
        return 0
    if args.mask_sweep:
        sweep = bench_mask_sweep(spec, args.size, _parse_sizes(args.mask_sweep),
                                 reps=args.reps, dtype=dtype, threads=threads,
                                 seed=args.seed)
        sys.stdout.write(sweep.format_table())
        return 0
    report = run_bench(spec, args.size, args.reps, with_oracle=args.oracle,
                       dtype=dtype, threads=threads, seed=args.seed,
                       oracle_step=args.oracle_step)
    sys.stdout.write(report.format_table())
    if args.csv:
        report.write_csv(args.csv)
        print(f"# csv written to {args.csv}")
    return 0


def _cmd_check(args) -> int:
    spec = _load_spec(args.spec)
    result = run_check(spec, args.size, args.seed, dtype=_dtype(args.dtype),
                       mask_sizes=_parse_sizes(args.masks),
                       fd_params=args.fd_params or None, threads=args.threads)
    for line in result.format_lines():
        print(line)
    print("check\t" + ("PASS" if result.ok else "FAIL"))
    return 0 if result.ok else 2


def _cmd_fixture(args) -> int:
    paths = fixtures.generate_fixture(args.kind, args.seed, args.out,
                                      image_side=args.image_size)
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")
    return 0


_COMMANDS = {
    "compile": _cmd_compile,
    "forward": _cmd_forward,
    "backward": _cmd_backward,
    "oracle": _cmd_oracle,
    "bench": _cmd_bench,
    "check": _cmd_check,
    "fixture": _cmd_fixture,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "backend", None):
        backend.use(args.backend)
    try:
        return _COMMANDS[args.command](args)
    except (SpecError, ValueError, OSError) as exc:
        sys.stderr.write(f"denseprop: error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
