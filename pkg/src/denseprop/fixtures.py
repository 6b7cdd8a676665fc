"""Deterministic fixture generators for the CLI and tests.

Each kind writes a spec document plus a random input image; `random-small`
also materializes its weights as FMAP files to exercise the `weights=<path>`
route. Everything derives from one master seed: layer k uses seed token
master*10000+k, the image uses master*10000+9999. Images are uniform
[-0.5, 0.5] float32.
"""

from __future__ import annotations

import os

import numpy as np

from . import fmap
from .netspec import NetworkSpec, parse_spec, save_weight_file, seeded_weights

KINDS = ("example-net", "plain-cnn1", "rcnn3-chain", "random-small")

DEFAULT_IMAGE_SIDE = {
    "example-net": 5,
    "plain-cnn1": 64,
    "rcnn3-chain": 64,
    "random-small": 12,
}


def _seed_token(master: int, k: int) -> str:
    return f"seed:{master * 10000 + k}"


def example_net_text(seed: int = 0) -> str:
    """Five single-channel layers: three convs around two strided max pools."""
    return "\n".join([
        "input channels=1",
        f"conv out=1 in=1 k=2 stride=1 weights={_seed_token(seed, 0)}",
        "pool kind=max k=2 stride=2",
        f"conv out=1 in=1 k=2 stride=1 weights={_seed_token(seed, 2)}",
        "pool kind=max k=3 stride=3",
        f"conv out=1 in=1 k=2 stride=1 weights={_seed_token(seed, 4)}",
    ]) + "\n"


def plain_cnn1_text(seed: int = 0, channels: tuple[int, int, int] = (50, 50, 32),
                    in_channels: int = 3, pool1: tuple[int, int] = (8, 8)) -> str:
    """conv6/pool/tanh/conv3/pool2/tanh/conv7 stack; pool1 geometry sets the patch size.

    pool1 (2,2) -> 37, (4,4) -> 69, (8,8) -> 133. Shrink the channel counts to
    get a cheap net with the same receptive-field structure.
    """
    c1, c2, c3 = channels
    pk, ps = pool1
    return "\n".join([
        f"input channels={in_channels}",
        f"conv out={c1} in={in_channels} k=6 stride=1 weights={_seed_token(seed, 0)}",
        f"pool kind=max k={pk} stride={ps}",
        "nonlin kind=tanh",
        f"conv out={c2} in={c1} k=3 stride=1 weights={_seed_token(seed, 3)}",
        "pool kind=max k=2 stride=2",
        "nonlin kind=tanh",
        f"conv out={c3} in={c2} k=7 stride=1 weights={_seed_token(seed, 6)}",
    ]) + "\n"


def rcnn3_chain_text(seed: int = 0) -> str:
    """Three unrolled stages of conv8/pool2/tanh/conv8/conv1 as a plain chain."""
    lines = ["input channels=3"]
    chain = 3
    k = 1
    for _ in range(3):
        lines.append(f"conv out=25 in={chain} k=8 stride=1 weights={_seed_token(seed, k)}")
        lines.append("pool kind=max k=2 stride=2")
        lines.append("nonlin kind=tanh")
        lines.append(f"conv out=50 in=25 k=8 stride=1 weights={_seed_token(seed, k + 3)}")
        lines.append(f"conv out=32 in=50 k=1 stride=1 weights={_seed_token(seed, k + 4)}")
        chain = 32
        k += 5
    return "\n".join(lines) + "\n"


def random_small_layers(seed: int = 0):
    """conv/maxpool/tanh/conv chain with concrete weight arrays (for files)."""
    w1, b1 = seeded_weights(4, 3, 3, seed * 10000 + 0)
    w2, b2 = seeded_weights(2, 4, 3, seed * 10000 + 3)
    return [("conv1", w1, b1), ("conv2", w2, b2)]


def random_small_text(weight_paths: tuple[str, str]) -> str:
    return "\n".join([
        "input channels=3",
        f"conv out=4 in=3 k=3 stride=1 weights={weight_paths[0]}",
        "pool kind=max k=3 stride=3",
        "nonlin kind=tanh",
        f"conv out=2 in=4 k=3 stride=1 weights={weight_paths[1]}",
    ]) + "\n"


def make_image(spec: NetworkSpec, side: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed * 10000 + 9999)
    return rng.uniform(-0.5, 0.5,
                       (spec.input_channels, side, side)).astype(np.float32)


def generate_fixture(kind: str, seed: int, out_dir: str,
                     image_side: int | None = None) -> dict[str, str]:
    """Write the spec/weights/image files for `kind`; returns path map."""
    if kind not in KINDS:
        raise ValueError(f"unknown fixture kind {kind!r}; choose from {KINDS}")
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}
    if kind == "example-net":
        text = example_net_text(seed)
    elif kind == "plain-cnn1":
        text = plain_cnn1_text(seed)
    elif kind == "rcnn3-chain":
        text = rcnn3_chain_text(seed)
    else:
        weight_names = []
        for name, w, b in random_small_layers(seed):
            fname = f"{name}.weights.fmap"
            save_weight_file(os.path.join(out_dir, fname), w, b)
            paths[fname] = os.path.join(out_dir, fname)
            weight_names.append(fname)
        text = random_small_text(tuple(weight_names))
    spec_path = os.path.join(out_dir, f"{kind}.net")
    with open(spec_path, "w") as fh:
        fh.write(text)
    paths["spec"] = spec_path
    spec = parse_spec(text, base_dir=out_dir)
    side = DEFAULT_IMAGE_SIDE[kind] if image_side is None else image_side
    image_path = os.path.join(out_dir, "image.fmap")
    fmap.write_fmap(image_path, make_image(spec, side, seed))
    paths["image"] = image_path
    return paths
