"""The deepfish-tiny reference model: stem + 4 inverted-residual blocks + head.

A 32x32x1 two-class classifier small enough for desk-scale suites, while
still exercising stride-2 downsampling, expansion ratios 1/3/6, 3x3 and 5x5
depthwise kernels and both residual cases. Weights are frozen: they derive
deterministically from fixed splitmix64 streams, so the shipped blob can
always be regenerated bit-for-bit.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import graph as g
from .engine_float import FloatModel, WeightStore, weight_shape
from .rng import substream

FIXTURE_NAME = "deepfish-tiny"
WEIGHT_SEED = 20260317
INPUT_SEED = 727
CALIBRATION_SEED = 31415
CALIBRATION_COUNT = 64

# (out_ch, kernel, expansion, stride) per block; input channels chain through
_BLOCKS = (
    (16, 3, 3, 2),
    (16, 3, 6, 1),  # skip: stride 1, equal channels
    (24, 5, 6, 2),
    (24, 3, 1, 1),  # skip again, expansion-1 degenerate case
)
_STEM_CHANNELS = 8
_CLASSES = 2


def deepfish_tiny_graph() -> g.ModelGraph:
    layers = [
        g.LayerOp(g.CONV2D, "stem", ("input",), "stem_raw",
                  kernel=3, stride=2, out_channels=_STEM_CHANNELS),
        g.LayerOp(g.RELU6, "stem_act", ("stem_raw",), "stem_out"),
    ]
    in_ch, in_name = _STEM_CHANNELS, "stem_out"
    for i, (out_ch, kernel, expansion, stride) in enumerate(_BLOCKS):
        block = g.build_inverted_residual(
            in_ch, out_ch, kernel, expansion, stride,
            input_name=in_name, prefix=f"b{i}",
        )
        layers.extend(block)
        in_name = g.block_output_name(block)
        in_ch = out_ch
    layers += [
        g.LayerOp(g.GLOBAL_AVG_POOL, "pool", (in_name,), "pool_out"),
        g.LayerOp(g.FULLY_CONNECTED, "head", ("pool_out",), "logits",
                  out_channels=_CLASSES),
        g.LayerOp(g.ARGMAX_HEAD, "classify", ("logits",), "class_idx"),
    ]
    input_spec = g.TensorSpec("input", (32, 32, 1), g.REAL32)
    return g.infer_shapes(g.make_graph(input_spec, layers))


def init_weights(graph: g.ModelGraph, seed: int) -> WeightStore:
    """Deterministic weights: per-tensor splitmix64 streams, fan-in scaled."""
    weights: WeightStore = {}
    stream = 0
    for layer in graph.layers:
        if layer.kind not in g.PARAM_KINDS:
            continue
        wshape = weight_shape(layer, graph.tensor(layer.inputs[0]))
        fan_in = int(np.prod(wshape[1:])) if layer.kind != g.DEPTHWISE else layer.kernel**2
        limit = math.sqrt(6.0 / fan_in)
        rng = substream(seed, stream)
        weights[layer.weight_name] = rng.uniform_array(
            int(np.prod(wshape)), -limit, limit
        ).reshape(wshape)
        stream += 1
        rng = substream(seed, stream)
        bias_n = graph.tensor(layer.output).shape[2]
        weights[layer.bias_name] = rng.uniform_array(bias_n, -0.1, 0.1)
        stream += 1
    return weights


@lru_cache(maxsize=1)
def _frozen_weights() -> tuple:
    """Seeded weights with the head bias recentered over the calibration set.

    Raw random biases leave one logit dominant on every in-distribution
    input, which would make class-boundary behaviour untestable. Recentering
    brings the logits within two noise standard deviations of a tie: both
    classes occur, while staying clear of the band where int8 rounding flips
    the argmax. Deterministic: the pass runs on the seeded calibration set.
    """
    from .engine_float import run_float

    graph = deepfish_tiny_graph()
    weights = init_weights(graph, WEIGHT_SEED)
    logits = np.stack([
        run_float(graph, weights, x) for x in calibration_inputs()
    ])
    gap = logits[:, 0] - logits[:, 1]
    delta = logits.mean(axis=0).astype(np.float64)
    delta[1] += 2.0 * gap.std()  # keep the mean gap two sigmas from the tie
    weights["head.b"] = (weights["head.b"] - delta).astype(np.float32)
    return tuple(sorted(weights.items()))


def deepfish_tiny_weights(graph: g.ModelGraph | None = None) -> WeightStore:
    """Frozen fixture weights, regenerable bit-for-bit from WEIGHT_SEED."""
    return {name: arr.copy() for name, arr in _frozen_weights()}


def deepfish_tiny_model() -> FloatModel:
    graph = deepfish_tiny_graph()
    return FloatModel(FIXTURE_NAME, graph, deepfish_tiny_weights(graph))


def fixture_inputs(count: int, seed: int = INPUT_SEED) -> list[np.ndarray]:
    """Deterministic 32x32x1 tensors in [0, 1), one substream per input."""
    out = []
    for i in range(count):
        rng = substream(seed, i)
        out.append(rng.uniform_array(32 * 32).reshape(32, 32, 1))
    return out


def calibration_inputs() -> list[np.ndarray]:
    return fixture_inputs(CALIBRATION_COUNT, CALIBRATION_SEED)


def write_synthetic_dataset(root, per_class: int = 20, seed: int = 4242,
                            width: int = 48, height: int = 36) -> None:
    """Two-class PPM dataset for evaluate/preprocess demos and regressions.

    class_a images are noise biased bright, class_b dark; both derive from
    splitmix64 streams so the dataset is identical on every machine.
    """
    from pathlib import Path

    from .preprocess import RawImage, encode_ppm

    root = Path(root)
    for ci, (cname, lo, hi) in enumerate((("class_a", 96, 255), ("class_b", 0, 160))):
        cdir = root / cname
        cdir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            rng = substream(seed + ci, i)
            raw = rng.int8_array(width * height * 3).astype(np.int64) + 128
            pixels = (lo + (raw * (hi - lo)) // 255).astype(np.uint8)
            image = RawImage(width, height, pixels.reshape(height, width, 3))
            (cdir / f"{cname}_{i:03d}.ppm").write_bytes(encode_ppm(image))
