"""Real-valued reference engine: the oracle the integer path is held against.

Kernels accumulate in float64 and store float32 per tensor, with a fixed
per-output traversal order (kernel row, kernel column, input channel) so
results do not depend on BLAS dispatch or threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as g
from .errors import GraphError, NumericError, WeightLookupError

WeightStore = dict[str, np.ndarray]


@dataclass
class FloatModel:
    name: str
    graph: g.ModelGraph
    weights: WeightStore


def weight_shape(layer: g.LayerOp, in_spec: g.TensorSpec) -> tuple[int, ...]:
    """Expected parameter shapes; conv order is (out, krow, kcol, in)."""
    h, w, c = in_spec.shape
    if layer.kind == g.CONV2D:
        return (layer.out_channels, layer.kernel, layer.kernel, c)
    if layer.kind == g.DEPTHWISE:
        return (c, layer.kernel, layer.kernel)
    if layer.kind == g.FULLY_CONNECTED:
        return (layer.out_channels, h * w * c)
    raise GraphError(f"layer {layer.name!r} ({layer.kind}) carries no weights")


def check_weights(model_graph: g.ModelGraph, weights: WeightStore) -> None:
    """Verify presence, shape and finiteness of every parameter tensor."""
    for layer in model_graph.layers:
        if layer.kind not in g.PARAM_KINDS:
            continue
        in_spec = model_graph.tensor(layer.inputs[0])
        expected_w = weight_shape(layer, in_spec)
        expected_b = (model_graph.tensor(layer.output).shape[2],)
        for name, expected in ((layer.weight_name, expected_w), (layer.bias_name, expected_b)):
            if name not in weights:
                raise WeightLookupError(f"missing weights for {name!r}")
            arr = weights[name]
            if tuple(arr.shape) != expected:
                raise WeightLookupError(
                    f"{name!r}: shape {tuple(arr.shape)} does not match inferred {expected}"
                )
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name!r} contains non-finite values")


def _pad_same(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    (pt, pb) = g.same_padding(x.shape[0], kernel, stride)
    (pl, pr) = g.same_padding(x.shape[1], kernel, stride)
    return np.pad(x, ((pt, pb), (pl, pr), (0, 0)))


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: str) -> np.ndarray:
    k = w.shape[1]
    xp = _pad_same(x, k, stride) if padding == "same" else x
    oh = (xp.shape[0] - k) // stride + 1
    ow = (xp.shape[1] - k) // stride + 1
    acc = np.zeros((oh, ow, w.shape[0]), dtype=np.float64)
    x64 = xp.astype(np.float64)
    w64 = w.astype(np.float64)
    for kr in range(k):
        for kc in range(k):
            tap = x64[kr : kr + oh * stride : stride, kc : kc + ow * stride : stride, :]
            acc += np.einsum("hwc,oc->hwo", tap, w64[:, kr, kc, :], optimize=False)
    return (acc + b.astype(np.float64)).astype(np.float32)


def _depthwise(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: str) -> np.ndarray:
    k = w.shape[1]
    xp = _pad_same(x, k, stride) if padding == "same" else x
    oh = (xp.shape[0] - k) // stride + 1
    ow = (xp.shape[1] - k) // stride + 1
    acc = np.zeros((oh, ow, w.shape[0]), dtype=np.float64)
    x64 = xp.astype(np.float64)
    w64 = w.astype(np.float64)
    for kr in range(k):
        for kc in range(k):
            tap = x64[kr : kr + oh * stride : stride, kc : kc + ow * stride : stride, :]
            acc += tap * w64[:, kr, kc][None, None, :]
    return (acc + b.astype(np.float64)).astype(np.float32)


def trace_activations(model_graph: g.ModelGraph, weights: WeightStore, x: np.ndarray) -> dict[str, np.ndarray]:
    """Execute the schedule, returning every tensor (graph input included)."""
    spec = model_graph.input_spec
    if tuple(x.shape) != spec.shape:
        raise GraphError(f"input shape {tuple(x.shape)} does not match {spec.shape}")
    check_weights(model_graph, weights)
    acts: dict[str, np.ndarray] = {model_graph.input_name: x.astype(np.float32)}
    for idx in model_graph.schedule:
        layer = model_graph.layers[idx]
        a = acts[layer.inputs[0]]
        if layer.kind == g.CONV2D:
            out = _conv2d(a, weights[layer.weight_name], weights[layer.bias_name],
                          layer.stride, layer.padding)
        elif layer.kind == g.DEPTHWISE:
            out = _depthwise(a, weights[layer.weight_name], weights[layer.bias_name],
                             layer.stride, layer.padding)
        elif layer.kind == g.FULLY_CONNECTED:
            w = weights[layer.weight_name].astype(np.float64)
            b = weights[layer.bias_name].astype(np.float64)
            flat = a.astype(np.float64).reshape(-1)
            out = (np.einsum("oc,c->o", w, flat, optimize=False) + b).astype(np.float32)
            out = out.reshape(1, 1, -1)
        elif layer.kind == g.RELU6:
            out = np.minimum(np.maximum(a, np.float32(0.0)), np.float32(6.0))
        elif layer.kind == g.GLOBAL_AVG_POOL:
            out = a.astype(np.float64).mean(axis=(0, 1)).astype(np.float32).reshape(1, 1, -1)
        elif layer.kind == g.RESIDUAL_ADD:
            bafter = acts[layer.inputs[1]]
            out = (a.astype(np.float64) + bafter.astype(np.float64)).astype(np.float32)
        elif layer.kind == g.ARGMAX_HEAD:
            out = np.array([[[int(np.argmax(a.reshape(-1)))]]], dtype=np.float32)
        else:
            raise GraphError(f"layer {layer.name!r}: unhandled kind {layer.kind!r}")
        acts[layer.output] = out
    return acts


def run_float(model_graph: g.ModelGraph, weights: WeightStore, x: np.ndarray) -> np.ndarray:
    """Run the schedule with real arithmetic and return the logits vector."""
    acts = trace_activations(model_graph, weights, x)
    return acts[model_graph.logits_name].reshape(-1)


def predict_float(model_graph: g.ModelGraph, weights: WeightStore, x: np.ndarray) -> int:
    """Class index = argmax of the logits; ties break toward the lowest index."""
    return int(np.argmax(run_float(model_graph, weights, x)))
