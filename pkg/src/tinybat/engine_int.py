"""Integer-only inference: int8 tensors, int32 accumulators, Q31 requantize.

This engine defines the bit pattern the emitted C must reproduce. All
arithmetic is exact integer math (numpy int64 carries the 64-bit
intermediates); accumulators are guarded against leaving the int32 range at
every kernel tap, since silent wraparound would poison oracle comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as g
from .errors import GraphError, NumericError, ParameterError
from .quantize import QMAX, QMIN, INT32_MAX, INT32_MIN, QuantParams, QuantizedModel, RequantMultiplier

FULL_CLAMP = (QMIN, QMAX)


@dataclass
class IntTensor:
    shape: tuple[int, int, int]
    data: np.ndarray  # int8, shaped (h, w, c)
    qp: QuantParams

    def __post_init__(self):
        if tuple(self.data.shape) != self.shape:
            raise ParameterError(f"data shape {self.data.shape} != declared {self.shape}")
        if self.data.dtype != np.int8:
            raise ParameterError(f"IntTensor requires int8 data, got {self.data.dtype}")


def _check_int32(acc: np.ndarray, where: str) -> None:
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise NumericError(f"int32 accumulator overflow in {where}")


def _rescale(acc: np.ndarray, rm: RequantMultiplier) -> np.ndarray:
    """round_half_away(acc * mantissa / 2^(31+shift)) without zp or clamp."""
    p = acc.astype(np.int64) * np.int64(rm.mantissa_q31)
    t = 31 + rm.shift
    half = np.int64(1) << np.int64(t - 1)
    mag = (np.abs(p) + half) >> np.int64(t)
    return np.where(p >= 0, mag, -mag)


def requantize(acc, rm: RequantMultiplier, zp_out: int):
    """int32 accumulator -> int8 with saturation; scalar in, scalar out."""
    arr = np.asarray(acc, dtype=np.int64)
    out = np.clip(_rescale(arr, rm) + zp_out, QMIN, QMAX).astype(np.int8)
    return out if out.ndim else int(out)


def _finish(acc: np.ndarray, rm: RequantMultiplier, out_qp: QuantParams,
            clamp: tuple[int, int]) -> np.ndarray:
    lo = max(QMIN, clamp[0])
    hi = min(QMAX, clamp[1])
    return np.clip(_rescale(acc, rm) + out_qp.zero_point, lo, hi).astype(np.int8)


def _pad_with(x: np.ndarray, kernel: int, stride: int, value: int) -> np.ndarray:
    pt, pb = g.same_padding(x.shape[0], kernel, stride)
    pl, pr = g.same_padding(x.shape[1], kernel, stride)
    return np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=value)


def conv2d_int(
    x: IntTensor,
    weights: np.ndarray,
    bias: np.ndarray,
    rm: RequantMultiplier,
    zp_in: int,
    out_qp: QuantParams,
    clamp: tuple[int, int] = FULL_CLAMP,
    stride: int = 1,
    padding: str = "same",
) -> IntTensor:
    """acc = sum (x - zp_in) * w + bias in int32, then requantize and clamp."""
    k = weights.shape[1]
    xw = x.data.astype(np.int64)
    xp = _pad_with(xw, k, stride, zp_in) if padding == "same" else xw
    oh = (xp.shape[0] - k) // stride + 1
    ow = (xp.shape[1] - k) // stride + 1
    oc = weights.shape[0]
    acc = np.broadcast_to(bias.astype(np.int64), (oh, ow, oc)).copy()
    _check_int32(acc, "conv2d bias")
    w64 = weights.astype(np.int64)
    for kr in range(k):
        for kc in range(k):
            tap = xp[kr : kr + oh * stride : stride, kc : kc + ow * stride : stride, :] - zp_in
            acc += np.einsum("hwc,oc->hwo", tap, w64[:, kr, kc, :], optimize=False)
            _check_int32(acc, "conv2d")
    data = _finish(acc, rm, out_qp, clamp)
    return IntTensor((oh, ow, oc), data, out_qp)


def depthwise_conv2d_int(
    x: IntTensor,
    weights: np.ndarray,
    bias: np.ndarray,
    rm: RequantMultiplier,
    zp_in: int,
    out_qp: QuantParams,
    clamp: tuple[int, int] = FULL_CLAMP,
    stride: int = 1,
    padding: str = "same",
) -> IntTensor:
    """Per-channel spatial filtering; no cross-channel sum."""
    k = weights.shape[1]
    xw = x.data.astype(np.int64)
    xp = _pad_with(xw, k, stride, zp_in) if padding == "same" else xw
    oh = (xp.shape[0] - k) // stride + 1
    ow = (xp.shape[1] - k) // stride + 1
    c = weights.shape[0]
    acc = np.broadcast_to(bias.astype(np.int64), (oh, ow, c)).copy()
    _check_int32(acc, "depthwise bias")
    w64 = weights.astype(np.int64)
    for kr in range(k):
        for kc in range(k):
            tap = xp[kr : kr + oh * stride : stride, kc : kc + ow * stride : stride, :] - zp_in
            acc += tap * w64[:, kr, kc][None, None, :]
            _check_int32(acc, "depthwise")
    data = _finish(acc, rm, out_qp, clamp)
    return IntTensor((oh, ow, c), data, out_qp)


def fully_connected_int(
    x: IntTensor,
    weights: np.ndarray,
    bias: np.ndarray,
    rm: RequantMultiplier,
    zp_in: int,
    out_qp: QuantParams,
    clamp: tuple[int, int] = FULL_CLAMP,
) -> IntTensor:
    flat = x.data.astype(np.int64).reshape(-1) - zp_in
    acc = np.einsum("oc,c->o", weights.astype(np.int64), flat, optimize=False)
    acc += bias.astype(np.int64)
    _check_int32(acc, "fully_connected")
    data = _finish(acc, rm, out_qp, clamp).reshape(1, 1, -1)
    return IntTensor((1, 1, weights.shape[0]), data, out_qp)


def residual_add_int(
    a: IntTensor,
    b: IntTensor,
    rm_a: RequantMultiplier,
    rm_b: RequantMultiplier,
    zp_a: int,
    zp_b: int,
    out_qp: QuantParams,
    clamp: tuple[int, int] = FULL_CLAMP,
) -> IntTensor:
    """Rescale each operand to the output scale in int32, then add and clamp."""
    if a.shape != b.shape:
        raise GraphError(f"residual operand shapes differ: {a.shape} vs {b.shape}")
    ra = _rescale(a.data.astype(np.int64) - zp_a, rm_a)
    rb = _rescale(b.data.astype(np.int64) - zp_b, rm_b)
    acc = ra + rb
    _check_int32(acc, "residual_add")
    lo = max(QMIN, clamp[0])
    hi = min(QMAX, clamp[1])
    data = np.clip(acc + out_qp.zero_point, lo, hi).astype(np.int8)
    return IntTensor(a.shape, data, out_qp)


def global_avg_pool_int(x: IntTensor, clamp: tuple[int, int] = FULL_CLAMP) -> IntTensor:
    """Exact integer mean, rounded half away from zero; keeps the input scale."""
    h, w, c = x.shape
    n = h * w
    s = x.data.astype(np.int64).sum(axis=(0, 1))
    mag = (2 * np.abs(s) + n) // (2 * n)
    mean = np.where(s >= 0, mag, -mag)
    lo = max(QMIN, clamp[0])
    hi = min(QMAX, clamp[1])
    data = np.clip(mean, lo, hi).astype(np.int8).reshape(1, 1, c)
    return IntTensor((1, 1, c), data, x.qp)


def quantize_input(x: np.ndarray, qm: QuantizedModel) -> IntTensor:
    """Convenience: real input -> IntTensor under the model's input params."""
    from .quantize import quantize_tensor

    qp = qm.input_qparams
    data = quantize_tensor(x, qp).reshape(qm.graph.input_spec.shape)
    return IntTensor(qm.graph.input_spec.shape, data, qp)


def run_int(qm: QuantizedModel, x: IntTensor) -> tuple[IntTensor, int]:
    """Execute the fused schedule; returns (int8 logits, predicted class)."""
    in_qp = qm.input_qparams
    if x.qp.scale != in_qp.scale or x.qp.zero_point != in_qp.zero_point:
        raise ParameterError("input is not quantized with the model's input parameters")
    if x.shape != qm.graph.input_spec.shape:
        raise ParameterError(f"input shape {x.shape} != {qm.graph.input_spec.shape}")

    acts: dict[str, IntTensor] = {qm.graph.input_name: x}
    logits: IntTensor | None = None
    predicted: int | None = None
    for idx in qm.graph.schedule:
        layer = qm.graph.layers[idx]
        a = acts[layer.inputs[0]]
        out_qp = qm.qparams[layer.output]
        clamp = qm.clamp.get(layer.name, FULL_CLAMP)
        if layer.kind == g.CONV2D:
            out = conv2d_int(a, qm.weights_q[layer.weight_name], qm.biases_q[layer.bias_name],
                             qm.requant[layer.name][0], a.qp.zero_point, out_qp, clamp,
                             layer.stride, layer.padding)
        elif layer.kind == g.DEPTHWISE:
            out = depthwise_conv2d_int(a, qm.weights_q[layer.weight_name],
                                       qm.biases_q[layer.bias_name], qm.requant[layer.name][0],
                                       a.qp.zero_point, out_qp, clamp, layer.stride, layer.padding)
        elif layer.kind == g.FULLY_CONNECTED:
            out = fully_connected_int(a, qm.weights_q[layer.weight_name],
                                      qm.biases_q[layer.bias_name], qm.requant[layer.name][0],
                                      a.qp.zero_point, out_qp, clamp)
        elif layer.kind == g.RESIDUAL_ADD:
            b = acts[layer.inputs[1]]
            rm_a, rm_b = qm.requant[layer.name]
            out = residual_add_int(a, b, rm_a, rm_b, a.qp.zero_point, b.qp.zero_point,
                                   out_qp, clamp)
        elif layer.kind == g.GLOBAL_AVG_POOL:
            out = global_avg_pool_int(a, clamp)
        elif layer.kind == g.ARGMAX_HEAD:
            logits = a
            predicted = int(np.argmax(a.data.reshape(-1)))
            stored = np.array(min(predicted, QMAX), dtype=np.int8).reshape(1, 1, 1)
            out = IntTensor((1, 1, 1), stored, out_qp)
        else:
            raise GraphError(f"layer {layer.name!r}: unhandled kind {layer.kind!r}")
        acts[layer.output] = out

    if logits is None:  # headless graph: logits are the graph output
        logits = acts[qm.graph.output_name]
        predicted = int(np.argmax(logits.data.reshape(-1)))
    assert predicted is not None
    return logits, predicted
