"""Post-training static quantization: calibration, ranges, conversion.

Weights quantize symmetrically per tensor (zero-point 0, range -127..127),
activations asymmetrically, biases to int32 at input_scale * weight_scale.
Rounding is half away from zero at every conversion point, and accumulator
rescaling uses a Q31 mantissa plus right shift so the integer engine and the
emitted C realize identical arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import graph as g
from .engine_float import WeightStore, trace_activations
from .errors import (
    GraphError,
    MultiplierRangeError,
    ParameterError,
    QuantizationError,
)

QMIN, QMAX = -128, 127
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1

# shifts beyond this are not realizable as a single 64-bit multiply+shift in C
MAX_SHIFT = 31

CalibrationRanges = dict[str, tuple[float, float]]


def round_half_away(x):
    """Scalar/array rounding, halves away from zero."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    symmetric: bool = False

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ParameterError(f"scale must be positive and finite, got {self.scale}")
        if self.symmetric and self.zero_point != 0:
            raise ParameterError("symmetric quantization requires zero_point 0")
        if not QMIN <= self.zero_point <= QMAX:
            raise ParameterError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")


@dataclass(frozen=True)
class RequantMultiplier:
    mantissa_q31: int
    shift: int

    def __post_init__(self):
        if not 2**30 <= self.mantissa_q31 <= 2**31 - 1:
            raise ParameterError(f"mantissa {self.mantissa_q31} outside [2^30, 2^31-1]")
        if self.shift < 0:
            raise ParameterError("shift must be >= 0")

    @property
    def realized(self) -> float:
        return self.mantissa_q31 * 2.0 ** -(31 + self.shift)


def compute_qparams(lo: float, hi: float, mode: str = "asymmetric") -> QuantParams:
    """Affine parameters for a calibrated range.

    Asymmetric ranges are widened to include zero; a fully degenerate 0..0
    range falls back to scale 1 so dead tensors stay representable.
    """
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ParameterError(f"range bounds must be finite, got ({lo}, {hi})")
    if lo > hi:
        raise ParameterError(f"range min {lo} exceeds max {hi}")
    if mode == "symmetric":
        bound = max(abs(lo), abs(hi))
        scale = bound / 127.0 if bound > 0 else 1.0
        return QuantParams(scale, 0, symmetric=True)
    if mode != "asymmetric":
        raise ParameterError(f"unknown quantization mode {mode!r}")
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if lo == 0.0 and hi == 0.0:
        return QuantParams(1.0, 0, symmetric=False)
    scale = (hi - lo) / 255.0
    zp = int(round_half_away(-128.0 - lo / scale))
    return QuantParams(scale, min(max(zp, QMIN), QMAX), symmetric=False)


def quantize_tensor(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """real -> int8 with saturation: clamp(round(x / s) + zp)."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_tensor(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    """int8 -> real32: (q - zp) * s."""
    return ((np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale).astype(np.float32)


def derive_requant(s_in: float, s_w: float, s_out: float) -> RequantMultiplier:
    """Encode M = s_in * s_w / s_out as a Q31 mantissa and right shift."""
    for name, s in (("s_in", s_in), ("s_w", s_w), ("s_out", s_out)):
        if not (s > 0 and math.isfinite(s)):
            raise ParameterError(f"{name} must be positive and finite, got {s}")
    m_real = s_in * s_w / s_out
    if not 0.0 < m_real < 1.0:
        raise MultiplierRangeError(
            f"multiplier {m_real} outside (0, 1); rescale s_out"
        )
    mant, exp = math.frexp(m_real)  # m_real = mant * 2**exp, mant in [0.5, 1)
    shift = -exp
    if shift > MAX_SHIFT:
        raise MultiplierRangeError(
            f"multiplier {m_real} needs shift {shift} > {MAX_SHIFT}; rescale s_out"
        )
    mantissa = int(round_half_away(mant * 2.0**31))
    mantissa = min(mantissa, 2**31 - 1)
    return RequantMultiplier(mantissa, shift)


def collect_ranges(
    model_graph: g.ModelGraph,
    weights: WeightStore,
    calib_inputs: list[np.ndarray],
) -> CalibrationRanges:
    """Running min/max of every tensor over the calibration set.

    Activation ranges come from replaying the float engine per input; weight
    tensor ranges come from the weights themselves. Merging is commutative,
    so input order never changes the result.
    """
    if not calib_inputs:
        raise ParameterError("calibration set must contain at least one input")
    ranges: dict[str, tuple[float, float]] = {}
    for x in calib_inputs:
        acts = trace_activations(model_graph, weights, x)
        for name, arr in acts.items():
            lo = float(arr.min())
            hi = float(arr.max())
            if name in ranges:
                plo, phi = ranges[name]
                ranges[name] = (min(plo, lo), max(phi, hi))
            else:
                ranges[name] = (lo, hi)
    for layer in model_graph.layers:
        if layer.kind in g.PARAM_KINDS:
            w = weights[layer.weight_name]
            ranges[layer.weight_name] = (float(w.min()), float(w.max()))
    return ranges


def save_ranges(ranges: CalibrationRanges, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: [lo, hi] for k, (lo, hi) in sorted(ranges.items())}, fh, indent=1)
        fh.write("\n")


def load_ranges(path) -> CalibrationRanges:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {k: (float(v[0]), float(v[1])) for k, v in raw.items()}


@dataclass
class QuantizedModel:
    """Integer model: fused int8 graph plus everything the kernels need."""

    name: str
    graph: g.ModelGraph  # relu6 folded away, tensors typed int8
    weights_q: dict[str, np.ndarray]  # layer.w -> int8, conv order (o, kr, kc, i)
    biases_q: dict[str, np.ndarray]  # layer.b -> int32 at s_in * s_w
    qparams: dict[str, QuantParams]  # graph tensors and weight tensors
    requant: dict[str, tuple[RequantMultiplier, ...]]  # layer name -> 1 or 2 multipliers
    clamp: dict[str, tuple[int, int]] = field(default_factory=dict)  # layer name -> (lo, hi)

    @property
    def input_qparams(self) -> QuantParams:
        return self.qparams[self.graph.input_name]

    @property
    def classes(self) -> int:
        return self.graph.num_classes

    def weight_bytes(self) -> int:
        return sum(a.size for a in self.weights_q.values())

    def bias_bytes(self) -> int:
        return sum(4 * a.size for a in self.biases_q.values())


def _quantize_six(qp: QuantParams) -> int:
    return int(quantize_tensor(np.array(6.0), qp))


def quantize_model(
    model_graph: g.ModelGraph,
    weights: WeightStore,
    ranges: CalibrationRanges,
    name: str = "model",
) -> QuantizedModel:
    """Lower a float graph to the integer model executed on target.

    relu6 layers fold into their producer's output clamp [zp_out, q(6)];
    residual adds get one multiplier per operand. Any multiplier that cannot
    be realized raises QuantizationError naming the layer.
    """
    try:
        fused = g.fuse_relu6(model_graph)
    except GraphError as exc:
        raise QuantizationError(f"activation fusion failed: {exc}") from exc

    # post-activation tensors keep their own calibrated ranges; the tensors
    # they replaced are gone from the fused graph
    missing = [t for t in fused.tensors if t not in ranges]
    missing += [
        layer.weight_name
        for layer in fused.layers
        if layer.kind in g.PARAM_KINDS and layer.weight_name not in ranges
    ]
    if missing:
        raise QuantizationError(f"calibration ranges missing tensors: {sorted(missing)}")

    # tensors that were relu6 outputs before fusion: their producer carries the clamp
    relu_outputs = {layer.output for layer in model_graph.layers if layer.kind == g.RELU6}

    qparams: dict[str, QuantParams] = {}
    for tensor_name in fused.tensors:
        lo, hi = ranges[tensor_name]
        qparams[tensor_name] = compute_qparams(lo, hi, "asymmetric")

    int8_tensors = {
        n: g.TensorSpec(n, spec.shape, g.INT8) for n, spec in fused.tensors.items()
    }
    qgraph = g.ModelGraph(
        input_name=fused.input_name,
        output_name=fused.output_name,
        layers=list(fused.layers),
        tensors=int8_tensors,
        schedule=list(fused.schedule),
    )

    weights_q: dict[str, np.ndarray] = {}
    biases_q: dict[str, np.ndarray] = {}
    requant: dict[str, tuple[RequantMultiplier, ...]] = {}
    clamp: dict[str, tuple[int, int]] = {}

    # pool outputs reuse the input scale (mean of int8 stays in range); walk
    # in schedule order so chained overrides propagate
    for idx in qgraph.schedule:
        layer = qgraph.layers[idx]
        if layer.kind == g.GLOBAL_AVG_POOL:
            qparams[layer.output] = qparams[layer.inputs[0]]
        elif layer.kind == g.ARGMAX_HEAD:
            qparams[layer.output] = QuantParams(1.0, 0, symmetric=True)

    for idx in qgraph.schedule:
        layer = qgraph.layers[idx]
        qp_out = qparams[layer.output]
        lo_clamp, hi_clamp = QMIN, QMAX
        if layer.output in relu_outputs and layer.kind in g.CLAMPING_KINDS:
            lo_clamp = qp_out.zero_point
            hi_clamp = _quantize_six(qp_out)
        clamp[layer.name] = (lo_clamp, hi_clamp)

        if layer.kind in g.PARAM_KINDS:
            wlo, whi = ranges[layer.weight_name]
            qp_w = compute_qparams(wlo, whi, "symmetric")
            qparams[layer.weight_name] = qp_w
            weights_q[layer.weight_name] = quantize_tensor(weights[layer.weight_name], qp_w)
            s_in = qparams[layer.inputs[0]].scale
            s_bias = s_in * qp_w.scale
            b = round_half_away(weights[layer.bias_name].astype(np.float64) / s_bias)
            biases_q[layer.bias_name] = np.clip(b, INT32_MIN, INT32_MAX).astype(np.int32)
            try:
                requant[layer.name] = (derive_requant(s_in, qp_w.scale, qp_out.scale),)
            except (MultiplierRangeError, ParameterError) as exc:
                raise QuantizationError(f"layer {layer.name!r}: {exc}") from exc
        elif layer.kind == g.RESIDUAL_ADD:
            try:
                requant[layer.name] = tuple(
                    derive_requant(qparams[t].scale, 1.0, qp_out.scale) for t in layer.inputs
                )
            except (MultiplierRangeError, ParameterError) as exc:
                raise QuantizationError(f"layer {layer.name!r}: {exc}") from exc

    return QuantizedModel(
        name=name,
        graph=qgraph,
        weights_q=weights_q,
        biases_q=biases_q,
        qparams=qparams,
        requant=requant,
        clamp=clamp,
    )
