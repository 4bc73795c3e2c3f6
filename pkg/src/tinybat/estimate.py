"""Footprint estimation: Flash, peak RAM, MACs, latency, power, energy.

The latency model is pure MAC throughput (clock * MACs-per-cycle); RAM
counts activation buffers only, weights execute in place from Flash. Both
the per-layer metadata cost and the fixed code overhead are profile knobs,
not hard-coded truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import graph as g
from .errors import EstimatorError, ParameterError

METADATA_BYTES_PER_LAYER = 64


@dataclass(frozen=True)
class DeviceProfile:
    clock_hz: float = 120e6
    macs_per_cycle: float = 1.0
    active_power_mw: float = 4.83
    code_overhead_bytes: int = 30_000
    supply_voltage_v: float = 1.9  # informational

    def __post_init__(self):
        for name in ("clock_hz", "macs_per_cycle", "active_power_mw",
                     "code_overhead_bytes", "supply_voltage_v"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"profile field {name} must be strictly positive")


@dataclass(frozen=True)
class FootprintReport:
    flash_kb: float
    ram_kb: float
    macs: int
    time_ms: float
    power_mw: float
    energy_mj: float

    def __post_init__(self):
        for name in ("flash_kb", "ram_kb", "macs", "time_ms", "power_mw", "energy_mj"):
            if getattr(self, name) < 0:
                raise ParameterError(f"report field {name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "flash_kb": self.flash_kb,
            "ram_kb": self.ram_kb,
            "macs": self.macs,
            "time_ms": self.time_ms,
            "power_mw": self.power_mw,
            "energy_mj": self.energy_mj,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FootprintReport":
        return cls(
            flash_kb=float(raw["flash_kb"]),
            ram_kb=float(raw["ram_kb"]),
            macs=int(raw.get("macs", 0)),
            time_ms=float(raw["time_ms"]),
            power_mw=float(raw["power_mw"]),
            energy_mj=float(raw["energy_mj"]),
        )


@dataclass
class MacCount:
    per_layer: dict[str, int] = field(default_factory=dict)
    element_ops: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_layer.values())


def _require_shapes(model_graph: g.ModelGraph) -> None:
    for layer in model_graph.layers:
        for name in (*layer.inputs, layer.output):
            if name not in model_graph.tensors:
                raise EstimatorError(f"tensor {name!r} has no inferred shape; run infer_shapes")


def count_macs(model_graph: g.ModelGraph) -> MacCount:
    """Multiply-accumulate count per layer; pointwise work tracked separately."""
    _require_shapes(model_graph)
    out = MacCount()
    for layer in model_graph.layers:
        in_spec = model_graph.tensor(layer.inputs[0])
        out_spec = model_graph.tensor(layer.output)
        oh, ow, oc = out_spec.shape
        if layer.kind == g.CONV2D:
            out.per_layer[layer.name] = oh * ow * oc * layer.kernel**2 * in_spec.shape[2]
        elif layer.kind == g.DEPTHWISE:
            out.per_layer[layer.name] = oh * ow * oc * layer.kernel**2
        elif layer.kind == g.FULLY_CONNECTED:
            out.per_layer[layer.name] = in_spec.nelems * oc
        else:
            out.per_layer[layer.name] = 0
            out.element_ops[layer.name] = in_spec.nelems
    return out


def param_counts(model_graph: g.ModelGraph) -> tuple[int, int]:
    """(weight elements, bias elements) implied by the graph shapes."""
    _require_shapes(model_graph)
    weights = biases = 0
    for layer in model_graph.layers:
        if layer.kind not in g.PARAM_KINDS:
            continue
        cin = model_graph.tensor(layer.inputs[0]).shape[2]
        cout = model_graph.tensor(layer.output).shape[2]
        if layer.kind == g.CONV2D:
            weights += layer.kernel**2 * cin * cout
        elif layer.kind == g.DEPTHWISE:
            weights += layer.kernel**2 * cin
        else:
            weights += model_graph.tensor(layer.inputs[0]).nelems * cout
        biases += cout
    return weights, biases


def flash_bytes(model_graph: g.ModelGraph, profile: DeviceProfile,
                weight_elem_bytes: int) -> int:
    """Weights + int32 biases + fixed per-layer metadata + code overhead."""
    weights, biases = param_counts(model_graph)
    return (weights * weight_elem_bytes + biases * 4
            + METADATA_BYTES_PER_LAYER * len(model_graph.layers)
            + profile.code_overhead_bytes)


def tensor_lifetimes(model_graph: g.ModelGraph) -> dict[str, tuple[int, int]]:
    """Schedule-step interval [birth, death] during which each tensor is live.

    A tensor lives from the step producing it through its last consumer; the
    graph input is born at step 0 and the output survives its producing step.
    """
    _require_shapes(model_graph)
    position = {idx: pos for pos, idx in enumerate(model_graph.schedule)}
    birth: dict[str, int] = {model_graph.input_name: 0}
    death: dict[str, int] = {model_graph.input_name: 0}
    for idx, layer in enumerate(model_graph.layers):
        pos = position[idx]
        birth[layer.output] = pos
        death[layer.output] = pos
        for name in layer.inputs:
            death[name] = max(death.get(name, 0), pos)
    return {name: (birth[name], death[name]) for name in birth}


def ram_peak(model_graph: g.ModelGraph) -> int:
    """Peak of simultaneously-live activation bytes over the schedule."""
    if not model_graph.layers:
        return 0
    lifetimes = tensor_lifetimes(model_graph)
    peak = 0
    for step in range(len(model_graph.schedule)):
        live = sum(
            model_graph.tensor(name).nbytes
            for name, (lo, hi) in lifetimes.items()
            if lo <= step <= hi
        )
        peak = max(peak, live)
    return peak


def estimate_latency(macs: int, profile: DeviceProfile) -> float:
    """time_ms = macs / (clock_hz * macs_per_cycle) * 1000"""
    return macs / (profile.clock_hz * profile.macs_per_cycle) * 1000.0


def estimate_energy(power_mw: float, time_ms: float) -> float:
    """energy_mj = power_mw * time_ms / 1000"""
    if power_mw < 0 or time_ms < 0:
        raise ParameterError("power and time must be non-negative")
    return power_mw * time_ms / 1000.0


def footprint(model_graph: g.ModelGraph, profile: DeviceProfile,
              weight_elem_bytes: int) -> FootprintReport:
    """Full report for a deployable graph (weight width 1=int8, 4=real32)."""
    macs = count_macs(model_graph).total
    time_ms = estimate_latency(macs, profile)
    power = profile.active_power_mw
    return FootprintReport(
        flash_kb=flash_bytes(model_graph, profile, weight_elem_bytes) / 1024.0,
        ram_kb=ram_peak(model_graph) / 1024.0,
        macs=macs,
        time_ms=time_ms,
        power_mw=power,
        energy_mj=estimate_energy(power, time_ms),
    )


REDUCTION_METRICS = ("flash_kb", "ram_kb", "time_ms", "power_mw", "energy_mj")


def reduction_report(original: FootprintReport, optimized: FootprintReport) -> dict[str, float]:
    """Percent reduction per published metric, rounded to 2 decimals."""
    out: dict[str, float] = {}
    for name in REDUCTION_METRICS:
        orig = getattr(original, name)
        opt = getattr(optimized, name)
        if orig == 0:
            raise EstimatorError(f"cannot compute reduction: original {name} is zero")
        r = (orig - opt) / orig * 100.0
        out[name] = float(int(abs(r) * 100 + 0.5) / 100.0 * (1 if r >= 0 else -1))
    return out
