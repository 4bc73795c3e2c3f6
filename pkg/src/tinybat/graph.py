"""Layer graph, shape inference and the inverted-residual block builder.

Tensors are height x width x channel, row-major with channel innermost,
matching the direct-convolution access pattern of the integer kernels and
the emitted C. Graphs are immutable once shapes are inferred; every
operation here is a pure function returning a new graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import GraphError, ParameterError

REAL32 = "real32"
INT8 = "int8"
ELEMENT_BYTES = {REAL32: 4, INT8: 1}

CONV2D = "conv2d"
DEPTHWISE = "depthwise_conv2d"
FULLY_CONNECTED = "fully_connected"
RELU6 = "relu6"
GLOBAL_AVG_POOL = "global_avg_pool"
RESIDUAL_ADD = "residual_add"
ARGMAX_HEAD = "argmax_head"

LAYER_KINDS = (
    CONV2D,
    DEPTHWISE,
    FULLY_CONNECTED,
    RELU6,
    GLOBAL_AVG_POOL,
    RESIDUAL_ADD,
    ARGMAX_HEAD,
)

# layer kinds carrying a weight/bias pair
PARAM_KINDS = (CONV2D, DEPTHWISE, FULLY_CONNECTED)
# layer kinds whose integer kernel ends in a clamp and can absorb a relu6
CLAMPING_KINDS = (CONV2D, DEPTHWISE, FULLY_CONNECTED, RESIDUAL_ADD, GLOBAL_AVG_POOL)

VALID_KERNELS = (1, 3, 5, 7)
VALID_STRIDES = (1, 2)
VALID_PADDINGS = ("same", "valid")


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, int, int]  # (height, width, channels)
    element: str = REAL32

    def __post_init__(self):
        if any(d < 1 for d in self.shape):
            raise ParameterError(f"tensor {self.name!r}: all dims must be >= 1, got {self.shape}")
        if self.element not in ELEMENT_BYTES:
            raise ParameterError(f"tensor {self.name!r}: unknown element type {self.element!r}")

    @property
    def nelems(self) -> int:
        h, w, c = self.shape
        return h * w * c

    @property
    def nbytes(self) -> int:
        return self.nelems * ELEMENT_BYTES[self.element]


@dataclass(frozen=True)
class LayerOp:
    kind: str
    name: str
    inputs: tuple[str, ...]
    output: str
    kernel: int = 1
    stride: int = 1
    padding: str = "same"
    out_channels: int = 0  # conv2d / fully_connected only

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if self.kind in (CONV2D, DEPTHWISE):
            if self.kernel not in VALID_KERNELS or self.kernel % 2 == 0:
                raise ParameterError(f"layer {self.name!r}: kernel must be odd in {VALID_KERNELS}")
            if self.stride not in VALID_STRIDES:
                raise ParameterError(f"layer {self.name!r}: stride must be in {VALID_STRIDES}")
            if self.padding not in VALID_PADDINGS:
                raise ParameterError(f"layer {self.name!r}: padding must be same|valid")
        n_in = 2 if self.kind == RESIDUAL_ADD else 1
        if len(self.inputs) != n_in:
            raise ParameterError(f"layer {self.name!r}: expects {n_in} input(s)")

    @property
    def weight_name(self) -> str:
        return f"{self.name}.w"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.b"


@dataclass
class ModelGraph:
    """Directed acyclic layer graph plus its topological schedule.

    `tensors` maps names to resolved specs; before infer_shapes only the
    graph input is present. `schedule` holds layer indices in execution order.
    """

    input_name: str
    output_name: str
    layers: list[LayerOp]
    tensors: dict[str, TensorSpec]
    schedule: list[int] = field(default_factory=list)

    def tensor(self, name: str) -> TensorSpec:
        try:
            return self.tensors[name]
        except KeyError:
            raise GraphError(f"tensor {name!r} has no resolved spec") from None

    def producer_of(self, tensor_name: str) -> int | None:
        for i, layer in enumerate(self.layers):
            if layer.output == tensor_name:
                return i
        return None

    def consumers_of(self, tensor_name: str) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if tensor_name in layer.inputs]

    def layer_named(self, name: str) -> LayerOp:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise GraphError(f"no layer named {name!r}")

    @property
    def input_spec(self) -> TensorSpec:
        return self.tensor(self.input_name)

    @property
    def logits_name(self) -> str:
        """Tensor holding the class scores: the argmax input, else the output."""
        for layer in self.layers:
            if layer.kind == ARGMAX_HEAD:
                return layer.inputs[0]
        return self.output_name

    @property
    def num_classes(self) -> int:
        return self.tensor(self.logits_name).shape[2]


def make_graph(input_spec: TensorSpec, layers: list[LayerOp]) -> ModelGraph:
    """Assemble a graph, computing schedule and output tensor.

    Lenient about structural problems so validate_graph can report them all;
    an unschedulable (cyclic/dangling) graph keeps the given layer order.
    """
    produced = {layer.output for layer in layers}
    consumed = {name for layer in layers for name in layer.inputs}
    sinks = [layer.output for layer in layers if layer.output not in consumed]
    output_name = sinks[0] if len(sinks) == 1 else ""
    schedule = _topo_schedule(input_spec.name, layers) or list(range(len(layers)))
    return ModelGraph(
        input_name=input_spec.name,
        output_name=output_name,
        layers=list(layers),
        tensors={input_spec.name: input_spec},
        schedule=schedule,
    )


def _topo_schedule(input_name: str, layers: list[LayerOp]) -> list[int] | None:
    available = {input_name}
    remaining = list(range(len(layers)))
    order: list[int] = []
    while remaining:
        ready = [i for i in remaining if all(t in available for t in layers[i].inputs)]
        if not ready:
            return None
        # stable: keep original relative order among ready layers
        nxt = ready[0]
        order.append(nxt)
        available.add(layers[nxt].output)
        remaining.remove(nxt)
    return order


def _conv_out_dim(in_dim: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(in_dim / stride)
    out = (in_dim - kernel) // stride + 1
    if out < 1:
        raise GraphError(f"valid padding impossible: input {in_dim} < kernel {kernel}")
    return out


def same_padding(in_dim: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) zero-pad for `same`; the extra pixel goes after."""
    out = math.ceil(in_dim / stride)
    total = max((out - 1) * stride + kernel - in_dim, 0)
    before = total // 2
    return before, total - before


def infer_shapes(graph: ModelGraph) -> ModelGraph:
    """Resolve every tensor shape by walking the schedule.

    Raises GraphError on any inconsistency (naming the tensors involved for
    residual mismatches). The input spec must be fully specified.
    """
    violations = validate_graph(graph)
    if violations:
        raise GraphError("cannot infer shapes on invalid graph: " + "; ".join(violations))
    tensors = {graph.input_name: graph.tensors[graph.input_name]}
    element = tensors[graph.input_name].element
    for idx in graph.schedule:
        layer = graph.layers[idx]
        ins = [tensors[name] for name in layer.inputs]
        shape = _output_shape(layer, ins)
        tensors[layer.output] = TensorSpec(layer.output, shape, element)
    return ModelGraph(
        input_name=graph.input_name,
        output_name=graph.output_name,
        layers=list(graph.layers),
        tensors=tensors,
        schedule=list(graph.schedule),
    )


def _output_shape(layer: LayerOp, ins: list[TensorSpec]) -> tuple[int, int, int]:
    kind = layer.kind
    h, w, c = ins[0].shape
    if kind == CONV2D:
        if layer.out_channels < 1:
            raise GraphError(f"layer {layer.name!r}: out_channels must be >= 1")
        oh = _conv_out_dim(h, layer.kernel, layer.stride, layer.padding)
        ow = _conv_out_dim(w, layer.kernel, layer.stride, layer.padding)
        return (oh, ow, layer.out_channels)
    if kind == DEPTHWISE:
        oh = _conv_out_dim(h, layer.kernel, layer.stride, layer.padding)
        ow = _conv_out_dim(w, layer.kernel, layer.stride, layer.padding)
        return (oh, ow, c)
    if kind == FULLY_CONNECTED:
        if layer.out_channels < 1:
            raise GraphError(f"layer {layer.name!r}: out_channels must be >= 1")
        return (1, 1, layer.out_channels)
    if kind == RELU6:
        return (h, w, c)
    if kind == GLOBAL_AVG_POOL:
        return (1, 1, c)
    if kind == RESIDUAL_ADD:
        if ins[0].shape != ins[1].shape:
            raise GraphError(
                f"layer {layer.name!r}: residual operands {ins[0].name!r} {ins[0].shape} "
                f"and {ins[1].name!r} {ins[1].shape} differ"
            )
        return ins[0].shape
    if kind == ARGMAX_HEAD:
        if (h, w) != (1, 1):
            raise GraphError(f"layer {layer.name!r}: argmax expects a 1x1xC input, got {ins[0].shape}")
        return (1, 1, 1)
    raise GraphError(f"layer {layer.name!r}: unhandled kind {kind!r}")


def validate_graph(graph: ModelGraph) -> list[str]:
    """Return every structural violation (empty list means ok)."""
    violations: list[str] = []
    input_name = graph.input_name

    layer_names = [layer.name for layer in graph.layers]
    for name in sorted({n for n in layer_names if layer_names.count(n) > 1}):
        violations.append(f"duplicate layer name {name!r}")

    produced: dict[str, int] = {}
    for i, layer in enumerate(graph.layers):
        if layer.output in produced:
            violations.append(f"duplicate tensor name {layer.output!r}")
        elif layer.output == input_name:
            violations.append(f"layer {layer.name!r} overwrites the graph input {input_name!r}")
        else:
            produced[layer.output] = i

    defined = set(produced) | {input_name}
    for layer in graph.layers:
        for tensor in layer.inputs:
            if tensor not in defined:
                violations.append(f"layer {layer.name!r} consumes undefined tensor {tensor!r}")

    consumed = {name for layer in graph.layers for name in layer.inputs}
    sinks = [layer.output for layer in graph.layers if layer.output not in consumed]
    if graph.layers and len(sinks) != 1:
        violations.append(f"graph must have exactly one output tensor, found {len(sinks)}")

    if sorted(graph.schedule) != list(range(len(graph.layers))):
        violations.append("schedule is not a permutation of the layers")
    else:
        available = {input_name}
        for idx in graph.schedule:
            layer = graph.layers[idx]
            for tensor in layer.inputs:
                if tensor not in available and tensor in defined:
                    violations.append(
                        f"schedule uses {tensor!r} before it is produced (cycle or bad order)"
                    )
            available.add(layer.output)

    # shape-level checks only when everything is resolved
    if all(name in graph.tensors for name in defined):
        for layer in graph.layers:
            if layer.kind == RESIDUAL_ADD:
                a, b = (graph.tensors[t] for t in layer.inputs)
                if a.shape != b.shape:
                    violations.append(
                        f"layer {layer.name!r}: residual operands {a.name!r} and {b.name!r} differ in shape"
                    )
    return violations


def build_inverted_residual(
    in_ch: int,
    out_ch: int,
    kernel: int,
    expansion: int,
    stride: int,
    *,
    input_name: str,
    prefix: str,
) -> list[LayerOp]:
    """Expansion conv -> depthwise -> projection, with skip where legal.

    Returns the five-layer body (1x1 expand, relu6, k x k depthwise at the
    given stride, relu6, 1x1 project) and appends a residual_add consuming
    the block input iff stride == 1 and in_ch == out_ch. The last layer's
    output is the block output.
    """
    if kernel not in (3, 5, 7):
        raise ParameterError(f"kernel must be 3, 5 or 7, got {kernel}")
    if expansion not in (1, 3, 6):
        raise ParameterError(f"expansion must be 1, 3 or 6, got {expansion}")
    if stride not in VALID_STRIDES:
        raise ParameterError(f"stride must be 1 or 2, got {stride}")
    if in_ch < 1 or out_ch < 1:
        raise ParameterError("channel counts must be >= 1")

    mid = in_ch * expansion
    layers = [
        LayerOp(CONV2D, f"{prefix}_expand", (input_name,), f"{prefix}_expand_raw",
                kernel=1, stride=1, out_channels=mid),
        LayerOp(RELU6, f"{prefix}_expand_act", (f"{prefix}_expand_raw",), f"{prefix}_expand_out"),
        LayerOp(DEPTHWISE, f"{prefix}_dw", (f"{prefix}_expand_out",), f"{prefix}_dw_raw",
                kernel=kernel, stride=stride),
        LayerOp(RELU6, f"{prefix}_dw_act", (f"{prefix}_dw_raw",), f"{prefix}_dw_out"),
        LayerOp(CONV2D, f"{prefix}_project", (f"{prefix}_dw_out",), f"{prefix}_project_out",
                kernel=1, stride=1, out_channels=out_ch),
    ]
    if stride == 1 and in_ch == out_ch:
        layers.append(
            LayerOp(RESIDUAL_ADD, f"{prefix}_add", (f"{prefix}_project_out", input_name),
                    f"{prefix}_out")
        )
    return layers


def block_output_name(layers: list[LayerOp]) -> str:
    return layers[-1].output


def fuse_relu6(graph: ModelGraph) -> ModelGraph:
    """Fold every relu6 into its producer, rewriting the producer's output.

    The producer must be a clamping kernel and the pre-activation tensor must
    have no other consumer; graphs from build_inverted_residual always
    qualify. Shapes are re-inferred on the fused graph.
    """
    layers = list(graph.layers)
    changed = True
    while changed:
        changed = False
        for i, layer in enumerate(layers):
            if layer.kind != RELU6:
                continue
            pre = layer.inputs[0]
            producer_idx = next((j for j, c in enumerate(layers) if c.output == pre), None)
            if producer_idx is None:
                raise GraphError(f"relu6 {layer.name!r} applies to the graph input; cannot fuse")
            producer = layers[producer_idx]
            if producer.kind not in CLAMPING_KINDS:
                raise GraphError(
                    f"relu6 {layer.name!r}: producer {producer.name!r} ({producer.kind}) cannot clamp"
                )
            others = [c for c in layers if c is not layer and pre in c.inputs]
            if others:
                raise GraphError(
                    f"relu6 {layer.name!r}: pre-activation {pre!r} has other consumers; cannot fuse"
                )
            layers[producer_idx] = replace(producer, output=layer.output)
            del layers[i]
            changed = True
            break
    fused = make_graph(graph.tensors[graph.input_name], layers)
    return infer_shapes(fused)
