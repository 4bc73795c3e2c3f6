"""Model persistence: JSON manifest plus raw little-endian weight blob.

Blob layout: parameter tensors concatenated in manifest layer order, weight
then bias per layer. real32 tensors serialize as IEEE-754 32-bit; quantized
weights as signed 8-bit with int32 biases. Conv weight order is out-channel,
kernel-row, kernel-col, in-channel.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import graph as g
from .engine_float import FloatModel, WeightStore, check_weights, weight_shape
from .errors import ParameterError
from .quantize import QuantParams, QuantizedModel, RequantMultiplier

_LAYER_ATTRS = ("kernel", "stride", "padding", "out_channels")


def _layer_to_json(layer: g.LayerOp, qm: QuantizedModel | None) -> dict:
    entry: dict = {
        "kind": layer.kind,
        "name": layer.name,
        "inputs": list(layer.inputs),
        "output": layer.output,
    }
    if layer.kind in (g.CONV2D, g.DEPTHWISE):
        entry.update(kernel=layer.kernel, stride=layer.stride, padding=layer.padding)
    if layer.kind in (g.CONV2D, g.FULLY_CONNECTED):
        entry["out_channels"] = layer.out_channels
    if qm is not None:
        if layer.name in qm.requant:
            entry["requant"] = [
                {"mantissa_q31": rm.mantissa_q31, "shift": rm.shift}
                for rm in qm.requant[layer.name]
            ]
        if layer.name in qm.clamp:
            entry["clamp"] = list(qm.clamp[layer.name])
    return entry


def _layer_from_json(entry: dict) -> g.LayerOp:
    kwargs = {k: entry[k] for k in _LAYER_ATTRS if k in entry}
    return g.LayerOp(
        kind=entry["kind"],
        name=entry["name"],
        inputs=tuple(entry["inputs"]),
        output=entry["output"],
        **kwargs,
    )


def _qparams_to_json(qp: QuantParams) -> dict:
    return {"scale": qp.scale, "zero_point": qp.zero_point, "symmetric": qp.symmetric}


def _qparams_from_json(raw: dict) -> QuantParams:
    return QuantParams(float(raw["scale"]), int(raw["zero_point"]), bool(raw["symmetric"]))


def manifest_dict(model: FloatModel | QuantizedModel, blob_name: str) -> dict:
    """Canonical manifest structure (used for both file output and digests)."""
    quantized = isinstance(model, QuantizedModel)
    graph = model.graph
    doc: dict = {
        "name": model.name,
        "quantized": quantized,
        "input": {
            "name": graph.input_name,
            "shape": list(graph.input_spec.shape),
            "element": graph.input_spec.element,
        },
        "classes": graph.num_classes,
        "weights_blob": blob_name,
        "layers": [
            _layer_to_json(layer, model if quantized else None) for layer in graph.layers
        ],
    }
    if quantized:
        doc["qparams"] = {
            name: _qparams_to_json(qp) for name, qp in sorted(model.qparams.items())
        }
    return doc


def _blob_bytes(model: FloatModel | QuantizedModel) -> bytes:
    chunks: list[bytes] = []
    for layer in model.graph.layers:
        if layer.kind not in g.PARAM_KINDS:
            continue
        if isinstance(model, QuantizedModel):
            chunks.append(model.weights_q[layer.weight_name].astype("<i1").tobytes())
            chunks.append(model.biases_q[layer.bias_name].astype("<i4").tobytes())
        else:
            chunks.append(model.weights[layer.weight_name].astype("<f4").tobytes())
            chunks.append(model.weights[layer.bias_name].astype("<f4").tobytes())
    return b"".join(chunks)


def save_model(model: FloatModel | QuantizedModel, manifest_path: str | Path) -> Path:
    """Write manifest JSON and the sibling weight blob; returns the manifest path."""
    manifest_path = Path(manifest_path)
    blob_name = manifest_path.stem + ".weights.bin"
    doc = manifest_dict(model, blob_name)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    (manifest_path.parent / blob_name).write_bytes(_blob_bytes(model))
    return manifest_path


def _rebuild_graph(doc: dict) -> g.ModelGraph:
    input_spec = g.TensorSpec(
        doc["input"]["name"], tuple(doc["input"]["shape"]), doc["input"]["element"]
    )
    layers = [_layer_from_json(entry) for entry in doc["layers"]]
    return g.infer_shapes(g.make_graph(input_spec, layers))


def load_model(manifest_path: str | Path) -> FloatModel | QuantizedModel:
    """Load a manifest + blob pair; dispatches on the `quantized` flag."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    blob = (manifest_path.parent / doc["weights_blob"]).read_bytes()
    graph = _rebuild_graph(doc)
    if doc["classes"] != graph.num_classes:
        raise ParameterError(
            f"manifest classes {doc['classes']} != graph classes {graph.num_classes}"
        )
    if not doc.get("quantized", False):
        weights = _read_float_blob(graph, blob)
        model = FloatModel(doc["name"], graph, weights)
        check_weights(graph, weights)
        return model
    return _load_quantized(doc, graph, blob)


def _read_float_blob(graph: g.ModelGraph, blob: bytes) -> WeightStore:
    weights: WeightStore = {}
    pos = 0
    for layer in graph.layers:
        if layer.kind not in g.PARAM_KINDS:
            continue
        wshape = weight_shape(layer, graph.tensor(layer.inputs[0]))
        bshape = (graph.tensor(layer.output).shape[2],)
        for name, shape in ((layer.weight_name, wshape), (layer.bias_name, bshape)):
            count = int(np.prod(shape))
            end = pos + 4 * count
            if end > len(blob):
                raise ParameterError(f"weight blob too short reading {name!r}")
            weights[name] = np.frombuffer(blob[pos:end], dtype="<f4").reshape(shape).copy()
            pos = end
    if pos != len(blob):
        raise ParameterError(f"weight blob has {len(blob) - pos} trailing bytes")
    return weights


def _load_quantized(doc: dict, graph: g.ModelGraph, blob: bytes) -> QuantizedModel:
    qparams = {name: _qparams_from_json(raw) for name, raw in doc["qparams"].items()}
    weights_q: dict[str, np.ndarray] = {}
    biases_q: dict[str, np.ndarray] = {}
    requant: dict[str, tuple[RequantMultiplier, ...]] = {}
    clamp: dict[str, tuple[int, int]] = {}
    pos = 0
    for entry, layer in zip(doc["layers"], graph.layers):
        if "requant" in entry:
            requant[layer.name] = tuple(
                RequantMultiplier(int(r["mantissa_q31"]), int(r["shift"]))
                for r in entry["requant"]
            )
        if "clamp" in entry:
            clamp[layer.name] = (int(entry["clamp"][0]), int(entry["clamp"][1]))
        if layer.kind not in g.PARAM_KINDS:
            continue
        wshape = weight_shape(layer, graph.tensor(layer.inputs[0]))
        bcount = graph.tensor(layer.output).shape[2]
        wcount = int(np.prod(wshape))
        end = pos + wcount
        if end + 4 * bcount > len(blob):
            raise ParameterError(f"weight blob too short reading {layer.weight_name!r}")
        weights_q[layer.weight_name] = (
            np.frombuffer(blob[pos:end], dtype="<i1").reshape(wshape).copy()
        )
        pos = end
        end = pos + 4 * bcount
        biases_q[layer.bias_name] = np.frombuffer(blob[pos:end], dtype="<i4").copy()
        pos = end
    if pos != len(blob):
        raise ParameterError(f"weight blob has {len(blob) - pos} trailing bytes")
    # stored graphs are already fused; mark tensors int8
    tensors = {n: g.TensorSpec(n, s.shape, g.INT8) for n, s in graph.tensors.items()}
    qgraph = g.ModelGraph(graph.input_name, graph.output_name, graph.layers, tensors,
                          graph.schedule)
    return QuantizedModel(
        name=doc["name"],
        graph=qgraph,
        weights_q=weights_q,
        biases_q=biases_q,
        qparams=qparams,
        requant=requant,
        clamp=clamp,
    )
