"""Standalone C emission: model.h / model.c with weights, arena and kernels.

The emitted source is readable integer-only C99: one static function per
layer kind actually used, the requantize helper defined once, weights in
const (Flash-resident) arrays, and a static activation arena whose size
equals the liveness peak exactly. Emission is deterministic; identical
models yield identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import estimate, graph as g
from .engine_int import IntTensor, run_int
from .errors import EmissionError, ParameterError
from .manifest import manifest_dict
from .quantize import QuantizedModel
from .rng import substream

DEFAULT_ARENA_CAP = 640 * 1024  # STM32L4R5-class SRAM

GOLDEN_MAGIC = b"GLD1"
GOLDEN_VERSION = 1


@dataclass
class EmittedBundle:
    header: str
    source: str
    golden: bytes
    digest: str


def plan_arena(model_graph: g.ModelGraph) -> tuple[dict[str, int], int]:
    """Assign every tensor an arena offset so the high-water mark equals
    the liveness peak exactly.

    Offsets come from a backtracking exact-fit search: each tensor sits at 0
    or directly on top of a lifetime-overlapping neighbour. Raises
    EmissionError if no packing reaches the bound (not observed for graphs
    in this block family).
    """
    target = estimate.ram_peak(model_graph)
    lifetimes = estimate.tensor_lifetimes(model_graph)
    sizes = {name: model_graph.tensor(name).nbytes for name in lifetimes}

    def overlap(a: str, b: str) -> bool:
        (a0, a1), (b0, b1) = lifetimes[a], lifetimes[b]
        return a0 <= b1 and b0 <= a1

    # big and long-lived tensors first; candidate offsets are the floor, the
    # ceiling (target - size), and the tops of already-placed neighbours.
    # Ceiling slots matter: residual skip buffers must hug an arena edge or
    # the expand/depthwise pair of the next block cannot fit beside them.
    orders = (
        sorted(lifetimes, key=lambda n: (-sizes[n], lifetimes[n][0] - lifetimes[n][1],
                                         lifetimes[n][0], n)),
        sorted(lifetimes, key=lambda n: (lifetimes[n][0], lifetimes[n][1], n)),
    )

    for order in orders:
        placed: dict[str, int] = {}
        budget = [500_000]

        def fits(name: str, offset: int) -> bool:
            if offset + sizes[name] > target:
                return False
            for other, off in placed.items():
                if overlap(name, other) and not (
                    offset + sizes[name] <= off or off + sizes[other] <= offset
                ):
                    return False
            return True

        def backtrack(i: int) -> bool:
            if i == len(order):
                return True
            budget[0] -= 1
            if budget[0] < 0:
                return False
            name = order[i]
            candidates = {0, target - sizes[name]}
            candidates.update(
                off + sizes[other] for other, off in placed.items() if overlap(name, other)
            )
            for offset in sorted(c for c in candidates if c >= 0):
                if fits(name, offset):
                    placed[name] = offset
                    if backtrack(i + 1):
                        return True
                    del placed[name]
            return False

        if backtrack(0):
            return dict(placed), target

    raise EmissionError("no arena packing reaches the liveness peak for this schedule")


def _fmt_array(values: np.ndarray, per_line: int = 16) -> str:
    flat = [str(int(v)) for v in values.reshape(-1)]
    lines = [
        "    " + ", ".join(flat[i : i + per_line]) + ","
        for i in range(0, len(flat), per_line)
    ]
    return "\n".join(lines)


_KERNEL_SOURCES = {
    "rescale": """\
static int64_t tb_rescale(int64_t acc, int32_t mant, int32_t shift)
{
    int64_t p = acc * (int64_t)mant;
    int64_t half = (int64_t)1 << (30 + shift);
    if (p >= 0) {
        return (p + half) >> (31 + shift);
    }
    return -((-p + half) >> (31 + shift));
}
""",
    "requant": """\
static int8_t tb_requant(int64_t acc, int32_t mant, int32_t shift,
                         int32_t zp, int32_t lo, int32_t hi)
{
    int64_t q = tb_rescale(acc, mant, shift) + zp;
    if (q < lo) {
        q = lo;
    }
    if (q > hi) {
        q = hi;
    }
    return (int8_t)q;
}
""",
    g.CONV2D: """\
static void tb_conv2d(const int8_t *x, int32_t xh, int32_t xw, int32_t xc,
                      const int8_t *w, const int32_t *b, int32_t oc,
                      int32_t k, int32_t stride, int32_t pad_top, int32_t pad_left,
                      int32_t oh, int32_t ow, int32_t zp_in, int32_t zp_out,
                      int32_t mant, int32_t shift, int32_t lo, int32_t hi, int8_t *y)
{
    int32_t i, j, o, kr, kc, c;
    for (i = 0; i < oh; ++i) {
        for (j = 0; j < ow; ++j) {
            for (o = 0; o < oc; ++o) {
                int64_t acc = (int64_t)b[o];
                for (kr = 0; kr < k; ++kr) {
                    int32_t yi = i * stride + kr - pad_top;
                    if (yi < 0 || yi >= xh) {
                        continue;
                    }
                    for (kc = 0; kc < k; ++kc) {
                        int32_t xj = j * stride + kc - pad_left;
                        if (xj < 0 || xj >= xw) {
                            continue;
                        }
                        for (c = 0; c < xc; ++c) {
                            int32_t xv = (int32_t)x[(yi * xw + xj) * xc + c] - zp_in;
                            int32_t wv = (int32_t)w[((o * k + kr) * k + kc) * xc + c];
                            acc += (int64_t)xv * (int64_t)wv;
                        }
                    }
                }
                y[(i * ow + j) * oc + o] = tb_requant(acc, mant, shift, zp_out, lo, hi);
            }
        }
    }
}
""",
    g.DEPTHWISE: """\
static void tb_depthwise(const int8_t *x, int32_t xh, int32_t xw, int32_t ch,
                         const int8_t *w, const int32_t *b,
                         int32_t k, int32_t stride, int32_t pad_top, int32_t pad_left,
                         int32_t oh, int32_t ow, int32_t zp_in, int32_t zp_out,
                         int32_t mant, int32_t shift, int32_t lo, int32_t hi, int8_t *y)
{
    int32_t i, j, c, kr, kc;
    for (i = 0; i < oh; ++i) {
        for (j = 0; j < ow; ++j) {
            for (c = 0; c < ch; ++c) {
                int64_t acc = (int64_t)b[c];
                for (kr = 0; kr < k; ++kr) {
                    int32_t yi = i * stride + kr - pad_top;
                    if (yi < 0 || yi >= xh) {
                        continue;
                    }
                    for (kc = 0; kc < k; ++kc) {
                        int32_t xj = j * stride + kc - pad_left;
                        if (xj < 0 || xj >= xw) {
                            continue;
                        }
                        acc += (int64_t)(((int32_t)x[(yi * xw + xj) * ch + c] - zp_in)
                                         * (int32_t)w[(c * k + kr) * k + kc]);
                    }
                }
                y[(i * ow + j) * ch + c] = tb_requant(acc, mant, shift, zp_out, lo, hi);
            }
        }
    }
}
""",
    g.FULLY_CONNECTED: """\
static void tb_fc(const int8_t *x, int32_t n_in, const int8_t *w, const int32_t *b,
                  int32_t n_out, int32_t zp_in, int32_t zp_out,
                  int32_t mant, int32_t shift, int32_t lo, int32_t hi, int8_t *y)
{
    int32_t o, c;
    for (o = 0; o < n_out; ++o) {
        int64_t acc = (int64_t)b[o];
        for (c = 0; c < n_in; ++c) {
            acc += (int64_t)(((int32_t)x[c] - zp_in) * (int32_t)w[o * n_in + c]);
        }
        y[o] = tb_requant(acc, mant, shift, zp_out, lo, hi);
    }
}
""",
    g.RESIDUAL_ADD: """\
static void tb_add(const int8_t *a, const int8_t *b, int32_t n,
                   int32_t zp_a, int32_t mant_a, int32_t shift_a,
                   int32_t zp_b, int32_t mant_b, int32_t shift_b,
                   int32_t zp_out, int32_t lo, int32_t hi, int8_t *y)
{
    int32_t i;
    for (i = 0; i < n; ++i) {
        int64_t ra = tb_rescale((int64_t)a[i] - zp_a, mant_a, shift_a);
        int64_t rb = tb_rescale((int64_t)b[i] - zp_b, mant_b, shift_b);
        int64_t q = ra + rb + zp_out;
        if (q < lo) {
            q = lo;
        }
        if (q > hi) {
            q = hi;
        }
        y[i] = (int8_t)q;
    }
}
""",
    g.GLOBAL_AVG_POOL: """\
static void tb_avgpool(const int8_t *x, int32_t hw, int32_t ch,
                       int32_t lo, int32_t hi, int8_t *y)
{
    int32_t i, c;
    for (c = 0; c < ch; ++c) {
        int64_t s = 0;
        int64_t n = (int64_t)hw;
        int64_t q;
        for (i = 0; i < hw; ++i) {
            s += (int64_t)x[i * ch + c];
        }
        q = (s >= 0) ? ((2 * s + n) / (2 * n)) : -((-(2 * s) + n) / (2 * n));
        if (q < lo) {
            q = lo;
        }
        if (q > hi) {
            q = hi;
        }
        y[c] = (int8_t)q;
    }
}
""",
}


def model_digest(qm: QuantizedModel) -> str:
    doc = manifest_dict(qm, blob_name="")
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    for layer in qm.graph.layers:
        if layer.kind in g.PARAM_KINDS:
            blob += qm.weights_q[layer.weight_name].tobytes()
            blob += qm.biases_q[layer.bias_name].astype("<i4").tobytes()
    return hashlib.sha256(blob).hexdigest()


def emit_c(qm: QuantizedModel, arena_cap: int = DEFAULT_ARENA_CAP) -> EmittedBundle:
    """Emit model.h / model.c text for a quantized model."""
    graph = qm.graph
    offsets, arena_bytes = plan_arena(graph)
    if arena_bytes > arena_cap:
        raise EmissionError(f"arena {arena_bytes} B exceeds the cap of {arena_cap} B")
    digest = model_digest(qm)
    in_len = graph.input_spec.nelems
    logits_spec = graph.tensor(graph.logits_name)
    out_len = logits_spec.nelems

    banner = (
        f"/* Generated integer inference model \"{qm.name}\".\n"
        f" * Model digest sha256:{digest}\n"
        f" * Do not edit; regenerate from the manifest instead. */\n"
    )

    header = banner + (
        "#ifndef TB_MODEL_H\n"
        "#define TB_MODEL_H\n"
        "\n"
        f"#define TB_MODEL_INPUT_LEN {in_len}\n"
        f"#define TB_MODEL_OUTPUT_LEN {out_len}\n"
        f"#define TB_MODEL_ARENA_BYTES {arena_bytes}\n"
        "\n"
        "/* Runs one inference: `in` holds TB_MODEL_INPUT_LEN quantized input\n"
        " * bytes, `out` receives TB_MODEL_OUTPUT_LEN int8 logits. Returns the\n"
        " * argmax class index (ties resolve to the lowest index). */\n"
        "int tb_model_run(const signed char *in, signed char *out);\n"
        "\n"
        "#endif\n"
    )

    parts: list[str] = [banner]
    parts.append('#include "model.h"\n\n#include <stdint.h>\n')

    # flash-resident parameters, in schedule order
    for idx in graph.schedule:
        layer = graph.layers[idx]
        if layer.kind not in g.PARAM_KINDS:
            continue
        w = qm.weights_q[layer.weight_name]
        b = qm.biases_q[layer.bias_name]
        parts.append(
            f"\nstatic const int8_t tb_w_{layer.name}[{w.size}] = {{\n{_fmt_array(w)}\n}};\n"
        )
        parts.append(
            f"\nstatic const int32_t tb_b_{layer.name}[{b.size}] = {{\n{_fmt_array(b, 8)}\n}};\n"
        )

    parts.append("\nstatic int8_t tb_arena[TB_MODEL_ARENA_BYTES];\n")

    used_kinds = {layer.kind for layer in graph.layers}
    if used_kinds & {g.CONV2D, g.DEPTHWISE, g.FULLY_CONNECTED, g.RESIDUAL_ADD}:
        parts.append("\n" + _KERNEL_SOURCES["rescale"])
    if used_kinds & {g.CONV2D, g.DEPTHWISE, g.FULLY_CONNECTED}:
        parts.append("\n" + _KERNEL_SOURCES["requant"])
    for kind in (g.CONV2D, g.DEPTHWISE, g.FULLY_CONNECTED, g.RESIDUAL_ADD, g.GLOBAL_AVG_POOL):
        if kind in used_kinds:
            parts.append("\n" + _KERNEL_SOURCES[kind])

    body: list[str] = []
    body.append("int tb_model_run(const signed char *in, signed char *out)\n{")
    body.append("    int32_t i;")
    body.append("    int32_t best;")
    body.append(f"    for (i = 0; i < {in_len}; ++i) {{")
    body.append(f"        tb_arena[{offsets[graph.input_name]} + i] = (int8_t)in[i];")
    body.append("    }")

    def at(name: str) -> str:
        return f"&tb_arena[{offsets[name]}]"

    for idx in graph.schedule:
        layer = graph.layers[idx]
        in_spec = graph.tensor(layer.inputs[0])
        out_spec = graph.tensor(layer.output)
        zp_in = qm.qparams[layer.inputs[0]].zero_point
        zp_out = qm.qparams[layer.output].zero_point
        lo, hi = qm.clamp.get(layer.name, (-128, 127))
        src_list = ", ".join(layer.inputs)
        body.append(f"    /* {layer.kind} {layer.name}: {src_list} -> {layer.output} */")
        if layer.kind in (g.CONV2D, g.DEPTHWISE):
            rm = qm.requant[layer.name][0]
            xh, xw, xc = in_spec.shape
            oh, ow, oc = out_spec.shape
            if layer.padding == "same":
                pad_top, _ = g.same_padding(xh, layer.kernel, layer.stride)
                pad_left, _ = g.same_padding(xw, layer.kernel, layer.stride)
            else:
                pad_top = pad_left = 0
            fn = "tb_conv2d" if layer.kind == g.CONV2D else "tb_depthwise"
            chan = f"{xc},\n               tb_w_{layer.name}, tb_b_{layer.name}, {oc},"
            if layer.kind == g.DEPTHWISE:
                chan = f"{xc},\n               tb_w_{layer.name}, tb_b_{layer.name},"
            body.append(
                f"    {fn}({at(layer.inputs[0])}, {xh}, {xw}, {chan}\n"
                f"               {layer.kernel}, {layer.stride}, {pad_top}, {pad_left},\n"
                f"               {oh}, {ow}, {zp_in}, {zp_out},\n"
                f"               {rm.mantissa_q31}, {rm.shift}, {lo}, {hi}, {at(layer.output)});"
            )
        elif layer.kind == g.FULLY_CONNECTED:
            rm = qm.requant[layer.name][0]
            body.append(
                f"    tb_fc({at(layer.inputs[0])}, {in_spec.nelems}, "
                f"tb_w_{layer.name}, tb_b_{layer.name}, {out_spec.shape[2]},\n"
                f"          {zp_in}, {zp_out}, {rm.mantissa_q31}, {rm.shift}, "
                f"{lo}, {hi}, {at(layer.output)});"
            )
        elif layer.kind == g.RESIDUAL_ADD:
            rm_a, rm_b = qm.requant[layer.name]
            zp_a = qm.qparams[layer.inputs[0]].zero_point
            zp_b = qm.qparams[layer.inputs[1]].zero_point
            body.append(
                f"    tb_add({at(layer.inputs[0])}, {at(layer.inputs[1])}, {in_spec.nelems},\n"
                f"           {zp_a}, {rm_a.mantissa_q31}, {rm_a.shift},\n"
                f"           {zp_b}, {rm_b.mantissa_q31}, {rm_b.shift},\n"
                f"           {zp_out}, {lo}, {hi}, {at(layer.output)});"
            )
        elif layer.kind == g.GLOBAL_AVG_POOL:
            h, w_, c = in_spec.shape
            body.append(
                f"    tb_avgpool({at(layer.inputs[0])}, {h * w_}, {c}, "
                f"{lo}, {hi}, {at(layer.output)});"
            )
        elif layer.kind == g.ARGMAX_HEAD:
            n = in_spec.nelems
            body.append("    best = 0;")
            body.append(f"    for (i = 1; i < {n}; ++i) {{")
            body.append(f"        if (tb_arena[{offsets[layer.inputs[0]]} + i] > "
                        f"tb_arena[{offsets[layer.inputs[0]]} + best]) {{")
            body.append("            best = (int32_t)i;")
            body.append("        }")
            body.append("    }")
            body.append(f"    tb_arena[{offsets[layer.output]}] = (int8_t)best;")
        else:
            raise EmissionError(f"layer {layer.name!r}: cannot emit kind {layer.kind!r}")

    logits_off = offsets[graph.logits_name]
    body.append(f"    for (i = 0; i < {out_len}; ++i) {{")
    body.append(f"        out[i] = (signed char)tb_arena[{logits_off} + i];")
    body.append("    }")
    if not any(layer.kind == g.ARGMAX_HEAD for layer in graph.layers):
        body.append("    best = 0;")
        body.append(f"    for (i = 1; i < {out_len}; ++i) {{")
        body.append(f"        if (tb_arena[{logits_off} + i] > tb_arena[{logits_off} + best]) {{")
        body.append("            best = (int32_t)i;")
        body.append("        }")
        body.append("    }")
    body.append("    return (int)best;")
    body.append("}")
    parts.append("\n" + "\n".join(body) + "\n")

    return EmittedBundle(header=header, source="".join(parts), golden=b"", digest=digest)


def emit_golden_vectors(qm: QuantizedModel, count: int, seed: int) -> bytes:
    """Seeded random int8 inputs plus engine outputs, in the GLD1 format."""
    if count < 1:
        raise ParameterError("golden vector count must be >= 1")
    graph = qm.graph
    in_len = graph.input_spec.nelems
    out_len = graph.tensor(graph.logits_name).nelems
    # header: magic, version, count, input length, output length
    chunks = [GOLDEN_MAGIC, struct.pack("<IIII", GOLDEN_VERSION, count, in_len, out_len)]
    for i in range(count):
        rng = substream(seed, i)
        data = rng.int8_array(in_len).reshape(graph.input_spec.shape)
        x = IntTensor(graph.input_spec.shape, data, qm.input_qparams)
        logits, predicted = run_int(qm, x)
        chunks.append(data.tobytes())
        chunks.append(logits.data.tobytes())
        chunks.append(struct.pack("<I", predicted))
    return b"".join(chunks)


def parse_golden(blob: bytes) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Decode a golden blob into (input, logits, predicted) records."""
    if blob[:4] != GOLDEN_MAGIC:
        raise ParameterError(f"bad golden magic {blob[:4]!r}")
    version, count, in_len, out_len = struct.unpack_from("<IIII", blob, 4)
    if version != GOLDEN_VERSION:
        raise ParameterError(f"unsupported golden version {version}")
    records = []
    pos = 20
    for _ in range(count):
        x = np.frombuffer(blob, dtype=np.int8, count=in_len, offset=pos)
        pos += in_len
        y = np.frombuffer(blob, dtype=np.int8, count=out_len, offset=pos)
        pos += out_len
        (predicted,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        records.append((x.copy(), y.copy(), int(predicted)))
    if pos != len(blob):
        raise ParameterError(f"golden blob has {len(blob) - pos} trailing bytes")
    return records


def write_bundle(
    qm: QuantizedModel,
    out_dir: str | Path,
    golden_count: int = 64,
    golden_seed: int = 7,
    arena_cap: int = DEFAULT_ARENA_CAP,
) -> EmittedBundle:
    """Emit model.h, model.c and golden.bin into a directory."""
    bundle = emit_c(qm, arena_cap=arena_cap)
    golden = emit_golden_vectors(qm, golden_count, golden_seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "model.h").write_text(bundle.header, encoding="ascii")
    (out_dir / "model.c").write_text(bundle.source, encoding="ascii")
    (out_dir / "golden.bin").write_bytes(golden)
    return EmittedBundle(bundle.header, bundle.source, golden, bundle.digest)
