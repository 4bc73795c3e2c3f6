"""Hardware-aware architecture selection over an inverted-residual space.

Every block position offers (kernel, expansion) candidates plus an optional
identity skip; exactly one candidate per position realizes a concrete graph
(the one-path property: a sampled path materializes only its own layers).
Selection is exhaustive under a cap, with the footprint estimator as the
objective, or gate-sampled for larger spaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from . import estimate, graph as g
from .errors import CapacityError, InfeasibleError, ParameterError
from .rng import SplitMix64

ENUMERATION_CAP = 10**6
_GATE_TOL = 1e-9


@dataclass(frozen=True)
class Candidate:
    """One block option: a (kernel, expansion) pair or the identity skip."""

    kernel: int = 0
    expansion: int = 0
    skip: bool = False

    def label(self) -> str:
        return "skip" if self.skip else f"k{self.kernel}e{self.expansion}"


@dataclass(frozen=True)
class BlockPosition:
    in_ch: int
    out_ch: int
    stride: int
    candidates: tuple[Candidate, ...]


@dataclass
class SearchSpace:
    input_shape: tuple[int, int, int]
    classes: int
    stem_kernel: int
    stem_channels: int
    stem_stride: int
    positions: list[BlockPosition]

    def __post_init__(self):
        for i, pos in enumerate(self.positions):
            if not pos.candidates:
                raise ParameterError(f"position {i} has no candidates")
            for cand in pos.candidates:
                if cand.skip and not (pos.stride == 1 and pos.in_ch == pos.out_ch):
                    raise ParameterError(
                        f"position {i}: identity skip requires stride 1 and equal channels"
                    )

    @property
    def combinations(self) -> int:
        total = 1
        for pos in self.positions:
            total *= len(pos.candidates)
        return total


@dataclass
class GateVector:
    """Per-position probability weights over candidates."""

    weights: list[list[float]]

    def validate(self, space: SearchSpace) -> None:
        if len(self.weights) != len(space.positions):
            raise ParameterError(
                f"gate vector has {len(self.weights)} positions, space has {len(space.positions)}"
            )
        for i, (probs, pos) in enumerate(zip(self.weights, space.positions)):
            if len(probs) != len(pos.candidates):
                raise ParameterError(f"position {i}: {len(probs)} gates for "
                                     f"{len(pos.candidates)} candidates")
            if any(p < 0 for p in probs):
                raise ParameterError(f"position {i}: negative gate probability")
            if abs(sum(probs) - 1.0) > _GATE_TOL:
                raise ParameterError(f"position {i}: gate probabilities sum to {sum(probs)}")

    @classmethod
    def uniform(cls, space: SearchSpace) -> "GateVector":
        return cls([[1.0 / len(p.candidates)] * len(p.candidates) for p in space.positions])

    @classmethod
    def one_hot(cls, space: SearchSpace, choices: tuple[int, ...]) -> "GateVector":
        weights = []
        for pos, choice in zip(space.positions, choices):
            row = [0.0] * len(pos.candidates)
            row[choice] = 1.0
            weights.append(row)
        return cls(weights)


@dataclass
class ArchCandidate:
    choices: tuple[int, ...]
    graph: g.ModelGraph  # deployment-typed (int8, activations fused)
    cost: estimate.FootprintReport

    def path_label(self, space: SearchSpace) -> str:
        return "-".join(
            space.positions[i].candidates[c].label() for i, c in enumerate(self.choices)
        )


def load_space(path: str | Path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    positions = []
    in_ch = doc["stem"]["out_channels"]
    for raw in doc["positions"]:
        cands = tuple(
            Candidate(skip=True) if c.get("skip") else Candidate(c["kernel"], c["expansion"])
            for c in raw["candidates"]
        )
        positions.append(
            BlockPosition(in_ch=in_ch, out_ch=raw["out_channels"],
                          stride=raw.get("stride", 1), candidates=cands)
        )
        in_ch = raw["out_channels"]
    return SearchSpace(
        input_shape=tuple(doc["input"]),
        classes=doc["classes"],
        stem_kernel=doc["stem"].get("kernel", 3),
        stem_channels=doc["stem"]["out_channels"],
        stem_stride=doc["stem"].get("stride", 2),
        positions=positions,
    )


def save_space(space: SearchSpace, path: str | Path) -> None:
    doc = {
        "input": list(space.input_shape),
        "classes": space.classes,
        "stem": {"kernel": space.stem_kernel, "out_channels": space.stem_channels,
                 "stride": space.stem_stride},
        "positions": [
            {
                "out_channels": pos.out_ch,
                "stride": pos.stride,
                "candidates": [
                    {"skip": True} if c.skip else {"kernel": c.kernel, "expansion": c.expansion}
                    for c in pos.candidates
                ],
            }
            for pos in space.positions
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _build_layers(space: SearchSpace, choices: tuple[int, ...]) -> list[g.LayerOp]:
    if len(choices) != len(space.positions):
        raise ParameterError(f"expected {len(space.positions)} choices, got {len(choices)}")
    layers = [
        g.LayerOp(g.CONV2D, "stem", ("input",), "stem_raw",
                  kernel=space.stem_kernel, stride=space.stem_stride,
                  out_channels=space.stem_channels),
        g.LayerOp(g.RELU6, "stem_act", ("stem_raw",), "stem_out"),
    ]
    in_name = "stem_out"
    for i, (pos, choice) in enumerate(zip(space.positions, choices)):
        if not 0 <= choice < len(pos.candidates):
            raise ParameterError(f"position {i}: candidate index {choice} out of range")
        cand = pos.candidates[choice]
        if cand.skip:
            continue
        block = g.build_inverted_residual(
            pos.in_ch, pos.out_ch, cand.kernel, cand.expansion, pos.stride,
            input_name=in_name, prefix=f"b{i}",
        )
        layers.extend(block)
        in_name = g.block_output_name(block)
    layers += [
        g.LayerOp(g.GLOBAL_AVG_POOL, "pool", (in_name,), "pool_out"),
        g.LayerOp(g.FULLY_CONNECTED, "head", ("pool_out",), "logits",
                  out_channels=space.classes),
        g.LayerOp(g.ARGMAX_HEAD, "classify", ("logits",), "class_idx"),
    ]
    return layers


def realize(space: SearchSpace, choices: tuple[int, ...]) -> g.ModelGraph:
    """Materialize only the chosen candidates' layers as a deployable graph.

    The realized graph is typed int8 with activations fused, matching what
    the footprint estimator costs: the quantized on-target model.
    """
    layers = _build_layers(space, choices)
    input_spec = g.TensorSpec("input", space.input_shape, g.INT8)
    realized = g.infer_shapes(g.make_graph(input_spec, layers))
    return g.fuse_relu6(realized)


def realize_float(space: SearchSpace, choices: tuple[int, ...]) -> g.ModelGraph:
    """Trainable/calibratable real32 view of a path (activations not fused)."""
    layers = _build_layers(space, choices)
    input_spec = g.TensorSpec("input", space.input_shape, g.REAL32)
    return g.infer_shapes(g.make_graph(input_spec, layers))


def _candidate(space: SearchSpace, choices: tuple[int, ...],
               profile: estimate.DeviceProfile) -> ArchCandidate:
    realized = realize(space, choices)
    cost = estimate.footprint(realized, profile, weight_elem_bytes=1)
    return ArchCandidate(choices=choices, graph=realized, cost=cost)


def enumerate_space(
    space: SearchSpace,
    profile: estimate.DeviceProfile | None = None,
    cap: int = ENUMERATION_CAP,
) -> Iterator[ArchCandidate]:
    """Yield every path exactly once, lexicographic by (position, candidate)."""
    if space.combinations > cap:
        raise CapacityError(
            f"{space.combinations} combinations exceed the cap of {cap}; "
            "use gate sampling instead"
        )
    profile = profile or estimate.DeviceProfile()

    def walk(prefix: tuple[int, ...], depth: int) -> Iterator[ArchCandidate]:
        if depth == len(space.positions):
            yield _candidate(space, prefix, profile)
            return
        for i in range(len(space.positions[depth].candidates)):
            yield from walk(prefix + (i,), depth + 1)

    return walk((), 0)


def sample_one_path(
    space: SearchSpace,
    gates: GateVector,
    seed: int,
    profile: estimate.DeviceProfile | None = None,
) -> ArchCandidate:
    """Draw exactly one candidate per position from the gate distribution."""
    gates.validate(space)
    profile = profile or estimate.DeviceProfile()
    rng = SplitMix64(seed)
    choices = []
    for probs in gates.weights:
        u = rng.uniform() * sum(probs)
        acc = 0.0
        pick = len(probs) - 1
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                pick = i
                break
        choices.append(pick)
    return _candidate(space, tuple(choices), profile)


def select_best(
    space: SearchSpace,
    flash_budget_kb: float,
    ram_budget_kb: float,
    profile: estimate.DeviceProfile | None = None,
) -> ArchCandidate:
    """Minimum-latency feasible path; ties go to lower flash, then path order."""
    if flash_budget_kb <= 0 or ram_budget_kb <= 0:
        raise ParameterError("budgets must be strictly positive")
    profile = profile or estimate.DeviceProfile()
    best: ArchCandidate | None = None
    smallest: ArchCandidate | None = None
    for cand in enumerate_space(space, profile):
        if smallest is None or (cand.cost.flash_kb, cand.cost.ram_kb, cand.choices) < (
            smallest.cost.flash_kb, smallest.cost.ram_kb, smallest.choices
        ):
            smallest = cand
        if cand.cost.flash_kb <= flash_budget_kb and cand.cost.ram_kb <= ram_budget_kb:
            if best is None or (cand.cost.time_ms, cand.cost.flash_kb, cand.choices) < (
                best.cost.time_ms, best.cost.flash_kb, best.choices
            ):
                best = cand
    if best is None:
        assert smallest is not None
        raise InfeasibleError(
            f"no candidate fits flash<={flash_budget_kb}KB ram<={ram_budget_kb}KB; "
            f"smallest found: path {smallest.choices} at {smallest.cost.flash_kb:.2f}KB flash, "
            f"{smallest.cost.ram_kb:.2f}KB ram",
            smallest=smallest,
        )
    return best


def fixture_space() -> SearchSpace:
    """4 positions x 5 candidates (k3/k5 x e3/e6 + skip) = 625 paths."""
    cands = (
        Candidate(3, 3),
        Candidate(3, 6),
        Candidate(5, 3),
        Candidate(5, 6),
        Candidate(skip=True),
    )
    positions = [BlockPosition(in_ch=16, out_ch=16, stride=1, candidates=cands)
                 for _ in range(4)]
    return SearchSpace(
        input_shape=(32, 32, 1),
        classes=2,
        stem_kernel=3,
        stem_channels=16,
        stem_stride=2,
        positions=positions,
    )
