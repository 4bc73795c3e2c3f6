"""Pipeline driver: preprocess, calibrate, quantize, run, evaluate, report,
search, emit, verify.

Exit codes: 0 success, 1 domain error, 2 usage error, 3 environment skip
(verify without a C toolchain). Every command is deterministic given the
resolved configuration and seeds; `--print-config` shows that resolution.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import subprocess
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import codegen, estimate, preprocess, search
from .engine_float import FloatModel, predict_float, run_float
from .engine_int import quantize_input, run_int
from .errors import ToolchainError, UsageError
from .fixture import init_weights
from .manifest import load_model, save_model
from .quantize import QuantizedModel, collect_ranges, load_ranges, quantize_model, save_ranges
from .rng import GENERATOR_NAME, substream

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_ENV_SKIP = 3

_REPO_SHIM = Path(__file__).resolve().parents[2] / "shim"


@dataclass
class PipelineConfig:
    """Resolved settings; file values override defaults, flags override both."""

    out_dir: str = "out"
    # device profile
    clock_hz: float = 120e6
    macs_per_cycle: float = 1.0
    active_power_mw: float = 4.83
    code_overhead_bytes: int = 30_000
    supply_voltage_v: float = 1.9
    # quantization options
    calibration_statistic: str = "minmax"  # plain min/max; percentile is a future hook
    granularity: str = "per-tensor"
    # preprocessing
    channel_mode: str = "luma"
    # evaluation protocol: seeded stratified re-splits of the labeled set
    repeats: int = 10
    eval_fraction: float = 0.8
    # search
    flash_budget_kb: float = 1024.0
    ram_budget_kb: float = 640.0
    enumeration_cap: int = search.ENUMERATION_CAP
    # emission
    golden_count: int = 64
    arena_cap_bytes: int = codegen.DEFAULT_ARENA_CAP
    # seeds are explicit; there are no wall-clock defaults anywhere
    seed: int = 1

    def profile(self) -> estimate.DeviceProfile:
        return estimate.DeviceProfile(
            clock_hz=self.clock_hz,
            macs_per_cycle=self.macs_per_cycle,
            active_power_mw=self.active_power_mw,
            code_overhead_bytes=self.code_overhead_bytes,
            supply_voltage_v=self.supply_voltage_v,
        )

    def resolved(self) -> dict:
        doc = asdict(self)
        doc["generator"] = GENERATOR_NAME
        return doc


def _load_config(path: str | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path!r} does not exist")
    with open(p, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in raw.items():
        setattr(cfg, key, value)
    return cfg


def _resolve(args: argparse.Namespace) -> PipelineConfig:
    cfg = _load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for name in ("repeats", "channel_mode", "flash_budget_kb", "ram_budget_kb",
                 "golden_count", "clock_hz", "macs_per_cycle", "active_power_mw",
                 "code_overhead_bytes"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory {path!r} does not exist")
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {path!r} does not exist")
    return p


def _read_tensor(path: Path, shape: tuple[int, int, int]) -> np.ndarray:
    raw = path.read_bytes()
    count = shape[0] * shape[1] * shape[2]
    if len(raw) != 4 * count:
        raise UsageError(f"tensor file {path} holds {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


# ---------------------------------------------------------------- commands


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    in_dir = _require_dir(args.in_dir, "input")
    out_dir = Path(args.out_dir or cfg.out_dir)
    files = sorted(in_dir.glob("*.ppm"))
    if not files:
        raise UsageError(f"no .ppm files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    ok, failures = 0, []
    for path in files:
        try:
            image = preprocess.decode_ppm(path.read_bytes())
            plane = preprocess.resize_bilinear(
                preprocess.to_single_channel(image, cfg.channel_mode)
            )
            tensor = preprocess.normalize(plane)
        except ToolchainError as exc:
            failures.append({"file": path.name, "error": str(exc)})
            continue
        (out_dir / f"{path.stem}.f32").write_bytes(tensor.astype("<f4").tobytes())
        if args.dump:
            (out_dir / f"{path.stem}.plane").write_bytes(plane.tobytes())
        ok += 1
    if getattr(args, "json", False):
        print(json.dumps({"ok": ok, "failed": len(failures), "failures": failures}))
    else:
        print(f"{ok} ok, {len(failures)} failed")
        for item in failures:
            print(f"  failed {item['file']}: {item['error']}")
    return EXIT_OK


def _load_float(path: str) -> FloatModel:
    model = load_model(_require_file(path, "model manifest"))
    if not isinstance(model, FloatModel):
        raise UsageError(f"{path!r} is a quantized manifest; a float model is required")
    return model


def _calibration_tensors(cal_dir: Path, shape: tuple[int, int, int]) -> list[np.ndarray]:
    files = sorted(cal_dir.glob("*.f32"))
    if not files:
        raise UsageError(f"no .f32 tensors in {cal_dir}")
    return [_read_tensor(p, shape) for p in files]


def cmd_calibrate(args, cfg: PipelineConfig) -> int:
    model = _load_float(args.model)
    cal = _calibration_tensors(_require_dir(args.data, "calibration"), model.graph.input_spec.shape)
    ranges = collect_ranges(model.graph, model.weights, cal)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ranges(ranges, out)
    print(f"calibrated {len(ranges)} tensors over {len(cal)} inputs -> {out}")
    return EXIT_OK


def cmd_quantize(args, cfg: PipelineConfig) -> int:
    model = _load_float(args.model)
    if args.ranges:
        ranges = load_ranges(_require_file(args.ranges, "ranges file"))
    elif args.data:
        cal = _calibration_tensors(_require_dir(args.data, "calibration"),
                                   model.graph.input_spec.shape)
        ranges = collect_ranges(model.graph, model.weights, cal)
    else:
        raise UsageError("quantize requires --ranges or --data")
    qm = quantize_model(model.graph, model.weights, ranges, name=model.name)
    out = Path(args.out)
    save_model(qm, out)
    print(f"quantized model -> {out} ({qm.weight_bytes()} weight bytes, "
          f"{len(qm.graph.layers)} fused layers)")
    return EXIT_OK


def cmd_run(args, cfg: PipelineConfig) -> int:
    model = load_model(_require_file(args.model, "model manifest"))
    x = _read_tensor(_require_file(args.input, "input tensor"),
                     model.graph.input_spec.shape)
    if isinstance(model, QuantizedModel):
        logits_t, predicted = run_int(model, quantize_input(x, model))
        logits = [int(v) for v in logits_t.data.reshape(-1)]
        kind = "int8"
    else:
        flogits = run_float(model.graph, model.weights, x)
        logits = [float(v) for v in flogits]
        predicted = int(np.argmax(flogits))
        kind = "real32"
    if getattr(args, "json", False):
        print(json.dumps({"engine": kind, "logits": logits, "class": predicted}))
    else:
        print(f"logits ({kind}): {logits}")
        print(f"class: {predicted}")
    return EXIT_OK


def _labeled_dataset(data_dir: Path) -> dict[str, list[Path]]:
    classes = sorted(p for p in data_dir.iterdir() if p.is_dir())
    if not classes:
        raise UsageError(
            f"{data_dir} has no class subdirectories (expected one directory per class)"
        )
    by_class: dict[str, list[Path]] = {}
    for cdir in classes:
        files = sorted(cdir.glob("*.ppm"))
        if not files:
            raise UsageError(f"class directory {cdir} contains no .ppm files")
        by_class[cdir.name] = files
    return by_class


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    """Accuracy over seeded stratified re-splits.

    Each repeat r shuffles every class with substream(seed, r) and holds out
    eval_fraction of it; the reported std is the sample standard deviation
    over repeats (resampling noise only; weights never change).
    """
    model = load_model(_require_file(args.model, "model manifest"))
    data_dir = _require_dir(args.data, "dataset")
    repeats = cfg.repeats
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    by_class = _labeled_dataset(data_dir)
    class_names = sorted(by_class)
    n_classes = model.graph.num_classes
    if len(class_names) != n_classes:
        raise UsageError(
            f"dataset has {len(class_names)} classes but the model expects {n_classes}"
        )

    # predictions are deterministic per image; compute once, then re-split
    correct: dict[Path, bool] = {}
    for ci, cname in enumerate(class_names):
        for path in by_class[cname]:
            tensor = preprocess.preprocess_image(path.read_bytes(), cfg.channel_mode)
            if isinstance(model, QuantizedModel):
                _, predicted = run_int(model, quantize_input(tensor, model))
            else:
                predicted = predict_float(model.graph, model.weights, tensor)
            correct[path] = predicted == ci

    accuracies = []
    for r in range(repeats):
        rng = substream(cfg.seed, r)
        picked: list[Path] = []
        for cname in class_names:
            files = list(by_class[cname])
            rng.shuffle(files)
            k = max(1, int(np.floor(cfg.eval_fraction * len(files) + 0.5)))
            picked.extend(files[:k])
        accuracies.append(100.0 * sum(correct[p] for p in picked) / len(picked))
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies, ddof=1)) if repeats > 1 else 0.0
    if getattr(args, "json", False):
        print(json.dumps({"mean": mean, "std": std, "repeats": repeats,
                          "accuracies": accuracies}))
    else:
        print(f"accuracy: {mean:.2f}±{std:.2f}%")
    return EXIT_OK


def _model_footprint(path: str, profile: estimate.DeviceProfile,
                     override: str | None) -> estimate.FootprintReport:
    model = load_model(_require_file(path, "model manifest"))
    width = 1 if isinstance(model, QuantizedModel) else 4
    report = estimate.footprint(model.graph, profile, weight_elem_bytes=width)
    if override:
        doc = report.to_dict()
        doc.update(json.loads(override))
        report = estimate.FootprintReport.from_dict(doc)
    return report


def cmd_report(args, cfg: PipelineConfig) -> int:
    profile = cfg.profile()
    original = _model_footprint(args.original, profile, args.override_original)
    optimized = _model_footprint(args.optimized, profile, args.override_optimized)
    try:
        reductions = estimate.reduction_report(original, optimized)
    except ToolchainError as exc:
        raise ToolchainError(f"reduction failed: {exc}") from exc
    doc = {
        "original": original.to_dict(),
        "optimized": optimized.to_dict(),
        "reductions": reductions,
    }
    if getattr(args, "json", False):
        print(json.dumps(doc, indent=1))
    else:
        rows = (
            ("Flash (KB)", "flash_kb"),
            ("RAM (KB)", "ram_kb"),
            ("Power (mW)", "power_mw"),
            ("Time (ms)", "time_ms"),
            ("Energy (mJ)", "energy_mj"),
        )
        print(f"{'metric':<12} {'original':>12} {'optimized':>12} {'reduction':>10}")
        for label, key in rows:
            print(f"{label:<12} {getattr(original, key):>12.2f} "
                  f"{getattr(optimized, key):>12.2f} {reductions[key]:>9.2f}%")
        print(f"{'MACs':<12} {original.macs:>12} {optimized.macs:>12} {'-':>10}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    return EXIT_OK


def cmd_search(args, cfg: PipelineConfig) -> int:
    space = search.load_space(_require_file(args.space, "search space"))
    profile = cfg.profile()
    best = search.select_best(space, cfg.flash_budget_kb, cfg.ram_budget_kb, profile)

    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    float_graph = search.realize_float(space, best.choices)
    weights = init_weights(float_graph, cfg.seed)
    winner = FloatModel(f"searched-{best.path_label(space)}", float_graph, weights)
    manifest_path = out_dir / "winner.json"
    save_model(winner, manifest_path)

    csv_path = out_dir / "candidates.csv"
    ranked = sorted(
        search.enumerate_space(space, profile, cap=cfg.enumeration_cap),
        key=lambda c: (c.cost.time_ms, c.cost.flash_kb, c.choices),
    )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "flash_kb", "ram_kb", "macs", "time_ms"])
        for cand in ranked:
            writer.writerow([
                cand.path_label(space),
                f"{cand.cost.flash_kb:.3f}",
                f"{cand.cost.ram_kb:.3f}",
                cand.cost.macs,
                f"{cand.cost.time_ms:.6f}",
            ])
    if getattr(args, "json", False):
        print(json.dumps({
            "path": best.path_label(space),
            "choices": list(best.choices),
            "cost": best.cost.to_dict(),
            "manifest": str(manifest_path),
            "csv": str(csv_path),
        }))
    else:
        print(f"winner: {best.path_label(space)} "
              f"(flash {best.cost.flash_kb:.2f}KB, ram {best.cost.ram_kb:.2f}KB, "
              f"time {best.cost.time_ms:.4f}ms)")
        print(f"manifest -> {manifest_path}")
        print(f"ranked candidates -> {csv_path}")
    return EXIT_OK


def cmd_emit(args, cfg: PipelineConfig) -> int:
    model = load_model(_require_file(args.model, "model manifest"))
    if not isinstance(model, QuantizedModel):
        raise UsageError("emit requires a quantized manifest; run `quantize` first")
    out_dir = Path(args.out_dir or cfg.out_dir)
    bundle = codegen.write_bundle(
        model, out_dir, golden_count=cfg.golden_count, golden_seed=cfg.seed,
        arena_cap=cfg.arena_cap_bytes,
    )
    print(f"emitted model.h, model.c, golden.bin -> {out_dir} "
          f"(digest {bundle.digest[:12]}, {cfg.golden_count} golden records)")
    return EXIT_OK


def cmd_verify(args, cfg: PipelineConfig) -> int:
    emit_dir = _require_dir(args.dir, "emitted bundle")
    for required in ("model.c", "model.h", "golden.bin"):
        if not (emit_dir / required).is_file():
            raise UsageError(f"emitted bundle is missing {required}")
    shim_dir = Path(args.shim_dir) if args.shim_dir else _REPO_SHIM
    if not (shim_dir / "build.sh").is_file():
        print(f"verify skipped: shim sources not found at {shim_dir} "
              "(pass --shim-dir)", file=sys.stderr)
        return EXIT_ENV_SKIP
    cc = shutil.which("cc") or shutil.which("gcc") or shutil.which("clang")
    if cc is None:
        print("verify skipped: no C compiler on PATH (requires cc, gcc or clang)",
              file=sys.stderr)
        return EXIT_ENV_SKIP
    binary = emit_dir / "replay"
    build = subprocess.run(
        ["sh", str(shim_dir / "build.sh"), str(emit_dir), str(binary)],
        capture_output=True, text=True,
    )
    if build.returncode != 0:
        print(f"shim build failed:\n{build.stderr}", file=sys.stderr)
        return EXIT_DOMAIN
    replay = subprocess.run(
        [str(binary), str(emit_dir / "golden.bin")], capture_output=True, text=True,
    )
    sys.stdout.write(replay.stdout)
    sys.stderr.write(replay.stderr)
    if replay.returncode == 0:
        return EXIT_OK
    return EXIT_DOMAIN


# ---------------------------------------------------------------- parser


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps subparser defaults from clobbering values given before
    # the subcommand; flags therefore work in either position
    parser.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON config file mirroring PipelineConfig")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every stochastic step (default 1)")
    parser.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable stdout")
    parser.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print the fully resolved configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinybat",
        description="Compile small CNNs to quantized integer models for MCUs.",
    )
    _add_common_flags(parser)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="decode PPMs into 32x32x1 tensors")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--channel", choices=("luma", "green"), dest="channel_mode",
                   help="single-channel reduction (default luma)")
    p.add_argument("--dump", action="store_true", help="also write raw 8-bit planes")

    p = sub.add_parser("calibrate", help="record activation ranges over a tensor set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="directory of .f32 tensors")
    p.add_argument("--out", required=True, help="ranges JSON output path")

    p = sub.add_parser("quantize", help="lower a float manifest to int8")
    p.add_argument("--model", required=True)
    p.add_argument("--ranges", help="ranges JSON from `calibrate`")
    p.add_argument("--data", help="calibrate on the fly from .f32 tensors")
    p.add_argument("--out", required=True, help="quantized manifest output path")

    p = sub.add_parser("run", help="single inference on a tensor file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help=".f32 tensor file")

    p = sub.add_parser(
        "evaluate", help="accuracy over seeded re-splits",
        description="Repeated-experiment protocol: each repeat draws a seeded "
                    "stratified split holding out eval_fraction of every class "
                    "and scores it; mean and sample std are over repeats. The "
                    "spread measures resampling noise only (weights are fixed; "
                    "nothing is retrained between repeats).",
    )
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="directory-per-class of .ppm files")
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("report", help="footprints plus reduction percentages")
    p.add_argument("--original", required=True)
    p.add_argument("--optimized", required=True)
    p.add_argument("--override-original", help="JSON object of metric overrides")
    p.add_argument("--override-optimized", help="JSON object of metric overrides")
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("search", help="select the best path under budgets")
    p.add_argument("--space", required=True, help="search space JSON")
    p.add_argument("--flash-budget-kb", type=float)
    p.add_argument("--ram-budget-kb", type=float)
    p.add_argument("--out-dir")

    p = sub.add_parser("emit", help="emit model.h / model.c / golden.bin")
    p.add_argument("--model", required=True, help="quantized manifest")
    p.add_argument("--out-dir")
    p.add_argument("--golden-count", type=int, dest="golden_count")

    p = sub.add_parser("verify", help="replay golden vectors through compiled C")
    p.add_argument("--dir", required=True, help="emitted bundle directory")
    p.add_argument("--shim-dir", help="override the replay shim location")

    for sp in sub.choices.values():
        _add_common_flags(sp)
    return parser


_DISPATCH = {
    "preprocess": cmd_preprocess,
    "calibrate": cmd_calibrate,
    "quantize": cmd_quantize,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "search": cmd_search,
    "emit": cmd_emit,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if getattr(args, "print_config", False):
            print(json.dumps(cfg.resolved(), indent=1, sort_keys=True))
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        return _DISPATCH[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToolchainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
