#!/usr/bin/env python3
"""
S3 Toolbox - command-line driver for sparse signal expansion and depth guidance.

Subcommands:
    synth          generate a synthetic scene directory
    expand         expand a scene's sparse map into (G_exp, C)
    guide          run one guidance stage (output | costvolume | gdc | norm) and evaluate
    train          fit kernel parameters on scene directories
    sweep-density  guided vs unguided error across sampling densities

Exit codes: 0 success, 2 config / usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn

from s3_core import (
    CameraIntrinsics, ConfigError, DenseField, IntensityImage, NumericalError, RasterFormat,
    Representation, S3Exception, SparseSignalMap, depth_to_disparity, dump_config, load_config,
    read_intrinsics, read_key_value, read_points, read_raster, write_intrinsics, write_key_value,
    write_points, write_raster,
)
from s3_expansion import (
    DEFAULT_HALF_SIZE, AdhocConfig, KernelParams, TrainingConfig, TrainingSample, expand, read_params,
    train_kernel, write_params,
)
from s3_gdc import build_graph, build_problem, correct_hints_only, correct_with_confidence, scatter_solution
from s3_guidance import (
    GaussianGuideConfig, NormParams, apply_norm_params, fuse_output, gsm_modulate,
    naive_output_guidance, norm_modulate_volume, regress_disparity, s3_modulate,
)
from s3_metrics import evaluate, improvement, render_table, write_reports
from s3_synth import (
    CorruptionSpec, SceneSpec, build_cost_volume, corrupt, generate_scene, planes_for, sample_beams,
    sample_radar, sample_uniform,
)

logger = logging.getLogger("s3_toolbox")
console = Console()
err_console = Console(stderr=True)

LOG_FILE_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
RESOLVED_CONFIG = "resolved_config.txt"
SCENE_FILES = ("image.pfm", "gt_depth.pfm", "pred_depth.pfm", "sparse.txt", "intrinsics.txt")
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
# floor for corrected depth, matching the corruption clamp
MIN_DEPTH = 1e-3


# ========================================
# 1. Run configuration
# ========================================

def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)


class SamplingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Literal["uniform", "beams", "radar"] = "uniform"
    rate: float = Field(default=0.15, gt=0.0, le=1.0)
    beams: int = Field(default=4, ge=1)
    step: float = Field(default=0.4, gt=0.0)
    band: Tuple[int, int] = (22, 26)
    count: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("band", mode="before")
    @classmethod
    def _band_from_text(cls, value):
        return _split_list(value)


class ExpandConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: Literal["adhoc", "kernel"] = "kernel"
    half_size: int = Field(default=DEFAULT_HALF_SIZE, ge=0)
    sample_rate: float = Field(default=1.0, gt=0.0, le=1.0)
    params: str = ""
    seed: int = Field(default=0, ge=0)


class GuideConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["output", "costvolume", "gdc", "norm"] = "output"
    kappa: float = Field(default=1.0, gt=0.0)


class CostVolumeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_disparity: int = Field(default=0, ge=0)
    features: int = Field(default=1, ge=1)
    sharpness: float = Field(default=2.0, gt=0.0)
    noise: float = Field(default=0.1, ge=0.0)
    seed: int = Field(default=0, ge=0)


class GdcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k: int = Field(default=10, ge=1)
    reg: float = Field(default=1e-3, ge=0.0)
    prior_weight: float = Field(default=0.0, ge=0.0)
    method: Literal["auto", "cg", "dense"] = "auto"


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    densities: Tuple[float, ...] = (0.15, 0.05, 0.01, 0.0025)
    seeds: int = Field(default=5, ge=1)

    @field_validator("densities", mode="before")
    @classmethod
    def _densities_from_text(cls, value):
        return _split_list(value)

    @field_validator("densities")
    @classmethod
    def _in_unit_interval(cls, value):
        if not value or any(not (0.0 < d <= 1.0) for d in value):
            raise ValueError("densities must be a non-empty list within (0, 1]")
        return value


class RunConfig(BaseModel):
    """Every tunable of a run, grouped by section; keys are ``section.field``."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    run: RunSection = RunSection()
    scene: SceneSpec = SceneSpec()
    corruption: CorruptionSpec = CorruptionSpec(bias=2.0, edge_radius=1, noise_sigma=0.2)
    sampling: SamplingConfig = SamplingConfig()
    adhoc: AdhocConfig = AdhocConfig()
    kernel: KernelParams = KernelParams()
    expand: ExpandConfig = ExpandConfig()
    guide: GuideConfig = GuideConfig()
    gaussian: GaussianGuideConfig = GaussianGuideConfig()
    costvolume: CostVolumeConfig = CostVolumeConfig()
    gdc: GdcConfig = GdcConfig()
    training: TrainingConfig = TrainingConfig()
    sweep: SweepConfig = SweepConfig()


SEEDED_SECTIONS = ("scene", "corruption", "sampling", "expand", "costvolume", "training")


def _nest(flat: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        section, dot, name = key.partition(".")
        if not dot or not name:
            raise ConfigError(f"config key {key!r} must look like section.field")
        nested.setdefault(section, {})[name] = value
    return nested


def flatten_config(cfg: RunConfig) -> Dict[str, Any]:
    flat = {}
    for section, values in dump_config(cfg).items():
        for name, value in values.items():
            flat[f"{section}.{name}"] = value
    return flat


def resolve_config(path: Optional[Path], overrides: Mapping[str, Any]) -> RunConfig:
    """File values, then overrides; section seeds not set explicitly derive from run.seed."""
    flat: Dict[str, Any] = dict(read_key_value(path)) if path is not None else {}
    flat.pop("command", None)
    flat.update({k: v for k, v in overrides.items() if v is not None})
    cfg = load_config(RunConfig, overrides=_nest(flat))
    children = np.random.SeedSequence(cfg.run.seed).spawn(len(SEEDED_SECTIONS))
    updates = {}
    for section, child in zip(SEEDED_SECTIONS, children):
        if f"{section}.seed" not in flat:
            derived = int(child.generate_state(1)[0])
            updates[section] = getattr(cfg, section).model_copy(update={"seed": derived})
    return cfg.model_copy(update=updates)


def write_resolved(cfg: RunConfig, out: Path, command: str) -> None:
    write_key_value(out / RESOLVED_CONFIG, {"command": command, **flatten_config(cfg)})


# ========================================
# 2. Scene directories
# ========================================

@dataclass(frozen=True)
class SceneFiles:
    image: IntensityImage
    gt: DenseField
    prediction: DenseField
    sparse: SparseSignalMap
    intrinsics: CameraIntrinsics


def read_scene(directory: Path) -> SceneFiles:
    missing = [name for name in SCENE_FILES if not (directory / name).is_file()]
    if missing:
        raise ConfigError(f"scene directory {directory} lacks {', '.join(missing)}")
    return SceneFiles(
        image=read_raster(directory / "image.pfm", RasterFormat.PFM, None),
        gt=read_raster(directory / "gt_depth.pfm", RasterFormat.PFM, Representation.DEPTH),
        prediction=read_raster(directory / "pred_depth.pfm", RasterFormat.PFM, Representation.DEPTH),
        sparse=read_points(directory / "sparse.txt"),
        intrinsics=read_intrinsics(directory / "intrinsics.txt"),
    )


def write_scene(scene: SceneFiles, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_raster(scene.image, directory / "image.pfm")
    write_raster(scene.gt, directory / "gt_depth.pfm")
    write_raster(scene.prediction, directory / "pred_depth.pfm")
    write_points(scene.sparse, directory / "sparse.txt")
    write_intrinsics(scene.intrinsics, directory / "intrinsics.txt")


def draw_sparse(cfg: SamplingConfig, gt: DenseField, intrinsics: CameraIntrinsics) -> SparseSignalMap:
    if cfg.method == "uniform":
        return sample_uniform(gt, cfg.rate, cfg.seed)
    if cfg.method == "beams":
        return sample_beams(gt, intrinsics, cfg.beams, cfg.step, cfg.seed)
    return sample_radar(gt, cfg.band, cfg.count, cfg.seed)


def make_scene(cfg: RunConfig) -> SceneFiles:
    scene = generate_scene(cfg.scene)
    prediction = corrupt(scene.depth, cfg.corruption)
    sparse = draw_sparse(cfg.sampling, scene.depth, scene.intrinsics)
    return SceneFiles(scene.image, scene.depth, prediction, sparse, scene.intrinsics)


def expansion_model(cfg: RunConfig):
    if cfg.expand.model == "adhoc":
        return cfg.adhoc
    if cfg.expand.params:
        return read_params(cfg.expand.params)
    return cfg.kernel


def run_expansion(cfg: RunConfig, scene: SceneFiles) -> Tuple[DenseField, DenseField]:
    return expand(scene.image, scene.sparse, expansion_model(cfg), half_size=cfg.expand.half_size,
                  sample_rate=cfg.expand.sample_rate, seed=cfg.expand.seed, workers=cfg.run.workers)


# ========================================
# 3. Subcommands
# ========================================

def cmd_synth(cfg: RunConfig, out: Path) -> int:
    scene = make_scene(cfg)
    write_scene(scene, out)
    write_resolved(cfg, out, "synth")
    console.print(Panel.fit(
        f"[bold cyan]scene[/bold cyan] {cfg.scene.height}x{cfg.scene.width}, "
        f"{len(scene.sparse)} sparse points ({cfg.sampling.method})\n"
        f"[bold cyan]output[/bold cyan] {out}",
        title="synth"))
    return EXIT_OK


def cmd_expand(cfg: RunConfig, data: Path, out: Path) -> int:
    scene = read_scene(data)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    expanded, confidence = run_expansion(cfg, scene)
    logger.info("expansion took %.3f s", time.perf_counter() - started)
    write_raster(expanded, out / "expanded.pfm")
    write_raster(confidence, out / "confidence.pfm")
    write_resolved(cfg, out, "expand")
    console.print(f"[green]expanded {len(scene.sparse)} sources, "
                  f"{100.0 * expanded.valid.mean():.1f}% pixels valid[/green]")
    return EXIT_OK


def _positive(field: DenseField) -> DenseField:
    return field.with_values(np.maximum(field.values, MIN_DEPTH))


def _cost_volume(cfg: RunConfig, prediction: DenseField, planes: int):
    clipped = prediction.with_values(np.clip(prediction.values, 0.0, planes - 1.0))
    return build_cost_volume(clipped, planes, cfg.costvolume.features, cfg.costvolume.sharpness,
                             cfg.costvolume.noise, cfg.costvolume.seed)


def guide_stage(cfg: RunConfig, scene: SceneFiles) -> Tuple[Dict[str, DenseField], DenseField]:
    """Run the configured stage; returns named estimates (first is the baseline) and the ground truth."""
    expanded, confidence = run_expansion(cfg, scene)
    stage = cfg.guide.stage
    if stage == "output":
        return {
            "raw": scene.prediction,
            "naive": naive_output_guidance(scene.sparse, scene.prediction),
            "s3": fuse_output(expanded, confidence, scene.prediction),
        }, scene.gt

    if stage == "gdc":
        # one graph over every node serves both corrections
        problem, cloud = build_problem(scene.prediction, scene.intrinsics, scene.sparse, expanded, confidence)
        graph = build_graph(cloud, cfg.gdc.k, cfg.gdc.reg)
        baseline = correct_hints_only(problem, graph, unanchored="keep", method=cfg.gdc.method)
        guided = correct_with_confidence(problem, graph, prior_weight=cfg.gdc.prior_weight, unanchored="keep",
                                         method=cfg.gdc.method)
        return {
            "raw": scene.prediction,
            "gdc": _positive(scatter_solution(cloud, baseline, scene.prediction)),
            "gdc+s3": _positive(scatter_solution(cloud, guided, scene.prediction)),
        }, scene.gt

    gt = depth_to_disparity(scene.gt, scene.intrinsics)
    prediction = depth_to_disparity(scene.prediction, scene.intrinsics)
    sparse = depth_to_disparity(scene.sparse, scene.intrinsics)
    expanded = depth_to_disparity(expanded, scene.intrinsics)
    planes = cfg.costvolume.max_disparity or planes_for(scene.intrinsics, scene.gt)
    cv = _cost_volume(cfg, prediction, planes)
    if stage == "costvolume":
        return {
            "raw": regress_disparity(cv),
            "gsm": regress_disparity(gsm_modulate(cv, sparse, cfg.gaussian)),
            "s3": regress_disparity(s3_modulate(cv, expanded, confidence, cfg.gaussian)),
        }, gt

    params = NormParams.quadratic_peak(cv.features, cv.max_disparity, cfg.guide.kappa)
    hint_conf = DenseField(np.ones(gt.dims), np.ones(gt.dims, bool), Representation.UNITLESS)
    return {
        "raw": regress_disparity(cv),
        "sparse-norm": regress_disparity(apply_norm_params(
            cv, *norm_modulate_volume(params, sparse.to_dense(), hint_conf))),
        "s3-norm": regress_disparity(apply_norm_params(
            cv, *norm_modulate_volume(params, expanded, confidence))),
    }, gt


def cmd_guide(cfg: RunConfig, data: Path, out: Path) -> int:
    scene = read_scene(data)
    out.mkdir(parents=True, exist_ok=True)
    estimates, gt = guide_stage(cfg, scene)
    reports = {name: evaluate(est, gt) for name, est in estimates.items()}
    frame = write_reports(reports, out / "report.csv")
    names = list(estimates)
    gains = {name: improvement(estimates[names[0]], estimates[name], gt).as_row() for name in names[1:]}
    pd.DataFrame([{"name": n, **row} for n, row in gains.items()]).to_csv(
        out / "improvement.csv", index=False, float_format="%.6f")
    write_raster(estimates[names[-1]], out / "guided.pfm")
    write_resolved(cfg, out, "guide")
    console.print(render_table(frame, title=f"guidance stage: {cfg.guide.stage}"))
    return EXIT_OK


def find_scene_dirs(root: Path) -> List[Path]:
    if (root / "sparse.txt").is_file():
        return [root]
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "sparse.txt").is_file())


def cmd_train(cfg: RunConfig, data: Path, out: Path) -> int:
    dirs = find_scene_dirs(data)
    if not dirs:
        raise ConfigError(f"no training scenes found under {data}")
    samples = []
    for directory in dirs:
        scene = read_scene(directory)
        samples.append(TrainingSample(scene.image, scene.sparse, scene.gt, scene.prediction))
    logger.info("training on %d scenes", len(samples))
    result = train_kernel(samples, cfg.training)
    out.mkdir(parents=True, exist_ok=True)
    write_params(result.params, out / "params.txt")
    result.curve_frame().to_csv(out / "loss.csv", index=False, float_format="%.10g")
    write_resolved(cfg, out, "train")
    console.print(Panel.fit(
        f"loss {result.initial_loss:.6f} -> {result.final_loss:.6f}\n"
        f"alpha={result.params.alpha:.4f} beta={result.params.beta:.4f} bias={result.params.bias:.4f}",
        title="train"))
    return EXIT_OK


def sweep_density(cfg: RunConfig) -> pd.DataFrame:
    """Median errors over seeds, one row per density (descending)."""
    densities = sorted(cfg.sweep.densities, reverse=True)
    rows = []
    seeds = np.random.SeedSequence(cfg.run.seed).spawn(cfg.sweep.seeds)
    progress = Progress(SpinnerColumn(), TextColumn("[cyan]{task.description}"), BarColumn(),
                        console=err_console, transient=True)
    with progress:
        task = progress.add_task("density sweep", total=len(densities) * len(seeds))
        for density in densities:
            per_seed = []
            for child in seeds:
                s = [int(v) for v in child.generate_state(3)]
                run = cfg.model_copy(update={
                    "scene": cfg.scene.model_copy(update={"seed": s[0]}),
                    "corruption": cfg.corruption.model_copy(update={"seed": s[1]}),
                    "sampling": cfg.sampling.model_copy(update={"method": "uniform", "rate": density,
                                                                "seed": s[2]}),
                })
                scene = make_scene(run)
                if len(scene.sparse) == 0:
                    raise ConfigError(f"density {density} yields no sparse points")
                expanded, confidence = run_expansion(run, scene)
                unguided = evaluate(scene.prediction, scene.gt)
                naive = evaluate(naive_output_guidance(scene.sparse, scene.prediction), scene.gt)
                guided = evaluate(fuse_output(expanded, confidence, scene.prediction), scene.gt)
                per_seed.append((guided.avg, guided.gt2, unguided.avg, unguided.gt2, naive.avg))
                progress.advance(task)
            med = np.median(np.array(per_seed), axis=0)
            rows.append({"density": density, "avg": med[0], "gt2": med[1], "avg_unguided": med[2],
                         "gt2_unguided": med[3], "avg_naive": med[4], "seeds": len(seeds)})
    return pd.DataFrame(rows)


def cmd_sweep_density(cfg: RunConfig, out: Path) -> int:
    frame = sweep_density(cfg)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "sweep.csv", index=False, float_format="%.6f")
    write_resolved(cfg, out, "sweep-density")
    console.print(render_table(frame, title="density sweep"))
    return EXIT_OK


# ========================================
# 4. Argument parsing and entry point
# ========================================

class ToolboxArgumentParser(argparse.ArgumentParser):
    """Usage errors print one ``error:`` line and exit 2."""

    def error(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(parser: argparse.ArgumentParser, *, needs_data: bool) -> None:
    parser.add_argument("--config", "--spec", dest="config", type=Path, help="key=value config file")
    parser.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="override any section.field (repeatable)")
    parser.add_argument("--seed", type=int, help="run seed; section seeds derive from it")
    parser.add_argument("--workers", type=int, help="threads for per-patch work")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    if needs_data:
        parser.add_argument("--data", type=Path, required=True, help="scene directory")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--log-file", type=Path, help="also log to this file")


def _expansion_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", help="adhoc | kernel")
    parser.add_argument("--L", dest="half_size", type=int, help="patch half size")
    parser.add_argument("--tau", type=float, help="ad-hoc intensity threshold")
    parser.add_argument("--params", help="kernel parameter file")
    parser.add_argument("--sample-rate", type=float, help="fraction of sources expanded")


def build_parser() -> argparse.ArgumentParser:
    parser = ToolboxArgumentParser(prog="s3_toolbox", description="S3 sparse signal superdensity toolbox")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ToolboxArgumentParser)

    synth = sub.add_parser("synth", help="generate a synthetic scene")
    _common(synth, needs_data=False)
    synth.add_argument("--sample", help="uniform | beams | radar")
    synth.add_argument("--rate", type=float, help="uniform sampling rate")
    synth.add_argument("--beams", type=int, help="beam count")
    synth.add_argument("--step", type=float, help="elevation step in degrees")
    synth.add_argument("--count", type=int, help="radar point count")

    expand_p = sub.add_parser("expand", help="expand sparse points into (G_exp, C)")
    _common(expand_p, needs_data=True)
    _expansion_flags(expand_p)

    guide = sub.add_parser("guide", help="run one guidance stage and evaluate")
    _common(guide, needs_data=True)
    _expansion_flags(guide)
    guide.add_argument("--stage", help="output | costvolume | gdc | norm")
    guide.add_argument("--k", type=int, help="neighbours per node for gdc")

    train = sub.add_parser("train", help="fit kernel parameters")
    _common(train, needs_data=True)
    train.add_argument("--iterations", type=int)
    train.add_argument("--learning-rate", type=float)

    sweep = sub.add_parser("sweep-density", help="error versus sampling density")
    _common(sweep, needs_data=False)
    _expansion_flags(sweep)
    sweep.add_argument("--densities", help="comma-separated fractions")
    sweep.add_argument("--seeds", type=int, help="scenes per density")
    return parser


FLAG_KEYS = {
    "seed": "run.seed",
    "workers": "run.workers",
    "sample": "sampling.method",
    "rate": "sampling.rate",
    "beams": "sampling.beams",
    "step": "sampling.step",
    "count": "sampling.count",
    "model": "expand.model",
    "tau": "adhoc.tau",
    "params": "expand.params",
    "sample_rate": "expand.sample_rate",
    "stage": "guide.stage",
    "k": "gdc.k",
    "iterations": "training.iterations",
    "learning_rate": "training.learning_rate",
    "densities": "sweep.densities",
    "seeds": "sweep.seeds",
}


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in args.assignments:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    half = getattr(args, "half_size", None)
    if half is not None:
        overrides["expand.half_size"] = half
        overrides["adhoc.half_size"] = half
    return overrides


def setup_logging(verbose: bool = False, log_file: Optional[Path] = None) -> None:
    handlers: List[logging.Handler] = [RichHandler(console=err_console, show_path=False)]
    if log_file is not None:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FILE_FORMAT))
        handlers.append(file_handler)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s",
                        datefmt="[%X]", handlers=handlers, force=True)


def dispatch(args: argparse.Namespace) -> int:
    if args.config is not None and not args.config.is_file():
        raise ConfigError(f"config file not found: {args.config}")
    cfg = resolve_config(args.config, collect_overrides(args))
    logger.info("command %s, seed %d", args.command, cfg.run.seed)
    if args.command == "synth":
        return cmd_synth(cfg, args.out)
    if args.command == "expand":
        return cmd_expand(cfg, args.data, args.out)
    if args.command == "guide":
        return cmd_guide(cfg, args.data, args.out)
    if args.command == "train":
        return cmd_train(cfg, args.data, args.out)
    return cmd_sweep_density(cfg, args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.log_file)
    try:
        return dispatch(args)
    except NumericalError as e:
        logger.debug("numerical failure", exc_info=True)
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except S3Exception as e:
        logger.debug("run failed", exc_info=True)
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_USAGE


def _one_line(e: Exception) -> str:
    return " ".join(str(e).split())


if __name__ == "__main__":
    sys.exit(main())
