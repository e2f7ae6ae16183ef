"""Command-line front end.

Commands: gen-scene, labels, pci-stats, heatmap, pipeline, sweep, selfcheck.
Exit codes: 0 success, 1 validation error (bad flags, malformed config,
missing file), 2 internal failure (including failed selfcheck suites).

Config precedence everywhere: command-line flag > config-file value >
built-in default. Relative --config/--scene paths are also looked up under
$FGBEV_CONFIG_DIR when they do not resolve from the working directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .arrayio import (
    depth_to_u16,
    occupancy_to_u16,
    pci_report_csv,
    prob_to_u16,
    save_array,
    write_pgm16,
)
from .labels import DepthBinConfig, generate_hard_labels
from .msfe import elliptical_gaussian_heatmap, threshold_filter
from .pci import pci_statistics
from .pipeline import (
    PipelineConfig,
    PipelineStageError,
    ablation_sweep,
    apply_overrides,
    config_from_dict,
    result_summary_csv,
    run_pipeline,
    section_from_dict,
    sweep_table,
)
from .scene import SceneConfig, generate_scene, load_scene, save_scene
from .selfcheck import run_selfcheck

CONFIG_DIR_ENV = "FGBEV_CONFIG_DIR"

SWEEP_TOGGLES = {
    "fc": ("fc_enabled", True),
    "ppa": ("ppa_enabled", True),
}


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to the validation exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _resolve_input(path_str: str) -> Path:
    path = Path(path_str)
    if path.exists():
        return path
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if not path.is_absolute() and env_dir:
        candidate = Path(env_dir) / path
        if candidate.exists():
            return candidate
    raise ValueError(f"config file not found: {path_str}")


def _load_json(path_str: str) -> dict:
    path = _resolve_input(path_str)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ValueError(f"{path} must contain a JSON object")
    return data


def _scene_config_from_file(path_str: str | None) -> tuple[SceneConfig, int | None]:
    """(config, seed-from-file) for gen-scene; everything defaults when no file."""
    if path_str is None:
        return SceneConfig(), None
    data = _load_json(path_str)
    seed = data.pop("seed", None)
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ValueError(f"field 'seed' in scene config must be an integer, got {seed!r}")
    return section_from_dict(SceneConfig, data, "scene"), seed


def _bin_cfg_from_args(args) -> DepthBinConfig:
    return DepthBinConfig(d_min=args.d_min, d_max=args.d_max, bin_size=args.bin_size)


def _cmd_gen_scene(args) -> int:
    cfg, file_seed = _scene_config_from_file(args.config)
    seed = args.seed if args.seed is not None else (file_seed if file_seed is not None else 0)
    scene = generate_scene(cfg, int(seed))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "scene.json"
    save_scene(scene, path)
    n_pts = sum(len(f.lidar) for f in scene.frames)
    print(
        _dump(
            {
                "scene": str(path),
                "frames": len(scene.frames),
                "boxes": len(scene.current.boxes),
                "lidar_points": n_pts,
                "seed": seed,
            }
        )
    )
    return 0


def _cmd_labels(args) -> int:
    scene = load_scene(_resolve_input(args.scene))
    frame = scene.current
    if not 0 <= args.cam < len(frame.cameras):
        raise ValueError(f"camera index {args.cam} out of range (scene has {len(frame.cameras)})")
    cam = frame.cameras[args.cam]
    bin_cfg = _bin_cfg_from_args(args)
    hard = generate_hard_labels(frame.lidar, frame.boxes, cam, bin_cfg, args.stride)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm16(out_dir / "depth.pgm", depth_to_u16(hard.depth_meters()))
    write_pgm16(out_dir / "seg.pgm", prob_to_u16(hard.seg.values))
    write_pgm16(out_dir / "valid.pgm", prob_to_u16(hard.valid_mask.astype(np.float64)))
    if args.bin:
        save_array(out_dir / "depth", hard.depth.values)
        save_array(out_dir / "seg", hard.seg.values)
    print(
        _dump(
            {
                "out": str(out_dir),
                "grid": list(hard.shape),
                "valid_cells": int(hard.valid_mask.sum()),
                "foreground_cells": int((hard.seg.values == 1.0).sum()),
            }
        )
    )
    return 0


def _cmd_pci_stats(args) -> int:
    scene = load_scene(_resolve_input(args.scene))
    frame = scene.current
    if not 0 <= args.cam < len(frame.cameras):
        raise ValueError(f"camera index {args.cam} out of range (scene has {len(frame.cameras)})")
    report = pci_statistics(
        scene, frame.cameras[args.cam], (args.d_min, args.d_max)
    )
    if args.format == "csv":
        print(pci_report_csv(report), end="")
    else:
        print(_dump(dataclasses.asdict(report)))
    return 0


def _cmd_heatmap(args) -> int:
    from .geometry import project_box3d_to_box2d

    scene = load_scene(_resolve_input(args.scene))
    frame = scene.current
    if not 0 <= args.cam < len(frame.cameras):
        raise ValueError(f"camera index {args.cam} out of range (scene has {len(frame.cameras)})")
    cam = frame.cameras[args.cam]
    if not 0.0 <= args.beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {args.beta}")
    rects = [project_box3d_to_box2d(cam, b) for b in frame.boxes]
    rects = [r for r in rects if r is not None]
    hm = elliptical_gaussian_heatmap(
        rects, cam.image_height // 4, cam.image_width // 4, 4
    )
    filtered = threshold_filter(hm, args.beta)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm16(out_dir / "s4.pgm", prob_to_u16(hm.values))
    write_pgm16(out_dir / "s4_filtered.pgm", prob_to_u16(filtered.values))
    print(
        _dump(
            {
                "out": str(out_dir),
                "boxes_drawn": len(rects),
                "beta": args.beta,
                "cells_kept": int((filtered.values > 0).sum()),
            }
        )
    )
    return 0


def _pipeline_config(args) -> PipelineConfig:
    cfg = config_from_dict(_load_json(args.config)) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.encoder_kind is not None:
        overrides["encoder_kind"] = args.encoder_kind
    if args.seg_threshold is not None:
        overrides["seg_threshold"] = args.seg_threshold
    if args.beta is not None:
        overrides["beta"] = args.beta
    return apply_overrides(cfg, overrides)


def _cmd_pipeline(args) -> int:
    result = run_pipeline(_pipeline_config(args))
    # Timings go to stderr so stdout stays byte-identical across runs.
    for name, seconds in result.timing.items():
        print(f"[timing] {name}: {seconds * 1000:.2f} ms", file=sys.stderr)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, occ in (
            ("occupancy_student", result.bev_occupancy_student),
            ("occupancy_teacher", result.bev_occupancy_teacher),
        ):
            write_pgm16(out_dir / f"{name}.pgm", occupancy_to_u16(occ))
            save_array(out_dir / name, occ)
    if args.format == "csv":
        print(result_summary_csv(result), end="")
    else:
        print(_dump(result.to_dict(include_timing=args.timing)))
    return 0


def _cmd_sweep(args) -> int:
    base = _pipeline_config(args)
    toggles = []
    for name in [t.strip() for t in args.toggles.split(",") if t.strip()]:
        if name not in SWEEP_TOGGLES:
            raise ValueError(
                f"unknown toggle {name!r}; available: {sorted(SWEEP_TOGGLES)}"
            )
        field_name, on_value = SWEEP_TOGGLES[name]
        base = apply_overrides(base, {field_name: not on_value})
        toggles.append((name, {field_name: on_value}))
    rows = ablation_sweep(base, toggles)
    if args.format == "csv":
        print(sweep_table(rows), end="")
    else:
        print(_dump(rows))
    return 0


def _cmd_selfcheck(args) -> int:
    results = run_selfcheck(seed=args.seed, quick=args.quick)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
        all_ok &= r.passed
    print(f"{'all' if all_ok else 'NOT all'} {len(results)} oracle suites passed")
    return 0 if all_ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgbev", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-scene", help="generate a synthetic scene and write it as JSON"
    )
    p.add_argument("--config", help="scene config JSON (SceneConfig fields plus optional seed)")
    p.add_argument("--out", required=True, help="output directory for scene.json")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("labels", help="rasterize hard labels from a scene's current frame")
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--cam", type=int, default=0, help="camera index (default 0)")
    p.add_argument("--out", required=True, help="output directory for PGM rasters")
    p.add_argument("--stride", type=int, default=16, help="feature stride (default 16)")
    p.add_argument("--d-min", type=float, default=1.0, help="minimum binned depth")
    p.add_argument("--d-max", type=float, default=60.0, help="maximum binned depth")
    p.add_argument("--bin-size", type=float, default=0.5, help="depth bin width")
    p.add_argument(
        "--bin", action="store_true", help="also write depth/seg as flat binary + JSON header"
    )
    p.set_defaults(func=_cmd_labels)

    p = sub.add_parser("pci-stats", help="report densification coverage statistics")
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--cam", type=int, default=0, help="camera index (default 0)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--d-min", type=float, default=1.0, help="perception range near limit")
    p.add_argument("--d-max", type=float, default=60.0, help="perception range far limit")
    p.set_defaults(func=_cmd_pci_stats)

    p = sub.add_parser("heatmap", help="render stride-4 foreground heatmaps for a scene")
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--cam", type=int, default=0, help="camera index (default 0)")
    p.add_argument("--beta", type=float, default=0.1, help="foreground threshold (default 0.1)")
    p.add_argument("--out", required=True, help="output directory for PGM rasters")
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("pipeline", help="run one frame end to end and print the result")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override the pipeline seed")
    p.add_argument("--encoder-kind", choices=("identity", "box_blur"))
    p.add_argument("--seg-threshold", type=float, help="override the pooling gate")
    p.add_argument("--beta", type=float, help="override the heatmap threshold")
    p.add_argument(
        "--timing", action="store_true", help="include stage timings in the JSON output"
    )
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument(
        "--out", help="directory for BEV occupancy rasters (PGM + flat binary)"
    )
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("sweep", help="run every on/off combination of the named toggles")
    p.add_argument("--config", help="pipeline config JSON for the base row")
    p.add_argument(
        "--toggles",
        required=True,
        help=f"comma-separated toggle names from {sorted(SWEEP_TOGGLES)}",
    )
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--seed", type=int, help="override the pipeline seed")
    p.add_argument("--encoder-kind", choices=("identity", "box_blur"))
    p.add_argument("--seg-threshold", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("selfcheck", help="run the oracle comparison suites")
    p.add_argument("--seed", type=int, default=20240)
    p.add_argument("--quick", action="store_true", help="smaller case counts")
    p.set_defaults(func=_cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"fgbev: error: {exc}", file=sys.stderr)
        return 1
    except PipelineStageError as exc:
        print(f"fgbev: pipeline failure: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
