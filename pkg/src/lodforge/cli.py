"""Command-line pipeline: staged commands with JSON checkpoints, a
one-shot pipeline command, and synthetic scene generation.

Exit codes: 0 ok, 1 runtime failure, 2 usage error (bad flags, missing
checkpoint or input).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .detection import DetectParams, NoPrimitives, detect_planes
from .ioview import NoInterior
from .lodtree import EmptyModel, LodTree, export_candidates, traverse
from .meshio import MissingNormals, ParseError, load_input
from .metrics import (
    UndefinedForPointCloud, bidirectional_rmse, metrics_csv,
    simplification_rate,
)
from .pipeline import AnalysisResult, analyze, build_tree, run_pipeline

CHECKPOINT_VERSION = 1

UP_AXES = {"x": np.array([1.0, 0, 0]), "y": np.array([0.0, 1, 0]),
           "z": np.array([0.0, 0, 1])}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=0.15,
                   help="plane distance tolerance, meters")
    p.add_argument("--theta", type=float, default=40.0,
                   help="normal deviation tolerance, degrees")
    p.add_argument("--sigma", type=int, default=15,
                   help="minimum samples per primitive")
    p.add_argument("--alpha", type=float, default=7.0,
                   help="footprint alpha radius, meters")
    p.add_argument("--merge-k", type=int, default=10, dest="merge_k",
                   help="merge clusters with fewer planes per structure")
    p.add_argument("--interp-pct", type=float, default=0.8, dest="interp_pct",
                   help="interpolation extraction threshold")
    p.add_argument("--merge-metric", choices=["per-structure", "per-cluster"],
                   default="per-structure", dest="merge_metric")
    p.add_argument("--up-axis", choices=["x", "y", "z"], default="z",
                   dest="up_axis")
    p.add_argument("--rays", type=int, default=100,
                   help="labeling rays per cell")
    p.add_argument("--bw-area", type=float, default=2.0, dest="bw_area",
                   help="stage-1 mean shift bandwidth, m^2")
    p.add_argument("--bw-volume", type=float, default=4.0, dest="bw_volume",
                   help="stage-2 mean shift bandwidth, m^3")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for RMSE sampling and synthetic noise")
    p.add_argument("--rmse-samples", type=int, default=100_000,
                   dest="rmse_samples")


def _params(args) -> DetectParams:
    try:
        return DetectParams(args.epsilon, args.theta, args.sigma, args.alpha)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load(path: str, fmt=None):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input file not found: {p}")
    return load_input(p, fmt)


def _need_checkpoint(path: Path, producer: str) -> dict:
    if not path.exists():
        raise UsageError(f"missing checkpoint {path} (run `{producer}` first)")
    return json.loads(path.read_text())


def _manifest_params(args) -> dict:
    return {"epsilon": args.epsilon, "theta": args.theta, "sigma": args.sigma,
            "alpha": args.alpha, "K": args.merge_k, "pct": args.interp_pct}


def _write_summary(out: Path, name: str, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.summary.json").write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Commands

def cmd_detect(args) -> int:
    model = _load(args.input, args.format)
    params = _params(args)
    t0 = time.perf_counter()
    prims, points, _ = detect_planes(model, params)
    dt = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ck = {"version": CHECKPOINT_VERSION, "input": str(args.input),
          "format": args.format, "params": params.to_json(),
          "sample_count": len(points),
          "primitives": [p.to_json() for p in prims]}
    (out / "detect.json").write_text(json.dumps(ck) + "\n")
    _write_summary(out, "detect", {"primitives": len(prims),
                                   "samples": len(points), "seconds": dt})
    print(f"detect: {len(prims)} primitives from {len(points)} samples "
          f"({dt:.2f}s) -> {out / 'detect.json'}")
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out)
    ck = _need_checkpoint(out / "detect.json", "detect")
    from .detection import PlanarPrimitive, sample_surface

    model = _load(ck["input"], ck.get("format"))
    points, _ = sample_surface(model)
    prims = [PlanarPrimitive.from_json(p) for p in ck["primitives"]]
    params = DetectParams.from_json(ck["params"])
    t0 = time.perf_counter()
    analysis = analyze(model, prims, points, params, args.bw_area,
                       args.bw_volume, args.rays, UP_AXES[args.up_axis])
    t1 = time.perf_counter() - t0
    (out / "analyze.json").write_text(json.dumps(analysis.to_json()) + "\n")
    _write_summary(out, "analyze", {
        "T1": t1, "principal": len(analysis.structs.principal_ids),
        "addons": len(analysis.structs.addons),
        "cutouts": len(analysis.structs.cutouts),
        "clusters": len(analysis.clusters), "levels": analysis.level_count,
        "retained": len(analysis.order.sequence()),
        "dropped": len(analysis.order.dropped)})
    print(f"analyze: S0={len(analysis.order.s0)} levels={analysis.level_count} "
          f"addons={len(analysis.structs.addons)} "
          f"cutouts={len(analysis.structs.cutouts)} (T1={t1:.2f}s)")
    return 0


def cmd_build(args) -> int:
    out = Path(args.out)
    ck = _need_checkpoint(out / "analyze.json", "analyze")
    analysis = AnalysisResult.from_json(ck)
    t0 = time.perf_counter()
    tree, part = build_tree(analysis, args.merge_k, args.merge_metric,
                            args.rays)
    t2 = time.perf_counter() - t0
    payload = {"version": CHECKPOINT_VERSION, "input": ck.get("input", ""),
               "params": _manifest_params(args), "tree": tree.to_json()}
    (out / "tree.json").write_text(json.dumps(payload) + "\n")
    merged = sum(1 for n in tree.nodes if n.kind == "merged")
    _write_summary(out, "build", {
        "T2": t2, "cells": len(tree.complex.cells), "nodes": len(tree.nodes),
        "merged_nodes": merged, "binary_splits": len(part.trace)})
    print(f"build: {len(tree.nodes)} nodes ({merged} merged), "
          f"{len(tree.complex.cells)} cells (T2={t2:.2f}s)")
    return 0


def cmd_traverse(args) -> int:
    out = Path(args.out)
    ck = _need_checkpoint(out / "tree.json", "build")
    tree = LodTree.from_json(ck["tree"])
    t0 = time.perf_counter()
    models, log = traverse(tree, args.interp_pct)
    t3 = time.perf_counter() - t0
    input_name = args.input or ck.get("input", "")
    manifest = export_candidates(models, out, input_name,
                                 _manifest_params(args), tree.level_count)
    _write_summary(out, "traverse", {
        "T3": t3, "models": len(models),
        "anchors": sum(1 for m in models if m.tag == "anchor"),
        "skipped_empty": log.skipped_empty})
    print(f"traverse: {len(models)} candidate models "
          f"({sum(1 for m in models if m.tag == 'anchor')} anchors, "
          f"T3={t3:.2f}s) -> {out / 'manifest.json'}")
    return 0


def cmd_metrics(args) -> int:
    out = Path(args.out)
    mpath = out / "manifest.json"
    manifest = _need_checkpoint(mpath, "traverse")
    input_path = args.input or manifest.get("input")
    if not input_path:
        raise UsageError("--input required (manifest has no input path)")
    model = _load(input_path, args.format)
    from .meshio import input_bbox

    diag = input_bbox(model, pad=0.0).diagonal
    selection = None
    if args.selection:
        sel_path = Path(args.selection)
        if not sel_path.exists():
            raise UsageError(f"selection file not found: {sel_path}")
        sel = json.loads(sel_path.read_text())
        selection = set(sel["selected"] if isinstance(sel, dict) else sel)
    from .meshio import load_obj

    for entry in manifest["models"]:
        if selection is not None and entry["steps"] not in selection:
            continue
        mesh = load_obj(out / entry["file"])
        polys = [mesh.vertices[t] for t in mesh.triangles]
        try:
            entry["s"] = simplification_rate(polys, model)
        except UndefinedForPointCloud:
            entry["s"] = None
        e1, e2 = bidirectional_rmse(polys, model, diag, args.rmse_samples,
                                    args.seed)
        entry["e1"] = round(e1, 6)
        entry["e2"] = round(e2, 6)
    mpath.write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "metrics.csv").write_text(metrics_csv(manifest["models"]))
    done = [e for e in manifest["models"] if "e1" in e]
    print(f"metrics: {len(done)} models measured -> {out / 'metrics.csv'}")
    return 0


def cmd_pipeline(args) -> int:
    model = _load(args.input, args.format)
    params = _params(args)
    models, tree, analysis, log, timings = run_pipeline(
        model, params, args.merge_k, args.interp_pct, args.merge_metric,
        args.bw_area, args.bw_volume, args.rays, UP_AXES[args.up_axis])
    out = Path(args.out)
    manifest = export_candidates(models, out, str(args.input),
                                 _manifest_params(args), tree.level_count)
    _write_summary(out, "pipeline", {
        "T1": timings["detect"] + timings["analyze"],
        "T2": timings["build"], "T3": timings["traverse"],
        "primitives": analysis.detected_count,
        "retained": len(analysis.order.sequence()),
        "levels": analysis.level_count, "models": len(models)})
    print(f"pipeline: {len(models)} models, N_l={analysis.level_count} "
          f"-> {out / 'manifest.json'}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SCENES, write_scene

    if args.scene not in SCENES:
        raise UsageError(f"scene must be one of {', '.join(SCENES)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    path, truth = write_scene(out, args.scene, args.noise_sigma, args.seed,
                              args.step)
    truth_path = path.with_suffix(".truth.json")
    truth_path.write_text(json.dumps(truth.to_json(), indent=2) + "\n")
    print(f"synth: {args.scene} (sigma={args.noise_sigma}) -> {path} + "
          f"{truth_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lodforge",
        description="Structure-aware LOD model generation from urban scans")
    sub = ap.add_subparsers(dest="command", required=True)

    specs = [
        ("detect", cmd_detect, ["input", "out", "format"]),
        ("analyze", cmd_analyze, ["out"]),
        ("build", cmd_build, ["out"]),
        ("traverse", cmd_traverse, ["out", "input_opt"]),
        ("metrics", cmd_metrics, ["out", "input_opt", "format", "selection"]),
        ("pipeline", cmd_pipeline, ["input", "out", "format"]),
    ]
    for name, fn, wants in specs:
        p = sub.add_parser(name)
        if "input" in wants:
            p.add_argument("--input", required=True, help="OBJ or PLY input")
        if "input_opt" in wants:
            p.add_argument("--input", default=None)
        if "format" in wants:
            p.add_argument("--format", choices=["obj", "ply"], default=None)
        p.add_argument("--out", required=True, help="output/checkpoint directory")
        if "selection" in wants:
            p.add_argument("--selection", default=None,
                           help="viewer selection.json restricting metrics")
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("synth")
    p.add_argument("--scene", required=True)
    p.add_argument("--noise-sigma", type=float, default=0.0, dest="noise_sigma")
    p.add_argument("--step", type=float, default=None,
                   help="face subdivision step, meters")
    p.add_argument("--out", required=True, help="output path (suffix added)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None) -> int:
    os.environ.setdefault("LODFORGE_THREADS", "1")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ParseError, MissingNormals, NoPrimitives, NoInterior,
            EmptyModel) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
