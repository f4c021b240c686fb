"""Stage drivers: detect -> analyze -> build -> traverse, with JSON
checkpoints as the inter-stage contract."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
import numpy as np

from .detection import DetectParams, PlanarPrimitive, detect_planes
from .geometry import Aabb
from .ioview import (
    Cluster, LevelSet, ScaleSorted, Structure, StructureSet, assign_hosts,
    classify_structures, cluster_stage1, cluster_stage2, merge_regions,
    regularize, sort_primitives,
)
from .lodtree import LodTree, build_lod_tree, compute_labels, traverse
from .meshio import InputModel, input_bbox
from .partition import PartitionResult, build_partition, label_cells

CHECKPOINT_VERSION = 1


@dataclass
class AnalysisResult:
    primitives: list[PlanarPrimitive]      # post-regularization
    order: ScaleSorted
    structs: StructureSet
    clusters: list[Cluster]
    levels: list[LevelSet]
    bbox: Aabb
    region_summary: list[dict] = field(default_factory=list)
    detected_count: int = 0

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def to_json(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "primitives": [p.to_json() for p in self.primitives],
            "order": self.order.to_json(),
            "principal_ids": sorted(self.structs.principal_ids),
            "structures": [s.to_json() for s in self.structs.structures],
            "core_interior": self.structs.core_interior.to_json(),
            "core_exterior": self.structs.core_exterior.to_json(),
            "clusters": [c.to_json() for c in self.clusters],
            "levels": [l.to_json() for l in self.levels],
            "bbox": {"min": list(map(float, self.bbox.min)),
                     "max": list(map(float, self.bbox.max))},
            "regions": self.region_summary,
            "detected_count": self.detected_count,
        }

    @staticmethod
    def from_json(d: dict) -> "AnalysisResult":
        from .ioview import Region

        prims = [PlanarPrimitive.from_json(p) for p in d["primitives"]]
        order = ScaleSorted.from_json(d["order"])
        structures = []
        for s in d["structures"]:
            structures.append(Structure(s["id"], s["kind"], s["volume"],
                                        set(s["primitive_ids"]),
                                        s["host_primitive"], s["projected_area"]))

        def region_from(rd):
            return Region(rd["id"], set(rd["cells"]), rd["inside"], rd["volume"],
                          set(rd["boundary_primitives"]))

        structs = StructureSet(region_from(d["core_interior"]),
                               region_from(d["core_exterior"]),
                               structures, set(d["principal_ids"]))
        clusters = [Cluster(c["id"], list(c["structure_ids"]),
                            c["host_primitive"], c["kind"], c["projected_area"],
                            c["mean_volume"], c["primitive_count"])
                    for c in d["clusters"]]
        levels = [LevelSet(l["id"], list(l["cluster_ids"]), l["mean_volume"])
                  for l in d["levels"]]
        bbox = Aabb(np.array(d["bbox"]["min"]), np.array(d["bbox"]["max"]))
        return AnalysisResult(prims, order, structs, clusters, levels, bbox,
                              d.get("regions", []), d.get("detected_count", 0))


def analyze(model: InputModel, primitives: list[PlanarPrimitive],
            points: np.ndarray, params: DetectParams,
            bw_area: float = 2.0, bw_volume: float = 4.0,
            rays_per_cell: int = 100,
            up_axis: np.ndarray = np.array([0.0, 0.0, 1.0]),
            pad: float = 0.01) -> AnalysisResult:
    """IO-View: partition by detected planes, extract and cluster the 3D
    structures, regularize, and emit the scale-sorted primitive order."""
    bbox = input_bbox(model, pad)
    part = build_partition(primitives, bbox)
    shapes = [p.alpha_shape for p in primitives]
    labels = label_cells(part.complex, shapes, rays_per_cell)
    regions = merge_regions(part.complex, labels)
    structs = classify_structures(regions, part.complex)
    assign_hosts(structs, regions, part.complex)
    clusters = cluster_stage1(structs, bw_area)
    final_prims = regularize(primitives, structs, clusters, points, params,
                             up_axis)
    struct_by_id = {s.id: s for s in structs.structures}
    for c in clusters:
        c.primitive_count = sum(len(struct_by_id[sid].primitive_ids)
                                for sid in c.structure_ids)
    levels = cluster_stage2(clusters, bw_volume)
    order = sort_primitives(final_prims, structs, clusters, levels)
    summary = [{"id": r.id, "inside": r.inside, "volume": r.volume,
                "cells": len(r.cells)} for r in regions]
    return AnalysisResult(final_prims, order, structs, clusters, levels, bbox,
                          summary, detected_count=len(primitives))


def build_tree(analysis: AnalysisResult, k: int = 10,
               merge_metric: str = "per-structure",
               rays_per_cell: int = 100) -> tuple[LodTree, PartitionResult]:
    tree, part = build_lod_tree(analysis.primitives, analysis.order,
                                analysis.bbox, analysis.clusters,
                                analysis.structs, k, merge_metric)
    compute_labels(tree, analysis.primitives, analysis.order, rays_per_cell)
    return tree, part


@dataclass
class StageTimer:
    timings: dict[str, float] = field(default_factory=dict)

    def measure(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = time.perf_counter() - self.t0

        return _Ctx()


def run_pipeline(model: InputModel, params: DetectParams, k: int = 10,
                 pct: float = 0.8, merge_metric: str = "per-structure",
                 bw_area: float = 2.0, bw_volume: float = 4.0,
                 rays_per_cell: int = 100,
                 up_axis: np.ndarray = np.array([0.0, 0.0, 1.0])):
    """Whole pipeline in memory; returns (models, tree, analysis, log, timings)."""
    timer = StageTimer()
    with timer.measure("detect"):
        primitives, points, _ = detect_planes(model, params)
    with timer.measure("analyze"):      # T1
        analysis = analyze(model, primitives, points, params, bw_area,
                           bw_volume, rays_per_cell, up_axis)
    with timer.measure("build"):        # T2
        tree, part = build_tree(analysis, k, merge_metric, rays_per_cell)
    with timer.measure("traverse"):     # T3
        models, log = traverse(tree, pct)
    return models, tree, analysis, log, timer.timings
