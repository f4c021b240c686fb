"""Binary space partitioning and in/out cell labeling.

The padded bounding box is split recursively by primitive planes. Cuts are
local: a primitive's hull fragment only ever splits the subspace that
contains it, and fragments straddling a cut are themselves split. Within
the active subspace the next cutter is chosen by hull area (descending) or
by an externally supplied priority (the scale-sorted order).

Cell labels come from casting a deterministic lattice of rays from each
cell center against the alpha-shape footprints; first-hit orientation
votes inside/outside.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alphashape import AlphaShape
from .detection import PlanarPrimitive
from .geometry import (
    Aabb, Cell, GeometryError, Polygon3, Tolerances, planes_coincident,
    split_cell, split_polygon,
)


class NotCoplanar(GeometryError):
    pass


ALPHA_COVER_THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# Complex structures

@dataclass
class Facet:
    id: int
    polygon: Polygon3
    front: Optional[int]          # cell id on the normal side; None = outside
    back: Optional[int]           # cell id on the anti-normal side
    sources: list[int] = field(default_factory=list)
    coverage: dict[int, float] = field(default_factory=dict)
    alpha_covered: bool = False

    @property
    def source_primitive(self) -> Optional[int]:
        return self.sources[0] if self.sources else None

    def other(self, cell_id: int) -> Optional[int]:
        return self.back if self.front == cell_id else self.front

    def to_json(self) -> dict:
        return {"id": self.id, "polygon": self.polygon.to_json(),
                "front": self.front, "back": self.back, "sources": self.sources,
                "coverage": {str(k): v for k, v in self.coverage.items()},
                "alpha_covered": self.alpha_covered}

    @staticmethod
    def from_json(d: dict) -> "Facet":
        return Facet(d["id"], Polygon3.from_json(d["polygon"]), d["front"],
                     d["back"], list(d["sources"]),
                     {int(k): v for k, v in d["coverage"].items()},
                     d["alpha_covered"])


@dataclass
class CellComplex:
    cells: list[Cell]
    facets: list[Facet]
    bbox: Aabb
    tol: Tolerances

    def cell_facets(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.cells]
        for f in self.facets:
            if f.front is not None:
                out[f.front].append(f.id)
            if f.back is not None:
                out[f.back].append(f.id)
        return out

    def total_volume(self) -> float:
        return sum(c.volume for c in self.cells)

    def to_json(self) -> dict:
        return {"cells": [c.to_json() for c in self.cells],
                "facets": [f.to_json() for f in self.facets],
                "bbox": {"min": list(map(float, self.bbox.min)),
                         "max": list(map(float, self.bbox.max))}}

    @staticmethod
    def from_json(d: dict) -> "CellComplex":
        bbox = Aabb(np.array(d["bbox"]["min"]), np.array(d["bbox"]["max"]))
        return CellComplex([Cell.from_json(c) for c in d["cells"]],
                           [Facet.from_json(f) for f in d["facets"]],
                           bbox, Tolerances(bbox.diagonal))


@dataclass
class BspNode:
    id: int
    volume: float
    cutter: Optional[int] = None       # primitive id that split this node
    level: Optional[int] = None        # level of the cutter
    consumed: list[int] = field(default_factory=list)
    children: list[int] = field(default_factory=list)
    parent: int = -1
    cell_id: int = -1                  # leaf cell id in the final complex

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_json(self) -> dict:
        return {"id": self.id, "volume": self.volume, "cutter": self.cutter,
                "level": self.level, "consumed": self.consumed,
                "children": self.children, "parent": self.parent,
                "cell_id": self.cell_id}

    @staticmethod
    def from_json(d: dict) -> "BspNode":
        return BspNode(d["id"], d["volume"], d["cutter"], d["level"],
                       list(d["consumed"]), list(d["children"]), d["parent"],
                       d["cell_id"])


@dataclass
class PartitionResult:
    complex: CellComplex
    nodes: list[BspNode]
    root: int
    trace: list[tuple[int, int]]       # (cutter primitive id, node id split)
    dropped_fragments: int = 0
    cell_to_node: dict[int, int] = field(default_factory=dict)

    def leaf_nodes(self) -> list[BspNode]:
        return [n for n in self.nodes if n.is_leaf]


# ---------------------------------------------------------------------------
# Partition construction

def build_partition(primitives: Sequence[PlanarPrimitive], bbox: Aabb,
                    priority: Optional[dict[int, int]] = None,
                    levels: Optional[dict[int, int]] = None,
                    compute_coverage: bool = True) -> PartitionResult:
    """Partition ``bbox`` by the primitive planes.

    priority: primitive id -> rank; lower rank cuts first (the scale-sorted
    order). When omitted, the largest remaining hull fragment cuts first.
    levels: primitive id -> level tag recorded on the nodes it cuts.
    """
    if not primitives:
        raise ValueError("need at least one primitive")
    tol = Tolerances(bbox.diagonal)
    prim_by_id = {p.id: p for p in primitives}

    root_cell = Cell.from_aabb(bbox, id=0)
    cells: list[Optional[Cell]] = [root_cell]
    facets: list[Facet] = []
    cell_facets: list[list[int]] = [[]]
    for face in root_cell.faces:
        f = Facet(len(facets), Polygon3(face.plane, face.vertices.copy()),
                  front=None, back=0)
        facets.append(f)
        cell_facets[0].append(f.id)

    nodes = [BspNode(0, root_cell.volume)]
    cell_node = {0: 0}                 # live cell id -> node id
    fragments: dict[int, list[tuple[int, Polygon3]]] = {0: []}
    for p in primitives:
        fragments[0].append((p.id, p.hull))

    def frag_key(cell_id: int, pid: int, poly: Polygon3):
        if priority is not None:
            return (priority[pid], cell_id, pid)
        return (-poly.area, cell_id, pid)

    heap: list[tuple] = []
    counter = 0
    for pid, poly in fragments[0]:
        heapq.heappush(heap, (frag_key(0, pid, poly), counter, 0, pid))
        counter += 1

    trace: list[tuple[int, int]] = []
    dropped = 0

    while heap:
        _, _, cell_id, pid = heapq.heappop(heap)
        if cells[cell_id] is None:
            continue  # stale: cell already split
        entry = next(((q, poly) for q, poly in fragments[cell_id] if q == pid), None)
        if entry is None:
            continue  # consumed or moved
        _, frag_poly = entry
        cutter = prim_by_id[pid].plane

        cell = cells[cell_id]
        front, back, section = split_cell(cell, cutter, tol.coplanar, tol.min_area)
        if section is None:
            # grazing or missing: fragment cannot split this cell
            fragments[cell_id] = [(q, p) for q, p in fragments[cell_id] if q != pid]
            dropped += 1
            continue

        fid = len(cells)
        bid = len(cells) + 1
        front.id, back.id = fid, bid
        cells.append(front)
        cells.append(back)
        cell_facets.append([])
        cell_facets.append([])

        node_id = cell_node.pop(cell_id)
        consumed: list[int] = []

        # distribute existing facets of the split cell
        for facet_id in cell_facets[cell_id]:
            f = facets[facet_id]
            fp, bp = split_polygon(f.polygon, cutter, tol.coplanar)
            if fp is not None and bp is None:
                _reattach(f, cell_id, fid)
                cell_facets[fid].append(f.id)
            elif bp is not None and fp is None:
                _reattach(f, cell_id, bid)
                cell_facets[bid].append(f.id)
            else:
                was_front = f.front == cell_id
                other = f.back if was_front else f.front
                f.polygon = fp
                _reattach(f, cell_id, fid)
                cell_facets[fid].append(f.id)
                if was_front:
                    f2 = Facet(len(facets), bp, front=bid, back=other,
                               sources=list(f.sources))
                else:
                    f2 = Facet(len(facets), bp, front=other, back=bid,
                               sources=list(f.sources))
                facets.append(f2)
                cell_facets[bid].append(f2.id)
                if other is not None:
                    cell_facets[other].append(f2.id)

        # the new interface facet
        nf = Facet(len(facets), section, front=fid, back=bid, sources=[pid])
        facets.append(nf)
        cell_facets[fid].append(nf.id)
        cell_facets[bid].append(nf.id)

        # distribute fragments; coplanar fragments are consumed by this cut
        for q, poly in fragments[cell_id]:
            if q == pid:
                continue
            qplane = prim_by_id[q].plane
            if planes_coincident(qplane, cutter, tol.coplanar):
                consumed.append(q)
                nf.sources.append(q)
                continue
            qf, qb = split_polygon(poly, cutter, tol.coplanar, tol.min_area)
            if qf is None and qb is None:
                dropped += 1
                continue
            for part, target in ((qf, fid), (qb, bid)):
                if part is None:
                    continue
                if part.area <= tol.min_area:
                    dropped += 1
                    continue
                fragments.setdefault(target, []).append((q, part))
                heapq.heappush(heap, (frag_key(target, q, part), counter, target, q))
                counter += 1

        del fragments[cell_id]
        cells[cell_id] = None

        fnode = BspNode(len(nodes), front.volume, parent=node_id)
        nodes.append(fnode)
        bnode = BspNode(len(nodes), back.volume, parent=node_id)
        nodes.append(bnode)
        parent = nodes[node_id]
        parent.cutter = pid
        parent.level = levels.get(pid) if levels else None
        parent.consumed = consumed
        parent.children = [fnode.id, bnode.id]
        cell_node[fid] = fnode.id
        cell_node[bid] = bnode.id
        trace.append((pid, node_id))

    # compact live cells and remap ids
    live = [i for i, c in enumerate(cells) if c is not None]
    remap = {old: new for new, old in enumerate(live)}
    final_cells = []
    for old in live:
        c = cells[old]
        c.id = remap[old]
        final_cells.append(c)
    final_facets: list[Facet] = []
    for f in facets:
        if f.front is not None and cells[f.front] is None:
            continue
        if f.back is not None and cells[f.back] is None:
            continue
        f.id = len(final_facets)
        f.front = remap[f.front] if f.front is not None else None
        f.back = remap[f.back] if f.back is not None else None
        final_facets.append(f)

    complex_ = CellComplex(final_cells, final_facets, bbox, tol)
    cell_to_node = {}
    for cid, nid in cell_node.items():
        nodes[nid].cell_id = remap[cid]
        cell_to_node[remap[cid]] = nid

    if compute_coverage:
        shapes = {p.id: p.alpha_shape for p in primitives}
        compute_facet_coverage(complex_, shapes)

    return PartitionResult(complex_, nodes, 0, trace, dropped, cell_to_node)


def _reattach(f: Facet, old_cell: int, new_cell: int) -> None:
    if f.front == old_cell:
        f.front = new_cell
    elif f.back == old_cell:
        f.back = new_cell


# ---------------------------------------------------------------------------
# Facet alpha coverage

def facet_alpha_coverage(polygon: Polygon3, shape: AlphaShape, tol: float) -> float:
    """Fraction of the facet area covered by the footprint (exact clipping)."""
    d = shape.plane.signed_distance(polygon.vertices)
    if np.max(np.abs(d)) > tol:
        raise NotCoplanar("facet does not lie on the footprint plane")
    return _coverage_fraction(polygon, shape)


def _coverage_fraction(polygon: Polygon3, shape: AlphaShape) -> float:
    """Overlap(polygon, shape) / area(polygon) on the shape's plane."""
    fa = polygon.area
    if fa <= 0.0:
        return 0.0
    poly2 = shape.plane.project_2d(polygon.vertices)
    # facet polygon as CCW halfplane list
    if _signed_area_2d(poly2) < 0:
        poly2 = poly2[::-1]
    tris = shape.triangles_2d()
    if len(tris) == 0:
        return 0.0
    corners = tris  # (T, 3, 2)

    lo = poly2.min(axis=0)
    hi = poly2.max(axis=0)
    tlo = corners.min(axis=1)
    thi = corners.max(axis=1)
    cand = ~((thi[:, 0] < lo[0]) | (tlo[:, 0] > hi[0]) |
             (thi[:, 1] < lo[1]) | (tlo[:, 1] > hi[1]))
    if not np.any(cand):
        return 0.0
    corners = corners[cand]

    # classify against each facet edge: inside if left of every CCW edge
    n_edge = len(poly2)
    a = poly2
    b = np.roll(poly2, -1, axis=0)
    edge_d = b - a
    # signs[t, k, e]: cross(edge_e, corner_tk - a_e)
    diff = corners[:, :, None, :] - a[None, None, :, :]
    cross = edge_d[None, None, :, 0] * diff[..., 1] - edge_d[None, None, :, 1] * diff[..., 0]
    inside_all = np.all(cross >= -1e-12, axis=(1, 2))
    outside_any = np.any(np.all(cross < -1e-12, axis=1), axis=1) & ~inside_all

    area = 0.0
    full_in = corners[inside_all]
    if len(full_in):
        cr = ((full_in[:, 1, 0] - full_in[:, 0, 0]) * (full_in[:, 2, 1] - full_in[:, 0, 1])
              - (full_in[:, 2, 0] - full_in[:, 0, 0]) * (full_in[:, 1, 1] - full_in[:, 0, 1]))
        area += 0.5 * float(np.abs(cr).sum())

    rest = corners[~inside_all & ~outside_any]
    for tri in rest:
        area += _clip_area_2d(tri, poly2)
    return min(1.0, area / fa)


def _signed_area_2d(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _clip_area_2d(subject: np.ndarray, clip_ccw: np.ndarray) -> float:
    """Area of subject polygon clipped to a convex CCW clip polygon."""
    poly = [tuple(p) for p in subject]
    if _signed_area_2d(subject) < 0:
        poly = poly[::-1]
    n = len(clip_ccw)
    for e in range(n):
        ax, ay = clip_ccw[e]
        bx, by = clip_ccw[(e + 1) % n]
        ex, ey = bx - ax, by - ay
        out = []
        m = len(poly)
        if m == 0:
            return 0.0
        prev = poly[-1]
        dprev = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in poly:
            dcur = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if dcur >= -1e-14:
                if dprev < -1e-14:
                    t = dprev / (dprev - dcur)
                    out.append((prev[0] + t * (cur[0] - prev[0]),
                                prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif dprev >= -1e-14:
                t = dprev / (dprev - dcur)
                out.append((prev[0] + t * (cur[0] - prev[0]),
                            prev[1] + t * (cur[1] - prev[1])))
            prev, dprev = cur, dcur
        poly = out
    if len(poly) < 3:
        return 0.0
    arr = np.array(poly)
    return abs(_signed_area_2d(arr))


def compute_facet_coverage(complex_: CellComplex, shapes: dict[int, AlphaShape]) -> None:
    """Fill per-source coverage fractions and the alpha_covered flag."""
    for f in complex_.facets:
        f.coverage = {}
        total = 0.0
        for src in f.sources:
            shape = shapes.get(src)
            if shape is None:
                continue
            frac = _coverage_fraction(f.polygon, shape)
            f.coverage[src] = frac
            total += frac
        f.alpha_covered = min(1.0, total) >= ALPHA_COVER_THRESHOLD


# ---------------------------------------------------------------------------
# Ray-cast labeling

def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit directions."""
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass
class CellLabels:
    inside: np.ndarray           # (L, C) bool, or (C,) when single level
    hits_in: np.ndarray
    hits_out: np.ndarray
    misses: np.ndarray


def label_cells(complex_: CellComplex, shapes: Sequence[AlphaShape],
                rays_per_cell: int = 100,
                shape_levels: Optional[Sequence[int]] = None,
                threads: Optional[int] = None) -> CellLabels:
    """Ray-cast in/out labels for every cell.

    With ``shape_levels`` given, returns one label row per level k, where
    level k sees only shapes with level <= k. A ray's first hit with
    direction . normal > 0 votes inside; misses vote outside; a cell is
    inside on strict majority. Cells are independent, so they may be
    labeled in parallel chunks (LODFORGE_THREADS); results are stitched in
    cell order and identical to the sequential run.
    """
    import os

    n_cells = len(complex_.cells)
    dirs = fibonacci_sphere(rays_per_cell)
    origins = np.array([_ray_origin(c, shapes, complex_.tol) for c in complex_.cells])

    if shape_levels is None:
        shape_levels = [0] * len(shapes)
    levels = sorted(set(shape_levels))
    level_index = {lv: i for i, lv in enumerate(levels)}
    n_levels = len(levels)

    if threads is None:
        try:
            threads = max(1, int(os.environ.get("LODFORGE_THREADS", "1")))
        except ValueError:
            threads = 1

    if threads > 1 and n_cells >= 2 * threads:
        from concurrent.futures import ThreadPoolExecutor

        bounds = np.linspace(0, n_cells, threads + 1, dtype=int)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(
                lambda se: _label_range(origins[se[0]:se[1]], dirs, shapes,
                                        shape_levels, level_index, n_levels,
                                        complex_.tol),
                [(bounds[i], bounds[i + 1]) for i in range(threads)
                 if bounds[i] < bounds[i + 1]]))
        sign_matrix = np.concatenate([p for p in parts], axis=1)
    else:
        sign_matrix = _label_range(origins, dirs, shapes, shape_levels,
                                   level_index, n_levels, complex_.tol)

    in_votes = (sign_matrix > 0).sum(axis=2)
    out_votes = (sign_matrix < 0).sum(axis=2)
    misses = rays_per_cell - in_votes - out_votes
    inside = in_votes > rays_per_cell / 2.0

    if n_levels == 1:
        return CellLabels(inside[0], in_votes[0], out_votes[0], misses[0])
    return CellLabels(inside, in_votes, out_votes, misses)


def _label_range(origins: np.ndarray, dirs: np.ndarray,
                 shapes: Sequence[AlphaShape], shape_levels: Sequence[int],
                 level_index: dict[int, int], n_levels: int,
                 tol: Tolerances) -> np.ndarray:
    """First-hit sign matrix (levels, cells, rays) for a cell range."""
    n_cells = len(origins)
    rays_per_cell = len(dirs)
    O = np.repeat(origins, rays_per_cell, axis=0)          # (C*R, 3)
    D = np.tile(dirs, (n_cells, 1))                        # (C*R, 3)
    m = len(O)
    eps = max(tol.coplanar, 1e-12)

    best_t = np.full((n_levels, m), np.inf)
    best_sign = np.zeros((n_levels, m), dtype=np.int8)     # +1 in, -1 out, 0 miss

    order = np.argsort([level_index[lv] for lv in shape_levels], kind="stable")
    for si in order:
        shape = shapes[si]
        li = level_index[shape_levels[si]]
        n = shape.plane.normal
        denom = D @ n
        num = shape.plane.offset - O @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        valid = (np.abs(denom) > 1e-12) & (t > eps) & np.isfinite(t)
        if not np.any(valid):
            continue
        pts = O[valid] + t[valid, None] * D[valid]
        inside = shape.contains_2d(shape.plane.project_2d(pts))
        hit_idx = np.where(valid)[0][inside]
        if not len(hit_idx):
            continue
        t_hit = t[hit_idx]
        sign = np.where(denom[hit_idx] > 0, 1, -1).astype(np.int8)
        # a hit at level li affects levels >= li
        for lj in range(li, n_levels):
            better = t_hit < best_t[lj, hit_idx]
            upd = hit_idx[better]
            best_t[lj, upd] = t_hit[better]
            best_sign[lj, upd] = sign[better]

    return best_sign.reshape(n_levels, n_cells, rays_per_cell)


def _ray_origin(cell: Cell, shapes: Sequence[AlphaShape], tol: Tolerances) -> np.ndarray:
    c = cell.centroid
    for s in shapes:
        d = float(s.plane.signed_distance(c.reshape(1, 3))[0])
        if abs(d) < tol.coplanar and s.contains_3d(c.reshape(1, 3))[0]:
            return cell.chebyshev_center()
    return c
