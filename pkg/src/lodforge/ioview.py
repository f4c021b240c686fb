"""Structure analysis: split the labeled cell complex into regions, find
the principal shell and the secondary addon/cutout structures, cluster
them by projected area then by volume, regularize the planes, and emit the
scale-sorted primitive order that drives tree construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .alphashape import AlphaShape
from .detection import DetectParams, PlanarPrimitive
from .geometry import Plane, Polygon3, polygon_from_ccw_loop
from .partition import CellComplex, CellLabels

SOURCE_MIN_COVER = 0.05       # facet source counts for a region boundary
PRINCIPAL_ANGLE = 5.0         # deg, mild regularization
SECONDARY_ANGLE = 15.0        # deg, stronger regularization for details
COPLANAR_DIST = 0.01          # m
VERTICAL_ANGLE = 5.0          # deg, window-template host test
WINDOW_MIN_CUTOUTS = 3        # more than this many cutouts triggers templates


class NoInterior(Exception):
    pass


# ---------------------------------------------------------------------------
# Regions

@dataclass
class Region:
    id: int
    cells: set[int]
    inside: bool
    volume: float
    boundary_primitives: set[int] = field(default_factory=set)

    def to_json(self) -> dict:
        return {"id": self.id, "cells": sorted(self.cells), "inside": self.inside,
                "volume": self.volume,
                "boundary_primitives": sorted(self.boundary_primitives)}


def merge_regions(complex_: CellComplex, labels: CellLabels) -> list[Region]:
    """Union cells that share a label and are not separated by a footprint."""
    inside = labels.inside
    n = len(complex_.cells)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for f in complex_.facets:
        if f.front is None or f.back is None:
            continue
        if f.alpha_covered:
            continue
        if inside[f.front] != inside[f.back]:
            continue
        ra, rb = find(f.front), find(f.back)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for c in range(n):
        groups.setdefault(find(c), []).append(c)

    regions = []
    cell_region = {}
    for rid, (root, cells) in enumerate(sorted(groups.items())):
        vol = sum(complex_.cells[c].volume for c in cells)
        reg = Region(rid, set(cells), bool(inside[root]), vol)
        regions.append(reg)
        for c in cells:
            cell_region[c] = rid

    # boundary attribution: sources whose footprint actually covers the facet
    for f in complex_.facets:
        if f.front is None or f.back is None:
            ra = cell_region[f.front if f.front is not None else f.back]
            rb = None
        else:
            ra, rb = cell_region[f.front], cell_region[f.back]
            if ra == rb:
                continue
        srcs = [s for s in f.sources if f.coverage.get(s, 0.0) > SOURCE_MIN_COVER]
        regions[ra].boundary_primitives.update(srcs)
        if rb is not None:
            regions[rb].boundary_primitives.update(srcs)
    return regions


# ---------------------------------------------------------------------------
# Structure classification

@dataclass
class Structure:
    """A secondary solid block: an addon (inside) or cutout (outside)."""
    id: int                       # region id
    kind: str                     # "addon" | "cutout"
    volume: float
    primitive_ids: set[int] = field(default_factory=set)   # own boundary planes
    host_primitive: int = -1
    projected_area: float = 0.0

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "volume": self.volume,
                "primitive_ids": sorted(self.primitive_ids),
                "host_primitive": self.host_primitive,
                "projected_area": self.projected_area}


@dataclass
class StructureSet:
    core_interior: Region
    core_exterior: Region
    structures: list[Structure]
    principal_ids: set[int]

    @property
    def addons(self) -> list[Structure]:
        return [s for s in self.structures if s.kind == "addon"]

    @property
    def cutouts(self) -> list[Structure]:
        return [s for s in self.structures if s.kind == "cutout"]


def classify_structures(regions: list[Region], complex_: CellComplex,
                        ) -> StructureSet:
    ins = [r for r in regions if r.inside]
    outs = [r for r in regions if not r.inside]
    if not ins:
        raise NoInterior("no inside region: input does not enclose a volume")
    v_in = max(ins, key=lambda r: (r.volume, -r.id))
    v_out = max(outs, key=lambda r: (r.volume, -r.id)) if outs else None
    if v_out is None:
        raise NoInterior("no outside region: bounding box is fully inside?")

    cell_region = {}
    for r in regions:
        for c in r.cells:
            cell_region[c] = r.id

    principal: set[int] = set()
    for f in complex_.facets:
        if f.front is None or f.back is None:
            continue
        ra, rb = cell_region[f.front], cell_region[f.back]
        if {ra, rb} == {v_in.id, v_out.id}:
            principal.update(s for s in f.sources
                             if f.coverage.get(s, 0.0) > SOURCE_MIN_COVER)

    structures = []
    for r in regions:
        if r.id in (v_in.id, v_out.id):
            continue
        kind = "addon" if r.inside else "cutout"
        own = set(r.boundary_primitives) - principal
        structures.append(Structure(r.id, kind, r.volume, own))

    # a primitive bounding several structures goes to the one sharing the
    # most facet area with it (greedy; such embeddings are a known failure
    # mode of plane-attached analysis)
    claim: dict[int, list[tuple[float, int]]] = {}
    areas = _shared_facet_areas(regions, complex_, cell_region)
    for s in structures:
        for pid in s.primitive_ids:
            claim.setdefault(pid, []).append((areas.get((s.id, pid), 0.0), s.id))
    for pid, claims in claim.items():
        if len(claims) < 2:
            continue
        claims.sort(key=lambda t: (-t[0], t[1]))
        winner = claims[0][1]
        for s in structures:
            if s.id != winner:
                s.primitive_ids.discard(pid)

    return StructureSet(v_in, v_out, structures, principal)


def _shared_facet_areas(regions, complex_, cell_region) -> dict[tuple[int, int], float]:
    """(region id, source primitive) -> total bordering facet area."""
    out: dict[tuple[int, int], float] = {}
    for f in complex_.facets:
        if f.front is None or f.back is None:
            rids = [cell_region[f.front if f.front is not None else f.back]]
        else:
            ra, rb = cell_region[f.front], cell_region[f.back]
            if ra == rb:
                continue
            rids = [ra, rb]
        area = f.polygon.area
        for s in f.sources:
            if f.coverage.get(s, 0.0) <= SOURCE_MIN_COVER:
                continue
            for rid in rids:
                key = (rid, s)
                out[key] = out.get(key, 0.0) + area
    return out


# ---------------------------------------------------------------------------
# Mean shift and the two-stage clustering

def mean_shift_1d(values, bandwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Flat-kernel mean shift on scalars.

    Returns (assignments, modes): each value converges to a mode by
    iterating the window mean; modes closer than bandwidth/2 share a
    cluster. Assignments index into the sorted mode array.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise ValueError("values must be a non-empty 1D array")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    converged = np.empty(len(v))
    for i, x0 in enumerate(v):
        x = x0
        for _ in range(500):
            window = v[np.abs(v - x) <= bandwidth]
            nxt = window.mean()
            if abs(nxt - x) < 1e-6 * bandwidth:
                x = nxt
                break
            x = nxt
        converged[i] = x

    # modes closer than bandwidth/2 share a cluster (transitive closure ==
    # consecutive-gap chaining on the sorted modes)
    order = np.argsort(converged, kind="stable")
    modes: list[float] = []
    members: list[list[int]] = []
    last = None
    for idx in order:
        m = converged[idx]
        if last is not None and abs(m - last) < bandwidth / 2.0:
            members[-1].append(idx)
        else:
            modes.append(m)
            members.append([idx])
        last = m
    assign = np.empty(len(v), dtype=np.int64)
    final_modes = []
    for k, idxs in enumerate(members):
        final_modes.append(float(np.mean([converged[i] for i in idxs])))
        for i in idxs:
            assign[i] = k
    return assign, np.array(final_modes)


@dataclass
class Cluster:
    id: int
    structure_ids: list[int]
    host_primitive: int
    kind: str
    projected_area: float          # mode of the member areas, m^2
    mean_volume: float             # mean member volume, m^3
    primitive_count: int = 0

    def to_json(self) -> dict:
        return {"id": self.id, "structure_ids": self.structure_ids,
                "host_primitive": self.host_primitive, "kind": self.kind,
                "projected_area": self.projected_area,
                "mean_volume": self.mean_volume,
                "primitive_count": self.primitive_count}


@dataclass
class LevelSet:
    id: int                        # 1-based
    cluster_ids: list[int]
    mean_volume: float

    def to_json(self) -> dict:
        return {"id": self.id, "cluster_ids": self.cluster_ids,
                "mean_volume": self.mean_volume}


def assign_hosts(structs: StructureSet, regions: list[Region],
                 complex_: CellComplex) -> None:
    """Attach each secondary structure to the principal plane it sits on."""
    cell_region = {}
    for r in regions:
        for c in r.cells:
            cell_region[c] = r.id
    areas = _shared_facet_areas(regions, complex_, cell_region)
    for s in structs.structures:
        best = (-1.0, -1)
        proj = 0.0
        for pid in structs.principal_ids:
            a = areas.get((s.id, pid), 0.0)
            if a > best[0] or (a == best[0] and pid < best[1]):
                best = (a, pid)
        if best[0] > 0:
            s.host_primitive = best[1]
            proj = best[0]
        s.projected_area = proj


def cluster_stage1(structs: StructureSet, bandwidth: float = 2.0) -> list[Cluster]:
    """Group secondary structures on each principal plane by projected area."""
    groups: dict[tuple[int, str], list[Structure]] = {}
    for s in structs.structures:
        groups.setdefault((s.host_primitive, s.kind), []).append(s)

    clusters: list[Cluster] = []
    for (host, kind), members in sorted(groups.items()):
        members.sort(key=lambda s: s.id)
        areas = [m.projected_area for m in members]
        assign, modes = mean_shift_1d(areas, bandwidth)
        for mode_idx in range(len(modes)):
            sel = [m for m, a in zip(members, assign) if a == mode_idx]
            if not sel:
                continue
            clusters.append(Cluster(
                id=len(clusters),
                structure_ids=[m.id for m in sel],
                host_primitive=host,
                kind=kind,
                projected_area=float(modes[mode_idx]),
                mean_volume=float(np.mean([m.volume for m in sel])),
                primitive_count=sum(len(m.primitive_ids) for m in sel),
            ))
    return clusters


def cluster_stage2(clusters: list[Cluster], bandwidth: float = 4.0) -> list[LevelSet]:
    """Group clusters into level sets by mean structure volume."""
    if not clusters:
        return []
    vols = [c.mean_volume for c in clusters]
    assign, modes = mean_shift_1d(vols, bandwidth)
    levels: list[LevelSet] = []
    for mode_idx in np.argsort(-np.asarray(modes), kind="stable"):
        ids = [c.id for c, a in zip(clusters, assign) if a == mode_idx]
        if not ids:
            continue
        levels.append(LevelSet(len(levels) + 1, ids, float(modes[mode_idx])))
    return levels


# ---------------------------------------------------------------------------
# Regularization

def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip(abs(float(a @ b)), 0.0, 1.0))))


def _replane(prim: PlanarPrimitive, normal: np.ndarray, offset: float,
             points: Optional[np.ndarray], epsilon: float) -> bool:
    """Try to move a primitive onto a snapped plane; reject big moves."""
    new = Plane(normal, offset)
    if points is not None and len(prim.inliers):
        d = np.abs(new.signed_distance(points[prim.inliers]))
        if d.max() > 10.0 * epsilon:
            return False
    _rebuild_on_plane(prim, new, points)
    return True


def _rebuild_on_plane(prim: PlanarPrimitive, new: Plane,
                      points: Optional[np.ndarray]) -> None:
    if points is not None and len(prim.inliers):
        proj = new.project_2d(points[prim.inliers])
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull2 = ConvexHull(proj)
            loop = new.lift_3d(proj[hull2.vertices])
            prim.hull = polygon_from_ccw_loop(new, loop)
        except QhullError:
            prim.hull = Polygon3(new, new.lift_3d(new.project_2d(prim.hull.vertices)))
        prim.alpha_shape = AlphaShape.build(new, proj, prim.alpha_shape.alpha)
    else:
        corners = new.project_2d(prim.hull.vertices)
        prim.hull = Polygon3(new, new.lift_3d(corners))
        prim.alpha_shape = AlphaShape(new, prim.alpha_shape.points2d,
                                      prim.alpha_shape.triangles,
                                      prim.alpha_shape.alpha,
                                      prim.alpha_shape.from_delaunay)
    prim.plane = new
    prim.area = prim.hull.area


def regularize(primitives: list[PlanarPrimitive], structs: StructureSet,
               clusters: list[Cluster], points: Optional[np.ndarray],
               params: DetectParams, up_axis: np.ndarray = np.array([0.0, 0, 1]),
               ) -> list[PlanarPrimitive]:
    """Snap parallel/orthogonal/coplanar planes; fit window templates.

    Principal planes get mild snapping (5 deg); cluster members snap more
    aggressively (15 deg) against their host. Vertical hosts whose cluster
    holds more than three cutouts get their structures replaced by cuboid
    template primitives. Returns the updated primitive list (templates
    appended, replaced primitives removed).
    """
    by_id = {p.id: p for p in primitives}
    principal = [by_id[i] for i in sorted(structs.principal_ids) if i in by_id]

    # (a) mild snapping among principal planes
    groups: list[dict] = []      # {"n": unit normal, "w": weight, "members": []}
    for p in sorted(principal, key=lambda q: (-q.area, q.id)):
        placed = False
        for g in groups:
            if _angle_deg(g["n"], p.plane.normal) < PRINCIPAL_ANGLE:
                sign = 1.0 if float(g["n"] @ p.plane.normal) >= 0 else -1.0
                n = g["n"] * g["w"] + sign * p.plane.normal * p.area
                g["n"] = n / np.linalg.norm(n)
                g["w"] += p.area
                g["members"].append((p, sign))
                placed = True
                break
        if not placed:
            groups.append({"n": p.plane.normal.copy(), "w": p.area,
                           "members": [(p, 1.0)]})

    # orthogonality between group representatives (heavier group wins)
    groups.sort(key=lambda g: -g["w"])
    for i, g in enumerate(groups):
        for h in groups[i + 1:]:
            ang = _angle_deg(g["n"], h["n"])
            if abs(90.0 - ang) < PRINCIPAL_ANGLE and ang != 90.0:
                n = h["n"] - float(h["n"] @ g["n"]) * g["n"]
                norm = np.linalg.norm(n)
                if norm > 1e-9:
                    h["n"] = n / norm

    for g in groups:
        for p, sign in g["members"]:
            n = sign * g["n"]
            centroid = (points[p.inliers].mean(axis=0) if points is not None
                        and len(p.inliers) else p.hull.centroid)
            _replane(p, n, float(n @ centroid), points, params.epsilon)

    # coplanar merge within parallel principal groups
    for g in groups:
        members = sorted(g["members"], key=lambda t: (-t[0].area, t[0].id))
        merged: list[tuple[float, float, list]] = []    # (offset, weight, prims)
        for p, sign in members:
            off = sign * p.plane.offset  # offset in group-normal orientation
            hit = None
            for k, (o, w, ps) in enumerate(merged):
                if abs(o - off) < COPLANAR_DIST:
                    hit = k
                    break
            if hit is None:
                merged.append((off, p.area, [(p, sign)]))
            else:
                o, w, ps = merged[hit]
                merged[hit] = ((o * w + off * p.area) / (w + p.area),
                               w + p.area, ps + [(p, sign)])
        for o, _, ps in merged:
            if len(ps) < 2:
                continue
            for p, sign in ps:
                _replane(p, sign * g["n"], sign * o, points, params.epsilon)

    # (b) stronger snapping of cluster members against their host
    for c in clusters:
        host = by_id.get(c.host_primitive)
        if host is None:
            continue
        hn = host.plane.normal
        for sid in c.structure_ids:
            s = _structure_by_id(structs, sid)
            for pid in sorted(s.primitive_ids):
                p = by_id.get(pid)
                if p is None:
                    continue
                ang = _angle_deg(hn, p.plane.normal)
                centroid = (points[p.inliers].mean(axis=0) if points is not None
                            and len(p.inliers) else p.hull.centroid)
                if ang < SECONDARY_ANGLE and ang > 0:
                    sign = 1.0 if float(hn @ p.plane.normal) >= 0 else -1.0
                    n = sign * hn
                    _replane(p, n, float(n @ centroid), points, params.epsilon)
                elif abs(90.0 - ang) < SECONDARY_ANGLE and ang != 90.0:
                    n = p.plane.normal - float(p.plane.normal @ hn) * hn
                    norm = np.linalg.norm(n)
                    if norm > 1e-9:
                        n = n / norm
                        _replane(p, n, float(n @ centroid), points, params.epsilon)

    # (c) window templates on near-vertical hosts
    out = list(primitives)
    next_id = max(p.id for p in primitives) + 1
    for c in clusters:
        host = by_id.get(c.host_primitive)
        if host is None or c.kind != "cutout":
            continue
        if len(c.structure_ids) <= WINDOW_MIN_CUTOUTS:
            continue
        tilt = 90.0 - _angle_deg(host.plane.normal, up_axis)
        if tilt > VERTICAL_ANGLE:
            continue
        for sid in c.structure_ids:
            s = _structure_by_id(structs, sid)
            member_prims = [by_id[pid] for pid in sorted(s.primitive_ids)
                            if pid in by_id]
            if not member_prims or all(getattr(p, "template_of", None) is not None
                                       for p in member_prims):
                continue
            new_prims = _fit_window_template(s, member_prims, host, points,
                                             next_id, params.alpha)
            if new_prims is None:
                continue
            next_id += len(new_prims)
            removed = set(p.id for p in member_prims)
            out = [p for p in out if p.id not in removed]
            out.extend(new_prims)
            s.primitive_ids = set(p.id for p in new_prims)
            for p in new_prims:
                by_id[p.id] = p
    return out


def _structure_by_id(structs: StructureSet, sid: int) -> Structure:
    for s in structs.structures:
        if s.id == sid:
            return s
    raise KeyError(sid)


def _fit_window_template(s: Structure, member_prims: list[PlanarPrimitive],
                         host: PlanarPrimitive, points: Optional[np.ndarray],
                         next_id: int, alpha: float,
                         up_axis: np.ndarray = np.array([0.0, 0, 1]),
                         ) -> Optional[list[PlanarPrimitive]]:
    """Axis-aligned cuboid in the host plane's frame, over the niche points."""
    a3 = host.plane.normal
    a2 = up_axis - float(up_axis @ a3) * a3
    if np.linalg.norm(a2) < 1e-6:
        return None
    a2 = a2 / np.linalg.norm(a2)
    a1 = np.cross(a2, a3)

    pts = []
    for p in member_prims:
        if points is not None and len(p.inliers):
            pts.append(points[p.inliers])
        else:
            pts.append(p.hull.vertices)
    P = np.vstack(pts)
    frame = np.column_stack([a1, a2, a3])
    Q = P @ frame
    if len(Q) >= 50:
        lo = np.quantile(Q, 0.02, axis=0)
        hi = np.quantile(Q, 0.98, axis=0)
    else:
        lo = Q.min(axis=0)
        hi = Q.max(axis=0)
    # the opening face lies on the host plane (the larger depth coordinate)
    hi[2] = host.plane.offset
    if np.any(hi - lo < 1e-6):
        return None

    prims = []
    axes = [a1, a2, a3]
    for k in range(3):
        for side, coord in ((0, lo[k]), (1, hi[k])):
            outward = axes[k] * (1.0 if side == 1 else -1.0)
            if k == 2 and side == 1:
                normal = a3                      # opening: oriented like the host
            else:
                normal = -outward                # others point into the void
            corners_f = []
            o1, o2 = [(1, 2), (2, 0), (0, 1)][k]
            for su, sv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                q = np.empty(3)
                q[k] = coord
                q[o1] = lo[o1] if su == 0 else hi[o1]
                q[o2] = lo[o2] if sv == 0 else hi[o2]
                corners_f.append(q)
            corners = np.array(corners_f) @ frame.T
            plane = Plane(normal, float(normal @ corners[0]))
            hull = polygon_from_ccw_loop(plane, corners)
            shape = AlphaShape.from_polygon(plane, plane.project_2d(hull.vertices),
                                            alpha)
            prim = PlanarPrimitive(next_id + len(prims), plane,
                                   np.empty(0, dtype=np.int64), hull, hull.area,
                                   shape)
            prim.template_of = s.id
            prims.append(prim)
    return prims


# ---------------------------------------------------------------------------
# Scale sorting

@dataclass
class ScaleSorted:
    s0: list[int]
    levels: list[list[int]]            # primitive ids per level, in cut order
    dropped: list[int]

    def sequence(self) -> list[int]:
        seq = list(self.s0)
        for lv in self.levels:
            seq.extend(lv)
        return seq

    def priority(self) -> dict[int, int]:
        return {pid: i for i, pid in enumerate(self.sequence())}

    def level_of(self) -> dict[int, int]:
        out = {pid: 0 for pid in self.s0}
        for k, lv in enumerate(self.levels, start=1):
            for pid in lv:
                out[pid] = k
        return out

    def to_json(self) -> dict:
        return {"s0": self.s0, "levels": self.levels, "dropped": self.dropped}

    @staticmethod
    def from_json(d: dict) -> "ScaleSorted":
        return ScaleSorted(list(d["s0"]), [list(x) for x in d["levels"]],
                           list(d["dropped"]))


def sort_primitives(primitives: list[PlanarPrimitive], structs: StructureSet,
                    clusters: list[Cluster], levels: list[LevelSet],
                    ) -> ScaleSorted:
    by_id = {p.id: p for p in primitives}
    s0 = sorted((pid for pid in structs.principal_ids if pid in by_id),
                key=lambda i: (-by_id[i].area, i))

    struct_by_id = {s.id: s for s in structs.structures}
    level_lists: list[list[int]] = []
    used: set[int] = set(s0)
    for lv in levels:
        ordered_clusters = sorted((clusters[cid] for cid in lv.cluster_ids),
                                  key=lambda c: (-c.mean_volume, c.id))
        pids: list[int] = []
        for c in ordered_clusters:
            members: set[int] = set()
            for sid in c.structure_ids:
                members |= struct_by_id[sid].primitive_ids
            members = {m for m in members if m in by_id and m not in used}
            pids.extend(sorted(members, key=lambda i: (-by_id[i].area, i)))
            used |= members
        level_lists.append(pids)

    dropped = [p.id for p in primitives if p.id not in used]
    return ScaleSorted(s0, level_lists, dropped)
