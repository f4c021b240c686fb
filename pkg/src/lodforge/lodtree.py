"""LOD tree: scale-ordered space partitioning with node merging, per-level
labels and diff-values, priority traversal, and watertight mesh extraction.

The tree is a BSP over the scale-sorted primitives in which subtrees cut
by a small cluster (fewer than K planes per structure) collapse into one
multi-branch node that opens atomically during traversal. Traversal pops
the frontier node with the largest volume discrepancy at the current
level; anchors are emitted when the discrepancy drains to zero, and
interpolations whenever it falls below a fraction of the last extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .detection import PlanarPrimitive
from .geometry import Aabb, mesh_volume, weld_polygon_soup
from .ioview import Cluster, ScaleSorted, StructureSet
from .partition import (
    BspNode, CellComplex, PartitionResult, build_partition, label_cells,
)


class EmptyModel(Exception):
    pass


DIFF_EPS_REL = 1e-9


@dataclass
class LodNode:
    id: int
    kind: str                       # "bsp" | "merged" | "leaf"
    volume: float
    children: list[int] = field(default_factory=list)
    cutters: list[int] = field(default_factory=list)
    level: Optional[int] = None     # level whose primitives split this node
    binary_splits: int = 0          # underlying binary cuts this node performs
    cell_id: int = -1               # leaf only
    labels: Optional[np.ndarray] = None        # (L+1,) bool
    in_leaf_vol: Optional[np.ndarray] = None   # (L+1,) m^3
    diff: Optional[np.ndarray] = None          # (L+1,) m^3

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "volume": self.volume,
                "children": self.children, "cutters": self.cutters,
                "level": self.level, "binary_splits": self.binary_splits,
                "cell_id": self.cell_id,
                "labels": None if self.labels is None else [bool(x) for x in self.labels],
                "in_leaf_vol": None if self.in_leaf_vol is None else
                    [float(x) for x in self.in_leaf_vol],
                "diff": None if self.diff is None else [float(x) for x in self.diff]}

    @staticmethod
    def from_json(d: dict) -> "LodNode":
        n = LodNode(d["id"], d["kind"], d["volume"], list(d["children"]),
                    list(d["cutters"]), d["level"], d["binary_splits"],
                    d["cell_id"])
        if d["labels"] is not None:
            n.labels = np.array(d["labels"], dtype=bool)
            n.in_leaf_vol = np.array(d["in_leaf_vol"], dtype=float)
            n.diff = np.array(d["diff"], dtype=float)
        return n


@dataclass
class LodTree:
    nodes: list[LodNode]
    root: int
    level_count: int                   # N_l
    merge_threshold: int               # K
    complex: CellComplex
    cell_to_leaf: dict[int, int]       # complex cell id -> leaf node id
    leaf_labels: Optional[np.ndarray] = None   # (L+1, n_cells) bool

    def node(self, i: int) -> LodNode:
        return self.nodes[i]

    def leaves_under(self, i: int) -> list[int]:
        out, stack = [], [i]
        while stack:
            n = self.nodes[stack.pop()]
            if n.is_leaf:
                out.append(n.id)
            else:
                stack.extend(n.children)
        return out

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes], "root": self.root,
                "level_count": self.level_count,
                "merge_threshold": self.merge_threshold,
                "complex": self.complex.to_json(),
                "cell_to_leaf": {str(k): v for k, v in self.cell_to_leaf.items()},
                "leaf_labels": None if self.leaf_labels is None else
                    [[bool(x) for x in row] for row in self.leaf_labels]}

    @staticmethod
    def from_json(d: dict) -> "LodTree":
        tree = LodTree([LodNode.from_json(n) for n in d["nodes"]], d["root"],
                       d["level_count"], d["merge_threshold"],
                       CellComplex.from_json(d["complex"]),
                       {int(k): v for k, v in d["cell_to_leaf"].items()})
        if d["leaf_labels"] is not None:
            tree.leaf_labels = np.array(d["leaf_labels"], dtype=bool)
        return tree


# ---------------------------------------------------------------------------
# Construction

def mergeable_clusters(clusters: list[Cluster], structs: StructureSet, k: int,
                       metric: str = "per-structure") -> dict[int, set[int]]:
    """Primitive sets of clusters small enough to open atomically.

    per-structure: primitives per member structure < K (the default);
    per-cluster: total cluster primitives < K.
    """
    struct_by_id = {s.id: s for s in structs.structures}
    out: dict[int, set[int]] = {}
    for c in clusters:
        prims: set[int] = set()
        for sid in c.structure_ids:
            prims |= struct_by_id[sid].primitive_ids
        if not prims:
            continue
        if metric == "per-cluster":
            small = len(prims) < k
        else:
            small = len(prims) / max(1, len(c.structure_ids)) < k
        if small:
            out[c.id] = prims
    return out


def build_lod_tree(primitives: list[PlanarPrimitive], order: ScaleSorted,
                   bbox: Aabb, clusters: list[Cluster], structs: StructureSet,
                   k: int = 10, merge_metric: str = "per-structure",
                   ) -> tuple[LodTree, PartitionResult]:
    """Scale-ordered BSP with small clusters collapsed into merged nodes."""
    by_id = {p.id: p for p in primitives}
    seq = [pid for pid in order.sequence() if pid in by_id]
    if not seq:
        raise ValueError("no primitives to partition with")
    prims = [by_id[pid] for pid in seq]
    priority = order.priority()
    level_map = order.level_of()
    part = build_partition(prims, bbox, priority=priority, levels=level_map)

    merge_sets = mergeable_clusters(clusters, structs, k, merge_metric)
    prim_merge_group: dict[int, int] = {}
    for cid, pids in merge_sets.items():
        for pid in pids:
            prim_merge_group[pid] = cid

    nodes: list[LodNode] = []

    def group_of(bnode: BspNode) -> Optional[int]:
        if bnode.cutter is None:
            return None
        return prim_merge_group.get(bnode.cutter)

    def convert(bid: int) -> int:
        b = part.nodes[bid]
        if b.is_leaf:
            n = LodNode(len(nodes), "leaf", b.volume, cell_id=b.cell_id)
            nodes.append(n)
            return n.id
        g = group_of(b)
        if g is not None:
            # collapse the maximal subtree cut by this cluster's planes
            cutters: list[int] = []
            splits = 0
            frontier: list[int] = []
            stack = [bid]
            while stack:
                cur = part.nodes[stack.pop()]
                if not cur.is_leaf and group_of(cur) == g:
                    cutters.append(cur.cutter)
                    splits += 1
                    stack.extend(reversed(cur.children))
                else:
                    frontier.append(cur.id)
            n = LodNode(len(nodes), "merged", b.volume,
                        cutters=sorted(set(cutters)), level=b.level,
                        binary_splits=splits)
            nodes.append(n)
            n.children = [convert(f) for f in frontier]
            return n.id
        n = LodNode(len(nodes), "bsp", b.volume, cutters=[b.cutter],
                    level=b.level, binary_splits=1)
        nodes.append(n)
        n.children = [convert(c) for c in b.children]
        return n.id

    root = convert(part.root)
    cell_to_leaf = {n.cell_id: n.id for n in nodes if n.is_leaf}
    n_levels = 1 + max((lv for lv in level_map.values()), default=0)
    tree = LodTree(nodes, root, n_levels - 1, k, part.complex, cell_to_leaf)
    return tree, part


def compute_labels(tree: LodTree, primitives: list[PlanarPrimitive],
                   order: ScaleSorted, rays_per_cell: int = 100,
                   in_volume_threshold: float = 0.65) -> None:
    """Per-level ray-cast labels for leaves, volume-vote labels for inner
    nodes, then per-level diff-values."""
    by_id = {p.id: p for p in primitives}
    level_map = order.level_of()
    shapes, levels = [], []
    for pid in order.sequence():
        if pid in by_id:
            shapes.append(by_id[pid].alpha_shape)
            levels.append(level_map[pid])
    labels = label_cells(tree.complex, shapes, rays_per_cell, shape_levels=levels)
    inside = labels.inside if labels.inside.ndim == 2 else labels.inside[None, :]
    n_levels = tree.level_count + 1
    if inside.shape[0] < n_levels:       # levels absent from the shape set
        pad = np.repeat(inside[-1][None, :], n_levels - inside.shape[0], axis=0)
        inside = np.vstack([inside, pad])
    tree.leaf_labels = inside
    aggregate_labels(tree, in_volume_threshold)


def aggregate_labels(tree: LodTree, in_volume_threshold: float = 0.65) -> None:
    """Bottom-up node labels and diff-values from the leaf label table.

    An inner node is inside at level k when its inside-labeled leaf volume
    exceeds the threshold share of its own volume; its diff-value at k is
    the absolute gap between its own labeled volume and that leaf volume.
    """
    inside = tree.leaf_labels
    n_levels = inside.shape[0]
    for nid in _postorder(tree):
        n = tree.nodes[nid]
        if n.is_leaf:
            lab = inside[:, n.cell_id]
            n.labels = lab.copy()
            n.in_leaf_vol = np.where(lab, n.volume, 0.0)
            n.diff = np.zeros(n_levels)
        else:
            acc = np.zeros(n_levels)
            for c in n.children:
                acc += tree.nodes[c].in_leaf_vol
            n.in_leaf_vol = acc
            n.labels = acc / max(n.volume, 1e-30) > in_volume_threshold
            n.diff = np.abs(np.where(n.labels, n.volume, 0.0) - acc)


def _postorder(tree: LodTree) -> list[int]:
    out: list[int] = []
    stack = [(tree.root, False)]
    while stack:
        nid, seen = stack.pop()
        if seen:
            out.append(nid)
            continue
        stack.append((nid, True))
        for c in tree.nodes[nid].children:
            stack.append((c, False))
    return out


# ---------------------------------------------------------------------------
# Traversal

@dataclass
class CandidateModel:
    tag: str                      # "anchor" | "interpolation"
    level: int
    steps: int
    cuts: int
    diff_sum: float
    polygons: list[np.ndarray]
    faces: int
    volume: float

    def to_manifest(self, filename: str) -> dict:
        return {"file": filename, "tag": self.tag, "level": self.level,
                "steps": self.steps, "cuts": self.cuts,
                "diff_sum": round(self.diff_sum, 9), "faces": self.faces}


@dataclass
class TraversalLog:
    expansions: list[dict] = field(default_factory=list)
    diff_sums: list[tuple[int, float]] = field(default_factory=list)  # (level, ds)
    frontier_volumes: list[float] = field(default_factory=list)
    skipped_empty: int = 0


def traverse(tree: LodTree, pct: float = 0.8,
             ) -> tuple[list[CandidateModel], TraversalLog]:
    """Open the tree in diff order, extracting anchors and interpolations."""
    eps = DIFF_EPS_REL * max(tree.nodes[tree.root].volume, 1.0)
    frontier: set[int] = {tree.root}
    level = 0
    models: list[CandidateModel] = []
    log = TraversalLog()
    cuts = 0

    def diff_sum() -> float:
        return float(sum(tree.nodes[i].diff[level] for i in frontier))

    ref = diff_sum()
    while True:
        ds = diff_sum()
        log.diff_sums.append((level, ds))
        log.frontier_volumes.append(float(sum(tree.nodes[i].volume for i in frontier)))
        if ds <= eps:
            mesh = extract_mesh(tree, frontier, level)
            if mesh is None:
                log.skipped_empty += 1
            else:
                models.append(CandidateModel("anchor", level, len(models), cuts,
                                             ds, mesh[0], mesh[1], mesh[2]))
            if level >= tree.level_count:
                break
            level += 1
            ref = diff_sum()
            continue
        best = min(frontier, key=lambda i: (-tree.nodes[i].diff[level], i))
        node = tree.nodes[best]
        frontier.remove(best)
        frontier.update(node.children)
        cuts += 1
        log.expansions.append({"node": best, "level": level,
                               "binary_splits": node.binary_splits,
                               "cutters": node.cutters})
        ds_new = diff_sum()
        if ds_new < pct * ref:
            mesh = extract_mesh(tree, frontier, level)
            if mesh is None:
                log.skipped_empty += 1
            else:
                models.append(CandidateModel("interpolation", level, len(models),
                                             cuts, ds_new, mesh[0], mesh[1],
                                             mesh[2]))
            ref = ds_new
    if not models:
        raise EmptyModel("traversal produced no non-empty model")
    return models, log


# ---------------------------------------------------------------------------
# Extraction

def extract_mesh(tree: LodTree, frontier: set[int], level: int,
                 ) -> Optional[tuple[list[np.ndarray], int, float]]:
    """Boundary between inside and outside frontier nodes at a level.

    Returns (polygons, face count, volume) or None when nothing is inside.
    Facets are oriented outward and coplanar facets of one source primitive
    merge into maximal simple polygons.
    """
    eff = np.zeros(len(tree.complex.cells), dtype=bool)
    for nid in frontier:
        n = tree.nodes[nid]
        if n.labels[level]:
            for leaf in tree.leaves_under(nid):
                eff[tree.nodes[leaf].cell_id] = True
    if not eff.any():
        return None

    weld = tree.complex.tol.weld
    diag = max(tree.complex.bbox.diagonal, 1e-9)
    groups: dict[tuple, list[np.ndarray]] = {}
    for f in tree.complex.facets:
        fin = eff[f.front] if f.front is not None else False
        bin_ = eff[f.back] if f.back is not None else False
        if fin == bin_:
            continue
        poly = f.polygon.vertices if bin_ else f.polygon.vertices[::-1]
        src = f.source_primitive if f.source_primitive is not None else -1
        pl = f.polygon.plane
        plane_key = (tuple(np.round(pl.normal, 9)), round(pl.offset / diag, 9))
        groups.setdefault((src, bin_, plane_key), []).append(poly)

    polygons: list[np.ndarray] = []
    for key, polys in sorted(groups.items(), key=lambda kv: kv[0]):
        polygons.extend(_merge_coplanar(polys, weld))

    polygons = _heal_tjunctions(polygons, weld)
    vol = mesh_volume(polygons)
    return polygons, len(polygons), vol


def _merge_coplanar(polys: list[np.ndarray], weld: float) -> list[np.ndarray]:
    """Union same-plane facets by cancelling interior edges; fall back to
    the raw tiles when the union is not a set of simple CCW loops."""
    if len(polys) == 1:
        return polys
    # neighbors may subdivide a shared straight border differently; insert
    # the group's vertices into edges they lie on so edges cancel pairwise
    healed = _heal_tjunctions(polys, weld)
    verts, loops = weld_polygon_soup(healed, weld)
    edge_count: dict[tuple[int, int], int] = {}
    for loop in loops:
        m = len(loop)
        for i in range(m):
            a, b = loop[i], loop[(i + 1) % m]
            edge_count[(a, b)] = edge_count.get((a, b), 0) + 1
    border: dict[int, list[int]] = {}
    n_border = 0
    for (a, b), c in edge_count.items():
        rev = edge_count.get((b, a), 0)
        if c == 1 and rev == 0:
            border.setdefault(a, []).append(b)
            n_border += 1
        elif c != edge_count.get((b, a), 0) and rev != 0:
            return polys                 # inconsistent tiling
        elif c > 1:
            return polys
    if any(len(v) > 1 for v in border.values()):
        return polys                     # non-manifold boundary vertex

    out: list[np.ndarray] = []
    seen: set[int] = set()
    normal = _soup_normal(polys)
    for start in sorted(border):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = border[start][0]
        guard = 0
        while cur != start:
            loop.append(cur)
            seen.add(cur)
            nxt = border.get(cur)
            if not nxt:
                return polys             # open chain
            cur = nxt[0]
            guard += 1
            if guard > n_border:
                return polys
        pts = verts[loop]
        if _loop_signed_area(pts, normal) <= 0:
            return polys                 # hole: not representable as one face
        pts = _drop_collinear(pts, weld)
        if len(pts) >= 3:
            out.append(pts)
    if not out:
        return polys
    return out


def _soup_normal(polys: list[np.ndarray]) -> np.ndarray:
    acc = np.zeros(3)
    for p in polys:
        for i in range(1, len(p) - 1):
            acc += np.cross(p[i] - p[0], p[i + 1] - p[0])
    n = np.linalg.norm(acc)
    return acc / n if n > 0 else np.array([0.0, 0, 1])


def _loop_signed_area(pts: np.ndarray, normal: np.ndarray) -> float:
    acc = np.zeros(3)
    for i in range(1, len(pts) - 1):
        acc += np.cross(pts[i] - pts[0], pts[i + 1] - pts[0])
    return float(0.5 * acc @ normal)


def _drop_collinear(pts: np.ndarray, weld: float) -> np.ndarray:
    out = []
    m = len(pts)
    for i in range(m):
        a, b, c = pts[(i - 1) % m], pts[i], pts[(i + 1) % m]
        if np.linalg.norm(np.cross(b - a, c - b)) > weld * np.linalg.norm(c - a):
            out.append(b)
    return np.array(out) if out else pts


def _heal_tjunctions(polygons: list[np.ndarray], weld: float) -> list[np.ndarray]:
    """Insert existing mesh vertices into edges they lie on."""
    if not polygons:
        return polygons
    verts, loops = weld_polygon_soup(polygons, weld)
    out = []
    for loop in loops:
        new_loop: list[int] = []
        m = len(loop)
        for i in range(m):
            ia, ib = loop[i], loop[(i + 1) % m]
            a, b = verts[ia], verts[ib]
            new_loop.append(ia)
            d = b - a
            length = np.linalg.norm(d)
            if length < weld:
                continue
            t = (verts - a) @ d / (length * length)
            on = (t > 1e-9) & (t < 1 - 1e-9)
            if not on.any():
                continue
            perp = np.linalg.norm(verts - (a + np.outer(t, d)), axis=1)
            cand = np.where(on & (perp < weld))[0]
            cand = [int(c) for c in cand if c != ia and c != ib]
            for c in sorted(cand, key=lambda j: t[j]):
                new_loop.append(c)
        out.append(verts[new_loop])
    return out


# ---------------------------------------------------------------------------
# Export

MANIFEST_VERSION = 1


def export_candidates(models: list[CandidateModel], out_dir: Path,
                      input_name: str, params: dict, level_count: int,
                      ) -> dict:
    """One OBJ per model plus a manifest the viewer and metrics consume."""
    if not models:
        raise EmptyModel("no models to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in models:
        name = f"model_{m.steps:03d}.obj"
        verts, loops = weld_polygon_soup(m.polygons, 1e-9)
        lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in verts]
        lines += ["f " + " ".join(str(i + 1) for i in loop) for loop in loops]
        (out_dir / name).write_text("\n".join(lines) + "\n")
        entries.append(m.to_manifest(name))
    manifest = {"version": MANIFEST_VERSION, "input": input_name,
                "params": params, "levels": level_count, "models": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
