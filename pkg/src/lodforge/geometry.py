"""Geometry kernel: planes, convex polygons, convex polyhedral cells.

Everything is float64 with explicit tolerances derived from the scene
diagonal. All objects are immutable after construction; operations return
new objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class GeometryError(Exception):
    pass


class CollinearInput(GeometryError):
    pass


class DegenerateResult(GeometryError):
    pass


# ---------------------------------------------------------------------------
# Tolerances

@dataclass(frozen=True)
class Tolerances:
    """Scene-scale tolerances, derived from the bounding-box diagonal D."""

    diagonal: float

    @property
    def coplanar(self) -> float:
        return 1e-6 * self.diagonal

    @property
    def min_area(self) -> float:
        return 1e-10 * self.diagonal ** 2

    @property
    def weld(self) -> float:
        return 1e-7 * self.diagonal


# Angle below which two planes count as parallel during partitioning (deg).
COINCIDENT_ANGLE_DEG = 0.1


# ---------------------------------------------------------------------------
# Planes

@dataclass(frozen=True)
class Plane:
    """Oriented plane {x : normal . x = offset} with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or norm < 1e-12:
            raise GeometryError("degenerate plane normal")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset)

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic orthonormal in-plane axes (u, v) with u x v = normal."""
        n = self.normal
        a = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(a, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return u, v

    def project_2d(self, points: np.ndarray) -> np.ndarray:
        u, v = self.basis()
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([p @ u, p @ v])

    def lift_3d(self, points2d: np.ndarray) -> np.ndarray:
        u, v = self.basis()
        p = np.atleast_2d(np.asarray(points2d, dtype=float))
        origin = self.normal * self.offset
        return origin + np.outer(p[:, 0], u) + np.outer(p[:, 1], v)

    def to_json(self) -> dict:
        return {"normal": [float(x) for x in self.normal], "offset": float(self.offset)}

    @staticmethod
    def from_json(d: dict) -> "Plane":
        return Plane(np.array(d["normal"], dtype=float), d["offset"])


def planes_coincident(a: Plane, b: Plane, tol: float,
                      angle_deg: float = COINCIDENT_ANGLE_DEG) -> bool:
    """True when the two planes are the same surface up to orientation."""
    c = float(np.dot(a.normal, b.normal))
    if abs(c) < np.cos(np.radians(angle_deg)):
        return False
    if c >= 0.0:
        return abs(a.offset - b.offset) < tol
    return abs(a.offset + b.offset) < tol


def fit_plane(points: np.ndarray, orient_normals: Optional[np.ndarray] = None) -> Plane:
    """Total-least-squares plane through ``points``.

    The normal is the smallest principal axis of the centered covariance.
    If ``orient_normals`` is given, the plane normal is flipped to agree
    with the majority of those vectors.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise CollinearInput("need at least 3 points")
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    w, v = np.linalg.eigh(cov)
    if w[1] <= 1e-12 * max(w[2], 1e-30):
        raise CollinearInput("points are collinear")
    normal = v[:, 0]
    if orient_normals is not None and len(orient_normals):
        if float(np.sum(np.asarray(orient_normals) @ normal)) < 0.0:
            normal = -normal
    elif normal[2] < 0 or (normal[2] == 0 and (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0))):
        normal = -normal  # deterministic sign when no orientation hint
    return Plane(normal, float(normal @ centroid))


# ---------------------------------------------------------------------------
# Axis-aligned bounding box

@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo <= hi)):
            raise GeometryError("invalid bounding box")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    @property
    def volume(self) -> float:
        return float(np.prod(self.max - self.min))

    def padded(self, fraction: float = 0.01) -> "Aabb":
        pad = fraction * self.diagonal
        return Aabb(self.min - pad, self.max + pad)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=1)

    @staticmethod
    def of_points(points: np.ndarray) -> "Aabb":
        p = np.asarray(points, dtype=float)
        return Aabb(p.min(axis=0), p.max(axis=0))


# ---------------------------------------------------------------------------
# Convex polygons embedded in 3D

class Polygon3:
    """Convex planar polygon; vertices ordered CCW about ``plane.normal``."""

    __slots__ = ("plane", "vertices")

    def __init__(self, plane: Plane, vertices: np.ndarray):
        self.plane = plane
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        if len(self.vertices) < 3:
            raise DegenerateResult("polygon needs >= 3 vertices")

    @property
    def area(self) -> float:
        v = self.vertices
        s = np.zeros(3)
        for i in range(1, len(v) - 1):
            s += np.cross(v[i] - v[0], v[i + 1] - v[0])
        return float(0.5 * abs(s @ self.plane.normal))

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        acc = np.zeros(3)
        total = 0.0
        for i in range(1, len(v) - 1):
            a = 0.5 * np.linalg.norm(np.cross(v[i] - v[0], v[i + 1] - v[0]))
            acc += a * (v[0] + v[i] + v[i + 1]) / 3.0
            total += a
        if total <= 0.0:
            return v.mean(axis=0)
        return acc / total

    def reversed(self) -> "Polygon3":
        return Polygon3(self.plane.flipped(), self.vertices[::-1].copy())

    def triangles(self):
        v = self.vertices
        for i in range(1, len(v) - 1):
            yield v[0], v[i], v[i + 1]

    def to_json(self) -> dict:
        return {"plane": self.plane.to_json(),
                "vertices": [[float(c) for c in p] for p in self.vertices]}

    @staticmethod
    def from_json(d: dict) -> "Polygon3":
        return Polygon3(Plane.from_json(d["plane"]), np.array(d["vertices"], dtype=float))


def polygon_from_ccw_loop(plane: Plane, loop: np.ndarray) -> Polygon3:
    """Build a polygon ensuring CCW winding about the plane normal."""
    loop = np.asarray(loop, dtype=float)
    u, v = plane.basis()
    p2 = np.column_stack([loop @ u, loop @ v])
    signed = 0.0
    for i in range(len(p2)):
        j = (i + 1) % len(p2)
        signed += p2[i, 0] * p2[j, 1] - p2[j, 0] * p2[i, 1]
    if signed < 0:
        loop = loop[::-1]
    return Polygon3(plane, loop)


def _dedupe_loop(verts: list[np.ndarray], weld: float) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in verts:
        if not out or np.linalg.norm(p - out[-1]) > weld:
            out.append(p)
    while len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= weld:
        out.pop()
    return np.array(out) if out else np.zeros((0, 3))


def split_polygon(poly: Polygon3, cutter: Plane, tol: float,
                  min_area: float = 0.0) -> tuple[Optional[Polygon3], Optional[Polygon3]]:
    """Split a convex polygon by a plane into (front, back) parts.

    Front lies in the half-space ``cutter.normal . x >= cutter.offset``.
    Vertices within ``tol`` of the cutter are shared by both parts. A part
    whose area falls below ``min_area`` is returned as None.
    """
    verts = poly.vertices
    dist = cutter.signed_distance(verts)
    side = np.zeros(len(verts), dtype=int)
    side[dist > tol] = 1
    side[dist < -tol] = -1

    if np.all(side >= 0):
        return poly, None
    if np.all(side <= 0):
        return None, poly

    front: list[np.ndarray] = []
    back: list[np.ndarray] = []
    n = len(verts)
    for i in range(n):
        j = (i + 1) % n
        vi, vj = verts[i], verts[j]
        si, sj = side[i], side[j]
        if si >= 0:
            front.append(vi)
        if si <= 0:
            back.append(vi)
        if si * sj < 0:  # edge crosses strictly
            t = dist[i] / (dist[i] - dist[j])
            x = vi + t * (vj - vi)
            front.append(x)
            back.append(x)

    weld = max(tol, 1e-12)
    fv = _dedupe_loop(front, weld)
    bv = _dedupe_loop(back, weld)

    def mk(v):
        if len(v) < 3:
            return None
        p = Polygon3(poly.plane, v)
        return p if p.area > min_area else None

    return mk(fv), mk(bv)


# ---------------------------------------------------------------------------
# Convex polyhedral cells

class Cell:
    """Closed convex polyhedron given by its faces with outward normals."""

    __slots__ = ("id", "faces")

    def __init__(self, faces: Sequence[Polygon3], id: int = -1):
        self.faces = list(faces)
        self.id = id
        if len(self.faces) < 4:
            raise DegenerateResult("cell needs >= 4 faces")

    @property
    def volume(self) -> float:
        acc = 0.0
        for f in self.faces:
            for a, b, c in f.triangles():
                acc += np.dot(np.cross(a, b), c)
        return acc / 6.0

    @property
    def centroid(self) -> np.ndarray:
        acc = np.zeros(3)
        vol = 0.0
        for f in self.faces:
            for a, b, c in f.triangles():
                v = np.dot(np.cross(a, b), c) / 6.0
                acc += v * (a + b + c) / 4.0
                vol += v
        if vol <= 0.0:
            pts = np.vstack([f.vertices for f in self.faces])
            return pts.mean(axis=0)
        return acc / vol

    def vertex_array(self) -> np.ndarray:
        return np.vstack([f.vertices for f in self.faces])

    def chebyshev_center(self) -> np.ndarray:
        """Center of the largest inscribed ball (linear program)."""
        from scipy.optimize import linprog

        rows = []
        rhs = []
        for f in self.faces:
            n = f.plane.normal
            rows.append(np.append(n, 1.0))
            rhs.append(f.plane.offset)
        res = linprog(c=[0, 0, 0, -1], A_ub=np.array(rows), b_ub=np.array(rhs),
                      bounds=[(None, None)] * 3 + [(0, None)], method="highs")
        if not res.success:
            return self.centroid
        return np.array(res.x[:3])

    def is_closed(self, weld: float) -> bool:
        """Every edge must be shared by exactly two faces, oppositely directed."""
        return mesh_is_watertight([f.vertices for f in self.faces], weld)

    def contains_point(self, p: np.ndarray, tol: float = 0.0) -> bool:
        for f in self.faces:
            if float(f.plane.signed_distance(p.reshape(1, 3))[0]) > tol:
                return False
        return True

    def to_json(self) -> dict:
        return {"id": self.id, "faces": [f.to_json() for f in self.faces]}

    @staticmethod
    def from_json(d: dict) -> "Cell":
        return Cell([Polygon3.from_json(f) for f in d["faces"]], id=d["id"])

    @staticmethod
    def from_aabb(box: Aabb, id: int = -1) -> "Cell":
        lo, hi = box.min, box.max
        faces = []
        for axis in range(3):
            for sign, off in ((-1.0, lo[axis]), (1.0, hi[axis])):
                n = np.zeros(3)
                n[axis] = sign
                plane = Plane(n, sign * off)
                a1, a2 = [(1, 2), (2, 0), (0, 1)][axis]
                corners = []
                for s, t in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = np.empty(3)
                    p[axis] = off
                    p[a1] = lo[a1] if s == 0 else hi[a1]
                    p[a2] = lo[a2] if t == 0 else hi[a2]
                    corners.append(p)
                faces.append(polygon_from_ccw_loop(plane, np.array(corners)))
        return Cell(faces, id=id)


def split_cell(cell: Cell, cutter: Plane, tol: float, min_area: float = 0.0,
               ) -> tuple[Optional[Cell], Optional[Cell], Optional[Polygon3]]:
    """Split a convex cell by a plane.

    Returns (front, back, interface) where the interface polygon is oriented
    CCW about ``cutter.normal`` (it is the shared facet). When the plane
    misses the cell one side is None and interface is None.
    """
    front_faces: list[Polygon3] = []
    back_faces: list[Polygon3] = []
    section_pts: list[np.ndarray] = []

    for f in cell.faces:
        fp, bp = split_polygon(f, cutter, tol)
        if fp is not None:
            front_faces.append(fp)
            # points of the face lying on the cutter bound the cross-section
            dd = cutter.signed_distance(fp.vertices)
            section_pts.extend(fp.vertices[np.abs(dd) <= tol])
        if bp is not None and fp is None:
            dd = cutter.signed_distance(bp.vertices)
            section_pts.extend(bp.vertices[np.abs(dd) <= tol])
        if bp is not None:
            back_faces.append(bp)

    if len(front_faces) < 3 or len(back_faces) < 3:
        if sum(f.area for f in front_faces) >= sum(f.area for f in back_faces):
            return cell, None, None
        return None, cell, None

    pts = np.array(section_pts)
    p2 = cutter.project_2d(pts)
    # convex-hull ordering of the section points
    from scipy.spatial import ConvexHull, QhullError

    uniq_idx = _unique_rows(p2, max(tol, 1e-12))
    p2u = p2[uniq_idx]
    if len(p2u) < 3:
        # grazing contact: treat as non-splitting
        if sum(f.area for f in front_faces) >= sum(f.area for f in back_faces):
            return cell, None, None
        return None, cell, None
    try:
        hull = ConvexHull(p2u)
    except QhullError:
        if sum(f.area for f in front_faces) >= sum(f.area for f in back_faces):
            return cell, None, None
        return None, cell, None
    loop3 = cutter.lift_3d(p2u[hull.vertices])
    section = polygon_from_ccw_loop(cutter, loop3)
    if section.area <= min_area:
        if sum(f.area for f in front_faces) >= sum(f.area for f in back_faces):
            return cell, None, None
        return None, cell, None

    front = Cell(front_faces + [section.reversed()])
    back = Cell(back_faces + [Polygon3(cutter, section.vertices.copy())])
    return front, back, section


def _unique_rows(points: np.ndarray, tol: float) -> list[int]:
    seen: dict[tuple, int] = {}
    order: list[int] = []
    for i, p in enumerate(points):
        key = tuple(np.round(p / tol).astype(np.int64))
        if key not in seen:
            seen[key] = i
            order.append(i)
    return order


# ---------------------------------------------------------------------------
# Polygon soup surface checks

def plane_bbox_section(plane: Plane, box: Aabb) -> Polygon3:
    """Polygon where the plane crosses the box (the full cross-section)."""
    u, v = plane.basis()
    center = 0.5 * (box.min + box.max)
    c2 = plane.project_2d(center.reshape(1, 3))[0]
    half = 2.0 * box.diagonal
    corners = np.array([[c2[0] - half, c2[1] - half], [c2[0] + half, c2[1] - half],
                        [c2[0] + half, c2[1] + half], [c2[0] - half, c2[1] + half]])
    poly = Polygon3(plane, plane.lift_3d(corners))
    tol = 1e-9 * box.diagonal
    for axis in range(3):
        for sign, off in ((-1.0, box.min[axis]), (1.0, box.max[axis])):
            n = np.zeros(3)
            n[axis] = -sign  # keep the inner side
            cutter = Plane(n, -sign * off)
            front, _ = split_polygon(poly, cutter, tol)
            if front is None:
                raise DegenerateResult("plane misses the box")
            poly = front
    return poly


def weld_polygon_soup(polygons: Sequence[np.ndarray], weld: float,
                      ) -> tuple[np.ndarray, list[list[int]]]:
    """Merge coincident vertices across a polygon soup.

    Returns (unique vertices, per-polygon index loops). Welding clusters
    points within ``weld`` of each other, so vertices shared between faces
    need not be bitwise identical. Consecutive duplicates inside a loop are
    collapsed.
    """
    from scipy.spatial import cKDTree

    all_pts = np.vstack([np.asarray(p, float).reshape(-1, 3) for p in polygons])
    tree = cKDTree(all_pts)
    pairs = tree.query_pairs(weld, output_type="ndarray")
    parent = np.arange(len(all_pts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(all_pts))])
    uniq_roots, inverse = np.unique(roots, return_inverse=True)
    verts = all_pts[uniq_roots]

    loops: list[list[int]] = []
    k = 0
    for p in polygons:
        n = len(p)
        raw = [int(inverse[k + i]) for i in range(n)]
        k += n
        loop: list[int] = []
        for idx in raw:
            if not loop or idx != loop[-1]:
                loop.append(idx)
        while len(loop) > 1 and loop[0] == loop[-1]:
            loop.pop()
        loops.append(loop)
    return verts, loops


def mesh_is_watertight(polygons: Sequence[np.ndarray], weld: float) -> bool:
    """True when the polygon soup forms a closed, consistently oriented
    2-manifold: every undirected edge is used by exactly two faces, once in
    each direction."""
    if not len(polygons):
        return False
    _, loops = weld_polygon_soup(polygons, weld)
    use: dict[tuple[int, int], int] = {}
    for loop in loops:
        n = len(loop)
        if n < 3:
            return False
        for i in range(n):
            a, b = loop[i], loop[(i + 1) % n]
            use[(a, b)] = use.get((a, b), 0) + 1
    for (a, b), c in use.items():
        if c != 1 or use.get((b, a), 0) != 1:
            return False
    return True


def mesh_volume(polygons: Sequence[np.ndarray]) -> float:
    """Signed volume of a closed oriented polygon soup (outward normals)."""
    acc = 0.0
    for verts in polygons:
        v = np.asarray(verts, dtype=float)
        for i in range(1, len(v) - 1):
            acc += np.dot(np.cross(v[0], v[i]), v[i + 1])
    return acc / 6.0


def mesh_euler_characteristic(polygons: Sequence[np.ndarray], weld: float) -> int:
    _, loops = weld_polygon_soup(polygons, weld)
    verts: set[int] = set()
    edges: set[tuple[int, int]] = set()
    for loop in loops:
        verts.update(loop)
        n = len(loop)
        for i in range(n):
            a, b = loop[i], loop[(i + 1) % n]
            if a != b:
                edges.add((min(a, b), max(a, b)))
    return len(verts) - len(edges) + len(loops)
