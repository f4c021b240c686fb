"""Model quality metrics: simplification rate, traversal effort, and
bidirectional RMSE surface distance as a percentage of the box diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .meshio import InputModel, PointCloud, TriangleMesh


class UndefinedForPointCloud(Exception):
    pass


@dataclass
class ModelMetrics:
    s: Optional[float]            # triangle ratio; None for cloud input
    cuts: int
    steps: int
    e1: float                     # output -> input, % of diagonal
    e2: float                     # input -> output, % of diagonal
    faces: int

    def to_json(self) -> dict:
        return {"s": self.s, "cuts": self.cuts, "steps": self.steps,
                "e1": self.e1, "e2": self.e2, "faces": self.faces}


def triangulate_polygons(polygons: Sequence[np.ndarray]) -> np.ndarray:
    """Fan-triangulate a polygon soup into a (T, 3, 3) array."""
    tris = []
    for p in polygons:
        p = np.asarray(p, dtype=float)
        for i in range(1, len(p) - 1):
            tris.append([p[0], p[i], p[i + 1]])
    return np.array(tris)


def simplification_rate(output_polygons: Sequence[np.ndarray],
                        input_model: InputModel) -> float:
    """Triangulated output face count over input triangle count."""
    if isinstance(input_model, PointCloud):
        raise UndefinedForPointCloud("input has no triangles")
    out_tris = sum(max(0, len(p) - 2) for p in output_polygons)
    return out_tris / input_model.triangle_count


# ---------------------------------------------------------------------------
# Closest-point machinery

def _point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact distances for paired points p[i] and triangles tri[i].

    p: (N, 3); tri: (N, 3, 3). Region-based closest point on a triangle.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)                       # vertex a
    closest[m] = a[m]
    done |= m
    m = (~done) & (d3 >= 0) & (d4 <= d3)            # vertex b
    closest[m] = b[m]
    done |= m
    m = (~done) & (d6 >= 0) & (d5 <= d6)            # vertex c
    closest[m] = c[m]
    done |= m

    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)  # edge ab
    if m.any():
        t = d1[m] / (d1[m] - d3[m])
        closest[m] = a[m] + t[:, None] * ab[m]
        done |= m
    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)  # edge ac
    if m.any():
        t = d2[m] / (d2[m] - d6[m])
        closest[m] = a[m] + t[:, None] * ac[m]
        done |= m
    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)   # edge bc
    if m.any():
        t = (d4[m] - d3[m]) / ((d4[m] - d3[m]) + (d5[m] - d6[m]))
        closest[m] = b[m] + t[:, None] * (c[m] - b[m])
        done |= m

    m = ~done                                        # interior
    if m.any():
        denom = va[m] + vb[m] + vc[m]
        denom[denom == 0] = 1.0
        v = vb[m] / denom
        w = vc[m] / denom
        closest[m] = a[m] + v[:, None] * ab[m] + w[:, None] * ac[m]
    return np.linalg.norm(p - closest, axis=1)


class SurfaceDistance:
    """Closest-distance queries against a triangle set.

    A centroid k-d tree proposes candidates; exact point-triangle distances
    decide. A radius-bound fallback guarantees exactness when the nearest
    candidate set was too small.
    """

    def __init__(self, triangles: np.ndarray):
        from scipy.spatial import cKDTree

        self.tri = np.asarray(triangles, dtype=float)
        self.centroids = self.tri.mean(axis=1)
        self.radii = np.linalg.norm(
            self.tri - self.centroids[:, None, :], axis=2).max(axis=1)
        self.max_r = float(self.radii.max()) if len(self.tri) else 0.0
        self.tree = cKDTree(self.centroids)

    def query(self, points: np.ndarray, k: int = 8) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        n_tri = len(self.tri)
        k = min(k, n_tri)
        d_c, idx = self.tree.query(pts, k=k)
        if k == 1:
            d_c = d_c[:, None]
            idx = idx[:, None]
        flat_p = np.repeat(pts, k, axis=0)
        flat_t = self.tri[idx.ravel()]
        d = _point_triangle_distance(flat_p, flat_t).reshape(len(pts), k)
        best = d.min(axis=1)
        if k == n_tri:
            return best
        # exactness check: anything closer must have a centroid within
        # best + max_r; candidates covered centroids up to d_c[:, -1]
        unsure = best + self.max_r > d_c[:, -1]
        for i in np.where(unsure)[0]:
            cand = self.tree.query_ball_point(pts[i], best[i] + self.max_r)
            if len(cand) == 0:
                continue
            tri = self.tri[cand]
            d_all = _point_triangle_distance(
                np.tile(pts[i], (len(cand), 1)), tri)
            best[i] = min(best[i], float(d_all.min()))
        return best


def sample_triangles(triangles: np.ndarray, n: int, rng: np.random.Generator,
                     ) -> np.ndarray:
    """Uniform area-weighted surface samples."""
    t = np.asarray(triangles, dtype=float)
    areas = 0.5 * np.linalg.norm(
        np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValueError("degenerate surface")
    pick = rng.choice(len(t), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    tt = t[pick]
    return tt[:, 0] + u[:, None] * (tt[:, 1] - tt[:, 0]) \
        + v[:, None] * (tt[:, 2] - tt[:, 0])


def rmse(source: Union[np.ndarray, Sequence[np.ndarray]],
         target: Union[np.ndarray, "SurfaceDistance", PointCloud],
         n_samples: int, diagonal: float, seed: int = 0) -> float:
    """Root-mean-square closest distance, as % of the diagonal.

    source: (T,3,3) triangles, a polygon soup, or (N,3) points to sample
    from; target: triangle set / prebuilt SurfaceDistance / point cloud.
    """
    rng = np.random.default_rng(seed)
    src = np.asarray(source, dtype=object) if isinstance(source, list) else source
    if isinstance(source, (list, tuple)):
        tris = triangulate_polygons(source)
        pts = sample_triangles(tris, n_samples, rng)
    else:
        arr = np.asarray(source, dtype=float)
        if arr.ndim == 3:
            pts = sample_triangles(arr, n_samples, rng)
        else:
            pts = arr if len(arr) <= n_samples else \
                arr[rng.choice(len(arr), n_samples, replace=False)]

    if isinstance(target, SurfaceDistance):
        d = target.query(pts)
    elif isinstance(target, PointCloud):
        from scipy.spatial import cKDTree

        d, _ = cKDTree(target.points).query(pts)
    else:
        d = SurfaceDistance(np.asarray(target, dtype=float)).query(pts)
    return float(np.sqrt(np.mean(d ** 2)) * 100.0 / diagonal)


def bidirectional_rmse(output_polygons: Sequence[np.ndarray],
                       input_model: InputModel, diagonal: float,
                       n_samples: int = 100_000, seed: int = 0,
                       ) -> tuple[float, float]:
    """(e1, e2): output->input and input->output RMSE, % of diagonal."""
    out_tris = triangulate_polygons(output_polygons)
    if isinstance(input_model, TriangleMesh):
        in_tris = input_model.vertices[input_model.triangles]
        e1 = rmse(out_tris, in_tris, n_samples, diagonal, seed)
        e2 = rmse(in_tris, SurfaceDistance(out_tris), n_samples, diagonal,
                  seed + 1)
    else:
        e1 = rmse(out_tris, input_model, n_samples, diagonal, seed)
        e2 = rmse(input_model.points, SurfaceDistance(out_tris), n_samples,
                  diagonal, seed + 1)
    return e1, e2


def cuts_and_steps(manifest_models: list[dict], steps: int) -> tuple[int, int]:
    """Effort metrics for the model at a steps index, from the manifest."""
    entry = manifest_models[steps]
    assert entry["steps"] == steps
    return entry["cuts"], entry["steps"]


def metrics_csv(entries: list[dict]) -> str:
    cols = ["steps", "tag", "level", "cuts", "faces", "s", "e1", "e2"]
    lines = [",".join(cols)]
    for e in entries:
        lines.append(",".join("" if e.get(c) is None else str(e.get(c, ""))
                              for c in cols))
    return "\n".join(lines) + "\n"
