"""Planar alpha shapes: bounded footprints of primitive inliers.

The footprint is the union of Delaunay triangles whose circumradius is at
most alpha (alpha is a length in meters). Larger alpha fills holes left by
occlusion or by openings such as windows.
"""

from __future__ import annotations

import numpy as np

from .geometry import GeometryError, Plane


class DegenerateProjection(GeometryError):
    pass


def triangle_circumradii(points2d: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Circumradius per triangle; degenerate triangles get +inf."""
    p = points2d[tris]
    a = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    cross = np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    area2 = cross  # twice the area
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (a * b * c) / (2.0 * area2)
    r[area2 < 1e-14] = np.inf
    return r


class AlphaShape:
    """Union of kept Delaunay triangles of projected inliers, on a plane."""

    def __init__(self, plane: Plane, points2d: np.ndarray, triangles: np.ndarray,
                 alpha: float, from_delaunay: bool = True):
        self.plane = plane
        self.points2d = np.asarray(points2d, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.alpha = float(alpha)
        self.from_delaunay = from_delaunay
        self._delaunay = None
        self._keep = None

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, plane: Plane, points2d: np.ndarray, alpha: float) -> "AlphaShape":
        from scipy.spatial import Delaunay, QhullError

        pts = np.asarray(points2d, dtype=float)
        if len(pts) < 3:
            raise DegenerateProjection("need at least 3 points")
        try:
            tri = Delaunay(pts)
        except QhullError as e:
            raise DegenerateProjection(str(e)) from e
        radii = triangle_circumradii(pts, tri.simplices)
        keep = radii <= alpha
        shape = cls(plane, pts, tri.simplices[keep], alpha)
        shape._delaunay = tri
        shape._keep = keep
        return shape

    @classmethod
    def from_polygon(cls, plane: Plane, corners2d: np.ndarray, alpha: float) -> "AlphaShape":
        """Synthetic footprint from a convex polygon (e.g. template faces)."""
        c = np.asarray(corners2d, dtype=float)
        tris = np.array([[0, i, i + 1] for i in range(1, len(c) - 1)], dtype=np.int64)
        return cls(plane, c, tris, alpha, from_delaunay=False)

    # -- queries -------------------------------------------------------------

    @property
    def area(self) -> float:
        p = self.points2d[self.triangles]
        cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        return float(0.5 * np.abs(cross).sum())

    def triangles_2d(self) -> np.ndarray:
        return self.points2d[self.triangles]

    def triangles_3d(self) -> np.ndarray:
        """(K, 3, 3) triangle vertices lifted to the plane in 3D."""
        flat = self.points2d[self.triangles].reshape(-1, 2)
        return self.plane.lift_3d(flat).reshape(-1, 3, 3)

    def _query_structures(self):
        if self.from_delaunay and self._delaunay is None:
            from scipy.spatial import Delaunay

            self._delaunay = Delaunay(self.points2d)
            radii = triangle_circumradii(self.points2d, self._delaunay.simplices)
            self._keep = radii <= self.alpha
        return self._delaunay, self._keep

    def contains_2d(self, q: np.ndarray) -> np.ndarray:
        """Vectorized membership of 2D points in the footprint."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if self.from_delaunay:
            tri, keep = self._query_structures()
            simplex = tri.find_simplex(q)
            out = np.zeros(len(q), dtype=bool)
            hit = simplex >= 0
            out[hit] = keep[simplex[hit]]
            return out
        # brute force over (few) explicit triangles
        out = np.zeros(len(q), dtype=bool)
        p = self.points2d[self.triangles]
        for a, b, c in p:
            d1 = (b[0] - a[0]) * (q[:, 1] - a[1]) - (b[1] - a[1]) * (q[:, 0] - a[0])
            d2 = (c[0] - b[0]) * (q[:, 1] - b[1]) - (c[1] - b[1]) * (q[:, 0] - b[0])
            d3 = (a[0] - c[0]) * (q[:, 1] - c[1]) - (a[1] - c[1]) * (q[:, 0] - c[0])
            neg = (d1 < -1e-12) | (d2 < -1e-12) | (d3 < -1e-12)
            pos = (d1 > 1e-12) | (d2 > 1e-12) | (d3 > 1e-12)
            out |= ~(neg & pos)
        return out

    def contains_3d(self, points: np.ndarray) -> np.ndarray:
        return self.contains_2d(self.plane.project_2d(points))

    # -- io --------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "plane": self.plane.to_json(),
            "points2d": [[float(a), float(b)] for a, b in self.points2d],
            "triangles": [[int(i) for i in t] for t in self.triangles],
            "alpha": self.alpha,
            "from_delaunay": self.from_delaunay,
        }

    @staticmethod
    def from_json(d: dict) -> "AlphaShape":
        return AlphaShape(Plane.from_json(d["plane"]),
                          np.array(d["points2d"], dtype=float).reshape(-1, 2),
                          np.array(d["triangles"], dtype=np.int64).reshape(-1, 3),
                          d["alpha"], d["from_delaunay"])
