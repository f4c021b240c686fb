"""Planar primitive detection by region growing over surface samples.

Meshes are converted to a sample set (vertices with area-weighted normals
plus triangle centroids with face normals) so one detector serves both
input kinds. Seeds are visited in descending local planarity; growth
accepts a neighbor when it is within ``epsilon`` of the current plane and
its normal deviates less than ``theta`` from the plane normal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .alphashape import AlphaShape, DegenerateProjection
from .geometry import CollinearInput, Plane, Polygon3, fit_plane, polygon_from_ccw_loop
from .meshio import InputModel, PointCloud, TriangleMesh


class NoPrimitives(Exception):
    pass


REFIT_INTERVAL = 32
SEED_NEIGHBORS = 16


@dataclass
class DetectParams:
    epsilon: float = 0.15      # max point-to-plane distance, meters
    theta: float = 40.0        # max normal deviation, degrees
    sigma: int = 15            # min samples per primitive
    alpha: float = 7.0         # alpha-shape radius, meters

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be > 0")
        if not (0 < self.theta < 90):
            raise ValueError("theta must be in (0, 90) degrees")
        if self.sigma < 3:
            raise ValueError("sigma must be >= 3")
        if not (self.alpha > 0):
            raise ValueError("alpha must be > 0")

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "theta": self.theta,
                "sigma": self.sigma, "alpha": self.alpha}

    @staticmethod
    def from_json(d: dict) -> "DetectParams":
        return DetectParams(d["epsilon"], d["theta"], d["sigma"], d["alpha"])


@dataclass
class PlanarPrimitive:
    id: int
    plane: Plane
    inliers: np.ndarray               # sample indices
    hull: Polygon3
    area: float                       # convex hull area, m^2
    alpha_shape: AlphaShape
    template_of: Optional[int] = None  # structure id when this is a fitted face

    def to_json(self) -> dict:
        return {"id": self.id, "plane": self.plane.to_json(),
                "inliers": [int(i) for i in self.inliers],
                "hull": self.hull.to_json(), "area": self.area,
                "alpha_shape": self.alpha_shape.to_json(),
                "template_of": self.template_of}

    @staticmethod
    def from_json(d: dict) -> "PlanarPrimitive":
        return PlanarPrimitive(d["id"], Plane.from_json(d["plane"]),
                               np.array(d["inliers"], dtype=np.int64),
                               Polygon3.from_json(d["hull"]), d["area"],
                               AlphaShape.from_json(d["alpha_shape"]),
                               d.get("template_of"))


def sample_surface(model: InputModel) -> tuple[np.ndarray, np.ndarray]:
    """Unify mesh and cloud inputs into (positions, unit normals)."""
    if isinstance(model, PointCloud):
        return model.points, model.normals
    mesh: TriangleMesh = model
    areas = mesh.face_areas()
    vnorm = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(vnorm, mesh.triangles[:, k], mesh.face_normals * areas[:, None])
    lens = np.linalg.norm(vnorm, axis=1)
    lens[lens < 1e-30] = 1.0
    vnorm /= lens[:, None]
    pts = np.vstack([mesh.vertices, mesh.face_centroids()])
    nrm = np.vstack([vnorm, mesh.face_normals])
    return pts, nrm


def _seed_scores(points: np.ndarray, tree) -> np.ndarray:
    """Local planarity: 1 / (1 + RMS residual of a plane fit to 16-NN)."""
    k = min(SEED_NEIGHBORS, len(points))
    _, idx = tree.query(points, k=k)
    nbrs = points[idx]                       # (N, k, 3)
    mean = nbrs.mean(axis=1, keepdims=True)
    d = nbrs - mean
    cov = np.einsum("nki,nkj->nij", d, d) / k
    w = np.linalg.eigvalsh(cov)              # ascending
    rms = np.sqrt(np.maximum(w[:, 0], 0.0))
    return 1.0 / (1.0 + rms)


def detect_planes(model: InputModel, params: DetectParams,
                  ) -> tuple[list[PlanarPrimitive], np.ndarray, np.ndarray]:
    """Detect planar primitives; returns (primitives, samples, normals).

    Primitives have pairwise-disjoint inlier sets and are emitted in
    detection order. Raises NoPrimitives when nothing reaches sigma inliers.
    """
    from scipy.spatial import cKDTree

    points, normals = sample_surface(model)
    n = len(points)
    if n < params.sigma:
        raise NoPrimitives(f"only {n} samples, sigma={params.sigma}")
    tree = cKDTree(points)
    scores = _seed_scores(points, tree)
    k = min(SEED_NEIGHBORS, n)
    _, knn = tree.query(points, k=k)

    cos_theta = np.cos(np.radians(params.theta))
    assigned = np.full(n, -1, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    primitives: list[PlanarPrimitive] = []

    for seed in order:
        if assigned[seed] >= 0:
            continue
        try:
            plane = fit_plane(points[knn[seed]], orient_normals=normals[seed:seed + 1])
        except CollinearInput:
            continue
        if abs(float(plane.signed_distance(points[seed].reshape(1, 3))[0])) > params.epsilon:
            continue
        if float(normals[seed] @ plane.normal) < cos_theta:
            continue

        members = [int(seed)]
        assigned[seed] = len(primitives)
        queue = deque(int(j) for j in knn[seed] if j != seed)
        since_refit = 0
        enqueued = set(int(j) for j in knn[seed])
        enqueued.add(int(seed))
        while queue:
            j = queue.popleft()
            if assigned[j] >= 0:
                continue
            if abs(float(plane.signed_distance(points[j].reshape(1, 3))[0])) > params.epsilon:
                continue
            if float(normals[j] @ plane.normal) < cos_theta:
                continue
            assigned[j] = len(primitives)
            members.append(j)
            since_refit += 1
            if since_refit >= REFIT_INTERVAL:
                since_refit = 0
                try:
                    plane = fit_plane(points[members], orient_normals=normals[members])
                except CollinearInput:
                    pass
            for nb in knn[j]:
                nb = int(nb)
                if assigned[nb] < 0 and nb not in enqueued:
                    enqueued.add(nb)
                    queue.append(nb)

        if len(members) < params.sigma:
            for m in members:
                assigned[m] = -1
            continue

        member_arr = np.array(sorted(members), dtype=np.int64)
        try:
            plane = fit_plane(points[member_arr], orient_normals=normals[member_arr])
        except CollinearInput:
            for m in members:
                assigned[m] = -1
            continue
        prim = _finalize_primitive(len(primitives), plane, member_arr, points, params.alpha)
        if prim is None:
            for m in members:
                assigned[m] = -1
            continue
        for m in members:
            assigned[m] = prim.id
        primitives.append(prim)

    if not primitives:
        raise NoPrimitives("no primitive reached sigma inliers")
    return primitives, points, normals


def _finalize_primitive(pid: int, plane: Plane, inliers: np.ndarray,
                        points: np.ndarray, alpha: float) -> Optional[PlanarPrimitive]:
    from scipy.spatial import ConvexHull, QhullError

    proj = plane.project_2d(points[inliers])
    try:
        hull2 = ConvexHull(proj)
    except QhullError:
        return None
    loop = plane.lift_3d(proj[hull2.vertices])
    hull = polygon_from_ccw_loop(plane, loop)
    try:
        shape = AlphaShape.build(plane, proj, alpha)
    except DegenerateProjection:
        return None
    if shape.triangles.shape[0] == 0:
        return None
    return PlanarPrimitive(pid, plane, inliers, hull, hull.area, shape)


def synthetic_primitive(pid: int, plane: Plane, bbox, alpha_shape=None,
                        hull: Optional[Polygon3] = None) -> PlanarPrimitive:
    """Primitive from a bare plane: hull spans the box unless given.

    Used for template faces and for partition tests that reason about full
    plane arrangements. The footprint defaults to the hull polygon.
    """
    from .geometry import plane_bbox_section

    if hull is None:
        hull = plane_bbox_section(plane, bbox)
    if alpha_shape is None:
        corners2d = plane.project_2d(hull.vertices)
        alpha_shape = AlphaShape.from_polygon(plane, corners2d, alpha=1e9)
    return PlanarPrimitive(pid, plane, np.empty(0, dtype=np.int64), hull,
                           hull.area, alpha_shape)


def compute_alpha_shape(prim: PlanarPrimitive, alpha: float,
                        points: np.ndarray) -> AlphaShape:
    """Recompute a primitive's footprint at a different alpha."""
    if len(prim.inliers) < 3:
        raise DegenerateProjection("primitive has fewer than 3 inliers")
    proj = prim.plane.project_2d(points[prim.inliers])
    return AlphaShape.build(prim.plane, proj, alpha)
