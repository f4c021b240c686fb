"""Deterministic synthetic building scenes with analytic ground truth.

Scenes are axis-aligned solids assembled from rectangular faces (with
rectangular holes where structures attach). Faces are grid-subdivided so
the sample-based detector sees dense, well-conditioned input. Ground truth
records exact volumes and the expected structure counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .meshio import save_ply_cloud

SCENES = ("box", "box_chimney", "box_windows", "lshape", "full_house")

_OTHER_AXES = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


@dataclass
class FaceSpec:
    """Axis-aligned face: fixed ``axis``=coord, outward normal sign*e_axis.

    ``rect`` and ``holes`` are (u0, v0, u1, v1) in the cyclic other-axes
    order (axis x -> (y, z), y -> (z, x), z -> (x, y)).
    """
    axis: int
    coord: float
    sign: float
    rect: tuple[float, float, float, float]
    holes: list[tuple[float, float, float, float]] = field(default_factory=list)


def _rects_minus_holes(rect, holes):
    u0, v0, u1, v1 = rect
    if not holes:
        return [rect]
    cuts = sorted({u0, u1, *(h[0] for h in holes), *(h[2] for h in holes)})
    out = []
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= 1e-12 or b <= u0 or a >= u1:
            continue
        mid = 0.5 * (a + b)
        blocked = sorted((h[1], h[3]) for h in holes if h[0] <= mid <= h[2])
        cur = v0
        for bv0, bv1 in blocked:
            if bv0 > cur + 1e-12:
                out.append((a, cur, b, bv0))
            cur = max(cur, bv1)
        if v1 > cur + 1e-12:
            out.append((a, cur, b, v1))
    return out


def _grid_rect(face: FaceSpec, rect, step, verts, tris):
    u0, v0, u1, v1 = rect
    a1, a2 = _OTHER_AXES[face.axis]
    nu = max(1, int(round((u1 - u0) / step)))
    nv = max(1, int(round((v1 - v0) / step)))
    us = np.linspace(u0, u1, nu + 1)
    vs = np.linspace(v0, v1, nv + 1)
    base = len(verts)
    for v in vs:
        for u in us:
            p = np.zeros(3)
            p[face.axis] = face.coord
            p[a1] = u
            p[a2] = v
            verts.append(p)
    for j in range(nv):
        for i in range(nu):
            q = [base + j * (nu + 1) + i, base + j * (nu + 1) + i + 1,
                 base + (j + 1) * (nu + 1) + i + 1, base + (j + 1) * (nu + 1) + i]
            # CCW in (a1, a2) already faces +axis; flip for -axis
            if face.sign > 0:
                tris.append([q[0], q[1], q[2]])
                tris.append([q[0], q[2], q[3]])
            else:
                tris.append([q[0], q[2], q[1]])
                tris.append([q[0], q[3], q[2]])


def mesh_from_faces(faces: list[FaceSpec], step: float) -> tuple[np.ndarray, np.ndarray]:
    verts: list[np.ndarray] = []
    tris: list[list[int]] = []
    for face in faces:
        for rect in _rects_minus_holes(face.rect, face.holes):
            _grid_rect(face, rect, step, verts, tris)
    return np.array(verts), np.array(tris, dtype=np.int64)


def box_faces(lo, hi, holes=None) -> list[FaceSpec]:
    """Outward faces of an axis box; holes: {(axis, side): [rects]}."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    holes = holes or {}
    out = []
    for axis in range(3):
        a1, a2 = _OTHER_AXES[axis]
        rect = (lo[a1], lo[a2], hi[a1], hi[a2])
        for side, coord, sign in ((0, lo[axis], -1.0), (1, hi[axis], 1.0)):
            out.append(FaceSpec(axis, coord, sign, rect,
                                list(holes.get((axis, side), []))))
    return out


def make_box_mesh(lo, hi, step=0.25):
    return mesh_from_faces(box_faces(lo, hi), step)


# ---------------------------------------------------------------------------
# Scenes

@dataclass
class SceneTruth:
    volume: float                     # solid volume, m^3
    principal_planes: int
    addons: list[float]               # addon volumes
    cutouts: list[float]              # cutout volumes
    levels: int                       # expected N_l
    csg_boxes: list[tuple[list, list, int]]  # (lo, hi, +1 add / -1 subtract)

    def to_json(self) -> dict:
        return {"volume": self.volume, "principal_planes": self.principal_planes,
                "addons": self.addons, "cutouts": self.cutouts,
                "levels": self.levels,
                "csg_boxes": [[list(l), list(h), s] for l, h, s in self.csg_boxes]}

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Analytic membership of points in the solid (adds then cuts)."""
        p = np.atleast_2d(points)
        inside = np.zeros(len(p), dtype=bool)
        for lo, hi, sign in self.csg_boxes:
            in_box = np.all((p >= np.array(lo)) & (p <= np.array(hi)), axis=1)
            if sign > 0:
                inside |= in_box
            else:
                inside &= ~in_box
        return inside


HOUSE_LO = np.array([0.0, 0.0, 0.0])
HOUSE_HI = np.array([10.0, 6.0, 4.0])
CHIMNEY_LO = np.array([4.0, 2.0, 4.0])
CHIMNEY_HI = np.array([6.0, 4.0, 5.5])
WINDOW_W, WINDOW_H, WINDOW_D = 1.5, 1.5, 0.4
WINDOW_Z = (1.2, 2.7)
WINDOW_XS = (0.7, 3.05, 5.4, 7.75)


def _chimney_faces(base_top: float) -> list[FaceSpec]:
    lo, hi = CHIMNEY_LO, CHIMNEY_HI
    faces = []
    # four sides
    faces.append(FaceSpec(0, lo[0], -1.0, (lo[1], base_top, hi[1], hi[2])))
    faces.append(FaceSpec(0, hi[0], 1.0, (lo[1], base_top, hi[1], hi[2])))
    faces.append(FaceSpec(1, lo[1], -1.0, (base_top, lo[0], hi[2], hi[0])))
    faces.append(FaceSpec(1, hi[1], 1.0, (base_top, lo[0], hi[2], hi[0])))
    # top
    faces.append(FaceSpec(2, hi[2], 1.0, (lo[0], lo[1], hi[0], hi[1])))
    return faces


def _window_faces(x0: float) -> list[FaceSpec]:
    """Niche recessed into the wall y=0 (void spans y in [0, depth])."""
    x1 = x0 + WINDOW_W
    z0, z1 = WINDOW_Z
    d = WINDOW_D
    faces = []
    # back panel: solid behind it, normal points out of the solid (toward -y)
    faces.append(FaceSpec(1, d, -1.0, (z0, x0, z1, x1)))
    # side reveals: normals point into the niche void
    faces.append(FaceSpec(0, x0, 1.0, (0.0, z0, d, z1)))
    faces.append(FaceSpec(0, x1, -1.0, (0.0, z0, d, z1)))
    # top / bottom reveals
    faces.append(FaceSpec(2, z0, 1.0, (x0, 0.0, x1, d)))
    faces.append(FaceSpec(2, z1, -1.0, (x0, 0.0, x1, d)))
    return faces


def scene_box() -> tuple[list[FaceSpec], SceneTruth]:
    faces = box_faces(np.zeros(3), np.ones(3))
    truth = SceneTruth(1.0, 6, [], [], 0, [([0, 0, 0], [1, 1, 1], 1)])
    return faces, truth


def scene_lshape() -> tuple[list[FaceSpec], SceneTruth]:
    # union of [0,4]x[0,4]x[0,2] and [0,4]x[0,2]x[2,4]
    faces = [
        FaceSpec(2, 0.0, -1.0, (0, 0, 4, 4)),            # bottom
        FaceSpec(2, 2.0, 1.0, (0, 2, 4, 4)),             # lower top (y in [2,4])
        FaceSpec(2, 4.0, 1.0, (0, 0, 4, 2)),             # upper top (y in [0,2])
        FaceSpec(1, 0.0, -1.0, (0, 0, 4, 4)),            # wall y=0, full height
        FaceSpec(1, 4.0, 1.0, (0, 0, 2, 4)),             # wall y=4, z in [0,2]
        FaceSpec(1, 2.0, 1.0, (2, 0, 4, 4)),             # step wall y=2, z in [2,4]
        FaceSpec(0, 0.0, -1.0, (0, 0, 4, 2)),            # x=0, lower band
        FaceSpec(0, 0.0, -1.0, (0, 2, 2, 4)),            # x=0, upper band
        FaceSpec(0, 4.0, 1.0, (0, 0, 4, 2)),
        FaceSpec(0, 4.0, 1.0, (0, 2, 2, 4)),
    ]
    truth = SceneTruth(48.0, 8, [], [], 0,
                       [([0, 0, 0], [4, 4, 2], 1), ([0, 0, 2], [4, 2, 4], 1)])
    return faces, truth


def scene_box_chimney() -> tuple[list[FaceSpec], SceneTruth]:
    roof_hole = (CHIMNEY_LO[0], CHIMNEY_LO[1], CHIMNEY_HI[0], CHIMNEY_HI[1])
    faces = box_faces(HOUSE_LO, HOUSE_HI, holes={(2, 1): [roof_hole]})
    faces += _chimney_faces(HOUSE_HI[2])
    vol_chimney = float(np.prod(CHIMNEY_HI - CHIMNEY_LO))
    truth = SceneTruth(240.0 + vol_chimney, 6, [vol_chimney], [], 1,
                       [(list(HOUSE_LO), list(HOUSE_HI), 1),
                        (list(CHIMNEY_LO), list(CHIMNEY_HI), 1)])
    return faces, truth


def _window_holes():
    z0, z1 = WINDOW_Z
    return [(x0, z0, x0 + WINDOW_W, z1) for x0 in WINDOW_XS]


def scene_box_windows() -> tuple[list[FaceSpec], SceneTruth]:
    faces = box_faces(HOUSE_LO, HOUSE_HI, holes={(1, 0): _window_holes()})
    for x0 in WINDOW_XS:
        faces += _window_faces(x0)
    wvol = WINDOW_W * WINDOW_H * WINDOW_D
    csg = [(list(HOUSE_LO), list(HOUSE_HI), 1)]
    for x0 in WINDOW_XS:
        csg.append(([x0, 0.0, WINDOW_Z[0]],
                    [x0 + WINDOW_W, WINDOW_D, WINDOW_Z[1]], -1))
    truth = SceneTruth(240.0 - 4 * wvol, 6, [], [wvol] * 4, 1, csg)
    return faces, truth


def scene_single_window() -> tuple[list[FaceSpec], SceneTruth]:
    """One 5-plane window niche; exercises the node-merge rule."""
    x0 = WINDOW_XS[1]
    hole = (x0, WINDOW_Z[0], x0 + WINDOW_W, WINDOW_Z[1])
    faces = box_faces(HOUSE_LO, HOUSE_HI, holes={(1, 0): [hole]})
    faces += _window_faces(x0)
    wvol = WINDOW_W * WINDOW_H * WINDOW_D
    truth = SceneTruth(240.0 - wvol, 6, [], [wvol], 1,
                       [(list(HOUSE_LO), list(HOUSE_HI), 1),
                        ([x0, 0.0, WINDOW_Z[0]],
                         [x0 + WINDOW_W, WINDOW_D, WINDOW_Z[1]], -1)])
    return faces, truth


def scene_full_house() -> tuple[list[FaceSpec], SceneTruth]:
    roof_hole = (CHIMNEY_LO[0], CHIMNEY_LO[1], CHIMNEY_HI[0], CHIMNEY_HI[1])
    faces = box_faces(HOUSE_LO, HOUSE_HI,
                      holes={(2, 1): [roof_hole], (1, 0): _window_holes()})
    faces += _chimney_faces(HOUSE_HI[2])
    for x0 in WINDOW_XS:
        faces += _window_faces(x0)
    vol_chimney = float(np.prod(CHIMNEY_HI - CHIMNEY_LO))
    wvol = WINDOW_W * WINDOW_H * WINDOW_D
    csg = [(list(HOUSE_LO), list(HOUSE_HI), 1)]
    for x0 in WINDOW_XS:
        csg.append(([x0, 0.0, WINDOW_Z[0]],
                    [x0 + WINDOW_W, WINDOW_D, WINDOW_Z[1]], -1))
    csg.append((list(CHIMNEY_LO), list(CHIMNEY_HI), 1))
    truth = SceneTruth(240.0 + vol_chimney - 4 * wvol, 6, [vol_chimney],
                       [wvol] * 4, 2, csg)
    return faces, truth


_BUILDERS = {
    "box": scene_box,
    "box_chimney": scene_box_chimney,
    "box_windows": scene_box_windows,
    "lshape": scene_lshape,
    "full_house": scene_full_house,
    "single_window": scene_single_window,
}


def build_scene(name: str, step: float = 0.25):
    """(vertices, triangles, truth) for a named scene."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown scene '{name}'")
    faces, truth = _BUILDERS[name]()
    verts, tris = mesh_from_faces(faces, step)
    return verts, tris, truth


def scene_cloud(name: str, noise_sigma: float, seed: int = 0, step: float = 0.15):
    """Noisy point-cloud variant: jittered face samples with exact normals."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown scene '{name}'")
    faces, truth = _BUILDERS[name]()
    rng = np.random.default_rng(seed)
    pts, nrm = [], []
    for face in faces:
        a1, a2 = _OTHER_AXES[face.axis]
        for (u0, v0, u1, v1) in _rects_minus_holes(face.rect, face.holes):
            nu = max(2, int(round((u1 - u0) / step)) + 1)
            nv = max(2, int(round((v1 - v0) / step)) + 1)
            us, vs = np.meshgrid(np.linspace(u0, u1, nu), np.linspace(v0, v1, nv))
            p = np.zeros((us.size, 3))
            p[:, face.axis] = face.coord
            p[:, a1] = us.ravel()
            p[:, a2] = vs.ravel()
            n = np.zeros(3)
            n[face.axis] = face.sign
            pts.append(p)
            nrm.append(np.tile(n, (len(p), 1)))
    points = np.vstack(pts)
    normals = np.vstack(nrm)
    if noise_sigma > 0:
        points = points + rng.normal(0.0, noise_sigma, points.shape)
    return points, normals, truth


def write_obj_mesh(path: Path, verts: np.ndarray, tris: np.ndarray) -> None:
    from .meshio import save_obj

    save_obj(path, verts, [list(map(int, t)) for t in tris])


def write_scene(path: Path, name: str, noise_sigma: float = 0.0,
                seed: int = 0, step: Optional[float] = None):
    """Write a scene to disk (OBJ mesh, or PLY cloud when noisy).

    Returns (file path, truth).
    """
    path = Path(path)
    if noise_sigma > 0:
        points, normals, truth = scene_cloud(name, noise_sigma, seed,
                                             step or 0.15)
        out = path.with_suffix(".ply")
        save_ply_cloud(out, points, normals, binary=True)
        return out, truth
    verts, tris, truth = build_scene(name, step or 0.25)
    out = path.with_suffix(".obj")
    write_obj_mesh(out, verts, tris)
    return out, truth
