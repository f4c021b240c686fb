"""OBJ and PLY input/output.

Supported inputs: OBJ triangle/polygon meshes (v/vn/f) and PLY point
clouds or meshes (ascii, binary little/big endian). Point clouds must
carry nx,ny,nz normals; meshes get face normals recomputed from winding
when none are stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .geometry import Aabb


class ParseError(Exception):
    pass


class MissingNormals(Exception):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (V, 3)
    triangles: np.ndarray         # (T, 3) int
    face_normals: np.ndarray      # (T, 3) unit, outward by winding
    source: str = ""

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def face_areas(self) -> np.ndarray:
        t = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


@dataclass
class PointCloud:
    points: np.ndarray            # (N, 3)
    normals: np.ndarray           # (N, 3) unit
    source: str = ""


InputModel = Union[TriangleMesh, PointCloud]


def compute_face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    t = vertices[triangles]
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    lens = np.linalg.norm(n, axis=1)
    lens[lens < 1e-30] = 1.0
    return n / lens[:, None]


def input_bbox(model: InputModel, pad: float = 0.01) -> Aabb:
    pts = model.vertices if isinstance(model, TriangleMesh) else model.points
    return Aabb.of_points(pts).padded(pad)


# ---------------------------------------------------------------------------
# OBJ

def load_obj(path: Path) -> TriangleMesh:
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(str(e)) from e
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: bad vertex record")
            verts.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            idx = []
            for tok in parts[1:]:
                i = tok.split("/")[0]
                v = int(i)
                idx.append(v - 1 if v > 0 else len(verts) + v)
            if len(idx) < 3:
                raise ParseError(f"{path}:{lineno}: face with <3 vertices")
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                tris.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not tris:
        raise ParseError(f"{path}: no geometry found")
    vertices = np.array(verts, dtype=float)
    triangles = np.array(tris, dtype=np.int64)
    if triangles.max() >= len(vertices) or triangles.min() < 0:
        raise ParseError(f"{path}: face index out of range")
    normals = compute_face_normals(vertices, triangles)
    return TriangleMesh(vertices, triangles, normals, source=str(path))


def save_obj(path: Path, vertices: np.ndarray, faces: list[list[int]]) -> None:
    """Write a polygonal OBJ (faces may have any vertex count >= 3)."""
    lines = []
    for v in vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in faces:
        lines.append("f " + " ".join(str(i + 1) for i in f))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path: Path) -> InputModel:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file")
    end = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end:]

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str, Optional[tuple[str, str]]]]]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", (parts[2], parts[3])))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ParseError(f"{path}: unsupported format {fmt}")

    data: dict[str, dict[str, np.ndarray]] = {}
    lists: dict[str, dict[str, list]] = {}
    if fmt == "ascii":
        try:
            tokens = body.decode("ascii").split()
        except UnicodeDecodeError as e:
            raise ParseError(f"{path}: ascii body is not ascii") from e
        pos = 0
        try:
            for name, count, props in elements:
                cols: dict[str, list] = {p[0]: [] for p in props}
                islist = {p[0]: p[1] == "list" for p in props}
                for _ in range(count):
                    for pname, ptype, plist in props:
                        if ptype == "list":
                            n = int(tokens[pos]); pos += 1
                            cols[pname].append([float(tokens[pos + i]) for i in range(n)])
                            pos += n
                        else:
                            cols[pname].append(float(tokens[pos])); pos += 1
                data[name] = {k: np.array(v) for k, v in cols.items() if not islist[k]}
                lists[name] = {k: v for k, v in cols.items() if islist[k]}
        except (IndexError, ValueError) as e:
            raise ParseError(f"{path}: truncated or malformed body") from e
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        off = 0
        for name, count, props in elements:
            has_list = any(p[1] == "list" for p in props)
            if not has_list:
                dt = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
                off += dt.itemsize * count
                data[name] = {p[0]: arr[p[0]].astype(float) for p in props}
                lists[name] = {}
            else:
                cols = {p[0]: [] for p in props}
                for _ in range(count):
                    for pname, ptype, plist in props:
                        if ptype == "list":
                            ct, it = plist
                            cdt = np.dtype(endian + _PLY_TYPES[ct])
                            n = int(np.frombuffer(body, cdt, 1, off)[0]); off += cdt.itemsize
                            idt = np.dtype(endian + _PLY_TYPES[it])
                            vals = np.frombuffer(body, idt, n, off); off += idt.itemsize * n
                            cols[pname].append(vals.tolist())
                        else:
                            pdt = np.dtype(endian + _PLY_TYPES[ptype])
                            cols[pname].append(float(np.frombuffer(body, pdt, 1, off)[0]))
                            off += pdt.itemsize
                data[name] = {k: np.array(v) for k, v in cols.items() if v and not isinstance(v[0], list)}
                lists[name] = {k: v for k, v in cols.items() if v and isinstance(v[0], list)}

    if "vertex" not in data:
        raise ParseError(f"{path}: no vertex element")
    vd = data["vertex"]
    for c in ("x", "y", "z"):
        if c not in vd:
            raise ParseError(f"{path}: vertex lacks {c}")
    pts = np.column_stack([vd["x"], vd["y"], vd["z"]]).astype(float)

    face_lists = lists.get("face", {})
    face_idx = face_lists.get("vertex_indices") or face_lists.get("vertex_index")
    if face_idx:
        tris = []
        for poly in face_idx:
            ids = [int(i) for i in poly]
            for k in range(1, len(ids) - 1):
                tris.append([ids[0], ids[k], ids[k + 1]])
        triangles = np.array(tris, dtype=np.int64)
        if triangles.max() >= len(pts):
            raise ParseError(f"{path}: face index out of range")
        return TriangleMesh(pts, triangles, compute_face_normals(pts, triangles),
                            source=str(path))

    if not all(c in vd for c in ("nx", "ny", "nz")):
        raise MissingNormals(f"{path}: point cloud lacks nx/ny/nz normals")
    normals = np.column_stack([vd["nx"], vd["ny"], vd["nz"]]).astype(float)
    lens = np.linalg.norm(normals, axis=1)
    if np.any(lens < 1e-12):
        raise MissingNormals(f"{path}: zero-length normals present")
    normals = normals / lens[:, None]
    return PointCloud(pts, normals, source=str(path))


def save_ply_cloud(path: Path, points: np.ndarray, normals: np.ndarray,
                   binary: bool = False) -> None:
    n = len(points)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}"]
    header += [f"property float {c}" for c in ("x", "y", "z", "nx", "ny", "nz")]
    header.append("end_header")
    if binary:
        arr = np.column_stack([points, normals]).astype("<f4")
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(arr.tobytes())
    else:
        rows = np.column_stack([points, normals])
        body = "\n".join(" ".join(f"{x:.9g}" for x in row) for row in rows)
        Path(path).write_text("\n".join(header) + "\n" + body + "\n")


def load_input(path: Path, fmt: Optional[str] = None) -> InputModel:
    """Load an OBJ or PLY input; format inferred from suffix when omitted."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"{p}: no such file")
    kind = (fmt or p.suffix.lstrip(".")).lower()
    if kind == "obj":
        return load_obj(p)
    if kind == "ply":
        return load_ply(p)
    raise ParseError(f"{p}: unsupported format '{kind}'")
