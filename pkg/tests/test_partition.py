import numpy as np
import pytest

from lodforge.alphashape import AlphaShape
from lodforge.detection import synthetic_primitive
from lodforge.geometry import Aabb, Plane, Polygon3, plane_bbox_section
from lodforge.partition import (
    NotCoplanar, build_partition, facet_alpha_coverage, fibonacci_sphere,
    label_cells,
)

UNIT_BBOX = Aabb(np.zeros(3), np.ones(3)).padded(0.05)


def axis_plane(axis, offset, sign=1.0):
    n = np.zeros(3)
    n[axis] = sign
    return Plane(n, sign * offset)


def cube_face_planes(lo=0.0, hi=1.0):
    """Outward-oriented planes of the axis cube [lo,hi]^3."""
    planes = []
    for axis in range(3):
        planes.append(axis_plane(axis, lo, sign=-1.0))
        planes.append(axis_plane(axis, hi, sign=1.0))
    return planes


def spanning_primitives(planes, bbox):
    """Primitives whose hulls span the whole box (full-arrangement cuts)."""
    return [synthetic_primitive(i, pl, bbox) for i, pl in enumerate(planes)]


def cube_face_primitives(bbox, lo=0.0, hi=1.0):
    """Spanning hulls, but footprints limited to the actual cube faces."""
    prims = []
    for i, pl in enumerate(cube_face_planes(lo, hi)):
        face = plane_bbox_section(pl, Aabb(np.full(3, lo), np.full(3, hi)))
        shape = AlphaShape.from_polygon(pl, pl.project_2d(face.vertices), alpha=1e9)
        prims.append(synthetic_primitive(i, pl, bbox, alpha_shape=shape))
    return prims


def sign_vector_cell_count(planes, bbox, n=200_000, seed=0):
    """Arrangement oracle: distinct sign vectors of uniform samples."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(bbox.min, bbox.max, size=(n, 3))
    signs = np.column_stack([p.signed_distance(pts) > 0 for p in planes])
    return len(np.unique(signs, axis=0))


def _sign_cell_nonempty(planes, sign_vec, bbox, margin=1e-7):
    """LP feasibility of the open sign region inside the box."""
    from scipy.optimize import linprog

    A, b = [], []
    for p, s in zip(planes, sign_vec):
        # s True: n.x - d > 0  ->  -n.x + margin <= -d
        if s:
            A.append(np.append(-p.normal, 1.0))
            b.append(-p.offset)
        else:
            A.append(np.append(p.normal, 1.0))
            b.append(p.offset)
    res = linprog(c=[0, 0, 0, -1], A_ub=np.array(A), b_ub=np.array(b),
                  bounds=[(bbox.min[i], bbox.max[i]) for i in range(3)] + [(0, 1)],
                  method="highs")
    return res.success and res.x[3] > margin


class TestBuildPartition:
    def test_cube_planes_27_cells(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX, compute_coverage=False)
        assert len(res.complex.cells) == 27
        # exactly one cell fully inside the cube
        inside = [c for c in res.complex.cells
                  if np.all(c.vertex_array() >= -1e-9) and np.all(c.vertex_array() <= 1 + 1e-9)]
        assert len(inside) == 1
        # cut count: 6 first cuts plus fragment-induced splits = cells - 1
        assert len(res.trace) == 26
        oracle = sign_vector_cell_count([p.plane for p in prims], UNIT_BBOX)
        assert len(res.complex.cells) == oracle

    def test_volume_conservation(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX, compute_coverage=False)
        assert res.complex.total_volume() == pytest.approx(UNIT_BBOX.volume, rel=1e-5)

    def test_single_plane(self):
        plane = axis_plane(2, 0.5)
        world = np.array([[0.2, 0.2, 0.5], [0.8, 0.2, 0.5],
                          [0.8, 0.8, 0.5], [0.2, 0.8, 0.5]])
        shape = AlphaShape.from_polygon(plane, plane.project_2d(world), alpha=1e9)
        prim = synthetic_primitive(0, plane, UNIT_BBOX, alpha_shape=shape)
        res = build_partition([prim], UNIT_BBOX)
        assert len(res.complex.cells) == 2
        internal = [f for f in res.complex.facets if f.front is not None and f.back is not None]
        assert len(internal) == 1
        f = internal[0]
        # covered fraction equals the footprint share of the cross-section
        frac = 0.36 / f.polygon.area
        assert f.coverage[0] == pytest.approx(frac, abs=1e-3)
        assert f.alpha_covered == (frac >= 0.5)

    def test_random_planes_match_arrangement_oracle(self):
        # Arrangement oracle in two halves: sampled sign vectors prove no
        # cell is missing; LP feasibility proves every produced cell is a
        # real, full-dimensional arrangement cell; distinctness rules out
        # duplicates. Together: cell set == arrangement cell set.
        rng = np.random.default_rng(42)
        bbox = Aabb(np.zeros(3), np.ones(3)).padded(0.02)
        planes = []
        for _ in range(10):
            n = rng.normal(size=3)
            point = rng.uniform(0.2, 0.8, 3)
            planes.append(Plane(n, float(n / np.linalg.norm(n) @ point)))
        prims = spanning_primitives(planes, bbox)
        res = build_partition(prims, bbox, compute_coverage=False)
        assert res.complex.total_volume() == pytest.approx(bbox.volume, rel=1e-5)

        cell_vecs = set()
        for c in res.complex.cells:
            centroid = c.centroid.reshape(1, 3)
            sv = tuple(bool(p.signed_distance(centroid)[0] > 0) for p in planes)
            assert sv not in cell_vecs, "duplicate arrangement cell"
            cell_vecs.add(sv)
            assert _sign_cell_nonempty(planes, sv, bbox), "phantom cell"

        pts = np.random.default_rng(0).uniform(bbox.min, bbox.max, size=(1_000_000, 3))
        signs = np.column_stack([p.signed_distance(pts) > 0 for p in planes])
        sampled = set(map(tuple, np.unique(signs, axis=0).tolist()))
        assert sampled <= cell_vecs
        # the sampler sees every cell large enough to matter
        assert len(sampled) >= 0.9 * len(cell_vecs)

    def test_local_cuts_only(self):
        # a small hull in one corner must not split the far side of the box
        plane = axis_plane(0, 0.5)
        quad = np.array([[0.0, 0.0], [0.2, 0.0], [0.2, 0.2], [0.0, 0.2]])
        hull = Polygon3(plane, plane.lift_3d(quad))
        prim = synthetic_primitive(0, plane, UNIT_BBOX, hull=hull)
        res = build_partition([prim], UNIT_BBOX)
        assert len(res.complex.cells) == 2
        assert len(res.trace) == 1

    def test_facet_adjacency_closes_cells(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX, compute_coverage=False)
        cf = res.complex.cell_facets()
        from lodforge.geometry import mesh_is_watertight

        for cell in res.complex.cells:
            polys = []
            for fid in cf[cell.id]:
                f = res.complex.facets[fid]
                # orient facet outward for this cell
                if f.back == cell.id:
                    polys.append(f.polygon.vertices)
                else:
                    polys.append(f.polygon.vertices[::-1])
            assert mesh_is_watertight(polys, 1e-9)


class TestCoverage:
    def test_full_and_zero(self):
        plane = axis_plane(2, 0.0)
        big = AlphaShape.from_polygon(plane, np.array([[-5., -5], [5, -5], [5, 5], [-5, 5]]), 1e9)
        facet = Polygon3(plane, plane.lift_3d(np.array([[0., 0], [1, 0], [1, 1], [0, 1]])))
        assert facet_alpha_coverage(facet, big, 1e-6) == pytest.approx(1.0)
        far = AlphaShape.from_polygon(plane, np.array([[10., 10], [11, 10], [11, 11], [10, 11]]), 1e9)
        assert facet_alpha_coverage(facet, far, 1e-6) == pytest.approx(0.0)

    def test_half_overlap(self):
        plane = axis_plane(2, 0.0)
        half = AlphaShape.from_polygon(plane, np.array([[0., 0], [0.5, 0], [0.5, 1], [0, 1]]), 1e9)
        facet = Polygon3(plane, plane.lift_3d(np.array([[0., 0], [1, 0], [1, 1], [0, 1]])))
        assert facet_alpha_coverage(facet, half, 1e-6) == pytest.approx(0.5, abs=1e-3)

    def test_half_overlap_matches_raster_oracle(self):
        plane = axis_plane(2, 0.0)
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, size=(400, 2)) * [0.63, 1.0]
        shape = AlphaShape.build(plane, pts, alpha=0.2)
        facet = Polygon3(plane, plane.lift_3d(np.array([[0., 0], [1, 0], [1, 1], [0, 1]])))
        exact = facet_alpha_coverage(facet, shape, 1e-6)
        # raster oracle
        px = 0.002
        xs = np.arange(px / 2, 1, px)
        gx, gy = np.meshgrid(xs, xs)
        q = np.column_stack([gx.ravel(), gy.ravel()])
        frac = shape.contains_2d(q).mean()
        assert exact == pytest.approx(frac, abs=2e-3)

    def test_not_coplanar(self):
        plane = axis_plane(2, 0.0)
        other = axis_plane(2, 1.0)
        shape = AlphaShape.from_polygon(other, np.array([[0., 0], [1, 0], [1, 1], [0, 1]]), 1e9)
        facet = Polygon3(plane, plane.lift_3d(np.array([[0., 0], [1, 0], [1, 1], [0, 1]])))
        with pytest.raises(NotCoplanar):
            facet_alpha_coverage(facet, shape, 1e-6)


class TestLabeling:
    def test_fibonacci_lattice(self):
        d = fibonacci_sphere(100)
        assert d.shape == (100, 3)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
        assert np.linalg.norm(d.mean(axis=0)) < 0.05

    def test_cube_27_labels(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX)
        shapes = [p.alpha_shape for p in prims]
        labels = label_cells(res.complex, shapes, rays_per_cell=100)
        inside_flags = []
        for c in res.complex.cells:
            pts = c.vertex_array()
            inside_flags.append(bool(np.all(pts >= -1e-9) and np.all(pts <= 1 + 1e-9)))
        assert labels.inside.sum() == 1
        for cid, flag in enumerate(inside_flags):
            assert labels.inside[cid] == flag

    def test_open_halfspace_labels_out(self):
        plane = axis_plane(2, 0.5)
        prim = synthetic_primitive(0, plane, UNIT_BBOX)
        res = build_partition([prim], UNIT_BBOX)
        labels = label_cells(res.complex, [prim.alpha_shape], rays_per_cell=100)
        assert not labels.inside.any()

    def test_lshape_matches_csg_oracle(self):
        from lodforge.synth import scene_lshape

        faces, truth = scene_lshape()
        # primitives straight from the analytic faces: spanning hulls,
        # footprints = exact face rectangles (possibly multiple per plane)
        groups = {}
        for fs in faces:
            n = np.zeros(3)
            n[fs.axis] = fs.sign
            key = (fs.axis, fs.sign, fs.coord)
            groups.setdefault(key, []).append(fs)
        bbox = Aabb(np.zeros(3), np.array([4.0, 4.0, 4.0])).padded(0.03)
        prims = []
        from lodforge.synth import _OTHER_AXES

        for i, (key, fss) in enumerate(sorted(groups.items())):
            axis, sign, coord = key
            n = np.zeros(3)
            n[axis] = sign
            plane = Plane(n, sign * coord)
            pts2 = []
            tris = []
            for fs in fss:
                a1, a2 = _OTHER_AXES[axis]
                u0, v0, u1, v1 = fs.rect
                base = len(pts2)
                for (u, v) in ((u0, v0), (u1, v0), (u1, v1), (u0, v1)):
                    p = np.zeros(3)
                    p[axis] = coord
                    p[a1] = u
                    p[a2] = v
                    pts2.append(plane.project_2d(p.reshape(1, 3))[0])
                tris += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
            shape = AlphaShape(plane, np.array(pts2), np.array(tris), alpha=1e9,
                               from_delaunay=False)
            prims.append(synthetic_primitive(i, plane, bbox, alpha_shape=shape))
        res = build_partition(prims, bbox)
        labels = label_cells(res.complex, [p.alpha_shape for p in prims],
                             rays_per_cell=100)
        for cell in res.complex.cells:
            expect = bool(truth.contains(cell.centroid.reshape(1, 3))[0])
            assert labels.inside[cell.id] == expect, f"cell {cell.id} at {cell.centroid}"

    def test_labeling_deterministic(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX)
        shapes = [p.alpha_shape for p in prims]
        a = label_cells(res.complex, shapes)
        b = label_cells(res.complex, shapes)
        assert np.array_equal(a.inside, b.inside)
        assert np.array_equal(a.hits_in, b.hits_in)

    def test_ray_stats_account_for_all_rays(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX)
        labels = label_cells(res.complex, [p.alpha_shape for p in prims], 100)
        total = labels.hits_in + labels.hits_out + labels.misses
        assert np.all(total == 100)

    def test_threaded_labeling_identical(self):
        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX)
        shapes = [p.alpha_shape for p in prims]
        seq = label_cells(res.complex, shapes, threads=1)
        par = label_cells(res.complex, shapes, threads=4)
        assert np.array_equal(seq.inside, par.inside)
        assert np.array_equal(seq.hits_in, par.hits_in)
        assert np.array_equal(seq.misses, par.misses)


class TestSerialization:
    def test_complex_roundtrip(self):
        from lodforge.partition import CellComplex

        prims = cube_face_primitives(UNIT_BBOX)
        res = build_partition(prims, UNIT_BBOX)
        back = CellComplex.from_json(res.complex.to_json())
        assert len(back.cells) == len(res.complex.cells)
        assert len(back.facets) == len(res.complex.facets)
        assert back.total_volume() == pytest.approx(res.complex.total_volume())
        f0 = res.complex.facets[10]
        b0 = back.facets[10]
        assert f0.front == b0.front and f0.back == b0.back
        assert f0.alpha_covered == b0.alpha_covered
