"""Mesh construction, face orientation, cotangent weights, Delaunay checks."""

import numpy as np
import pytest

from pmefem.mesh import (
    MeshError,
    build_structured_mesh,
    compute_edge_geometry,
    is_delaunay,
    make_mesh,
    read_mesh,
    vertex_patch_volumes,
    write_mesh,
)


def unit_square_two_triangles():
    """Unit square split by the (0,0)-(1,1) diagonal."""
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    return make_mesh(verts, [(0, 1, 2), (0, 2, 3)], "triangle")


class TestCounts:
    def test_interval(self):
        m = build_structured_mesh("interval", (-10, 10), 100)
        assert (m.n_cells, m.n_vertices, m.n_faces) == (100, 101, 101)

    def test_triangle_euler(self):
        m = build_structured_mesh("triangle", ((-6, 6), (-6, 6)), (32, 32))
        assert (m.n_cells, m.n_vertices, m.n_faces) == (2048, 1089, 3136)
        assert m.n_vertices - m.n_faces + m.n_cells == 1

    def test_quad(self):
        m = build_structured_mesh("quad", ((0, 1), (0, 1)), (2, 2))
        assert (m.n_cells, m.n_vertices, m.n_faces) == (4, 9, 12)

    def test_acute_triangle_euler(self):
        m = build_structured_mesh("acute_triangle", ((0, 1), (0, 1)), (7, 5))
        assert m.n_cells == 5 * (2 * 7 + 1)
        assert m.n_vertices - m.n_faces + m.n_cells == 1

    @pytest.mark.parametrize("kind,box,counts", [
        ("interval", (0, 1), 0),
        ("quad", ((0, 1), (0, 1)), (3, 0)),
        ("nonsense", (0, 1), 4),
        ("interval", (1, 1), 4),
        ("triangle", ((0, 1), (1, 1)), (2, 2)),
    ])
    def test_invalid_input(self, kind, box, counts):
        with pytest.raises(MeshError):
            build_structured_mesh(kind, box, counts)

    def test_volume_partition(self):
        for m in (
            build_structured_mesh("interval", (-3, 5), 17),
            build_structured_mesh("triangle", ((0, 2), (0, 1)), (5, 3)),
            build_structured_mesh("acute_triangle", ((0, 2), (0, 2)), (6, 6)),
            build_structured_mesh("quad", ((-1, 1), (0, 3)), (4, 6)),
        ):
            box = m.vertices.max(axis=0) - m.vertices.min(axis=0)
            assert m.volume == pytest.approx(np.prod(box), rel=1e-12)


class TestFaceOrientation:
    @pytest.mark.parametrize("kind,counts", [
        ("interval", 7), ("triangle", (4, 3)), ("quad", (4, 3)), ("acute_triangle", (4, 3)),
    ])
    def test_normal_points_from_first_to_second(self, kind, counts):
        box = (0, 1) if kind == "interval" else ((0, 1), (0, 1))
        m = build_structured_mesh(kind, box, counts)
        bary = m.cell_barycenters()
        for f in range(m.n_faces):
            c1, c2 = m.face_cells[f]
            fc = m.vertices[m.faces[f]].mean(axis=0)
            n = m.face_normals[f]
            # outward from the first incident cell
            assert np.dot(n, fc - bary[c1]) > 0
            if c2 >= 0:
                assert np.dot(n, bary[c2] - fc) > 0
            assert np.linalg.norm(n) == pytest.approx(1.0)

    def test_interior_faces_have_two_cells(self):
        m = build_structured_mesh("triangle", ((0, 1), (0, 1)), (3, 3))
        counts = np.zeros(m.n_faces, int)
        for cell in range(m.n_cells):
            hit = (m.face_cells == cell).any(axis=1)
            counts += hit
        assert set(counts) <= {1, 2}
        assert np.array_equal(counts == 2, m.interior_faces)

    def test_nonconforming_rejected(self):
        verts = [(0, 0), (1, 0), (0.5, 1), (0.5, -1), (0.5, 2)]
        with pytest.raises(MeshError):
            make_mesh(verts, [(0, 1, 2), (0, 1, 3), (0, 1, 4)], "triangle")

    def test_degenerate_cell_rejected(self):
        with pytest.raises(MeshError):
            make_mesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)], "triangle")


class TestEdgeGeometry:
    def test_equilateral_weight(self):
        verts = [(0.0, 0.0), (1.0, 0.0), (0.5, np.sqrt(3) / 2)]
        m = make_mesh(verts, [(0, 1, 2)], "triangle")
        g = compute_edge_geometry(m)
        assert g.omega == pytest.approx([0.5 / np.tan(np.pi / 3)] * 3)
        assert g.omega[0] == pytest.approx(0.288675, abs=1e-6)
        assert g.theta[~np.isnan(g.theta)] == pytest.approx(np.pi / 3)

    def test_right_angle_weight_zero(self):
        verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
        m = make_mesh(verts, [(0, 1, 2)], "triangle")
        g = compute_edge_geometry(m)
        # the hypotenuse (1,2) is opposite the right angle
        hyp = [i for i, f in enumerate(m.faces) if set(f) == {1, 2}][0]
        assert g.omega[hyp] == pytest.approx(0.0, abs=1e-14)

    def test_square_diagonal_split_boundary_weight(self):
        m = unit_square_two_triangles()
        g = compute_edge_geometry(m)
        for f in range(m.n_faces):
            pair = set(m.faces[f])
            if pair == {0, 2}:       # diagonal, opposite two 90-degree angles
                assert g.omega[f] == pytest.approx(0.0, abs=1e-15)
            else:                    # boundary edges, opposite one 45-degree angle
                assert g.omega[f] == pytest.approx(0.5)

    def test_boundary_weight_matches_p1_stiffness(self):
        # hand-assembled P1 stiffness on the 2-triangle square: the (0,1)
        # off-diagonal comes only from triangle (0,1,2), equals -1/2
        m = unit_square_two_triangles()
        g = compute_edge_geometry(m)
        f01 = [i for i, f in enumerate(m.faces) if set(f) == {0, 1}][0]
        grads = {0: np.array([-1.0, 0.0]), 1: np.array([1.0, -1.0]), 2: np.array([0.0, 1.0])}
        area = 0.5
        hand = area * grads[0] @ grads[1]
        assert -g.omega[f01] == pytest.approx(hand)

    def test_quad_and_interval_weights(self):
        m = build_structured_mesh("quad", ((0, 1), (0, 1)), (2, 2))
        g = compute_edge_geometry(m)
        interior = m.interior_faces
        assert g.omega[interior] == pytest.approx(0.25)   # two cells x |K|/2
        assert g.omega[~interior] == pytest.approx(0.125)
        m1 = build_structured_mesh("interval", (0, 1), 4)
        g1 = compute_edge_geometry(m1)
        assert g1.omega[m1.interior_faces] == pytest.approx(0.25)


class TestDelaunay:
    def test_acute_structured_strict(self):
        m = build_structured_mesh("acute_triangle", ((0, 1), (0, 1)), (8, 8))
        g = compute_edge_geometry(m)
        assert is_delaunay(g, strict=True)
        assert is_delaunay(g)

    def test_right_split_nonstrict_only(self):
        verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        m = make_mesh(verts, [(0, 1, 2), (0, 2, 3)], "triangle")
        g = compute_edge_geometry(m)
        assert is_delaunay(g)
        assert not is_delaunay(g, strict=True)

    def test_thin_kite_not_delaunay(self):
        # opposite angles across the diagonal sum to more than pi
        verts = [(0.0, 0.0), (1.0, 0.1), (2.0, 0.0), (1.0, -3.0)]
        m = make_mesh(verts, [(0, 1, 2), (0, 2, 3)], "triangle")
        g = compute_edge_geometry(m)
        assert not is_delaunay(g)

    def test_quads_and_intervals_qualify(self):
        for m in (build_structured_mesh("quad", ((0, 1), (0, 1)), (2, 2)),
                  build_structured_mesh("interval", (0, 1), 3)):
            g = compute_edge_geometry(m)
            assert is_delaunay(g, strict=True)

    def test_weight_sign_matches_nonstrict_check(self):
        for counts in ((3, 3), (5, 2)):
            m = build_structured_mesh("triangle", ((0, 2), (0, 1)), counts)
            g = compute_edge_geometry(m)
            assert is_delaunay(g) == bool(np.all(g.omega >= -1e-12))


class TestPatchVolumes:
    def test_interval_patches(self):
        m = build_structured_mesh("interval", (0, 1), 2)
        assert vertex_patch_volumes(m) == pytest.approx([0.5, 1.0, 0.5])

    def test_square_patches(self):
        m = unit_square_two_triangles()
        assert vertex_patch_volumes(m) == pytest.approx([1.0, 0.5, 1.0, 0.5])

    @pytest.mark.parametrize("kind,counts", [
        ("interval", 9), ("triangle", (4, 5)), ("acute_triangle", (5, 4)),
    ])
    def test_patch_partition(self, kind, counts):
        box = (0, 2) if kind == "interval" else ((0, 2), (0, 2))
        m = build_structured_mesh(kind, box, counts)
        total = vertex_patch_volumes(m).sum() / (m.dim + 1)
        assert total == pytest.approx(m.volume, rel=1e-12)


class TestMeshIO:
    @pytest.mark.parametrize("kind,counts", [
        ("interval", 5), ("triangle", (3, 2)), ("quad", (2, 3)), ("acute_triangle", (3, 3)),
    ])
    def test_roundtrip(self, tmp_path, kind, counts):
        box = (0, 1) if kind == "interval" else ((0, 1), (0, 1))
        m = build_structured_mesh(kind, box, counts)
        path = tmp_path / "mesh.txt"
        write_mesh(m, path)
        m2 = read_mesh(path)
        assert m2.cell_kind == m.cell_kind
        assert np.array_equal(m2.cells, m.cells)
        assert np.allclose(m2.vertices, m.vertices)
        assert np.array_equal(m2.face_cells, m.face_cells)
        header = path.read_text().splitlines()[0].split()
        assert header == [str(m.dim), str(m.n_cells), str(m.n_vertices), m.cell_kind]

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 1 3\n")
        with pytest.raises(MeshError):
            read_mesh(path)
