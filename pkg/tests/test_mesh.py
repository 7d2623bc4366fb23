"""Mesh generation, bookkeeping invariants, and the VTK writer."""

import numpy as np
import pytest

from quenchmesh.errors import DegenerateElement
from quenchmesh.geometry import preset_domain
from quenchmesh.mesh import (domain_area, element_pair,
                             generate_initial_mesh, signed_areas,
                             structured_rectangle_mesh, write_vtk)


@pytest.fixture(scope="module")
def rect():
    return preset_domain("rect")


@pytest.fixture(scope="module")
def rect_mesh(rect):
    return structured_rectangle_mesh(rect, 10, 8)


class TestStructuredMesh:
    def test_crisscross_element_count(self, rect):
        # 4 triangles per cell: nx=40, ny=39 discussed as N = 6240
        mesh = structured_rectangle_mesh(rect, 40, 39)
        assert mesh.n_triangles == 4 * 40 * 39 == 6240

    def test_positive_areas_total(self, rect, rect_mesh):
        areas = signed_areas(rect_mesh.vertices, rect_mesh.triangles)
        assert np.all(areas > 0)
        assert areas.sum() == pytest.approx(3.2, rel=1e-12)

    def test_interior_first_ordering(self, rect_mesh):
        markers = rect_mesh.marker_curve
        assert np.all(markers[:rect_mesh.n_interior] < 0)
        assert np.all(markers[rect_mesh.n_interior:] >= 0)

    def test_boundary_markers_on_boundary(self, rect, rect_mesh):
        bnd = rect_mesh.vertices[rect_mesh.boundary_mask]
        d = np.abs(np.atleast_1d(rect.signed_distance(bnd)))
        assert d.max() < 1e-9

    def test_corners_marked(self, rect_mesh):
        corners = rect_mesh.vertices[rect_mesh.corner_mask]
        assert len(corners) == 4
        assert sorted(map(tuple, np.abs(corners))) == [(1.0, 0.8)] * 4


class TestGenerateInitialMesh:
    @pytest.mark.parametrize("name,target", [("rect", 1000),
                                             ("rect-hole", 1200),
                                             ("polar-asym", 800)])
    def test_target_size_within_20_percent(self, name, target):
        dom = preset_domain(name)
        mesh = generate_initial_mesh(dom, target)
        assert 0.8 <= mesh.n_triangles / target <= 1.2
        assert np.all(signed_areas(mesh.vertices, mesh.triangles) > 0)

    def test_total_area_matches_domain(self):
        dom = preset_domain("rect-hole")
        mesh = generate_initial_mesh(dom, 2000)
        total = signed_areas(mesh.vertices, mesh.triangles).sum()
        assert total == pytest.approx(domain_area(dom), rel=5e-3)

    def test_hole_boundary_resolved(self):
        dom = preset_domain("rect-4holes")
        mesh = generate_initial_mesh(dom, 3000)
        # every hole curve owns some boundary vertices
        curves_used = set(mesh.marker_curve[mesh.marker_curve >= 0])
        assert curves_used == set(range(len(dom.curves)))


class TestTriMesh:
    def test_with_vertices_rejects_inversion(self, rect_mesh):
        bad = rect_mesh.vertices.copy()
        k = rect_mesh.n_interior // 2
        bad[k] += 10.0  # fling an interior vertex far away
        with pytest.raises(DegenerateElement):
            rect_mesh.with_vertices(bad)

    def test_vertex_rings_symmetric(self, rect_mesh):
        rings = rect_mesh.vertex_rings()
        for i in range(0, rect_mesh.n_vertices, 7):
            for j in rings[i]:
                assert i in rings[j]

    def test_element_pair_identity(self, rect_mesh):
        pair = element_pair(rect_mesh, rect_mesh, 3)
        assert np.allclose(pair.J, np.eye(2), atol=1e-12)


class TestVtkWriter:
    def test_roundtrip_structure(self, rect_mesh, tmp_path):
        path = tmp_path / "mesh.vtk"
        u = np.linspace(-1.0, 0.0, rect_mesh.n_vertices)
        write_vtk(rect_mesh, path, point_data={"u": u})
        text = path.read_text().splitlines()
        assert text[0].startswith("# vtk DataFile")
        np_line = next(l for l in text if l.startswith("POINTS"))
        assert int(np_line.split()[1]) == rect_mesh.n_vertices
        nc_line = next(l for l in text if l.startswith("CELLS"))
        assert int(nc_line.split()[1]) == rect_mesh.n_triangles
        assert any(l.startswith("SCALARS u") for l in text)
