"""Triangulated meshes with fixed connectivity.

A TriMesh stores the vertex array, the triangle array (never modified
after construction -- r-adaptivity only relocates vertices), and
per-vertex boundary markers (owning curve id and arc length along it).
Interior vertices are ordered first, so the reduced linear systems are
plain leading blocks.

Structured rectangle meshes split each quad of an nx-by-ny grid into
four triangles through the quad center; a 40x39 grid therefore has
N = 4*40*39 = 6240 elements, which is the counting convention used for
the reference data this code reproduces.  A two-triangle diagonal split
is also available for coarse sanity meshes.
"""

from dataclasses import dataclass, field

import numpy as np
from matplotlib.tri import Triangulation, TrapezoidMapTriFinder
from scipy.spatial import Delaunay

from .errors import DegenerateElement, MeshGenError, OutsideMesh
from .geometry import PolygonCurve


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


class TriMesh:
    """Triangle mesh; vertices may move, connectivity never does."""

    def __init__(self, vertices, triangles, marker_curve, marker_s, corner_mask):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.marker_curve = np.asarray(marker_curve, dtype=np.int32)  # -1 interior
        self.marker_s = np.asarray(marker_s, dtype=float)
        self.corner_mask = np.asarray(corner_mask, dtype=bool)
        self.n_vertices = len(self.vertices)
        self.n_triangles = len(self.triangles)
        interior = self.marker_curve < 0
        if not np.all(np.diff(interior.astype(int)) <= 0):
            raise MeshGenError("interior vertices must come first")
        self.n_interior = int(interior.sum())
        areas = signed_areas(self.vertices, self.triangles)
        if np.any(areas <= 0):
            raise DegenerateElement("mesh has nonpositive element areas")
        self._finder = None
        self._vertex_rings = None

    # -- derived structure ------------------------------------------------

    @property
    def boundary_mask(self):
        return self.marker_curve >= 0

    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    def with_vertices(self, new_vertices, check=True):
        """Snapshot with relocated vertices; connectivity and markers shared."""
        m = TriMesh.__new__(TriMesh)
        m.vertices = np.ascontiguousarray(new_vertices, dtype=float)
        m.triangles = self.triangles
        m.marker_curve = self.marker_curve
        m.marker_s = self.marker_s
        m.corner_mask = self.corner_mask
        m.n_vertices = self.n_vertices
        m.n_triangles = self.n_triangles
        m.n_interior = self.n_interior
        m._finder = None
        m._vertex_rings = None
        if check and np.any(signed_areas(m.vertices, m.triangles) <= 0):
            raise DegenerateElement("vertex update produced inverted elements")
        return m

    def vertex_rings(self):
        """List of neighbor-vertex index arrays (1-ring), cached."""
        if self._vertex_rings is None:
            nbr = [set() for _ in range(self.n_vertices)]
            for a, b, c in self.triangles:
                nbr[a].update((b, c))
                nbr[b].update((a, c))
                nbr[c].update((a, b))
            self._vertex_rings = [np.fromiter(s, dtype=np.int32) for s in nbr]
        return self._vertex_rings

    def vertex_elements(self):
        """List of element-index arrays incident to each vertex."""
        inc = [[] for _ in range(self.n_vertices)]
        for k, tri in enumerate(self.triangles):
            for v in tri:
                inc[v].append(k)
        return [np.asarray(a, dtype=np.int32) for a in inc]

    def local_h(self):
        """Mean incident edge length per vertex."""
        tri = self.triangles
        edges = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        lengths = np.hypot(*(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]]).T)
        h = np.zeros(self.n_vertices)
        cnt = np.zeros(self.n_vertices)
        for col in (0, 1):
            np.add.at(h, edges[:, col], lengths)
            np.add.at(cnt, edges[:, col], 1.0)
        return h / np.maximum(cnt, 1)

    # -- point location and interpolation ----------------------------------

    def _get_finder(self):
        if self._finder is None:
            t = Triangulation(self.vertices[:, 0], self.vertices[:, 1], self.triangles)
            self._finder = (t, TrapezoidMapTriFinder(t))
        return self._finder[1]

    def locate(self, pts):
        """Containing triangle index per point (-1 if outside the hull)."""
        pts = np.atleast_2d(pts)
        finder = self._get_finder()
        return np.asarray(finder(pts[:, 0], pts[:, 1]), dtype=np.int64)

    def barycentric(self, tri_idx, pts):
        """Barycentric coordinates of pts w.r.t. triangles tri_idx."""
        p = self.vertices[self.triangles[tri_idx]]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        rhs = pts - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (rhs[:, 0] * d2[:, 1] - rhs[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * rhs[:, 1] - d1[:, 1] * rhs[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def interpolate_linear(self, nodal, pts):
        """Barycentric interpolation of a nodal field at points pts."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = self.locate(pts)
        if np.any(idx < 0):
            # Fallback for boundary-roundoff stragglers: try the triangles
            # incident to the nearest vertex.
            bad = np.nonzero(idx < 0)[0]
            inc = self.vertex_elements()
            for b in bad:
                j = int(np.argmin(np.sum((self.vertices - pts[b]) ** 2, axis=1)))
                cands = inc[j]
                lam = self.barycentric(cands, np.repeat(pts[b][None], len(cands), axis=0))
                ok = np.all(lam > -1e-9, axis=1)
                if not np.any(ok):
                    raise OutsideMesh(f"point {pts[b]} outside the mesh")
                idx[b] = cands[np.argmax(np.min(lam, axis=1))]
        lam = self.barycentric(idx, pts)
        vals = np.asarray(nodal)[self.triangles[idx]]
        out = np.einsum("qk,qk...->q...", lam, vals)
        return out if len(pts) > 1 else out[0]


@dataclass
class ElementPair:
    """Affine correspondence between a physical and a computational element."""

    E_K: np.ndarray
    E_hat_K: np.ndarray
    J: np.ndarray
    area_K: float
    area_Kc: float


def element_pair(mesh_phys, mesh_comp, k):
    """Edge matrices and J = E_hat * E^{-1} for element k of a mesh pair."""
    if mesh_phys.n_triangles != mesh_comp.n_triangles:
        raise DegenerateElement("meshes do not share connectivity")
    tri = mesh_phys.triangles[k]
    xp = mesh_phys.vertices[tri]
    xc = mesh_comp.vertices[tri]
    E = np.column_stack([xp[1] - xp[0], xp[2] - xp[0]])
    Eh = np.column_stack([xc[1] - xc[0], xc[2] - xc[0]])
    detE = np.linalg.det(E)
    detEh = np.linalg.det(Eh)
    if detE <= 1e-14 or detEh <= 1e-14:
        raise DegenerateElement(f"element {k} degenerate")
    J = Eh @ np.linalg.inv(E)
    return ElementPair(E_K=E, E_hat_K=Eh, J=J,
                       area_K=0.5 * detE, area_Kc=0.5 * detEh)


# ----------------------------------------------------------------------
# Mesh generation

def _reorder_interior_first(vertices, triangles, marker_curve, marker_s, corners):
    order = np.argsort(marker_curve >= 0, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return TriMesh(vertices[order], inv[triangles], marker_curve[order],
                   marker_s[order], corners[order])


def _polygon_marker(curve, pts, tol=1e-9):
    """(on_curve, arclen, corner) for points lying on a polygon curve."""
    n = len(pts)
    on = np.zeros(n, dtype=bool)
    s_out = np.zeros(n)
    corner = np.zeros(n, dtype=bool)
    loop = curve._loop
    for i in range(len(loop) - 1):
        a, b = loop[i], loop[i + 1]
        d = b - a
        L = np.hypot(*d)
        t = ((pts - a) @ d) / L**2
        dist = np.hypot(*(pts - (a + np.clip(t, 0, 1)[:, None] * d)).T)
        hit = (dist < tol) & (t > -tol) & (t < 1 + tol)
        on |= hit
        s_out[hit] = curve.edge_start_s[i] + np.clip(t[hit], 0, 1) * L
    for i, s_c in enumerate(curve.corner_arclengths()):
        d = np.hypot(*(pts - loop[i]).T)
        corner |= d < tol
        s_out[d < tol] = s_c
    return on, np.mod(s_out, curve.length), corner


def structured_rectangle_mesh(domain, nx, ny, split="crisscross"):
    """Structured mesh of an axis-aligned rectangle domain (no holes).

    crisscross: 4 triangles per quad through the center (N = 4 nx ny);
    diagonal:   2 triangles per quad (N = 2 nx ny).
    """
    if domain.holes or domain.outer.kind != "polygon":
        raise MeshGenError("structured mode requires a plain rectangle")
    v = domain.outer.vertices
    x0, x1 = v[:, 0].min(), v[:, 0].max()
    y0, y1 = v[:, 1].min(), v[:, 1].max()
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    gid = np.arange(len(grid)).reshape(nx + 1, ny + 1)

    tris = []
    if split == "crisscross":
        cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]),
                             indexing="ij")
        centers = np.column_stack([cx.ravel(), cy.ravel()])
        cid = len(grid) + np.arange(len(centers)).reshape(nx, ny)
        verts = np.vstack([grid, centers])
        for i in range(nx):
            for j in range(ny):
                a, b = gid[i, j], gid[i + 1, j]
                c, d = gid[i + 1, j + 1], gid[i, j + 1]
                m = cid[i, j]
                tris += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
    elif split == "diagonal":
        verts = grid
        for i in range(nx):
            for j in range(ny):
                a, b = gid[i, j], gid[i + 1, j]
                c, d = gid[i + 1, j + 1], gid[i, j + 1]
                tris += [(a, b, c), (a, c, d)]
    else:
        raise MeshGenError(f"unknown split {split!r}")
    triangles = np.asarray(tris, dtype=np.int32)

    on, s, corner = _polygon_marker(domain.outer, verts)
    marker_curve = np.where(on, 0, -1).astype(np.int32)
    marker_s = np.where(on, s, 0.0)
    return _reorder_interior_first(verts, triangles, marker_curve, marker_s, corner)


def _boundary_chain(curve, h):
    """Evenly spaced boundary points (pts, s, corner) at spacing <= h."""
    if curve.kind == "polygon":
        pts, svals, corner = [], [], []
        loop = curve._loop
        for i in range(len(loop) - 1):
            L = curve.edge_lengths[i]
            n = max(1, int(np.ceil(L / h)))
            t = np.linspace(0, 1, n + 1)[:-1]
            pts.append(loop[i] + t[:, None] * (loop[i + 1] - loop[i]))
            svals.append(curve.edge_start_s[i] + t * L)
            c = np.zeros(n, dtype=bool)
            c[0] = True
            corner.append(c)
        return np.vstack(pts), np.concatenate(svals), np.concatenate(corner)
    n = max(8, int(np.ceil(curve.length / h)))
    s = np.linspace(0, curve.length, n + 1)[:-1]
    pts = np.atleast_2d(curve.point_at(s))
    return pts, s, np.zeros(n, dtype=bool)


def unstructured_mesh(domain, h):
    """Delaunay mesh of the domain at nominal spacing h."""
    b_pts, b_cid, b_s, b_corner = [], [], [], []
    for ci, curve in enumerate(domain.curves):
        p, s, c = _boundary_chain(curve, h)
        b_pts.append(p)
        b_cid.append(np.full(len(p), ci, dtype=np.int32))
        b_s.append(s)
        b_corner.append(c)
    b_pts = np.vstack(b_pts)
    b_cid = np.concatenate(b_cid)
    b_s = np.concatenate(b_s)
    b_corner = np.concatenate(b_corner)

    # Staggered interior lattice, kept clear of the boundary ring.
    x0, x1, y0, y1 = domain.bbox
    dy = h * np.sqrt(3) / 2
    rows = np.arange(y0 + dy, y1, dy)
    ipts = []
    for r, y in enumerate(rows):
        off = 0.5 * h if r % 2 else 0.0
        xs = np.arange(x0 + 0.5 * h + off, x1, h)
        ipts.append(np.column_stack([xs, np.full(len(xs), y)]))
    ipts = np.vstack(ipts) if ipts else np.zeros((0, 2))
    d = np.atleast_1d(domain.signed_distance(ipts))
    ipts = ipts[d > 0.55 * h]

    pts = np.vstack([ipts, b_pts])
    tri = Delaunay(pts)
    cent = pts[tri.simplices].mean(axis=1)
    keep = np.atleast_1d(domain.signed_distance(cent)) > 0
    simplices = tri.simplices[keep]
    areas = signed_areas(pts, simplices)
    simplices = np.where(areas[:, None] < 0, simplices[:, ::-1], simplices)
    simplices = simplices[np.abs(areas) > 1e-13]

    used = np.unique(simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    triangles = remap[simplices].astype(np.int32)

    nb = len(ipts)
    marker_curve = np.full(len(pts), -1, dtype=np.int32)
    marker_s = np.zeros(len(pts))
    corner = np.zeros(len(pts), dtype=bool)
    marker_curve[nb:] = b_cid
    marker_s[nb:] = b_s
    corner[nb:] = b_corner
    return _reorder_interior_first(verts, triangles, marker_curve[used],
                                   marker_s[used], corner[used])


def generate_initial_mesh(domain, target_N, structured=None):
    """Quasi-uniform conforming triangulation with about target_N elements.

    For a plain rectangle a structured grid is used (crisscross split;
    optionally pass structured=(nx, ny) to pin the grid).  Domains with
    holes or curved boundaries get an unstructured Delaunay mesh.  The
    element count is matched within +-10%.
    """
    if target_N < 2:
        raise MeshGenError("target_N too small")
    is_plain_rect = (not domain.holes and domain.outer.kind == "polygon"
                     and len(domain.outer.vertices) == 4)
    if structured is not None:
        nx, ny = structured
        return structured_rectangle_mesh(domain, nx, ny)
    if is_plain_rect:
        v = domain.outer.vertices
        w = v[:, 0].max() - v[:, 0].min()
        hgt = v[:, 1].max() - v[:, 1].min()
        if target_N <= 4:
            return structured_rectangle_mesh(domain, 1, 1, split="diagonal")
        nq = target_N / 4.0
        nx = max(1, int(round(np.sqrt(nq * w / hgt))))
        ny = max(1, int(round(nq / nx)))
        return structured_rectangle_mesh(domain, nx, ny)

    area = domain_area(domain)
    h = np.sqrt(area / (0.433 * target_N))
    mesh = None
    for _ in range(8):
        mesh = unstructured_mesh(domain, h)
        ratio = mesh.n_triangles / target_N
        if 0.9 <= ratio <= 1.1:
            return mesh
        h *= np.sqrt(ratio)
    if mesh is None or not (0.8 <= mesh.n_triangles / target_N <= 1.2):
        raise MeshGenError("could not hit target element count")
    return mesh


def domain_area(domain):
    """Area enclosed by the outer curve minus the holes (shoelace on samples)."""
    def loop_area(curve):
        p = curve.sample_points
        return 0.5 * abs(np.sum(p[:-1, 0] * p[1:, 1] - p[1:, 0] * p[:-1, 1]))

    a = loop_area(domain.outer)
    for hcurve in domain.holes:
        a -= loop_area(hcurve)
    return a


# ----------------------------------------------------------------------
# VTK output

def write_vtk(mesh, path, point_data=None):
    """Legacy ASCII unstructured-grid snapshot (cells of type 5)."""
    point_data = point_data or {}
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nquenchmesh snapshot\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.16g} {y:.16g} 0\n")
        fh.write(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {mesh.n_triangles}\n")
        fh.write("\n".join(["5"] * mesh.n_triangles) + "\n")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, arr in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(f"{v:.16g}" for v in np.asarray(arr)) + "\n")
