"""Moving-mesh engine: energy functional, analytic velocities, and the
computational-coordinate gradient flow.

The mesh energy for element K with metric M_K (d = 2) is

    I_h = sum_K |K| sqrt(det M_K) [ (1/3) tr(J M_K^-1 J^T)^(3/2)
                                  + (2^(3/2)/3) (det J / sqrt(det M_K))^(3/2) ]

with J = Ehat_K E_K^-1 the Jacobian of the physical-to-computational
affine map.  The flow integrates d(xi_i)/dt = (P_i/tau) sum_K |K| v_i^K
with the physical mesh frozen, then pulls the reference computational
vertices back through the resulting correspondence to produce the new
physical mesh.

The per-element velocity rows are assembled as

    [v_1^T; v_2^T] = -E^-1 dG/dJ - dG/d(det J) (det Ehat / det E) Ehat^-1,
    v_0 = -(v_1 + v_2),

(the first factor is dG/dJ, as dimensional analysis requires); the
assembled field is certified against finite differences of I_h in the
test suite.
"""

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import DegenerateElement, MeshTangled
from .metric import vertex_metric

D = 2  # spatial dimension; exponent 3d/4 = 3/2 throughout
_POW = 1.5
_DFACT = 2.0 ** 1.5  # d^(3d/4)


def _inv2(A):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 1, 1] = A[..., 0, 0]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    return inv / det[..., None, None], det


def _edge_matrices(vertices, triangles):
    p = vertices[triangles]
    E = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    return E


def _element_quantities(x_verts, xi_verts, triangles, tensors):
    """Shared per-element pieces: J, detJ, M^-1, sqrt(det M), areas."""
    E = _edge_matrices(x_verts, triangles)
    Eh = _edge_matrices(xi_verts, triangles)
    Einv, detE = _inv2(E)
    if np.any(detE <= 0):
        raise DegenerateElement("physical element with nonpositive area")
    detEh = Eh[:, 0, 0] * Eh[:, 1, 1] - Eh[:, 0, 1] * Eh[:, 1, 0]
    J = Eh @ Einv
    detJ = detEh / detE
    Minv, detM = _inv2(tensors)
    sdM = np.sqrt(detM)
    return E, Eh, Einv, detE, detEh, J, detJ, Minv, sdM


def energy(mesh_phys, mesh_comp, metric, xi_verts=None):
    """Mesh energy I_h of the (physical, computational) pair."""
    xi = mesh_comp.vertices if xi_verts is None else xi_verts
    _, _, _, detE, _, J, detJ, Minv, sdM = _element_quantities(
        mesh_phys.vertices, xi, mesh_phys.triangles, metric.tensors)
    area = 0.5 * detE
    tr = np.einsum("kij,kjl,kil->k", J, Minv, J)
    G = (sdM / 3.0) * tr**_POW + (_DFACT / 3.0) * sdM * (detJ / sdM) ** _POW
    return float(np.sum(area * G))


def local_velocities(x_verts, xi_verts, triangles, tensors):
    """Per-element vertex velocities (nt, 3, 2) of the xi-gradient flow."""
    (E, Eh, Einv, detE, detEh, J, detJ,
     Minv, sdM) = _element_quantities(x_verts, xi_verts, triangles, tensors)
    tr = np.einsum("kij,kjl,kil->k", J, Minv, J)
    # dG/dJ = (d/2) sqrt(det M) tr^(1/2) M^-1 J^T  (scalar-by-matrix convention)
    dGdJ = (sdM * np.sqrt(tr))[:, None, None] * (Minv @ np.swapaxes(J, 1, 2))
    # dG/d(detJ) = (d^(3d/4)/2) det(M)^(-1/4) det(J)^(1/2)
    dGddet = 0.5 * _DFACT / np.sqrt(sdM) * np.sqrt(np.maximum(detJ, 0.0))
    Ehinv, _ = _inv2(Eh)
    rows = -(Einv @ dGdJ) - (dGddet * detEh / detE)[:, None, None] * Ehinv
    v = np.empty((len(triangles), 3, 2))
    v[:, 1] = rows[:, 0]
    v[:, 2] = rows[:, 1]
    v[:, 0] = -rows[:, 0] - rows[:, 1]
    return v


def assembled_velocities(mesh_phys, xi_verts, metric):
    """Vertex velocity sum_K |K| v_i^K (equals -dI_h/dxi_i)."""
    tri = mesh_phys.triangles
    area = 0.5 * _inv2(_edge_matrices(mesh_phys.vertices, tri))[1]
    v = local_velocities(mesh_phys.vertices, xi_verts, tri, metric.tensors)
    out = np.zeros((mesh_phys.n_vertices, 2))
    np.add.at(out, tri.ravel(), (area[:, None, None] * v).reshape(-1, 2))
    return out


def _velocity_sparsity(mesh):
    """Jacobian sparsity of the assembled velocity field (vertex 1-rings)."""
    rings = mesh.vertex_rings()
    rows, cols = [], []
    for i, nb in enumerate(rings):
        idx = np.concatenate([[i], nb])
        for a in (2 * i, 2 * i + 1):
            rows.extend([a] * (2 * len(idx)))
            cols.extend(np.stack([2 * idx, 2 * idx + 1], axis=1).ravel())
    n = 2 * mesh.n_vertices
    return sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


class BoundarySlide:
    """Projects boundary-vertex velocities onto their curve tangents."""

    def __init__(self, mesh, domain):
        self.domain = domain
        self.free = ~mesh.corner_mask
        self.bnd = np.nonzero(mesh.boundary_mask & self.free)[0]
        self.pinned = np.nonzero(mesh.boundary_mask & ~self.free)[0]
        self.curve_of = mesh.marker_curve

    def project(self, verts, vel):
        for ci, curve in enumerate(self.domain.curves):
            idx = self.bnd[self.curve_of[self.bnd] == ci]
            if len(idx) == 0:
                continue
            s = _arclengths_on_curve(curve, verts[idx])
            t = np.atleast_2d(curve.tangent_at(s))
            vel[idx] = t * np.einsum("ij,ij->i", t, vel[idx])[:, None]
        vel[self.pinned] = 0.0
        return vel

    def snap(self, verts):
        """Return vertices with boundary points placed exactly on their curves."""
        out = verts.copy()
        for ci, curve in enumerate(self.domain.curves):
            idx = self.bnd[self.curve_of[self.bnd] == ci]
            if len(idx) == 0:
                continue
            s = _arclengths_on_curve(curve, out[idx])
            out[idx] = np.atleast_2d(curve.point_at(s))
        return out

    def arclengths(self, verts):
        """Per-vertex arc length for boundary vertices (nan for interior)."""
        s_all = np.full(len(verts), np.nan)
        for ci, curve in enumerate(self.domain.curves):
            idx = np.nonzero(self.curve_of == ci)[0]
            if len(idx) == 0:
                continue
            s_all[idx] = _arclengths_on_curve(curve, verts[idx])
        return s_all


def _project_on_segments(pts, a, b, s0, ds, length):
    """Closest-point arc lengths over a family of segments (vectorized)."""
    seg = b - a                                     # (m, 2)
    L2 = np.maximum(np.einsum("md,md->m", seg, seg), 1e-300)
    diff = pts[:, None, :] - a[None]                # (q, m, 2)
    t = np.clip(np.einsum("qmd,md->qm", diff, seg) / L2, 0.0, 1.0)
    foot = a[None] + t[..., None] * seg[None]
    d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=2)
    j = np.argmin(d2, axis=1)
    q = np.arange(len(pts))
    return np.mod(s0[j] + t[q, j] * ds[j], length)


def _arclengths_on_curve(curve, pts):
    """Arc length of the closest curve point for each query point."""
    if curve.kind == "circle":
        rel = pts - curve.center
        th = np.arctan2(rel[:, 1], rel[:, 0])
        if curve.is_hole:
            th = -th
        return np.mod(th, 2 * np.pi) * curve.radius
    if curve.kind == "polygon":
        loop = curve._loop
        return _project_on_segments(pts, loop[:-1], loop[1:],
                                    curve.edge_start_s[:-1],
                                    curve.edge_lengths, curve.length)
    # Sampled smooth curve: coarse nearest sample, then local projection.
    samp = curve.sample_points[:-1]
    s_tab = curve.sample_s
    n = len(samp)
    d2 = np.sum((pts[:, None, :] - samp[None]) ** 2, axis=2)
    j = np.argmin(d2, axis=1)
    idx = np.stack([(j - 1) % n, j], axis=1)        # (q, 2) candidate segs
    a = samp[idx]                                   # (q, 2, 2)
    b = samp[(idx + 1) % n]
    s0 = s_tab[idx]
    ds = s_tab[idx + 1] - s_tab[idx]
    seg = b - a
    L2 = np.maximum(np.einsum("qmd,qmd->qm", seg, seg), 1e-300)
    diff = pts[:, None, :] - a
    t = np.clip(np.einsum("qmd,qmd->qm", diff, seg) / L2, 0.0, 1.0)
    foot = a + t[..., None] * seg
    d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=2)
    m = np.argmin(d2, axis=1)
    q = np.arange(len(pts))
    return np.mod(s0[q, m] + t[q, m] * ds[q, m], curve.length)


class MoveContext:
    """Connectivity-dependent state reused across slabs (the triangle
    table never changes during a run)."""

    def __init__(self, mesh, domain):
        self.slide = BoundarySlide(mesh, domain)
        self.sparsity = _velocity_sparsity(mesh)


def move_mesh(mesh_phys, ref_comp, metric, domain, tau, dt_interval,
              rtol=1e-6, max_tangle_retries=4, diagnostics=None,
              context=None):
    """One mesh-movement stage: flow xi from the reference mesh, pull back.

    Integrates the computational-vertex gradient flow over dt_interval
    with a stiff adaptive integrator, boundary vertices sliding along
    their curves (corners pinned), then maps the reference computational
    mesh through the (physical, new-computational) correspondence to get
    the new physical mesh.  A tangled result is retried with tau doubled.
    """
    if context is None:
        context = MoveContext(mesh_phys, domain)
    slide, sparsity = context.slide, context.sparsity
    Pv = np.linalg.det(vertex_metric(mesh_phys, metric)) ** 0.25

    for attempt in range(max_tangle_retries + 1):
        tau_eff = tau * 2**attempt
        scale = Pv / tau_eff

        def rhs(t, y):
            verts = y.reshape(-1, 2)
            vel = assembled_velocities(mesh_phys, verts, metric)
            vel = slide.project(verts, vel)
            return (scale[:, None] * vel).ravel()

        sol = solve_ivp(rhs, (0.0, dt_interval), ref_comp.vertices.ravel(),
                        method="BDF", rtol=rtol, atol=1e-9,
                        jac_sparsity=sparsity)
        if not sol.success:
            continue
        xi_new = slide.snap(sol.y[:, -1].reshape(-1, 2))
        try:
            phys_new = pull_back_physical(mesh_phys, xi_new, ref_comp, slide)
        except (MeshTangled, DegenerateElement):
            continue
        if diagnostics is not None:
            diagnostics["I_h"] = energy(mesh_phys, ref_comp, metric, xi_verts=xi_new)
            diagnostics["tau_eff"] = tau_eff
        return phys_new
    raise MeshTangled("mesh move failed even with increased tau")


def pull_back_physical(mesh_phys, xi_new, ref_comp, slide):
    """New physical mesh: reference vertices located in the moved xi-mesh,
    barycentric interpolation of physical positions (arc-length
    interpolation on the boundary)."""
    comp_moved = ref_comp.with_vertices(xi_new, check=True)
    new_verts = mesh_phys.vertices.copy()

    interior = np.nonzero(~mesh_phys.boundary_mask)[0]
    pts = ref_comp.vertices[interior]
    idx = comp_moved.locate(pts)
    bad = np.nonzero(idx < 0)[0]
    if len(bad) > 0:
        inc = comp_moved.vertex_elements()
        for b in bad:
            j = int(np.argmin(np.sum((comp_moved.vertices - pts[b]) ** 2, axis=1)))
            cands = inc[j]
            lam = comp_moved.barycentric(cands, np.repeat(pts[b][None], len(cands), axis=0))
            idx[b] = cands[np.argmax(np.min(lam, axis=1))]
    lam = comp_moved.barycentric(idx, pts)
    lam = np.clip(lam, 0.0, 1.0)
    lam /= lam.sum(axis=1, keepdims=True)
    new_verts[interior] = np.einsum(
        "qk,qkd->qd", lam, mesh_phys.vertices[mesh_phys.triangles[idx]])

    # Boundary: linear interpolation in arc length between moved neighbors.
    s_phys = slide.arclengths(mesh_phys.vertices)
    s_new = slide.arclengths(xi_new)
    s_ref = slide.arclengths(ref_comp.vertices)
    for ci, curve in enumerate(slide.domain.curves):
        idx_c = np.nonzero(mesh_phys.marker_curve == ci)[0]
        if len(idx_c) == 0:
            continue
        order = np.argsort(s_new[idx_c])
        ring = idx_c[order]
        sn = s_new[ring]
        sp_ = s_phys[ring]
        # Unwrap physical arc lengths so they increase along the ring.
        sp_un = sp_.copy()
        for k in range(1, len(sp_un)):
            while sp_un[k] < sp_un[k - 1] - 0.5 * curve.length:
                sp_un[k] += curve.length
        for vi in idx_c:
            if mesh_phys.corner_mask[vi]:
                continue
            sref = s_ref[vi]
            k = int(np.searchsorted(sn, sref)) % len(sn)
            k0 = (k - 1) % len(sn)
            a, b = sn[k0], sn[k]
            gap = b - a if b >= a else b - a + curve.length
            off = sref - a if sref >= a else sref - a + curve.length
            t = off / gap if gap > 0 else 0.0
            pa, pb = sp_un[k0], sp_un[k0] + (sp_un[k] - sp_un[k0]
                                             if k > k0 else
                                             sp_un[k] + curve.length - sp_un[k0])
            s_val = np.mod(pa + t * (pb - pa), curve.length)
            new_verts[vi] = np.asarray(curve.point_at(s_val)).reshape(2)

    try:
        return mesh_phys.with_vertices(new_verts, check=True)
    except DegenerateElement as exc:
        raise MeshTangled(str(exc)) from exc
