"""Per-element metric tensors driving the mesh adaptation.

The metric is built from a least-squares recovered Hessian H_K of the
nodal field:

    M_K = det(I + |H_K|/alpha_h)^(-1/6) (I + |H_K|/alpha_h)

with |H_K| the eigenvalue-absolute-value of H_K, and the scalar alpha_h
chosen so that sum_K |K| sqrt(det M_K) = 2 |Omega| (solved by bisection
in log alpha).  For domains with holes an additive isotropic term beta I
keeps mesh concentration around each hole:

    beta(x) = [exp(4 (rho - R)) - 1 + 2 / max_K sqrt(det M_K)]^(-1)

with rho the distance from the element centroid to the hole center.  On
the hole circle this equals half the largest sqrt(det M_K); away from
the hole the exponential dominates and beta -> 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RankError
from .fem import element_geometry
from .mesh import domain_area


@dataclass
class MetricField:
    """Per-element SPD tensors with the normalization bookkeeping."""

    tensors: np.ndarray          # (nt, 2, 2)
    alpha_h: float               # +inf when the field is flat (fallback)
    sigma_h: float               # sum |K| sqrt(det M_K)

    @property
    def sqrt_dets(self):
        t = self.tensors
        det = t[:, 0, 0] * t[:, 1, 1] - t[:, 0, 1] * t[:, 1, 0]
        return np.sqrt(det)


def recover_hessian(mesh, u, smooth_passes=1):
    """Per-element Hessian via vertexwise quadratic least squares.

    Each vertex fits u ~ quadratic over its 1-ring (2-ring when rank
    deficient); one Jacobi averaging pass damps recovery noise before
    vertex Hessians are averaged onto elements.
    """
    verts = mesh.vertices
    rings = mesh.vertex_rings()
    n = mesh.n_vertices
    H = np.zeros((n, 3))  # hxx, hxy, hyy
    for i in range(n):
        patch = rings[i]
        for attempt in range(2):
            idx = np.concatenate([[i], patch])
            dx = verts[idx, 0] - verts[i, 0]
            dy = verts[idx, 1] - verts[i, 1]
            A = np.column_stack([np.ones_like(dx), dx, dy,
                                 0.5 * dx * dx, dx * dy, 0.5 * dy * dy])
            if len(idx) >= 6 and np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, np.abs(A).max())) == 6:
                coef, *_ = np.linalg.lstsq(A, np.asarray(u)[idx], rcond=None)
                H[i] = coef[3], coef[4], coef[5]
                break
            if attempt == 0:
                ext = set(patch.tolist())
                for j in patch:
                    ext.update(rings[j].tolist())
                ext.discard(i)
                patch = np.fromiter(ext, dtype=np.int64)
            else:
                raise RankError(f"degenerate recovery patch at vertex {i}")
    for _ in range(smooth_passes):
        Hs = H.copy()
        for i in range(n):
            nb = rings[i]
            Hs[i] = (H[i] + H[nb].sum(axis=0)) / (1 + len(nb))
        H = Hs
    tri = mesh.triangles
    He = H[tri].mean(axis=1)  # (nt, 3)
    out = np.empty((mesh.n_triangles, 2, 2))
    out[:, 0, 0] = He[:, 0]
    out[:, 0, 1] = out[:, 1, 0] = He[:, 1]
    out[:, 1, 1] = He[:, 2]
    return out


def _abs_sym2(H):
    """Eigenvalue absolute value of symmetric 2x2 tensors (batched)."""
    a, b, c = H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]
    tr = a + c
    disc = np.sqrt(np.maximum(((a - c) / 2) ** 2 + b**2, 0.0))
    l1 = tr / 2 + disc
    l2 = tr / 2 - disc
    # Eigenvectors for l1: (b, l1-a) and (l1-c, b) are both valid when
    # b != 0; use whichever has the larger norm (the other degenerates
    # to (~0, ~0) for near-diagonal tensors), and fall back to the axis
    # vector when both are negligible (truly diagonal tensor).
    cand_a = np.stack([b, l1 - a], axis=1)
    cand_c = np.stack([l1 - c, b], axis=1)
    na = np.linalg.norm(cand_a, axis=1)
    nc = np.linalg.norm(cand_c, axis=1)
    v1 = np.where((na >= nc)[:, None], cand_a, cand_c)
    nrm = np.maximum(na, nc)
    scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c),
                               np.ones_like(a) * 1e-300])
    diag_like = nrm <= 1e-12 * scale
    v1[diag_like] = [1.0, 0.0]
    nrm[diag_like] = 1.0
    v1 = v1 / nrm[:, None]
    v2 = np.stack([-v1[:, 1], v1[:, 0]], axis=1)
    out = (np.abs(l1)[:, None, None] * np.einsum("ki,kj->kij", v1, v1)
           + np.abs(l2)[:, None, None] * np.einsum("ki,kj->kij", v2, v2))
    return out


def _tensors_for_alpha(absH, alpha):
    eye = np.eye(2)
    T = eye[None] + absH / alpha
    det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
    return det[:, None, None] ** (-1.0 / 6.0) * T, det ** (1.0 / 3.0)


def metric_tensor(mesh, u, domain=None, smooth_passes=1):
    """Optimal-L2 metric from the recovered Hessian, normalized by bisection.

    When the Hessian vanishes identically the normalization equation has
    no solution (sum |K| = |Omega| < 2 |Omega|); the fallback is the
    identity metric with alpha_h = +inf.
    """
    area, _ = element_geometry(mesh)
    omega = domain_area(domain) if domain is not None else float(area.sum())
    H = recover_hessian(mesh, u, smooth_passes=smooth_passes)
    absH = _abs_sym2(H)
    hmax = float(np.abs(absH).max())
    if hmax < 1e-13:
        tensors = np.broadcast_to(np.eye(2), (mesh.n_triangles, 2, 2)).copy()
        return MetricField(tensors=tensors, alpha_h=np.inf,
                           sigma_h=float(area.sum()))

    target = 2.0 * omega

    def total(alpha):
        _, sd = _tensors_for_alpha(absH, alpha)
        return float(np.sum(area * sd))

    # Bracket in log alpha: large alpha -> |Omega| (< target), small -> +inf.
    hi = hmax
    while total(hi) > target:
        hi *= 8.0
    lo = hi
    while total(lo) < target:
        lo /= 8.0
        if lo < 1e-30 * hmax:
            break
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if total(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-14:
            break
    alpha = np.sqrt(lo * hi)
    tensors, sd = _tensors_for_alpha(absH, alpha)
    return MetricField(tensors=tensors, alpha_h=float(alpha),
                       sigma_h=float(np.sum(area * sd)))


def hole_adjusted_metric(metric, mesh, holes):
    """Add the hole-concentration term beta(x) I for each hole."""
    if not holes:
        raise ValueError("hole_adjusted_metric requires at least one hole")
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    max_sd = float(metric.sqrt_dets.max())
    beta = np.zeros(mesh.n_triangles)
    for hole in holes:
        rho = np.hypot(*(cent - hole.center).T)
        beta += 1.0 / (np.exp(4.0 * (rho - hole.radius)) - 1.0 + 2.0 / max_sd)
    tensors = metric.tensors + beta[:, None, None] * np.eye(2)[None]
    area, _ = element_geometry(mesh)
    det = tensors[:, 0, 0] * tensors[:, 1, 1] - tensors[:, 0, 1] ** 2
    return MetricField(tensors=tensors, alpha_h=metric.alpha_h,
                       sigma_h=float(np.sum(area * np.sqrt(det))))


def vertex_metric(mesh, metric):
    """Vertex tensors as the mean of incident element tensors."""
    n = mesh.n_vertices
    acc = np.zeros((n, 2, 2))
    cnt = np.zeros(n)
    tri = mesh.triangles
    for c in range(3):
        np.add.at(acc, tri[:, c], metric.tensors)
        np.add.at(cnt, tri[:, c], 1.0)
    return acc / cnt[:, None, None]
