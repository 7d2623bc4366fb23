"""Linear finite elements for the mixed second-order system on a moving mesh.

The fourth-order problem is integrated as the index-1 DAE

    M(X) dU/dt = eps^2 B(X) V + F(X, Xdot, U)
    0          = M(X) V + B(X) U

on interior vertices (u = v = 0 on the boundary), where M is the
consistent mass matrix, B the stiffness matrix, and F collects the
nonlinear source -1/(1+u)^2 together with the mesh-velocity convection
term (grad u . Xdot, psi) arising from the time-dependent basis.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElement, QuenchReached

# Touchdown threshold: integration stops once min(1 + U) <= this.
QUENCH_FLOOR = 0.01

# Interior 3-point order-2 quadrature on the reference triangle.
QUAD_BARY = np.array([
    [2 / 3, 1 / 6, 1 / 6],
    [1 / 6, 2 / 3, 1 / 6],
    [1 / 6, 1 / 6, 2 / 3],
])
QUAD_W = np.array([1 / 3, 1 / 3, 1 / 3])


def element_geometry(mesh, vertices=None):
    """Per-element areas and P1 basis gradients (nt, 3, 2)."""
    v = mesh.vertices if vertices is None else vertices
    p = v[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 2e-14):
        raise DegenerateElement("degenerate element in assembly")
    area = 0.5 * det
    # grad psi_i: rotate opposite edge by 90 degrees / (2A)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    grads = np.stack([
        np.stack([-e0[:, 1], e0[:, 0]], axis=1),
        np.stack([-e1[:, 1], e1[:, 0]], axis=1),
        np.stack([-e2[:, 1], e2[:, 0]], axis=1),
    ], axis=1) / det[:, None, None]
    return area, grads


def _assemble(mesh, local, n=None):
    """Scatter (nt, 3, 3) local matrices into a CSR matrix."""
    n = n or mesh.n_vertices
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return A.tocsr()


def assemble_mass(mesh, vertices=None, reduce=True):
    """Consistent P1 mass matrix (|K|/12 off-diagonal, |K|/6 diagonal)."""
    area, _ = element_geometry(mesh, vertices)
    base = np.full((3, 3), 1.0 / 12.0)
    np.fill_diagonal(base, 1.0 / 6.0)
    local = area[:, None, None] * base
    M = _assemble(mesh, local)
    if reduce:
        ni = mesh.n_interior
        return M[:ni, :ni].tocsr()
    return M


def assemble_stiffness(mesh, vertices=None, reduce=True):
    """P1 stiffness matrix; annihilates constants before boundary reduction."""
    area, grads = element_geometry(mesh, vertices)
    local = area[:, None, None] * np.einsum("kid,kjd->kij", grads, grads)
    B = _assemble(mesh, local)
    if reduce:
        ni = mesh.n_interior
        return B[:ni, :ni].tocsr()
    return B


def _full_vector(mesh, U_int):
    U = np.zeros(mesh.n_vertices)
    U[:mesh.n_interior] = U_int
    return U


def assemble_load(mesh, U_int, mesh_velocity=None, vertices=None,
                  check_quench=True, reduce=True):
    """Load vector F_j = -(psi_j, 1/(1+u)^2) + (psi_j, grad u . Xdot).

    U_int holds interior nodal values; boundary values are zero.
    mesh_velocity is an (n_vertices, 2) nodal speed array (None = static).
    """
    U = _full_vector(mesh, U_int)
    if check_quench and np.min(1.0 + U) <= QUENCH_FLOOR:
        raise QuenchReached(t=None, min_u=float(np.min(U)))
    area, grads = element_geometry(mesh, vertices)
    tri = mesh.triangles
    u_loc = U[tri]                                      # (nt, 3)
    u_q = u_loc @ QUAD_BARY.T                           # (nt, q)
    integrand = -1.0 / (1.0 + u_q) ** 2                 # (nt, q)
    if mesh_velocity is not None:
        gradu = np.einsum("ki,kid->kd", u_loc, grads)   # (nt, 2)
        xd_loc = mesh_velocity[tri]                     # (nt, 3, 2)
        xd_q = np.einsum("qi,kid->kqd", QUAD_BARY, xd_loc)
        integrand = integrand + np.einsum("kd,kqd->kq", gradu, xd_q)
    # F_j += w_q |K| integrand_q psi_j(q)
    local = np.einsum("q,kq,qj->kj", QUAD_W, integrand, QUAD_BARY) * area[:, None]
    F = np.zeros(mesh.n_vertices)
    np.add.at(F, tri.ravel(), local.ravel())
    return F[:mesh.n_interior] if reduce else F


def assemble_source_jacobian(mesh, U_int, mesh_velocity=None, vertices=None):
    """d F / d U: 2/(1+u)^3 weighted mass plus the convection coupling."""
    U = _full_vector(mesh, U_int)
    area, grads = element_geometry(mesh, vertices)
    tri = mesh.triangles
    u_q = U[tri] @ QUAD_BARY.T
    w = 2.0 / (1.0 + u_q) ** 3                           # (nt, q)
    local = np.einsum("q,kq,qi,qj->kij", QUAD_W, w, QUAD_BARY, QUAD_BARY)
    local = local * area[:, None, None]
    if mesh_velocity is not None:
        xd_q = np.einsum("qi,kid->kqd", QUAD_BARY, mesh_velocity[tri])
        conv = np.einsum("q,kqd,kid,qj->kji", QUAD_W, xd_q, grads, QUAD_BARY)
        local = local + conv * area[:, None, None]
    D = _assemble(mesh, local)
    ni = mesh.n_interior
    return D[:ni, :ni].tocsr()


def dae_residual(mesh, U_int, Udot_int, V_int, eps, mesh_velocity=None,
                 vertices=None):
    """Residual pair (M Udot - eps^2 B V - F, M V + B U) at given vertices."""
    M = assemble_mass(mesh, vertices)
    B = assemble_stiffness(mesh, vertices)
    F = assemble_load(mesh, U_int, mesh_velocity, vertices)
    r1 = M @ Udot_int - eps**2 * (B @ V_int) - F
    r2 = M @ V_int + B @ U_int
    return r1, r2
