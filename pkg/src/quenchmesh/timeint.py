"""Time integration driver: mesh-movement slabs wrapped around an
implicit DAE integrator for the mixed fourth-order system.

Each slab [t_n, t_n + dt]:
  1. recover the adaptation metric from the current solution (plus the
     hole-concentration term on domains with holes),
  2. move the mesh for the slab duration; vertices travel linearly in
     time inside the slab,
  3. integrate the mixed system M(X) dU/dt = eps^2 B(X) V + F(X, Xdot, U),
     0 = M(X) V + B(X) U over the slab with stage-exact mass matrices.

The run stops when min u crosses the stop threshold STOP_U = -0.99; the
crossing time is refined with the collocation dense output.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from . import fem
from .errors import MeshTangled, SolveError
from .metric import hole_adjusted_metric, metric_tensor
from .mmpde import MoveContext, move_mesh
from .radau import RadauDAE

STOP_U = -0.99          # stop rule: min nodal u reaches this value
HARD_FLOOR = 0.003      # 1 + u below this vetoes a stage evaluation
DEFAULT_TAU = 0.01
DEFAULT_CQ = 0.1


@dataclass
class SlabRecord:
    t: float
    dt: float
    min_u: float
    n_steps: int
    mesh_energy: float


@dataclass
class SimulationResult:
    quenched: bool
    t_final: float
    mesh: object
    U: np.ndarray               # full nodal vector (boundary zeros)
    V: np.ndarray
    eps: float
    history: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    @property
    def min_u(self):
        return float(self.U.min())


def consistent_laplacian(mesh, U_int):
    """Interior Laplacian variable from the constraint M V = -B U."""
    M = fem.assemble_mass(mesh)
    B = fem.assemble_stiffness(mesh)
    return spsolve(sp.csc_matrix(M), -B @ U_int)


class _SlabSystem:
    """fun/mass/jac providers for one slab with linearly moving vertices."""

    def __init__(self, mesh, x_start, x_end, t0, dt, eps):
        self.mesh = mesh
        self.x0, self.x1 = x_start, x_end
        self.t0, self.dt = t0, dt
        self.eps2 = eps * eps
        self.ni = mesh.n_interior
        self.xdot = ((x_end - x_start) / dt if dt > 0
                     else np.zeros_like(x_start))
        self.static = not np.any(self.xdot)
        self._cache = {}

    def _verts(self, t):
        if self.static:
            return self.x0
        w = np.clip((t - self.t0) / self.dt, 0.0, 1.0)
        return self.x0 + w * (self.x1 - self.x0)

    def _matrices(self, t):
        key = 0.0 if self.static else float(t)
        hit = self._cache.get(key)
        if hit is None:
            v = self._verts(t)
            M = sp.csc_matrix(fem.assemble_mass(self.mesh, vertices=v))
            B = sp.csc_matrix(fem.assemble_stiffness(self.mesh, vertices=v))
            hit = (v, M, B)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def fun(self, t, y):
        U, V = y[:self.ni], y[self.ni:]
        if 1.0 + U.min() <= HARD_FLOOR:
            raise SolveError("state below hard evaluation floor")
        v, M, B = self._matrices(t)
        xdot = None if self.static else self.xdot
        F = fem.assemble_load(self.mesh, U, mesh_velocity=xdot,
                              vertices=v, check_quench=False)
        return np.concatenate([self.eps2 * (B @ V) + F, -(M @ V + B @ U)])

    def mass(self, t):
        _, M, _ = self._matrices(t)
        ni = self.ni
        return sp.bmat([[M, None], [None, sp.csc_matrix((ni, ni))]],
                       format="csc")

    def jac(self, t, y):
        U = y[:self.ni]
        v, M, B = self._matrices(t)
        xdot = None if self.static else self.xdot
        dFdU = fem.assemble_source_jacobian(self.mesh, U, mesh_velocity=xdot,
                                            vertices=v)
        return sp.bmat([[dFdU, self.eps2 * B], [-B, -M]], format="csc")


def _quench_crossing(stepper, t_prev, y_prev, Z, ni):
    """Crossing time of min U through STOP_U inside the last step."""
    h = stepper._h_taken

    def worst(t):
        y = stepper.dense_eval(t, t_prev, h, y_prev, Z)
        return float(y[:ni].min()) - STOP_U

    lo, hi = t_prev, stepper.t
    if worst(lo) <= 0:
        return lo
    return brentq(worst, lo, hi, xtol=1e-14)


def integrate_slab(mesh, x_start, x_end, t0, dt, U_int, V_int, eps,
                   rtol=1e-6, atol=1e-8, c_q=DEFAULT_CQ, first_step=None):
    """Integrate the mixed system over one slab.

    Returns (t_reached, U_int, V_int, quench_t_or_None, suggested_dt,
    n_steps).  t_reached < t0 + dt only when the quench threshold was
    crossed inside the slab.
    """
    sys_ = _SlabSystem(mesh, x_start, x_end, t0, dt, eps)
    ni = sys_.ni
    y0 = np.concatenate([U_int, V_int])

    def cap(y):
        return max(c_q * (1.0 + float(y[:ni].min())) ** 3, 1e-14)

    stepper = RadauDAE(sys_.fun, sys_.mass, sys_.jac, t0, y0,
                       rtol=rtol, atol=atol, t_bound=t0 + dt,
                       first_step=first_step, max_step_fun=cap,
                       mass_varies=not sys_.static)
    t_end = t0 + dt
    while stepper.t < t_end - 1e-13 * max(1.0, abs(t_end)):
        t_prev, y_prev = stepper.t, stepper.y.copy()
        t, y, Z = stepper.step()
        if float(y[:ni].min()) <= STOP_U:
            tq = _quench_crossing(stepper, t_prev, y_prev, Z, ni)
            yq = stepper.dense_eval(tq, t_prev, stepper._h_taken, y_prev, Z)
            return tq, yq[:ni], yq[ni:], tq, stepper.h, stepper.nsteps
    y = stepper.y
    return stepper.t, y[:ni], y[ni:], None, stepper.h, stepper.nsteps


def run_simulation(domain, eps, target_N=8000, tau=DEFAULT_TAU, rtol=1e-6,
                   atol=1e-8, c_q=DEFAULT_CQ, mesh=None, structured=None,
                   move=True, dt_init=None, max_slabs=100000,
                   snapshot_times=(), mmpde_rtol=1e-4, callback=None):
    """Full adaptive run from u = 0 to the quench threshold.

    Returns a SimulationResult whose t_final is the refined quench time
    when `quenched` is true.
    """
    from .mesh import generate_initial_mesh

    if mesh is None:
        mesh = generate_initial_mesh(domain, target_N, structured=structured)
    ref_comp = mesh
    holes = [c for c in domain.curves if c.is_hole]
    move_ctx = MoveContext(mesh, domain) if move else None

    ni = mesh.n_interior
    U = np.zeros(ni)
    V = np.zeros(ni)
    t = 0.0
    dt = c_q if dt_init is None else dt_init
    history = []
    snapshots = {}
    snap_left = sorted(snapshot_times)
    first_step = min(1e-6, dt)

    for _ in range(max_slabs):
        x_start = mesh.vertices
        diag = {}
        if move:
            u_full = np.concatenate([U, np.zeros(mesh.n_vertices - ni)])
            metric = metric_tensor(mesh, u_full)
            if holes:
                metric = hole_adjusted_metric(metric, mesh, holes)
            if np.isfinite(metric.alpha_h) or holes:
                try:
                    mesh_new = move_mesh(mesh, ref_comp, metric, domain, tau,
                                         dt, rtol=mmpde_rtol,
                                         diagnostics=diag, context=move_ctx)
                except MeshTangled:
                    mesh_new = mesh  # keep the old mesh for this slab
            else:
                mesh_new = mesh
        else:
            mesh_new = mesh

        t_new, U, V, tq, dt_next, n_steps = integrate_slab(
            mesh, x_start, mesh_new.vertices, t, dt, U, V, eps,
            rtol=rtol, atol=atol, c_q=c_q, first_step=first_step)

        # State now lives on the moved mesh (or partially moved at quench).
        if tq is not None and dt > 0:
            w = np.clip((tq - t) / dt, 0.0, 1.0)
            verts_q = x_start + w * (mesh_new.vertices - x_start)
            mesh = mesh.with_vertices(verts_q, check=False)
        else:
            mesh = mesh_new
        t = t_new

        min_u = float(U.min())
        history.append(SlabRecord(t=t, dt=dt, min_u=min_u, n_steps=n_steps,
                                  mesh_energy=diag.get("I_h", np.nan)))
        if callback is not None:
            callback(t, mesh, U)
        while snap_left and t >= snap_left[0]:
            st = snap_left.pop(0)
            snapshots[st] = (mesh, _full(mesh, U).copy())
        if tq is not None:
            return SimulationResult(quenched=True, t_final=tq, mesh=mesh,
                                    U=_full(mesh, U), V=_full(mesh, V),
                                    eps=eps, history=history,
                                    snapshots=snapshots)
        # Slab length: the quench-adaptive cap.  The PDE integrator keeps
        # its own (smaller) adaptive steps inside the slab; the mesh is
        # refreshed once per slab.
        dt = max(c_q * (1.0 + min_u) ** 3, 1e-13)
        first_step = min(dt_next, dt)
    raise SolveError("slab limit reached before the quench threshold")


def _full(mesh, w_int):
    out = np.zeros(mesh.n_vertices)
    out[:mesh.n_interior] = w_int
    return out


@dataclass
class Trough:
    location: np.ndarray
    value: float
    vertex: int


def extract_troughs(mesh, U, level=-0.5, merge_factor=3.0):
    """Local minima of the nodal field below `level`, merged within
    merge_factor * local mesh size, with quadratic sub-mesh refinement."""
    rings = mesh.vertex_rings()
    h_loc = mesh.local_h()
    cands = [i for i in range(mesh.n_vertices)
             if U[i] < level and len(rings[i]) > 0
             and U[i] <= U[rings[i]].min()]
    cands.sort(key=lambda i: U[i])
    kept = []
    for i in cands:
        if all(np.hypot(*(mesh.vertices[i] - mesh.vertices[j]))
               > merge_factor * max(h_loc[i], h_loc[j]) for j in kept):
            kept.append(i)
    troughs = []
    for i in kept:
        patch = np.concatenate([[i], rings[i]])
        if len(patch) < 6:  # too few points for a quadratic: use the 2-ring
            ext = set(patch.tolist())
            for j in rings[i]:
                ext.update(rings[j].tolist())
            patch = np.fromiter(ext, dtype=np.int64)
        loc, val = _quadratic_refine(mesh.vertices[patch], U[patch],
                                     mesh.vertices[i], U[i], h_loc[i])
        troughs.append(Trough(location=loc, value=val, vertex=i))
    return troughs


def touchdown_troughs(mesh, U, window=0.1, level=-0.5, merge_factor=3.0):
    """Troughs that participate in the quench event: local minima whose
    depth is within `window` of the deepest one.  Near-simultaneous
    touchdown points land within a few thousandths of the stop threshold;
    secondary dips that were outrun by the quench stay far shallower."""
    troughs = extract_troughs(mesh, U, level=level, merge_factor=merge_factor)
    if not troughs:
        return troughs
    deepest = troughs[0].value
    return [tr for tr in troughs if tr.value <= deepest + window]


def _quadratic_refine(pts, vals, x0, v0, h):
    """Minimum of the least-squares quadratic through the patch; falls
    back to the vertex when the fit is not convex or strays too far."""
    d = pts - x0
    A = np.column_stack([np.ones(len(pts)), d[:, 0], d[:, 1],
                         0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1],
                         0.5 * d[:, 1] ** 2])
    if len(pts) < 6:
        return x0.copy(), float(v0)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    c0, g, H = coef[0], coef[1:3], np.array([[coef[3], coef[4]],
                                             [coef[4], coef[5]]])
    evals = np.linalg.eigvalsh(H)
    if evals[0] <= 0:
        return x0.copy(), float(v0)
    step = -np.linalg.solve(H, g)
    if np.hypot(*step) > h:
        return x0.copy(), float(v0)
    return x0 + step, float(c0 + g @ step + 0.5 * step @ H @ step)
