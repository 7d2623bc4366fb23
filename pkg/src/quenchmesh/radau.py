"""Implicit Radau IIA (order 5) stepper for index-1 DAEs

    M(t) y' = f(t, y)

with a possibly singular, time-dependent mass matrix.  The collocation
system is solved by simplified Newton with the iteration matrix frozen
at the step start: one real and one complex sparse LU factorization of
(lambda/h) M - J per Jacobian refresh, following the classical RADAU5
construction.  The embedded error estimate is the standard one,
filtered through the real factorization.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NewtonDivergence, SolveError

S6 = 6 ** 0.5

# Butcher tableau abscissae and the inverse-A spectral data.
C = np.array([(4 - S6) / 10, (4 + S6) / 10, 1.0])
E = np.array([-13 - 7 * S6, -13 + 7 * S6, -1]) / 3

MU_REAL = 3 + 3 ** (2 / 3) - 3 ** (1 / 3)
MU_COMPLEX = (3 + 0.5 * (3 ** (1 / 3) - 3 ** (2 / 3))
              - 0.5j * (3 ** (5 / 6) + 3 ** (7 / 6)))

AINV = None  # filled below: exact inverse of the Radau IIA A matrix

T = np.array([
    [0.09443876248897524, -0.14125529502095421, 0.03002919410514742],
    [0.25021312296533332, 0.20412935229379994, -0.38294211275726192],
    [1.0, 1.0, 0.0]])
TI = np.array([
    [4.17871859155190428, 0.32768282076106237, 0.52337644549944951],
    [-4.17871859155190428, -0.32768282076106237, 0.47662355450055044],
    [0.50287263494578682, -2.57192694985560522, 0.59603920482822492]])
TI_REAL = TI[0]
TI_COMPLEX = TI[1] + 1j * TI[2]

_A = np.array([
    [11 / 45 - 7 * S6 / 360, 37 / 225 - 169 * S6 / 1800, -2 / 225 + S6 / 75],
    [37 / 225 + 169 * S6 / 1800, 11 / 45 + 7 * S6 / 360, -2 / 225 - S6 / 75],
    [4 / 9 - S6 / 36, 4 / 9 + S6 / 36, 1 / 9]])
AINV = np.linalg.inv(_A)

NEWTON_MAXITER = 7
MIN_FACTOR = 0.2
MAX_FACTOR = 8.0


def _norm(x, scale):
    return float(np.sqrt(np.mean((x / scale) ** 2)))


class RadauDAE:
    """Adaptive Radau IIA integrator for M(t) y' = f(t, y).

    Parameters
    ----------
    fun, mass, jac : callables of (t, y) / (t); `mass` and `jac` return
        scipy sparse matrices.  `fun` may raise to veto a stage state
        (treated as a Newton failure, forcing a smaller step).
    max_step_fun : optional callable y -> dt cap, re-evaluated each step.
    """

    def __init__(self, fun, mass, jac, t0, y0, rtol=1e-6, atol=1e-9,
                 first_step=None, max_step_fun=None, t_bound=np.inf,
                 error_control=True, newton_maxiter=NEWTON_MAXITER,
                 newton_tol=None, mass_varies=False):
        self.error_control = error_control
        self.mass_varies = mass_varies
        self.newton_maxiter = newton_maxiter
        # scipy-style default: as tight as roundoff allows, no tighter.
        self.newton_tol = (max(10 * np.finfo(float).eps / rtol,
                               min(0.03, rtol ** 0.5))
                           if newton_tol is None else newton_tol)
        self.fun, self.mass, self.jac = fun, mass, jac
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float).copy()
        self.n = len(self.y)
        self.rtol, self.atol = rtol, atol
        self.t_bound = t_bound
        self.max_step_fun = max_step_fun
        self.h = first_step if first_step is not None else 1e-6
        self.h_old = None
        self.err_old = None
        self.Z0 = np.zeros((3, self.n))
        self.current_jac = True
        self._lu_h = None
        self._M = None
        self._J = None
        self.nsteps = self.nfev = self.nlu = 0

    def _factorize(self, h):
        if self._lu_h == h and self._lu is not None:
            return
        A_real = (MU_REAL / h) * self._M - self._J
        A_cplx = (MU_COMPLEX / h) * self._M.astype(complex) - self._J
        self._lu = splu(sp.csc_matrix(A_real))
        self._lu_c = splu(sp.csc_matrix(A_cplx))
        self._lu_h = h
        self.nlu += 1

    def _newton(self, t, y, h, scale):
        Z = self.Z0.copy()
        W = TI @ Z
        Mh = self._M
        M_stage = ([sp.csc_matrix(self.mass(t + h * ci)) for ci in C]
                   if self.mass_varies else None)
        F = np.empty((3, self.n))
        dW_norm_old = None
        rate = None
        converged = False
        maxiter, tol = self.newton_maxiter, self.newton_tol
        for k in range(maxiter):
            for i in range(3):
                F[i] = self.fun(t + h * C[i], y + Z[i])
            self.nfev += 3
            if not np.all(np.isfinite(F)):
                break
            if M_stage is None:
                f_real = F.T @ TI_REAL - (MU_REAL / h) * (Mh @ W[0])
                f_cplx = (F.T @ TI_COMPLEX
                          - (MU_COMPLEX / h) * (Mh @ (W[1] + 1j * W[2])))
            else:
                # Exact residual with stage-time mass matrices; only the
                # iteration matrix stays frozen at the step start.
                AZ = (AINV @ Z) / h
                R = np.stack([M_stage[i] @ AZ[i] - F[i] for i in range(3)])
                f_real = -(TI_REAL @ R)
                f_cplx = -(TI_COMPLEX @ R)
            dW = np.empty((3, self.n))
            dW[0] = self._lu.solve(f_real)
            dwc = self._lu_c.solve(f_cplx)
            dW[1], dW[2] = dwc.real, dwc.imag
            dW_norm = _norm(dW, scale)
            if dW_norm_old is not None and dW_norm_old > 0:
                rate = dW_norm / dW_norm_old
                if rate >= 1 or rate ** (maxiter - k) / (1 - rate) \
                        * dW_norm > tol:
                    break
            W += dW
            Z = T @ W
            if dW_norm == 0 or (rate is not None
                                and rate / (1 - rate) * dW_norm < tol):
                converged = True
                break
            dW_norm_old = dW_norm
        return converged, k + 1, Z, rate

    def step(self):
        """Advance one accepted step; returns (t_new, y_new, Z)."""
        t, y = self.t, self.y
        if t >= self.t_bound:
            raise SolveError("step past t_bound")
        max_step = self.t_bound - t
        if self.max_step_fun is not None:
            max_step = min(max_step, self.max_step_fun(y))
        h = min(self.h, max_step)
        if h <= 0 or not np.isfinite(h):
            raise SolveError(f"nonpositive step size {h}")

        self._M = sp.csc_matrix(self.mass(t))
        self._J = sp.csc_matrix(self.jac(t, y))
        self._lu = None
        self._lu_h = None
        try:
            f0 = self.fun(t, y)
        except Exception as exc:  # inconsistent start state
            raise SolveError(f"function evaluation failed at step start: {exc}")
        scale = self.atol + np.abs(y) * self.rtol

        rejected = False
        for _ in range(60):
            if h < 1e-14 * max(abs(t), 1.0):
                raise NewtonDivergence(f"step size underflow at t={t}")
            self._factorize(h)
            try:
                converged, n_iter, Z, rate = self._newton(t, y, h, scale)
            except Exception:
                converged = False
            if not converged:
                h *= 0.5
                rejected = True
                continue

            y_new = y + Z[2]
            if not self.error_control:
                self.t = t + h
                self.y = y_new
                self.Z0 = np.zeros_like(Z)
                self.nsteps += 1
                self._h_taken = h
                return self.t, self.y, Z
            ZE = Z.T @ E / h
            err_vec = self._lu.solve(f0 + self._M @ ZE)
            err = _norm(err_vec, self.atol + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol)
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
            if err > 1 and rejected:
                # Filtered once more through f at the corrected state.
                try:
                    f_err = self.fun(t, y + err_vec)
                    self.nfev += 1
                    err_vec = self._lu.solve(f_err + self._M @ ZE)
                    err = _norm(err_vec, self.atol
                                + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol)
                except Exception:
                    pass
            if err <= 1:
                factor = min(MAX_FACTOR, safety * max(err, 1e-10) ** -0.25)
                self.h = h * factor
                self.t = t + h
                self.y = y_new
                self.Z0 = np.zeros_like(Z)
                self.nsteps += 1
                self._h_taken = h
                return self.t, self.y, Z
            h *= max(MIN_FACTOR, min(0.9, safety * err ** -0.25))
            rejected = True
        raise NewtonDivergence(f"no accepted step after retries at t={t}")

    def dense_eval(self, t, t0, h, y0, Z):
        """Collocation polynomial value at time t within the last step."""
        x = (t - t0) / h
        # Lagrange basis through (0, y0) and (c_i, y0 + Z_i) nodes of the
        # cubic collocation polynomial.
        nodes = np.concatenate([[0.0], C])
        vals = np.vstack([np.zeros(self.n), Z])
        out = np.zeros(self.n)
        for i in range(4):
            L = 1.0
            for j in range(4):
                if j != i:
                    L *= (x - nodes[j]) / (nodes[i] - nodes[j])
            out += L * vals[i]
        return y0 + out
