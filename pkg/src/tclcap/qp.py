"""Sparse convex quadratic programming by operator splitting.

Solves

    minimize    0.5 x' P x + q' x
    subject to  l <= A x <= u

with P symmetric positive semidefinite.  Equality rows are expressed as
l == u.  The algorithm alternates a regularized KKT solve with a projection
onto the bound box, with over-relaxation, after diagonally equilibrating the
problem data.  A single sparse LU factorization is reused across iterations
and refreshed only when the step-size vector is rescaled.

Everything is deterministic for fixed inputs: no randomization, and the
linear algebra is a serial sparse LU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import sparse_io

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-detected"

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3
EQ_TOL = 1e-12


@dataclass
class QpProblem:
    """Problem data; matrices may be given dense or sparse."""

    p_mat: sp.csc_matrix
    q: np.ndarray
    a_mat: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.p_mat = sp.csc_matrix(self.p_mat)
        self.a_mat = sp.csc_matrix(self.a_mat)
        self.q = np.asarray(self.q, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.q.size
        m = self.lower.size
        if self.p_mat.shape != (n, n):
            raise ValueError("cost matrix shape inconsistent with q")
        if self.a_mat.shape != (m, n):
            raise ValueError("constraint matrix shape inconsistent with bounds")
        if self.upper.size != m:
            raise ValueError("lower and upper must have equal length")
        if np.any(self.lower > self.upper + 1e-15):
            raise ValueError("lower bound exceeds upper bound")
        asym = abs(self.p_mat - self.p_mat.T)
        if asym.nnz and asym.max() > 1e-10 * max(1.0, abs(self.p_mat).max()):
            raise ValueError("cost matrix must be symmetric")

    @property
    def n_var(self) -> int:
        return self.q.size

    @property
    def n_con(self) -> int:
        return self.lower.size

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ (self.p_mat @ x)) + float(self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    polished: bool = False
    info: dict = field(default_factory=dict)


def save_problem(prefix, problem: QpProblem) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    sparse_io.write_triplets(f"{prefix}_A.csv", problem.a_mat)
    sparse_io.write_bounds(f"{prefix}_bounds.csv", problem.lower, problem.upper)
    sparse_io.write_triplets(f"{prefix}_P.csv", problem.p_mat)
    sparse_io.write_vector(f"{prefix}_q.csv", problem.q)
    sparse_io.write_header(f"{prefix}.json", {
        "format": "tclcap-qp-v1",
        "n_var": problem.n_var,
        "n_row": problem.n_con,
        "files": {"A": f"{prefix.name}_A.csv", "bounds": f"{prefix.name}_bounds.csv",
                  "P": f"{prefix.name}_P.csv", "q": f"{prefix.name}_q.csv"},
    })


def load_problem(prefix) -> QpProblem:
    prefix = Path(prefix)
    header = sparse_io.read_header(f"{prefix}.json")
    n, m = header["n_var"], header["n_row"]
    files = header["files"]
    a_mat = sparse_io.read_triplets(prefix.parent / files["A"], (m, n))
    lower, upper = sparse_io.read_bounds(prefix.parent / files["bounds"], m)
    if "P" in files:
        p_mat = sparse_io.read_triplets(prefix.parent / files["P"], (n, n))
        q = sparse_io.read_vector(prefix.parent / files["q"], n)
    else:
        p_mat = sp.csc_matrix((n, n))
        q = np.zeros(n)
    return QpProblem(p_mat=p_mat, q=q, a_mat=a_mat, lower=lower, upper=upper)


def _ruiz_equilibrate(p_mat, q, a_mat, iters=10):
    """Symmetric inf-norm equilibration of the KKT block matrix plus cost scaling."""
    n = q.size
    m = a_mat.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    p_s = p_mat.copy()
    a_s = a_mat.copy()
    for _ in range(iters):
        col_p = np.asarray(abs(p_s).max(axis=0).todense()).ravel() if p_s.nnz else np.zeros(n)
        col_a = np.asarray(abs(a_s).max(axis=0).todense()).ravel() if a_s.nnz else np.zeros(n)
        row_a = np.asarray(abs(a_s).max(axis=1).todense()).ravel() if a_s.nnz else np.zeros(m)
        norm_x = np.maximum(col_p, col_a)
        dd = 1.0 / np.sqrt(np.where(norm_x > 1e-10, norm_x, 1.0))
        ee = 1.0 / np.sqrt(np.where(row_a > 1e-10, row_a, 1.0))
        d *= dd
        e *= ee
        d_diag = sp.diags(dd)
        p_s = d_diag @ p_s @ d_diag
        a_s = sp.diags(ee) @ a_s @ d_diag
    q_s = d * q
    # cost scaling keeps the scaled objective O(1)
    col_p = np.asarray(abs(p_s).max(axis=0).todense()).ravel() if p_s.nnz else np.zeros(n)
    denom = max(np.mean(col_p) if n else 0.0, np.linalg.norm(q_s, np.inf) if n else 0.0)
    c = 1.0 / denom if denom > 1e-10 else 1.0
    return c * p_s.tocsc(), c * q_s, a_s.tocsc(), d, e, c


class _Workspace:
    def __init__(self, p_s, q_s, a_s, l_s, u_s, sigma, rho_bar):
        self.p_s, self.q_s, self.a_s = p_s, q_s, a_s
        self.l_s, self.u_s = l_s, u_s
        self.sigma = sigma
        self.n = q_s.size
        self.m = l_s.size
        self.is_eq = (u_s - l_s) < EQ_TOL
        self.set_rho(rho_bar)

    def set_rho(self, rho_bar):
        self.rho_bar = rho_bar
        rho = np.full(self.m, rho_bar)
        rho[self.is_eq] = min(rho_bar * RHO_EQ_SCALE, RHO_MAX)
        self.rho = np.clip(rho, RHO_MIN, RHO_MAX)
        self.rho_inv = 1.0 / self.rho
        kkt = sp.bmat([
            [self.p_s + self.sigma * sp.eye(self.n), self.a_s.T],
            [self.a_s, -sp.diags(self.rho_inv)],
        ], format="csc")
        self.factor = spla.splu(kkt)


def solve(problem: QpProblem, tol_abs: float = 1e-6, tol_rel: float = 1e-6,
          max_iter: int = 200_000, polish: bool = True, scaling_iters: int = 10,
          sigma: float = 1e-6, alpha: float = 1.6, rho: float = 0.1,
          check_every: int = 25, adaptive_rho: bool = True,
          x0: np.ndarray | None = None, y0: np.ndarray | None = None) -> QpSolution:
    """Run the splitting iteration until both residuals meet tolerance.

    Residuals are measured on the original (unequilibrated) data:
    primal ||Ax - z||_inf against tol_abs + tol_rel * max(||Ax||, ||z||),
    dual ||Px + q + A'y||_inf against tol_abs + tol_rel * max(||Px||, ||A'y||, ||q||).
    """
    n, m = problem.n_var, problem.n_con
    p_s, q_s, a_s, d, e, c = _ruiz_equilibrate(problem.p_mat, problem.q,
                                               problem.a_mat, scaling_iters)
    l_s = e * problem.lower
    u_s = e * problem.upper
    d_inv = 1.0 / d
    e_inv = 1.0 / e

    work = _Workspace(p_s, q_s, a_s, l_s, u_s, sigma, rho)

    x = np.zeros(n) if x0 is None else d_inv * np.asarray(x0, dtype=float)
    z = a_s @ x
    y = np.zeros(m) if y0 is None else (1.0 / c) * e_inv * np.asarray(y0, dtype=float)
    y_prev = y.copy()

    status = MAX_ITER
    pri_res = np.inf
    dua_res = np.inf
    it = 0
    refactors = 0

    def unscaled_residuals(x, z, y):
        x_u = d * x
        y_u = (1.0 / c) * e * y
        ax = problem.a_mat @ x_u
        z_u = e_inv * z
        pri = np.linalg.norm(ax - z_u, np.inf) if m else 0.0
        px = problem.p_mat @ x_u
        aty = problem.a_mat.T @ y_u if m else np.zeros(n)
        dua = np.linalg.norm(px + problem.q + aty, np.inf)
        eps_pri = tol_abs + tol_rel * max(
            np.linalg.norm(ax, np.inf) if m else 0.0,
            np.linalg.norm(z_u, np.inf) if m else 0.0)
        eps_dua = tol_abs + tol_rel * max(
            np.linalg.norm(px, np.inf),
            np.linalg.norm(aty, np.inf) if m else 0.0,
            np.linalg.norm(problem.q, np.inf))
        return pri, dua, eps_pri, eps_dua, px, aty

    for it in range(1, max_iter + 1):
        rhs = np.concatenate([work.sigma * x - q_s, z - work.rho_inv * y])
        sol = work.factor.solve(rhs)
        x_tilde = sol[:n]
        nu = sol[n:]
        z_tilde = z + work.rho_inv * (nu - y)

        x = alpha * x_tilde + (1.0 - alpha) * x
        z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
        z_new = np.clip(z_relaxed + work.rho_inv * y, l_s, u_s)
        y_prev, y = y, y + work.rho * (z_relaxed - z_new)
        z = z_new

        if it % check_every == 0 or it == max_iter:
            pri_res, dua_res, eps_pri, eps_dua, _, _ = unscaled_residuals(x, z, y)
            if pri_res <= eps_pri and dua_res <= eps_dua:
                status = OPTIMAL
                break
            if m and _primal_infeasibility_certificate(problem, work,
                                                       y - y_prev, d, e, c):
                status = INFEASIBLE
                break
            if adaptive_rho and m:
                scale_pri = max(np.linalg.norm(a_s @ x, np.inf),
                                np.linalg.norm(z, np.inf), 1e-10)
                scale_dua = max(np.linalg.norm(p_s @ x, np.inf),
                                np.linalg.norm(a_s.T @ y, np.inf),
                                np.linalg.norm(q_s, np.inf), 1e-10)
                pri_sc = np.linalg.norm(a_s @ x - z, np.inf) / scale_pri
                dua_sc = np.linalg.norm(p_s @ x + q_s + a_s.T @ y, np.inf) / scale_dua
                ratio = np.sqrt(max(pri_sc, 1e-14) / max(dua_sc, 1e-14))
                if ratio > 5.0 or ratio < 0.2:
                    new_rho = float(np.clip(work.rho_bar * ratio, RHO_MIN, RHO_MAX))
                    if new_rho != work.rho_bar:
                        work.set_rho(new_rho)
                        refactors += 1

    x_u = d * x
    y_u = (1.0 / c) * e * y
    pri_res, dua_res, _, _, _, _ = unscaled_residuals(x, z, y)

    polished = False
    if polish and status == OPTIMAL and m:
        result = _polish(problem, x_u, y_u, (pri_res, dua_res), sigma)
        if result is not None:
            x_u, y_u, pri_res, dua_res = result
            polished = True

    return QpSolution(
        x=x_u, y=y_u, status=status, iterations=it,
        primal_residual=pri_res, dual_residual=dua_res,
        objective=problem.objective(x_u) if status != INFEASIBLE else np.inf,
        polished=polished,
        info={"rho_final": work.rho_bar, "refactorizations": refactors},
    )


def _primal_infeasibility_certificate(problem, work, delta_y, d, e, c,
                                      eps: float = 1e-9) -> bool:
    """OSQP-style certificate: a dual direction proving l <= Ax <= u is empty."""
    norm = np.linalg.norm(delta_y, np.inf)
    if norm <= eps:
        return False
    v = delta_y / norm
    finite_u = np.isfinite(problem.upper)
    finite_l = np.isfinite(problem.lower)
    v_u = (1.0 / c) * e * v
    if np.any(~finite_u & (v_u > eps)) or np.any(~finite_l & (v_u < -eps)):
        return False
    support = (np.sum(problem.upper[finite_u] * np.maximum(v_u[finite_u], 0.0))
               + np.sum(problem.lower[finite_l] * np.minimum(v_u[finite_l], 0.0)))
    at_v = np.linalg.norm((1.0 / d) * (work.a_s.T @ v), np.inf)
    scale = np.linalg.norm(v_u, np.inf)
    return support < -eps * max(1.0, scale) and at_v < eps * max(1.0, scale)


def _polish(problem: QpProblem, x: np.ndarray, y: np.ndarray,
            current_res: tuple, delta: float = 1e-7, refine_iters: int = 3,
            max_rounds: int = 4):
    """Active-set refinement on the converged iterate.

    Guesses active rows from the dual signs and solves the reduced equality
    system with light regularization and iterative refinement.  Rows whose
    equality multiplier comes back with the wrong sign were misidentified;
    they are dropped and the solve repeated.  The result is kept only when
    it is dual-sign feasible and does not worsen either residual.
    """
    low_active = (y < 0) & np.isfinite(problem.lower)
    upp_active = (y > 0) & np.isfinite(problem.upper)
    n = problem.n_var
    sign_tol = max(1e-8, 1e-6 * float(np.linalg.norm(y, np.inf)))

    for _ in range(max_rounds):
        low_idx = np.where(low_active)[0]
        upp_idx = np.where(upp_active)[0]
        active = np.concatenate([low_idx, upp_idx])
        if active.size == 0:
            return None
        a_red = problem.a_mat[active]
        k = active.size
        kkt = sp.bmat([
            [problem.p_mat + delta * sp.eye(n), a_red.T],
            [a_red, -delta * sp.eye(k)],
        ], format="csc")
        rhs = np.concatenate([-problem.q, problem.lower[low_idx],
                              problem.upper[upp_idx]])
        try:
            factor = spla.splu(kkt)
        except RuntimeError:
            return None
        sol = factor.solve(rhs)
        # iterative refinement against the unregularized system
        kkt_exact = sp.bmat([[problem.p_mat, a_red.T],
                             [a_red, sp.csc_matrix((k, k))]], format="csc")
        for _ in range(refine_iters):
            sol = sol + factor.solve(rhs - kkt_exact @ sol)
        y_red = sol[n:]
        # equality rows may carry either sign; inequality rows may not
        is_eq = (problem.upper[active] - problem.lower[active]) < EQ_TOL
        n_low = low_idx.size
        wrong = np.zeros(k, dtype=bool)
        wrong[:n_low] = (y_red[:n_low] > sign_tol) & ~is_eq[:n_low]
        wrong[n_low:] = (y_red[n_low:] < -sign_tol) & ~is_eq[n_low:]
        if not wrong.any():
            break
        low_active[low_idx[wrong[:n_low]]] = False
        upp_active[upp_idx[wrong[n_low:]]] = False
    else:
        return None

    x_pol = sol[:n]
    y_pol = np.zeros(problem.n_con)
    y_pol[active] = y_red

    ax_pol = problem.a_mat @ x_pol
    pri = float(np.max(np.maximum(problem.lower - ax_pol, 0.0)
                       + np.maximum(ax_pol - problem.upper, 0.0)))
    dua = float(np.linalg.norm(problem.p_mat @ x_pol + problem.q
                               + problem.a_mat.T @ y_pol, np.inf))
    pri_old, dua_old = current_res
    if (pri <= pri_old or pri < 1e-10) and (dua <= dua_old or dua < 1e-10):
        return x_pol, y_pol, pri, dua
    return None


def kkt_residuals(problem: QpProblem, x: np.ndarray, y: np.ndarray) -> dict:
    """Independent KKT check: stationarity, feasibility, complementary slackness."""
    ax = problem.a_mat @ x
    stationarity = float(np.linalg.norm(
        problem.p_mat @ x + problem.q + problem.a_mat.T @ y, np.inf))
    primal = float(np.max(np.maximum(problem.lower - ax, 0.0)
                          + np.maximum(ax - problem.upper, 0.0))) if problem.n_con else 0.0
    comp = 0.0
    for i in range(problem.n_con):
        if problem.upper[i] - problem.lower[i] < EQ_TOL:
            continue
        if y[i] > 0:
            comp = max(comp, abs(y[i]) * max(problem.upper[i] - ax[i], 0.0)
                       if np.isfinite(problem.upper[i]) else abs(y[i]))
        elif y[i] < 0:
            comp = max(comp, abs(y[i]) * max(ax[i] - problem.lower[i], 0.0)
                       if np.isfinite(problem.lower[i]) else abs(y[i]))
    return {"stationarity": stationarity, "primal": primal, "complementarity": comp}
