"""Dense convex solvers for the dispatch problems.

Two problem classes appear online: strictly convex QPs with linear
inequalities (deterministic dispatch) and small SDPs with affine LMI blocks
(stochastic dispatch).  The QP solver is a primal active-set method with a
cached Hessian factorization so receding-horizon calls can warm start.  The
SDP side canonicalizes block problems to the standard inequality form and
hands them to a dense primal-dual interior-point backend; every returned
solution is re-verified eigenvalue-wise, never trusted from solver status
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class NonconvergenceError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals or {}


class InfeasibleError(RuntimeError):
    pass


class SizeCapError(ValueError):
    pass


# ---------------------------------------------------------------------------
# quadratic programming

@dataclass(frozen=True)
class QpProblem:
    """min 1/2 z'Hz + f'z  s.t.  A_ineq z <= b, with H symmetric positive definite."""

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise ValueError("inconsistent H/f dimensions")
        if np.max(np.abs(self.H - self.H.T)) > 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise ValueError("H must be symmetric")
        if self.A_ineq.size and (self.A_ineq.shape[1] != n
                                 or self.b.shape != (self.A_ineq.shape[0],)):
            raise ValueError("inconsistent constraint dimensions")


@dataclass
class QpResult:
    z: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int
    residuals: dict
    active_set: tuple = ()


def qp_kkt_residuals(p: QpProblem, z: np.ndarray, duals: np.ndarray) -> dict:
    """Stationarity, primal feasibility, and complementarity residuals."""
    stat = p.H @ z + p.f
    if p.A_ineq.size:
        stat = stat + p.A_ineq.T @ duals
        slack = p.b - p.A_ineq @ z
        prim = max(0.0, float(np.max(-slack)))
        comp = float(np.max(np.abs(duals * slack))) if duals.size else 0.0
        dual = max(0.0, float(np.max(-duals))) if duals.size else 0.0
    else:
        prim = comp = dual = 0.0
    return {"stationarity": float(np.max(np.abs(stat))), "primal": prim,
            "complementarity": comp, "dual": dual}


class QpSolver:
    """Primal active-set solver bound to one Hessian.

    The Cholesky factor of H is computed once; successive solves with new
    linear terms (and the same constraint matrix) reuse it, and can warm
    start from the previous optimum, which stays feasible when only f
    changes.
    """

    def __init__(self, H: np.ndarray, A_ineq: np.ndarray, b: np.ndarray):
        self.H = np.asarray(H, float)
        self.A = np.asarray(A_ineq, float).reshape(-1, self.H.shape[0]) \
            if np.asarray(A_ineq).size else np.zeros((0, self.H.shape[0]))
        self.b = np.asarray(b, float).reshape(-1)
        self._cho = cho_factor(self.H)
        # cached H^{-1} a_i columns, filled lazily per constraint
        self._hinv_at = {}
        self._last = None

    def _hinv_a(self, i: int) -> np.ndarray:
        col = self._hinv_at.get(i)
        if col is None:
            col = cho_solve(self._cho, self.A[i])
            self._hinv_at[i] = col
        return col

    def solve(self, f: np.ndarray, tol: float = 1e-8, max_iter: int = 200,
              warm_start: bool = True, z0: np.ndarray | None = None) -> QpResult:
        n = self.H.shape[0]
        m = self.A.shape[0]
        z = np.zeros(n) if z0 is None else np.asarray(z0, float).copy()
        work: list[int] = []
        if z0 is not None:
            if m and np.any(self.A @ z > self.b + 1e-9):
                raise ValueError("supplied start point is infeasible")
            work = [i for i in range(m) if abs(self.A[i] @ z - self.b[i]) <= 1e-11]
        elif warm_start and self._last is not None:
            z_prev, w_prev = self._last
            if m == 0 or np.all(self.A @ z_prev <= self.b + 1e-9):
                z = z_prev.copy()
                work = [i for i in w_prev
                        if abs(self.A[i] @ z - self.b[i]) <= 1e-9]
        if m and np.any(self.A @ z > self.b + 1e-12):
            z = _feasible_point(self.A, self.b)
            work = []
        scale = max(1.0, float(np.max(np.abs(f))))
        for it in range(1, max_iter + 1):
            g = self.H @ z + f
            if work:
                aw = self.A[work]
                hg = cho_solve(self._cho, g)
                cols = np.column_stack([self._hinv_a(i) for i in work])
                gram = aw @ cols
                rhs = -(aw @ hg)
                try:
                    mu = np.linalg.solve(gram, rhs)
                except np.linalg.LinAlgError:
                    mu = np.linalg.lstsq(gram, rhs, rcond=None)[0]
                p_step = -hg - cols @ mu
            else:
                mu = np.zeros(0)
                p_step = -cho_solve(self._cho, g)
            if np.max(np.abs(p_step)) <= 1e-12 * scale + 1e-14:
                if mu.size == 0 or np.min(mu) >= -tol * scale:
                    duals = np.zeros(m)
                    for idx, i in enumerate(work):
                        duals[i] = max(mu[idx], 0.0)
                    self._last = (z.copy(), tuple(work))
                    res = qp_kkt_residuals(
                        QpProblem(self.H, f, self.A, self.b), z, duals)
                    return QpResult(z=z, duals=duals, status="optimal",
                                    iterations=it, residuals=res,
                                    active_set=tuple(work))
                drop = int(np.argmin(mu))
                work.pop(drop)
                continue
            alpha = 1.0
            blocker = -1
            if m:
                az = self.A @ z
                ap = self.A @ p_step
                for i in range(m):
                    if i in work or ap[i] <= 1e-14:
                        continue
                    ratio = (self.b[i] - az[i]) / ap[i]
                    if ratio < alpha - 1e-15:
                        alpha = max(ratio, 0.0)
                        blocker = i
            z = z + alpha * p_step
            if blocker >= 0:
                work.append(blocker)
                work.sort()
        raise NonconvergenceError(
            f"active-set QP did not converge in {max_iter} iterations",
            residuals=qp_kkt_residuals(QpProblem(self.H, f, self.A, self.b),
                                       z, np.zeros(m)))


def _feasible_point(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Phase 1: minimize total elastic violation with an LP.

    min 1's  s.t.  Az - s <= b, s >= 0; a zero objective certifies a
    feasible interior start for the active-set iteration.
    """
    from scipy.optimize import linprog
    m, n = a.shape
    res = linprog(c=np.concatenate([np.zeros(n), np.ones(m)]),
                  A_ub=np.hstack([a, -np.eye(m)]), b_ub=b,
                  bounds=[(None, None)] * n + [(0.0, None)] * m,
                  method="highs")
    if not res.success or res.fun > tol:
        raise InfeasibleError("no feasible point found for the inequality system")
    return np.asarray(res.x[:n], float)


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpResult:
    """One-shot solve of a :class:`QpProblem` (fresh workspace, no warm start)."""
    solver = QpSolver(p.H, p.A_ineq, p.b)
    return solver.solve(p.f, tol=tol, max_iter=max_iter, warm_start=False)


def dump_qp(p: QpProblem) -> str:
    """Structured text form for offline cross-checking."""
    parts = ["qp"]
    for name, arr in (("H", p.H), ("f", p.f), ("A", p.A_ineq), ("b", p.b)):
        arr2 = np.atleast_2d(arr)
        parts.append(f"[{name}] {arr2.shape[0]} {arr2.shape[1]}")
        for row in arr2:
            parts.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# semidefinite programming

@dataclass
class _LmiBlock:
    size: int
    const: list = field(default_factory=list)    # (i, j, value)
    terms: list = field(default_factory=list)    # (col, i, j, coeff)

    def add_const(self, i, j, value):
        self.const.append((i, j, float(value)))

    def add_term(self, col, i, j, coeff):
        if coeff != 0.0:
            self.terms.append((col, i, j, float(coeff)))


class SdpProblem:
    """Linear SDP over named scalar/vector/matrix variables.

    Variables are flattened into one decision vector; symmetric matrix
    variables store the upper triangle.  Constraints are affine LMI blocks
    F0 + sum_j z_j Fj >= 0 plus optional scalar inequalities.  The cost is
    linear (vector terms and trace terms against matrix variables).
    """

    def __init__(self):
        self.nz = 0
        self.vars: dict[str, tuple[int, tuple, bool]] = {}
        self.cost = np.zeros(0)
        self.lmis: list[_LmiBlock] = []
        self.lin_rows: list[np.ndarray] = []
        self.lin_rhs: list[float] = []

    # variables -------------------------------------------------------------
    def add_var(self, name: str, shape, symmetric: bool = False) -> str:
        if name in self.vars:
            raise ValueError(f"duplicate variable {name!r}")
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if symmetric:
            if len(shape) != 2 or shape[0] != shape[1]:
                raise ValueError("symmetric variables must be square")
            size = shape[0] * (shape[0] + 1) // 2
        else:
            size = int(np.prod(shape))
        self.vars[name] = (self.nz, shape, symmetric)
        self.nz += size
        self.cost = np.concatenate([self.cost, np.zeros(size)])
        return name

    def col(self, name: str, *idx) -> int:
        off, shape, sym = self.vars[name]
        if len(shape) == 1:
            return off + idx[0]
        i, j = idx
        if sym:
            if i > j:
                i, j = j, i
            n = shape[0]
            return off + i * (2 * n - i - 1) // 2 + j
        return off + i * shape[1] + j

    def value(self, name: str, z: np.ndarray) -> np.ndarray:
        off, shape, sym = self.vars[name]
        if len(shape) == 1:
            return np.asarray(z[off:off + shape[0]], float)
        if sym:
            n = shape[0]
            out = np.zeros(shape)
            k = off
            for i in range(n):
                for j in range(i, n):
                    out[i, j] = out[j, i] = z[k]
                    k += 1
            return out
        return np.asarray(z[off:off + shape[0] * shape[1]], float).reshape(shape)

    # cost --------------------------------------------------------------------
    def add_cost_vector(self, name: str, coeffs):
        coeffs = np.asarray(coeffs, float).ravel()
        off, shape, sym = self.vars[name]
        if sym or len(shape) != 1:
            raise ValueError("add_cost_vector applies to vector variables")
        self.cost[off:off + coeffs.size] += coeffs

    def add_cost_trace(self, name: str, weight: np.ndarray):
        """Add tr(weight @ X) for a symmetric matrix variable X."""
        off, shape, sym = self.vars[name]
        if not sym:
            raise ValueError("add_cost_trace applies to symmetric variables")
        n = shape[0]
        w = 0.5 * (weight + weight.T)
        k = off
        for i in range(n):
            for j in range(i, n):
                self.cost[k] += w[i, j] if i == j else 2.0 * w[i, j]
                k += 1

    # constraints ---------------------------------------------------------------
    def new_lmi(self, size: int) -> _LmiBlock:
        blk = _LmiBlock(size=size)
        self.lmis.append(blk)
        return blk

    def add_lin(self, terms: dict, rhs: float):
        """Scalar inequality sum(coeffs . var) <= rhs; terms maps name -> flat coeffs."""
        row = np.zeros(self.nz)
        for name, coeffs in terms.items():
            off, shape, sym = self.vars[name]
            coeffs = np.asarray(coeffs, float).ravel()
            size = shape[0] * (shape[0] + 1) // 2 if sym else int(np.prod(shape))
            if coeffs.size != size:
                raise ValueError(f"coefficient size mismatch for {name!r}")
            row[off:off + size] += coeffs
        self.lin_rows.append(row)
        self.lin_rhs.append(float(rhs))

    # assembly ------------------------------------------------------------------
    def lmi_matrices(self, k: int, z: np.ndarray = None):
        """Return F(z) for block k, or (F0, columns) when z is None."""
        blk = self.lmis[k]
        s = blk.size
        f0 = np.zeros((s, s))
        for i, j, v in blk.const:
            f0[i, j] += v
            if i != j:
                f0[j, i] += v
        if z is None:
            return f0
        fz = f0.copy()
        for col, i, j, coeff in blk.terms:
            fz[i, j] += coeff * z[col]
            if i != j:
                fz[j, i] += coeff * z[col]
        return fz


@dataclass
class SdpSolution:
    z: np.ndarray
    status: str
    objective: float
    gap: float
    iterations: int


#: Largest admissible decision-vector length; the online stochastic problem
#: grows quadratically with farm size and is only meant for small farms.
SDP_SIZE_CAP = 6000


def solve_sdp(p: SdpProblem, tol: float = 1e-7, size_cap: int = SDP_SIZE_CAP) -> SdpSolution:
    """Solve with the dense primal-dual interior-point backend (cvxopt).

    Raises :class:`SizeCapError` above ``size_cap`` decision scalars,
    :class:`InfeasibleError` on a primal/dual infeasibility certificate, and
    :class:`NonconvergenceError` if the returned point fails an independent
    LMI eigenvalue re-check at ``tol``.
    """
    if p.nz > size_cap:
        raise SizeCapError(
            f"SDP has {p.nz} scalar variables, above the cap {size_cap}; "
            "stochastic dispatch is restricted to small farms")
    from cvxopt import matrix as cvx_matrix
    from cvxopt import solvers as cvx_solvers

    opts = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9,
            "feastol": 1e-9, "maxiters": 200}
    gl = hl = None
    if p.lin_rows:
        gl = cvx_matrix(np.array(p.lin_rows))
        hl = cvx_matrix(np.array(p.lin_rhs))
    gs, hs = [], []
    for k, blk in enumerate(p.lmis):
        s = blk.size
        gmat = np.zeros((s * s, p.nz))
        for col, i, j, coeff in blk.terms:
            gmat[i * s + j, col] -= coeff
            if i != j:
                gmat[j * s + i, col] -= coeff
        gs.append(cvx_matrix(gmat))
        hs.append(cvx_matrix(p.lmi_matrices(k)))
    sol = cvx_solvers.sdp(cvx_matrix(p.cost), Gl=gl, hl=hl, Gs=gs, hs=hs,
                          options=opts)
    status = sol["status"]
    if status in ("primal infeasible", "dual infeasible"):
        raise InfeasibleError(f"SDP reported {status}")
    z = np.array(sol["x"]).ravel()
    gap = float(sol.get("relative gap") or 0.0)
    report = check_lmi(z, p)
    min_eig = min((e for e in report["lmi_min_eig"]), default=0.0)
    lin_viol = report["lin_violation"]
    if status != "optimal" and (min_eig < -tol or lin_viol > tol):
        raise NonconvergenceError(
            f"SDP backend status {status!r} with LMI min eig {min_eig:.2e}",
            residuals=report)
    if min_eig < -tol:
        raise NonconvergenceError(
            f"returned point violates an LMI: min eig {min_eig:.2e} < -{tol}",
            residuals=report)
    return SdpSolution(z=z, status="optimal", objective=float(p.cost @ z),
                       gap=gap, iterations=sol.get("iterations", -1))


def check_lmi(z: np.ndarray, p: SdpProblem) -> dict:
    """Independent feasibility report: per-LMI minimum eigenvalue, linear violation."""
    eigs = []
    for k in range(len(p.lmis)):
        fz = p.lmi_matrices(k, z)
        eigs.append(float(np.linalg.eigvalsh(fz)[0]))
    lin_viol = 0.0
    if p.lin_rows:
        resid = np.array(p.lin_rows) @ z - np.array(p.lin_rhs)
        lin_viol = max(0.0, float(np.max(resid)))
    return {"lmi_min_eig": eigs, "lin_violation": lin_viol}


def dump_sdp(p: SdpProblem) -> str:
    """Structured text form of the canonicalized problem for offline solvers."""
    parts = [f"sdp nz={p.nz}"]
    parts.append("[cost] " + " ".join(repr(float(v)) for v in p.cost))
    for row, rhs in zip(p.lin_rows, p.lin_rhs):
        parts.append("[lin] rhs=" + repr(rhs) + " " +
                     " ".join(repr(float(v)) for v in row))
    for k, blk in enumerate(p.lmis):
        parts.append(f"[lmi] size={blk.size}")
        for i, j, v in blk.const:
            parts.append(f"const {i} {j} {v!r}")
        for col, i, j, coeff in blk.terms:
            parts.append(f"term {col} {i} {j} {coeff!r}")
    return "\n".join(parts) + "\n"
