"""Power-dispatch controllers: explicit, deterministic QP, and stochastic SDP MPC.

All dispatchers share one structure: at each step the farm state and the
per-turbine wind deviations are measured, a finite-horizon problem built on
the augmented farm model is solved, and only the first move is applied.  The
zero-sum constraint on the per-turbine power deviations is eliminated by the
bidiagonal transform u = T uhat, so every dispatcher preserves the farm total
exactly.

Internally the problems are scaled: inputs in MW and outputs divided by the
fatigue normalizers, which puts Hessians and LMIs near unit magnitude.  All
public interfaces speak SI watts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import erfinv

from .farm import FarmModel
from .optim import (InfeasibleError, NonconvergenceError, QpSolver, SdpProblem,
                    SizeCapError, check_lmi, solve_sdp)

#: Output normalizers shared with the fatigue metrics [N m].
MT_NORM = 23.0e6
MS_NORM = 2.0e6
#: Input scale: controller-internal power deviations are in MW.
U_SCALE = 1.0e6


@dataclass(frozen=True)
class MpcConfig:
    """Tunables of the dispatch problem.

    ``r`` carries the per-turbine input weights in 1/MW^2 (the natural scale
    of the published tuning values); ``u_max`` and ``rho_slack`` follow the
    same convention, with ``u_max`` in W at this boundary.
    """

    n_h: int = 2
    r: tuple = (0.06,)
    u_max: float = 1.0e5
    p_tilde: float = 0.05
    rho_slack: float | None = None
    mode: str = "dmpc"

    def __post_init__(self):
        if self.n_h < 0:
            raise ValueError("n_h must be >= 0")
        if any(ri <= 0.0 for ri in self.r):
            raise ValueError("all input weights must be > 0")
        if self.u_max <= 0.0:
            raise ValueError("u_max must be > 0 so zero input is strictly feasible")
        if not 0.0 < self.p_tilde < 0.5:
            raise ValueError("p_tilde must lie in (0, 0.5)")
        if self.rho_slack is not None and self.rho_slack <= 0.0:
            raise ValueError("rho_slack must be > 0")
        if self.mode not in ("edmpc", "dmpc", "smpc"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def r_vector(self, N: int) -> np.ndarray:
        r = np.asarray(self.r, float)
        if r.size == 1:
            return np.full(N, r[0])
        if r.size != N:
            raise ValueError(f"r has {r.size} entries for {N} turbines")
        return r

    def rho(self, N: int) -> float:
        if self.rho_slack is not None:
            return self.rho_slack
        return 1.0e6 * float(np.max(self.r_vector(N)))


@dataclass(frozen=True)
class InputTransform:
    """Bidiagonal basis of the zero-sum input subspace."""

    T: np.ndarray
    N: int


def make_transform(N: int) -> InputTransform:
    if N < 2:
        raise ValueError("need at least 2 turbines to redistribute power")
    t = np.zeros((N, N - 1))
    for j in range(N - 1):
        t[j, j] = 1.0
        t[j + 1, j] = -1.0
    return InputTransform(T=t, N=N)


def build_weights(N: int, n_h: int, r) -> tuple[np.ndarray, np.ndarray]:
    """Per-step output weight Q and reduced input weight R_hat = T' diag(r) T.

    Q is block-diagonal with per-turbine diag(q_Mt, q_Ms), where the q's
    divide the fatigue normalizers squared and the horizon length (with
    n_h = 0 treated as 1).  Q acts on outputs in N m; R_hat acts on inputs
    in MW, matching the published tuning scale.
    """
    nh = max(n_h, 1)
    q_mt = 0.05 / (MT_NORM ** 2 * nh)
    q_ms = 0.2 / (MS_NORM ** 2 * nh)
    q = np.kron(np.eye(N), np.diag([q_mt, q_ms]))
    t = make_transform(N).T
    r_vec = np.asarray(r, float)
    if r_vec.size == 1:
        r_vec = np.full(N, r_vec.item())
    r_hat = t.T @ np.diag(r_vec) @ t
    return q, r_hat


@dataclass(frozen=True)
class ChanceConstraint:
    """P(c' u >= u_s_max) <= p_tilde on the per-turbine input deviations [W]."""

    c: np.ndarray
    u_s_max: float

    def __post_init__(self):
        if self.u_s_max <= 0.0:
            raise ValueError("u_s_max must be > 0")


def box_constraints(N: int, u_max: float) -> list[ChanceConstraint]:
    """|u_i| <= u_max encoded as 2N one-sided constraints."""
    out = []
    eye = np.eye(N)
    for i in range(N):
        out.append(ChanceConstraint(c=eye[i], u_s_max=u_max))
    for i in range(N):
        out.append(ChanceConstraint(c=-eye[i], u_s_max=u_max))
    return out


@dataclass
class DispatchCommand:
    """Absolute per-turbine setpoints [W], their deviations, and solver notes."""

    p_dem: np.ndarray
    u: np.ndarray
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# condensed horizon

class CondensedHorizon:
    """Stacked prediction matrices over k = 0..n_h with a measured first step.

    Output trajectory (scaled): y = Ast x + Bst uhat + Bdst d, with the
    measured wind entering only the first column block.  Built once per
    (farm, horizon) pair; all dispatchers reuse it.
    """

    def __init__(self, model: FarmModel, cfg: MpcConfig):
        self.model = model
        self.cfg = cfg
        self.N = model.N
        self.tf = make_transform(self.N)
        n_h = cfg.n_h
        nh_eff = max(n_h, 1)
        sy = np.kron(np.eye(self.N), np.diag([1.0 / MT_NORM, 1.0 / MS_NORM]))
        a = model.A
        a0 = model.A0
        b_hat = (model.B @ self.tf.T) * U_SCALE
        bd = model.Bd
        c = sy @ model.C
        c0 = sy @ model.C0
        d_hat = sy @ (model.D @ self.tf.T) * U_SCALE
        dd = sy @ model.Dd
        ny = 2 * self.N
        m = self.N - 1
        n = model.n
        rows = ny * (n_h + 1)
        cols = m * (n_h + 1)
        bst = np.zeros((rows, cols))
        ast = np.zeros((rows, n))
        bdst = np.zeros((rows, self.N))
        powers = [np.eye(n)]
        for _ in range(n_h):
            powers.append(a @ powers[-1])
        for k in range(n_h + 1):
            r0 = k * ny
            if k == 0:
                ast[r0:r0 + ny] = c0
                bdst[r0:r0 + ny] = dd
            else:
                ast[r0:r0 + ny] = c @ powers[k - 1] @ a0
                bdst[r0:r0 + ny] = c @ powers[k - 1] @ bd
            for j in range(k + 1):
                c0j = j * m
                if j == k:
                    bst[r0:r0 + ny, c0j:c0j + m] = d_hat
                else:
                    bst[r0:r0 + ny, c0j:c0j + m] = c @ powers[k - 1 - j] @ b_hat
        q_step = np.kron(np.eye(self.N), np.diag([0.05 / nh_eff, 0.2 / nh_eff]))
        q_full = np.kron(np.eye(n_h + 1), q_step)
        r_hat = self.tf.T.T @ np.diag(cfg.r_vector(self.N)) @ self.tf.T
        r_full = np.kron(np.eye(n_h + 1), r_hat)
        self.Bst, self.Ast, self.Bdst = bst, ast, bdst
        self.Qst, self.Rst = q_full, r_full
        self.H = bst.T @ q_full @ bst + r_full
        self.H = 0.5 * (self.H + self.H.T)
        self.Fx = bst.T @ q_full @ ast
        self.Fd = bst.T @ q_full @ bdst
        self._cho = cho_factor(self.H)
        self.m = m
        self.n_steps = n_h + 1
        # per-step constant cost pieces for diagnostics
        self._sy = sy

    def linear_term(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        return self.Fx @ x + self.Fd @ d

    def unconstrained(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Horizon-stacked minimizer of the nominal quadratic cost (MW)."""
        return -cho_solve(self._cho, self.linear_term(x, d))

    def gains(self) -> tuple[np.ndarray, np.ndarray]:
        kx = -cho_solve(self._cho, self.Fx)
        kd = -cho_solve(self._cho, self.Fd)
        return kx, kd

    def constraint_rows(self, constraints) -> tuple[np.ndarray, np.ndarray]:
        """Rows of chat_s' uhat_k <= u_s_max (MW) over the stacked variable."""
        if not constraints:
            return np.zeros((0, self.m * self.n_steps)), np.zeros(0)
        chat = np.array([cc.c @ self.tf.T for cc in constraints])
        bounds = np.array([cc.u_s_max / U_SCALE for cc in constraints])
        s = len(constraints)
        rows = np.zeros((s * self.n_steps, self.m * self.n_steps))
        rhs = np.zeros(s * self.n_steps)
        for k in range(self.n_steps):
            rows[k * s:(k + 1) * s, k * self.m:(k + 1) * self.m] = chat
            rhs[k * s:(k + 1) * s] = bounds
        return rows, rhs


# ---------------------------------------------------------------------------
# explicit MPC

def edmpc_gains(model: FarmModel, tf: InputTransform, cfg: MpcConfig):
    """Closed-form unconstrained law uhat = K_x x + K_d d (SI watts).

    The stacked normal equations are solved once; the first block row of the
    minimizer gives the online gains, so the running controller is two
    matrix-vector products.
    """
    cond = CondensedHorizon(model, cfg)
    kx, kd = cond.gains()
    m = cond.m
    return U_SCALE * kx[:m], U_SCALE * kd[:m]


# ---------------------------------------------------------------------------
# deterministic MPC

class DmpcController:
    """Receding-horizon QP dispatcher with slack-softened input constraints.

    Decision vector: stacked uhat (MW) followed by one slack per (step,
    constraint).  The Hessian is constant, so the active-set solver keeps
    its factorization and warm starts from the previous step.
    """

    def __init__(self, model: FarmModel, cfg: MpcConfig, constraints=()):
        self.cond = CondensedHorizon(model, cfg)
        self.cfg = cfg
        self.constraints = list(constraints)
        m_tot = self.cond.m * self.cond.n_steps
        rows, rhs = self.cond.constraint_rows(self.constraints)
        s_tot = rows.shape[0]
        h = np.zeros((m_tot + s_tot, m_tot + s_tot))
        h[:m_tot, :m_tot] = 2.0 * self.cond.H
        rho = cfg.rho(model.N)
        if s_tot:
            h[m_tot:, m_tot:] = 2.0 * rho * np.eye(s_tot)
        a_ineq = np.zeros((2 * s_tot, m_tot + s_tot))
        b = np.zeros(2 * s_tot)
        if s_tot:
            a_ineq[:s_tot, :m_tot] = rows
            a_ineq[:s_tot, m_tot:] = -np.eye(s_tot)
            b[:s_tot] = rhs
            a_ineq[s_tot:, m_tot:] = -np.eye(s_tot)
        self._qp = QpSolver(h, a_ineq, b)
        self._m_tot = m_tot
        self._s_tot = s_tot

    def dispatch(self, x: np.ndarray, d: np.ndarray, tol: float = 1e-8) -> DispatchCommand:
        t0 = time.perf_counter()
        f = np.concatenate([2.0 * self.cond.linear_term(x, d), np.zeros(self._s_tot)])
        res = self._qp.solve(f, tol=tol)
        uhat0 = res.z[:self.cond.m]
        u = self.cond.tf.T @ uhat0 * U_SCALE
        slack = res.z[self._m_tot:]
        return DispatchCommand(
            p_dem=self.cond.model.p_dem0() + u, u=u,
            diagnostics={
                "cost": float(0.5 * res.z @ (self._qp.H @ res.z) + f @ res.z),
                "iterations": res.iterations,
                "max_slack_mw": float(np.max(slack)) if slack.size else 0.0,
                "kkt": res.residuals,
                "solve_s": time.perf_counter() - t0,
                "uhat": res.z[:self._m_tot] * U_SCALE,
            })


def solve_dmpc(model: FarmModel, tf: InputTransform, cfg: MpcConfig,
               x: np.ndarray, d: np.ndarray, constraints=()) -> DispatchCommand:
    """One-shot deterministic dispatch (builds a fresh controller)."""
    return DmpcController(model, cfg, constraints).dispatch(x, d)


# ---------------------------------------------------------------------------
# stochastic MPC

def _gaussian_var_coeff(p_tilde: float) -> float:
    """Coefficient 0.5 / erfinv(1 - 2 p)^2 bounding the input variance."""
    arg = 1.0 - 2.0 * p_tilde
    if arg <= 0.0:
        raise ValueError("p_tilde must be < 0.5 for a meaningful tightening")
    return 0.5 * (1.0 / erfinv(arg)) ** 2


@dataclass
class SmpcSolution:
    """Decoded stochastic solution: nominal plan, covariance chain, bounds."""

    u_bar: np.ndarray          # (n_h+1, N-1) in MW
    x_bar: np.ndarray          # (n_h+1, n)
    X: list                    # covariance bounds per step
    G: dict                    # step -> feedback-times-covariance block
    U_hat: dict                # step -> input variance bound (MW^2)
    P: list                    # second-moment bounds per step
    theta: dict                # (step, constraint) -> scalar
    cost: float
    problem: SdpProblem
    z: np.ndarray


def build_smpc(model: FarmModel, tf: InputTransform, cfg: MpcConfig,
               x: np.ndarray, d: np.ndarray, constraints=(),
               sigma_w: np.ndarray | None = None) -> tuple[SdpProblem, dict]:
    """Assemble the online stochastic dispatch SDP.

    Variables per horizon step k: nominal input, second-moment bound P_k;
    for steps with nonzero state covariance also the covariance bound X_k,
    the feedback block G_k, the input-variance bound U_k, and one scalar per
    chance constraint.  The first two steps are deterministic (measured state
    and measured wind), so their covariances are pinned to zero and the
    chance constraints reduce to tightened linear bounds.
    """
    n_h = cfg.n_h
    N = model.N
    m = N - 1
    n = model.n
    if sigma_w is None:
        sigma_w = model.Sigma_w
    sigma_w = np.asarray(sigma_w, float)
    coeff = _gaussian_var_coeff(cfg.p_tilde)
    nh_eff = max(n_h, 1)
    sy = np.kron(np.eye(N), np.diag([1.0 / MT_NORM, 1.0 / MS_NORM]))
    a = model.A
    a0 = model.A0
    b_hat = (model.B @ tf.T) * U_SCALE
    bd = model.Bd
    c = sy @ model.C
    c0 = sy @ model.C0
    d_hat = sy @ (model.D @ tf.T) * U_SCALE
    dd = sy @ model.Dd
    q_step = np.kron(np.eye(N), np.diag([0.05 / nh_eff, 0.2 / nh_eff]))
    r_hat = tf.T.T @ np.diag(cfg.r_vector(N)) @ tf.T

    def moment_weight(cx):
        g = np.hstack([cx, d_hat, dd])
        mm = g.T @ q_step @ g
        mm[n:n + m, n:n + m] += r_hat
        return mm

    m0 = moment_weight(c0)
    mk = moment_weight(c)
    npk = n + m + N

    p = SdpProblem()
    for k in range(n_h + 1):
        p.add_var(f"u{k}", (m,))
    for k in range(n_h + 1):
        p.add_var(f"P{k}", (npk, npk), symmetric=True)
    x2 = bd @ sigma_w @ bd.T
    x_fixed = {0: np.zeros((n, n)), 1: np.zeros((n, n)), 2: x2}
    for k in range(3, n_h + 1):
        p.add_var(f"X{k}", (n, n), symmetric=True)
    for k in range(2, n_h + 1):
        p.add_var(f"G{k}", (m, n))
        p.add_var(f"U{k}", (m, m), symmetric=True)
    chat = np.array([cc.c @ tf.T for cc in constraints]) if constraints else np.zeros((0, m))
    bounds_mw = np.array([cc.u_s_max / U_SCALE for cc in constraints])
    n_cc = len(constraints)
    if n_cc:
        for k in range(2, n_h + 1):
            p.add_var(f"th{k}", (n_cc,))

    # nominal trajectory as affine functions of the stacked inputs
    x_off = {0: np.asarray(x, float)}
    x_coef = {0: {}}
    if n_h >= 1:
        x_off[1] = a0 @ x_off[0] + bd @ d
        x_coef[1] = {0: b_hat.copy()}
    for k in range(1, n_h):
        x_off[k + 1] = a @ x_off[k]
        x_coef[k + 1] = {j: a @ mat for j, mat in x_coef[k].items()}
        x_coef[k + 1][k] = b_hat.copy()

    # cost
    p.add_cost_trace("P0", m0)
    for k in range(1, n_h + 1):
        p.add_cost_trace(f"P{k}", mk)

    # the moment and covariance LMIs are stated with the innovation block
    # normalized by Sigma_w^{1/2} (an exact congruence), which keeps them
    # well scaled as Sigma_w approaches zero
    if np.max(np.abs(sigma_w - np.diag(np.diag(sigma_w)))) > 0.0:
        raise ValueError("innovation covariance must be diagonal")
    sw_half = np.sqrt(np.diag(sigma_w))

    def border_terms(lmi, k, col_last):
        """Add the (x_bar_k, u_bar_k, extra) border column of a moment LMI."""
        for i in range(n):
            if x_off[k][i] != 0.0:
                lmi.add_const(i, col_last, x_off[k][i])
        for j, mat in x_coef[k].items():
            for i in range(n):
                for jj in range(m):
                    lmi.add_term(p.col(f"u{j}", jj), i, col_last, mat[i, jj])
        for i in range(m):
            lmi.add_term(p.col(f"u{k}", i), n + i, col_last, 1.0)

    for k in range(n_h + 1):
        if k <= 1:
            # deterministic steps: P_k bounds the plain outer product
            sz = npk + 1
            lmi = p.new_lmi(sz)
            for i in range(npk):
                for j in range(i, npk):
                    lmi.add_term(p.col(f"P{k}", i, j), i, j, 1.0)
            lmi.add_const(sz - 1, sz - 1, 1.0)
            border_terms(lmi, k, sz - 1)
            if k == 0:
                for i in range(N):
                    if d[i] != 0.0:
                        lmi.add_const(n + m + i, sz - 1, d[i])
        else:
            # stochastic steps: Schur form with the covariance middle block
            mid = n + N
            sz = npk + mid + 1
            lmi = p.new_lmi(sz)
            for i in range(npk):
                for j in range(i, npk):
                    lmi.add_term(p.col(f"P{k}", i, j), i, j, 1.0)
            xk_fixed = x_fixed.get(k)
            # W block: rows (x, u, w), cols (x-part, w-part scaled)
            for i in range(n):
                for j in range(n):
                    if xk_fixed is not None:
                        if xk_fixed[i, j] != 0.0:
                            lmi.add_const(i, npk + j, xk_fixed[i, j])
                    else:
                        lmi.add_term(p.col(f"X{k}", i, j), i, npk + j, 1.0)
            for i in range(m):
                for j in range(n):
                    lmi.add_term(p.col(f"G{k}", i, j), n + i, npk + j, 1.0)
            for i in range(N):
                lmi.add_const(n + m + i, npk + n + i, sw_half[i])
            # middle block diag(X_k, I)
            for i in range(n):
                for j in range(i, n):
                    if xk_fixed is not None:
                        if xk_fixed[i, j] != 0.0:
                            lmi.add_const(npk + i, npk + j, xk_fixed[i, j])
                    else:
                        lmi.add_term(p.col(f"X{k}", i, j), npk + i, npk + j, 1.0)
            for i in range(N):
                lmi.add_const(npk + n + i, npk + n + i, 1.0)
            lmi.add_const(sz - 1, sz - 1, 1.0)
            border_terms(lmi, k, sz - 1)

    # covariance recursion LMIs for transitions producing free X
    for k in range(2, n_h):
        sz = 2 * n + N
        lmi = p.new_lmi(sz)
        xk_fixed = x_fixed.get(k)
        xk1_name = f"X{k + 1}"
        for i in range(n):
            for j in range(i, n):
                lmi.add_term(p.col(xk1_name, i, j), i, j, 1.0)
        for i in range(n):
            for j in range(n):
                if xk_fixed is not None:
                    val = float(a[i] @ xk_fixed[:, j])
                    if val != 0.0:
                        lmi.add_const(i, n + j, val)
                else:
                    for l in range(n):
                        if a[i, l] != 0.0:
                            lmi.add_term(p.col(f"X{k}", l, j), i, n + j, a[i, l])
        for i in range(n):
            for j in range(n):
                for l in range(m):
                    if b_hat[i, l] != 0.0:
                        lmi.add_term(p.col(f"G{k}", l, j), i, n + j, b_hat[i, l])
        bsw = bd * sw_half[None, :]
        for i in range(n):
            for j in range(N):
                if bsw[i, j] != 0.0:
                    lmi.add_const(i, 2 * n + j, bsw[i, j])
        for i in range(n):
            for j in range(i, n):
                if xk_fixed is not None:
                    if xk_fixed[i, j] != 0.0:
                        lmi.add_const(n + i, n + j, xk_fixed[i, j])
                else:
                    lmi.add_term(p.col(f"X{k}", i, j), n + i, n + j, 1.0)
        for i in range(N):
            lmi.add_const(2 * n + i, 2 * n + i, 1.0)

    # X_k >= 0 for free covariances
    for k in range(3, n_h + 1):
        lmi = p.new_lmi(n)
        for i in range(n):
            for j in range(i, n):
                lmi.add_term(p.col(f"X{k}", i, j), i, j, 1.0)

    # input-variance LMIs [[U_k, G_k], [G_k', X_k]]
    for k in range(2, n_h + 1):
        sz = m + n
        lmi = p.new_lmi(sz)
        for i in range(m):
            for j in range(i, m):
                lmi.add_term(p.col(f"U{k}", i, j), i, j, 1.0)
        for i in range(m):
            for j in range(n):
                lmi.add_term(p.col(f"G{k}", i, j), i, m + j, 1.0)
        xk_fixed = x_fixed.get(k)
        for i in range(n):
            for j in range(i, n):
                if xk_fixed is not None:
                    if xk_fixed[i, j] != 0.0:
                        lmi.add_const(m + i, m + j, xk_fixed[i, j])
                else:
                    lmi.add_term(p.col(f"X{k}", i, j), m + i, m + j, 1.0)

    # chance constraints: tightened mean bound and variance bound
    for k in range(n_h + 1):
        for s in range(n_cc):
            terms = {f"u{k}": chat[s]}
            if k >= 2:
                th_coef = np.zeros(max(n_cc, 1))
                th_coef[s] = 1.0 / bounds_mw[s]
                terms[f"th{k}"] = th_coef
            p.add_lin(terms, 0.75 * bounds_mw[s])
    for k in range(2, n_h + 1):
        for s in range(n_cc):
            u_coef = np.zeros(m * (m + 1) // 2)
            idx = 0
            for i in range(m):
                for j in range(i, m):
                    u_coef[idx] = chat[s, i] * chat[s, j] * (1.0 if i == j else 2.0)
                    idx += 1
            th_coef = np.zeros(max(n_cc, 1))
            th_coef[s] = -coeff
            p.add_lin({f"U{k}": u_coef, f"th{k}": th_coef}, 0.0)
        for s in range(n_cc):
            th_coef = np.zeros(max(n_cc, 1))
            th_coef[s] = -1.0
            p.add_lin({f"th{k}": th_coef}, 0.0)

    meta = {"n": n, "m": m, "N": N, "n_h": n_h, "npk": npk,
            "x_off": x_off, "x_coef": x_coef, "x_fixed": x_fixed,
            "chat": chat, "bounds_mw": bounds_mw, "coeff": coeff}
    return p, meta


def decode_smpc(p: SdpProblem, meta: dict, z: np.ndarray, cost: float) -> SmpcSolution:
    n_h, m, n = meta["n_h"], meta["m"], meta["n"]
    u_bar = np.array([p.value(f"u{k}", z) for k in range(n_h + 1)])
    x_bar = []
    for k in range(n_h + 1):
        xb = meta["x_off"][k].copy()
        for j, mat in meta["x_coef"][k].items():
            xb = xb + mat @ u_bar[j]
        x_bar.append(xb)
    xs = []
    for k in range(n_h + 1):
        if k in meta["x_fixed"]:
            xs.append(meta["x_fixed"][k])
        else:
            xs.append(p.value(f"X{k}", z))
    gs = {k: p.value(f"G{k}", z) for k in range(2, n_h + 1)}
    us = {k: p.value(f"U{k}", z) for k in range(2, n_h + 1)}
    th = {}
    n_cc = meta["chat"].shape[0]
    if n_cc:
        for k in range(2, n_h + 1):
            vals = p.value(f"th{k}", z)
            for s in range(n_cc):
                th[(k, s)] = float(vals[s])
    ps = [p.value(f"P{k}", z) for k in range(n_h + 1)]
    return SmpcSolution(u_bar=u_bar, x_bar=np.array(x_bar), X=xs, G=gs,
                        U_hat=us, P=ps, theta=th, cost=cost, problem=p, z=z)


def solve_smpc(model: FarmModel, tf: InputTransform, cfg: MpcConfig,
               x: np.ndarray, d: np.ndarray, constraints=(),
               sigma_w: np.ndarray | None = None,
               tol: float = 1e-7) -> tuple[DispatchCommand, SmpcSolution]:
    """Solve the stochastic dispatch SDP and return the first move.

    Infeasibility is classified: if relaxing the chance-constraint scalars
    restores feasibility the problem was chance-constraint limited,
    otherwise the failure is numerical.
    """
    t0 = time.perf_counter()
    p, meta = build_smpc(model, tf, cfg, x, d, constraints, sigma_w)
    try:
        sol = solve_sdp(p, tol=tol)
    except InfeasibleError:
        p_free, _ = build_smpc(model, tf, cfg, x, d, (), sigma_w)
        try:
            solve_sdp(p_free, tol=tol)
        except (InfeasibleError, NonconvergenceError):
            raise InfeasibleError("stochastic dispatch SDP is numerically infeasible")
        raise InfeasibleError(
            "chance constraints cannot be met at the requested probability")
    decoded = decode_smpc(p, meta, sol.z, sol.objective)
    uhat0 = decoded.u_bar[0]
    u = tf.T @ uhat0 * U_SCALE
    cmd = DispatchCommand(
        p_dem=model.p_dem0() + u, u=u,
        diagnostics={"cost": sol.objective, "gap": sol.gap,
                     "iterations": sol.iterations,
                     "solve_s": time.perf_counter() - t0,
                     "lmi_report": check_lmi(sol.z, p)})
    return cmd, decoded


# ---------------------------------------------------------------------------
# baselines

def scheduler(p_dem_wf: float, N: int) -> DispatchCommand:
    """Open-loop equal split of the farm demand."""
    share = p_dem_wf / N
    return DispatchCommand(p_dem=np.full(N, share), u=np.zeros(N),
                           diagnostics={"kind": "scheduler"})


def proportional_dispatch(p_dem_wf: float, v_meas, params_list, surfaces) -> DispatchCommand:
    """Split the farm demand proportionally to the available power.

    Available power per turbine uses the cube of the measured wind and the
    maximum power coefficient of its surface.
    """
    v_meas = np.asarray(v_meas, float)
    if np.any(v_meas <= 0.0):
        raise ValueError("measured wind speeds must be > 0")
    p_av = np.array([
        0.5 * math.pi * par.rho * par.R ** 2 * v ** 3 * surf.cp_max()
        for par, surf, v in zip(params_list, surfaces, v_meas)])
    total = float(p_av.sum())
    if total <= 0.0:
        raise ValueError("total available power is zero")
    p_dem = p_dem_wf * p_av / total
    return DispatchCommand(p_dem=p_dem, u=p_dem - p_dem_wf / v_meas.size,
                           diagnostics={"kind": "proportional", "p_available": p_av})
