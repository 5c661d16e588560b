"""Simulation plants: the linear augmented farm model and a nonlinear-static one.

The nonlinear plant keeps the static aerodynamic maps, the lumped-inertia
transmission, the PI pitch loop, and the power-tracking generator torque, and
integrates them with fixed-step RK4 substeps inside every controller period.
Two guards keep it well posed outside the tracking region, where the real
supervisory logic (not modeled here) would switch operating modes:

* pitch is clamped to the coefficient-surface domain, with the PI integration
  frozen against the bound (anti-windup);
* below a generator-speed threshold the demanded torque falls back to a
  quadratic curve through the switch point, so a wind deficit sheds load
  instead of stalling the rotor; electrical output then drops below setpoint.

The RK4 sweep over turbines and substeps is the hot loop.  It is compiled
with numba; a vectorized pure-numpy path is used when numba is unavailable
or ``WINDDISPATCH_DISABLE_NUMBA`` is set.  ``benchmarks/bench_plant.py``
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

from .farm import FarmModel, step_farm
from .turbine import AnalyticSurface, TabulatedSurface

#: Generator-speed fraction below which torque protection engages.
PROTECT_SPEED_FRACTION = 0.93

NUMBA_DISABLED = os.environ.get("WINDDISPATCH_DISABLE_NUMBA", "") not in ("", "0")

SURF_ANALYTIC = 0
SURF_TABULATED = 1

# parameter-vector layout shared by both kernels
# 0:rho 1:R 2:h 3:n_gb 4:J_t 5:mu 6:T_omega 7:K_P 8:K_I 9:omega_g0
# 10:J_r 11:tr_coef 12:T_r0 13:T_g0 14:M_s0


def surface_kernel_data(surface):
    """Flatten a coefficient surface into the arrays the kernels accept."""
    if isinstance(surface, AnalyticSurface):
        dummy = np.zeros((1, 1))
        grid1 = np.array([0.0])
        return (SURF_ANALYTIC, np.array(surface.cp_coeffs),
                np.array(surface.ct_coeffs), grid1, grid1, dummy, dummy,
                surface.beta_range[0], surface.beta_range[1])
    if isinstance(surface, TabulatedSurface):
        return (SURF_TABULATED, np.zeros(6), np.zeros(3),
                surface.lam_grid, surface.beta_grid,
                surface.cp_table, surface.ct_table,
                surface.beta_range[0], surface.beta_range[1])
    raise TypeError(f"cannot build a plant kernel for {type(surface).__name__}")


def _cp_scalar(mode, cpc, lam_grid, beta_grid, cp_tab, lam, beta):
    if mode == SURF_ANALYTIC:
        inv_li = 1.0 / (lam + 0.08 * beta) - 0.035 / (beta ** 3 + 1.0)
        return (cpc[0] * (cpc[1] * inv_li - cpc[2] * beta - cpc[3])
                * np.exp(-cpc[4] * inv_li) + cpc[5] * lam)
    nl = lam_grid.size
    nb = beta_grid.size
    if lam < lam_grid[0]:
        lam = lam_grid[0]
    if lam > lam_grid[nl - 1]:
        lam = lam_grid[nl - 1]
    if beta < beta_grid[0]:
        beta = beta_grid[0]
    if beta > beta_grid[nb - 1]:
        beta = beta_grid[nb - 1]
    j = np.searchsorted(lam_grid, lam) - 1
    if j < 0:
        j = 0
    if j > nl - 2:
        j = nl - 2
    i = np.searchsorted(beta_grid, beta) - 1
    if i < 0:
        i = 0
    if i > nb - 2:
        i = nb - 2
    tl = (lam - lam_grid[j]) / (lam_grid[j + 1] - lam_grid[j])
    tb = (beta - beta_grid[i]) / (beta_grid[i + 1] - beta_grid[i])
    return ((1 - tb) * (1 - tl) * cp_tab[i, j] + (1 - tb) * tl * cp_tab[i, j + 1]
            + tb * (1 - tl) * cp_tab[i + 1, j] + tb * tl * cp_tab[i + 1, j + 1])


def _make_ct_scalar(cp_eval):
    def ct_scalar(mode, ctc, lam_grid, beta_grid, ct_tab, lam, beta):
        if mode == SURF_ANALYTIC:
            return ctc[0] * lam / (lam + ctc[1]) * np.exp(-ctc[2] * beta)
        return cp_eval(SURF_TABULATED, ctc, lam_grid, beta_grid, ct_tab, lam, beta)
    return ct_scalar


def _make_advance(cp_eval, ct_eval):
    """Scalar RK4 sweep; identical source for the jitted and reference paths."""

    def advance(states, p_dem, v, dt, n_sub, par, mode, cpc, ctc,
                lam_grid, beta_grid, cp_tab, ct_tab, beta_lo, beta_hi,
                out_ms, out_mt, out_p):
        rho, radius, height = par[0], par[1], par[2]
        ngb, jt, mu_eff = par[3], par[4], par[5]
        t_omega, kp, ki = par[6], par[7], par[8]
        wg0 = par[9]
        jr = par[10]
        tr_coef = par[11]
        c_tr = 0.5 * np.pi * rho * radius ** 3
        c_ft = 0.5 * np.pi * rho * radius ** 2
        w_switch = PROTECT_SPEED_FRACTION * wg0
        for i in range(states.shape[0]):
            beta = states[i, 0]
            wr = states[i, 1]
            wgf = states[i, 2]
            pd = p_dem[i]
            vi = v[i]
            lam = wr * radius / vi
            cq = cp_eval(mode, cpc, lam_grid, beta_grid, cp_tab, lam, beta) / lam
            tr = c_tr * vi * vi * cq
            wg = ngb * wr
            if wg >= w_switch:
                tg = pd / (mu_eff * wg)
            else:
                tg = pd / (mu_eff * w_switch ** 3) * wg * wg
            out_ms[i] = par[14] + ngb * jr / jt * (tg - par[13]) + tr_coef * (tr - par[12])
            ct_val = ct_eval(mode, ctc, lam_grid, beta_grid, ct_tab, lam, beta)
            out_mt[i] = height * c_ft * vi * vi * ct_val
            out_p[i] = mu_eff * wg * tg
            k1b = k1w = k1f = 0.0
            k2b = k2w = k2f = 0.0
            k3b = k3w = k3f = 0.0
            for _ in range(n_sub):
                b0 = beta
                w0 = wr
                f0 = wgf
                for stage in range(4):
                    if stage == 0:
                        bb, ww, ff = b0, w0, f0
                    elif stage == 1:
                        bb = b0 + 0.5 * dt * k1b
                        ww = w0 + 0.5 * dt * k1w
                        ff = f0 + 0.5 * dt * k1f
                    elif stage == 2:
                        bb = b0 + 0.5 * dt * k2b
                        ww = w0 + 0.5 * dt * k2w
                        ff = f0 + 0.5 * dt * k2f
                    else:
                        bb = b0 + dt * k3b
                        ww = w0 + dt * k3w
                        ff = f0 + dt * k3f
                    bcl = bb
                    if bcl < beta_lo:
                        bcl = beta_lo
                    if bcl > beta_hi:
                        bcl = beta_hi
                    wgs = ngb * ww
                    lam_s = ww * radius / vi
                    cq_s = cp_eval(mode, cpc, lam_grid, beta_grid, cp_tab,
                                   lam_s, bcl) / lam_s
                    tr_s = c_tr * vi * vi * cq_s
                    if wgs >= w_switch:
                        tg_s = pd / (mu_eff * wgs)
                    else:
                        tg_s = pd / (mu_eff * w_switch ** 3) * wgs * wgs
                    dbeta = (kp / t_omega) * (wgs - ff) + ki * (ff - wg0)
                    if bb <= beta_lo and dbeta < 0.0:
                        dbeta = 0.0
                    if bb >= beta_hi and dbeta > 0.0:
                        dbeta = 0.0
                    dwr = (tr_s - ngb * tg_s) / jt
                    dwgf = (wgs - ff) / t_omega
                    if stage == 0:
                        k1b, k1w, k1f = dbeta, dwr, dwgf
                    elif stage == 1:
                        k2b, k2w, k2f = dbeta, dwr, dwgf
                    elif stage == 2:
                        k3b, k3w, k3f = dbeta, dwr, dwgf
                    else:
                        beta = b0 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + dbeta)
                        wr = w0 + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + dwr)
                        wgf = f0 + dt / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + dwgf)
                if beta < beta_lo:
                    beta = beta_lo
                if beta > beta_hi:
                    beta = beta_hi
            states[i, 0] = beta
            states[i, 1] = wr
            states[i, 2] = wgf

    return advance


_advance_nb = None
if not NUMBA_DISABLED:
    try:
        from numba import njit
        _cp_nb = njit(_cp_scalar)
        _ct_nb = njit(_make_ct_scalar(_cp_nb))
        _advance_nb = njit(_make_advance(_cp_nb, _ct_nb))
    except ImportError:  # pragma: no cover - depends on environment
        _advance_nb = None

HAVE_NUMBA = _advance_nb is not None


# ---------------------------------------------------------------------------
# vectorized numpy fallback

def _cp_vec(mode, cpc, lam_grid, beta_grid, cp_tab, lam, beta):
    if mode == SURF_ANALYTIC:
        inv_li = 1.0 / (lam + 0.08 * beta) - 0.035 / (beta ** 3 + 1.0)
        return (cpc[0] * (cpc[1] * inv_li - cpc[2] * beta - cpc[3])
                * np.exp(-cpc[4] * inv_li) + cpc[5] * lam)
    lam = np.clip(lam, lam_grid[0], lam_grid[-1])
    beta = np.clip(beta, beta_grid[0], beta_grid[-1])
    j = np.clip(np.searchsorted(lam_grid, lam) - 1, 0, lam_grid.size - 2)
    i = np.clip(np.searchsorted(beta_grid, beta) - 1, 0, beta_grid.size - 2)
    tl = (lam - lam_grid[j]) / (lam_grid[j + 1] - lam_grid[j])
    tb = (beta - beta_grid[i]) / (beta_grid[i + 1] - beta_grid[i])
    return ((1 - tb) * (1 - tl) * cp_tab[i, j] + (1 - tb) * tl * cp_tab[i, j + 1]
            + tb * (1 - tl) * cp_tab[i + 1, j] + tb * tl * cp_tab[i + 1, j + 1])


def _ct_vec(mode, ctc, lam_grid, beta_grid, ct_tab, lam, beta):
    if mode == SURF_ANALYTIC:
        return ctc[0] * lam / (lam + ctc[1]) * np.exp(-ctc[2] * beta)
    return _cp_vec(SURF_TABULATED, ctc, lam_grid, beta_grid, ct_tab, lam, beta)


def _advance_numpy(states, p_dem, v, dt, n_sub, par, mode, cpc, ctc,
                   lam_grid, beta_grid, cp_tab, ct_tab, beta_lo, beta_hi,
                   out_ms, out_mt, out_p):
    """Same dynamics as the scalar kernel, vectorized across turbines."""
    rho, radius, height = par[0], par[1], par[2]
    ngb, jt, mu_eff = par[3], par[4], par[5]
    t_omega, kp, ki = par[6], par[7], par[8]
    wg0 = par[9]
    jr = par[10]
    tr_coef = par[11]
    c_tr = 0.5 * np.pi * rho * radius ** 3
    c_ft = 0.5 * np.pi * rho * radius ** 2
    w_switch = PROTECT_SPEED_FRACTION * wg0

    def gen_torque(pd, wg):
        return np.where(wg >= w_switch, pd / (mu_eff * wg),
                        pd / (mu_eff * w_switch ** 3) * wg * wg)

    beta = states[:, 0].copy()
    wr = states[:, 1].copy()
    wgf = states[:, 2].copy()
    lam = wr * radius / v
    cq = _cp_vec(mode, cpc, lam_grid, beta_grid, cp_tab, lam, beta) / lam
    tr = c_tr * v * v * cq
    wg = ngb * wr
    tg = gen_torque(p_dem, wg)
    out_ms[:] = par[14] + ngb * jr / jt * (tg - par[13]) + tr_coef * (tr - par[12])
    out_mt[:] = height * c_ft * v * v * _ct_vec(mode, ctc, lam_grid, beta_grid,
                                                ct_tab, lam, beta)
    out_p[:] = mu_eff * wg * tg

    def deriv(b, w, f):
        bcl = np.clip(b, beta_lo, beta_hi)
        wgs = ngb * w
        lam_s = w * radius / v
        cq_s = _cp_vec(mode, cpc, lam_grid, beta_grid, cp_tab, lam_s, bcl) / lam_s
        tr_s = c_tr * v * v * cq_s
        tg_s = gen_torque(p_dem, wgs)
        dbeta = (kp / t_omega) * (wgs - f) + ki * (f - wg0)
        dbeta = np.where((b <= beta_lo) & (dbeta < 0.0), 0.0, dbeta)
        dbeta = np.where((b >= beta_hi) & (dbeta > 0.0), 0.0, dbeta)
        dwr = (tr_s - ngb * tg_s) / jt
        dwgf = (wgs - f) / t_omega
        return dbeta, dwr, dwgf

    for _ in range(n_sub):
        k1 = deriv(beta, wr, wgf)
        k2 = deriv(beta + 0.5 * dt * k1[0], wr + 0.5 * dt * k1[1], wgf + 0.5 * dt * k1[2])
        k3 = deriv(beta + 0.5 * dt * k2[0], wr + 0.5 * dt * k2[1], wgf + 0.5 * dt * k2[2])
        k4 = deriv(beta + dt * k3[0], wr + dt * k3[1], wgf + dt * k3[2])
        beta = beta + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        wr = wr + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        wgf = wgf + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        beta = np.clip(beta, beta_lo, beta_hi)
    states[:, 0] = beta
    states[:, 1] = wr
    states[:, 2] = wgf


def advance_turbines(*args, force_numpy: bool = False):
    """Run the RK4 sweep on the compiled kernel, or the numpy fallback."""
    if _advance_nb is not None and not force_numpy:
        return _advance_nb(*args)
    return _advance_numpy(*args)


# ---------------------------------------------------------------------------
# plant classes

class NonlinearPlant:
    """Static-aerodynamics plant driven by RK4 substeps within each period.

    ``step`` reports the outputs at the pre-update state under the fresh
    inputs (matching the direct-feedthrough convention of the linear model),
    then advances all turbines by one controller period.
    """

    def __init__(self, model: FarmModel, rk4_dt: float = 0.05, Ts: float = 1.0,
                 ms_formula: str = "as-printed", force_numpy: bool = False):
        self.model = model
        self.Ts = Ts
        self.n_sub = int(round(Ts / rk4_dt))
        self.dt = Ts / self.n_sub
        self.force_numpy = force_numpy
        u0 = self.model.units[0]
        for u in self.model.units:
            if u.surface is not u0.surface or u.params != u0.params or u.op != u0.op:
                raise ValueError("nonlinear plant currently expects identical "
                                 "turbines (shared hardware and operating point)")
        (self._mode, self._cpc, self._ctc, self._lam_g, self._beta_g,
         self._cp_t, self._ct_t, self._blo, self._bhi) = surface_kernel_data(u0.surface)
        p = u0.params
        op = u0.op
        tr_coef = (p.n_gb ** 2 / p.J_t if ms_formula == "as-printed"
                   else p.n_gb ** 2 * p.J_g / p.J_t)
        self._par = np.array([p.rho, p.R, p.h, p.n_gb, p.J_t, p.mu, p.T_omega,
                              p.K_P, p.K_I, op.omega_g0, p.J_r, tr_coef,
                              op.T_r0, op.T_g0, op.M_s0])
        self.reset()

    def reset(self):
        self.states = np.array([[u.op.beta0, u.op.omega_r0, u.op.omega_g0]
                                for u in self.model.units])

    def controller_state(self) -> np.ndarray:
        """Per-turbine state deviations (N, 3) visible to the dispatcher."""
        ops = self.model.units
        ref = np.array([[u.op.beta0, u.op.omega_r0, u.op.omega_g0] for u in ops])
        return self.states - ref

    def step(self, p_dem: np.ndarray, v: np.ndarray):
        n = self.model.N
        ms = np.empty(n)
        mt = np.empty(n)
        pout = np.empty(n)
        advance_turbines(self.states, np.asarray(p_dem, float),
                         np.asarray(v, float), self.dt, self.n_sub, self._par,
                         self._mode, self._cpc, self._ctc, self._lam_g,
                         self._beta_g, self._cp_t, self._ct_t, self._blo,
                         self._bhi, ms, mt, pout, force_numpy=self.force_numpy)
        return ms, mt, pout


class LinearPlant:
    """The augmented farm model itself, driven by the measured wind each step.

    With the controller built on the same model this isolates dispatch-logic
    effects; electrical output equals the commanded setpoint by construction.
    """

    def __init__(self, model: FarmModel, Ts: float = 1.0):
        self.model = model
        self.Ts = Ts
        self.reset()

    def reset(self):
        self.x = np.zeros(self.model.n)

    def step(self, p_dem: np.ndarray, v: np.ndarray):
        u = np.asarray(p_dem, float) - self.model.p_dem0()
        d = np.asarray(v, float) - np.array([un.op.v0 for un in self.model.units])
        x_next, y = step_farm(self.model, self.x, u, d, first_step=True)
        self.x = x_next
        units = self.model.units
        ms = np.array([units[i].op.M_s0 + y[2 * i + 1] for i in range(self.model.N)])
        mt = np.array([units[i].op.M_t0 + y[2 * i] for i in range(self.model.N)])
        return ms, mt, np.asarray(p_dem, float).copy()
