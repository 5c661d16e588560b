"""Static turbine aerodynamics and the linearized 3-state turbine model.

The model chain is: rotor aerodynamics (power/torque/thrust coefficient
surfaces in tip-speed ratio and pitch), a PI pitch regulator acting on the
filtered generator speed, a lumped-inertia transmission, and a power-tracking
generator.  Linearizing the chain about a steady operating point yields a
continuous-time LTI model with state (pitch, rotor speed, filtered generator
speed), input (power demand deviation), disturbance (wind speed deviation)
and outputs (tower bending moment, main shaft torque).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq


class DomainError(ValueError):
    """Input outside the physical/tabulated domain of an operation."""


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class TurbineParams:
    """Physical constants of one turbine.

    Units: rho [kg/m^3], R and h [m], J_r and J_g [kg m^2], T_omega [s],
    K_P [deg/(rad/s)], K_I [deg/rad], P_rated [W].  n_gb and mu are
    dimensionless.  K_P/K_I act on the filtered generator-speed error.
    """

    rho: float = 1.225
    R: float = 63.0
    h: float = 87.6
    n_gb: float = 97.0
    J_r: float = 38_759_228.0
    J_g: float = 534.116
    mu: float = 0.944
    T_omega: float = 1.0 / (2.0 * math.pi * 0.25)
    K_P: float = 0.01882681 * 180.0 / math.pi
    K_I: float = 0.008068634 * 180.0 / math.pi
    P_rated: float = 5.0e6

    def __post_init__(self):
        for name in ("rho", "R", "h", "n_gb", "J_r", "J_g", "mu",
                     "T_omega", "K_P", "K_I", "P_rated"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"TurbineParams.{name} must be > 0")
        if self.mu > 1.0:
            raise ValueError("TurbineParams.mu must be <= 1")

    @property
    def J_t(self) -> float:
        """Lumped inertia J_r + n_gb^2 J_g seen from the low-speed side."""
        return self.J_r + self.n_gb ** 2 * self.J_g


#: Rated generator speed of the default 5 MW parameter set [rad/s].
OMEGA_G_RATED = 122.9096


# ---------------------------------------------------------------------------
# coefficient surfaces

class AnalyticSurface:
    """Closed-form placeholder coefficient surfaces.

    The power coefficient uses the common exponential form

        C_P(lam, beta) = c1*(c2/lam_i - c3*beta - c4)*exp(-c5/lam_i) + c6*lam
        1/lam_i = 1/(lam + 0.08*beta) - 0.035/(beta^3 + 1)

    with default constants c = (0.5176, 116, 0.4, 5, 21, 0.0068) and beta in
    degrees.  The thrust coefficient is a synthetic monotone placeholder

        C_T(lam, beta) = t1 * lam/(lam + t2) * exp(-t3*beta)

    with defaults t = (1.35, 4.5, 0.06): increasing in tip-speed ratio,
    decreasing in pitch, bounded by t1.  Both are smooth on the declared
    domain; the 1/(beta^3+1) term is singular at beta = -1, so the valid
    pitch range is kept non-negative.
    """

    kind = "analytic"

    def __init__(self, cp_coeffs=(0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068),
                 ct_coeffs=(1.35, 4.5, 0.06),
                 beta_range=(0.0, 30.0), lam_range=(1.0, 20.0)):
        self.cp_coeffs = tuple(float(c) for c in cp_coeffs)
        self.ct_coeffs = tuple(float(c) for c in ct_coeffs)
        self.beta_range = (float(beta_range[0]), float(beta_range[1]))
        self.lam_range = (float(lam_range[0]), float(lam_range[1]))
        if self.beta_range[0] < -0.99:
            raise ValueError("beta_range must stay above the beta = -1 singularity")

    def cp(self, lam, beta):
        c1, c2, c3, c4, c5, c6 = self.cp_coeffs
        inv_li = 1.0 / (lam + 0.08 * beta) - 0.035 / (beta ** 3 + 1.0)
        return c1 * (c2 * inv_li - c3 * beta - c4) * np.exp(-c5 * inv_li) + c6 * lam

    def ct(self, lam, beta):
        t1, t2, t3 = self.ct_coeffs
        return t1 * lam / (lam + t2) * np.exp(-t3 * beta)

    def cq(self, lam, beta):
        return self.cp(lam, beta) / lam

    def evaluate(self, lam, beta):
        """Return (C_P, C_Q, C_T) at one point; C_Q = C_P/lam by construction."""
        cp = self.cp(lam, beta)
        return cp, cp / lam, self.ct(lam, beta)

    def contains(self, lam, beta) -> bool:
        return (self.lam_range[0] <= lam <= self.lam_range[1]
                and self.beta_range[0] <= beta <= self.beta_range[1])

    def cp_max(self) -> float:
        """Maximum power coefficient over the domain (coarse grid + refine)."""
        lams = np.linspace(*self.lam_range, 200)
        betas = np.linspace(self.beta_range[0], min(self.beta_range[1], 10.0), 60)
        grid = self.cp(lams[:, None], betas[None, :])
        return float(grid.max())


class TabulatedSurface:
    """Coefficient surfaces as grids with bilinear interpolation.

    Grids share lambda breakpoints (columns) and beta breakpoints (rows).
    The torque grid must satisfy C_Q = C_P/lambda on the nodes.
    """

    kind = "tabulated"

    def __init__(self, lam_grid, beta_grid, cp_table, cq_table, ct_table,
                 check_identity=True):
        self.lam_grid = np.asarray(lam_grid, float)
        self.beta_grid = np.asarray(beta_grid, float)
        self.cp_table = np.asarray(cp_table, float)
        self.cq_table = np.asarray(cq_table, float)
        self.ct_table = np.asarray(ct_table, float)
        shape = (self.beta_grid.size, self.lam_grid.size)
        for name in ("cp_table", "cq_table", "ct_table"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape (n_beta, n_lambda) = {shape}")
        if np.any(np.diff(self.lam_grid) <= 0) or np.any(np.diff(self.beta_grid) <= 0):
            raise ValueError("grid breakpoints must be strictly increasing")
        if check_identity:
            expected = self.cp_table / self.lam_grid[None, :]
            scale = np.maximum(np.abs(expected), 1e-12)
            if np.max(np.abs(self.cq_table - expected) / scale) > 1e-6:
                raise ValueError("torque table violates C_Q = C_P/lambda on the grid")
        self.beta_range = (float(self.beta_grid[0]), float(self.beta_grid[-1]))
        self.lam_range = (float(self.lam_grid[0]), float(self.lam_grid[-1]))

    def _interp(self, table, lam, beta):
        lam = np.clip(lam, *self.lam_range)
        beta = np.clip(beta, *self.beta_range)
        i = np.clip(np.searchsorted(self.beta_grid, beta) - 1, 0, self.beta_grid.size - 2)
        j = np.clip(np.searchsorted(self.lam_grid, lam) - 1, 0, self.lam_grid.size - 2)
        tb = (beta - self.beta_grid[i]) / (self.beta_grid[i + 1] - self.beta_grid[i])
        tl = (lam - self.lam_grid[j]) / (self.lam_grid[j + 1] - self.lam_grid[j])
        return ((1 - tb) * (1 - tl) * table[i, j] + (1 - tb) * tl * table[i, j + 1]
                + tb * (1 - tl) * table[i + 1, j] + tb * tl * table[i + 1, j + 1])

    def cp(self, lam, beta):
        return self._interp(self.cp_table, lam, beta)

    def cq(self, lam, beta):
        return self._interp(self.cq_table, lam, beta)

    def ct(self, lam, beta):
        return self._interp(self.ct_table, lam, beta)

    def evaluate(self, lam, beta):
        return self.cp(lam, beta), self.cq(lam, beta), self.ct(lam, beta)

    def contains(self, lam, beta) -> bool:
        return (self.lam_range[0] <= lam <= self.lam_range[1]
                and self.beta_range[0] <= beta <= self.beta_range[1])

    def cp_max(self) -> float:
        return float(self.cp_table.max())

    @classmethod
    def load(cls, path):
        """Read the plain-text grid format.

        Layout: three blocks (C_P, C_Q, C_T) separated by blank lines.  In
        each block the first row holds the lambda breakpoints (first cell is
        a placeholder), following rows start with the beta breakpoint.
        """
        with open(path) as fh:
            text = fh.read()
        blocks = [b for b in text.split("\n\n") if b.strip()]
        if len(blocks) != 3:
            raise ValueError(f"expected 3 coefficient blocks, found {len(blocks)}")
        parsed = []
        for block in blocks:
            rows = [r.split() for r in block.strip().splitlines()
                    if r.strip() and not r.lstrip().startswith("#")]
            lam = np.array([float(v) for v in rows[0][1:]])
            beta = np.array([float(r[0]) for r in rows[1:]])
            tab = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
            parsed.append((lam, beta, tab))
        lam, beta = parsed[0][0], parsed[0][1]
        for plam, pbeta, _ in parsed[1:]:
            if not (np.array_equal(plam, lam) and np.array_equal(pbeta, beta)):
                raise ValueError("coefficient blocks use different breakpoints")
        return cls(lam, beta, parsed[0][2], parsed[1][2], parsed[2][2])

    def save(self, path):
        with open(path, "w") as fh:
            for tab in (self.cp_table, self.cq_table, self.ct_table):
                fh.write("0 " + " ".join(f"{v:.9e}" for v in self.lam_grid) + "\n")
                for b, row in zip(self.beta_grid, tab):
                    fh.write(f"{b:.9e} " + " ".join(f"{v:.9e}" for v in row) + "\n")
                fh.write("\n")


# ---------------------------------------------------------------------------
# static relations

def _check_positive(v, omega_r):
    if v <= 0.0:
        raise DomainError(f"wind speed must be > 0, got {v}")
    if omega_r <= 0.0:
        raise DomainError(f"rotor speed must be > 0, got {omega_r}")


def aero_power(params: TurbineParams, surf, v: float, omega_r: float, beta: float) -> float:
    """Aerodynamic rotor power (pi/2) rho R^2 v^3 C_P at lam = omega_r R / v [W]."""
    _check_positive(v, omega_r)
    lam = omega_r * params.R / v
    return 0.5 * math.pi * params.rho * params.R ** 2 * v ** 3 * float(surf.cp(lam, beta))


def aero_torque(params: TurbineParams, surf, v: float, omega_r: float, beta: float) -> float:
    """Aerodynamic rotor torque (pi/2) rho R^3 v^2 C_Q [N m]; equals power/omega_r."""
    _check_positive(v, omega_r)
    lam = omega_r * params.R / v
    return 0.5 * math.pi * params.rho * params.R ** 3 * v ** 2 * float(surf.cq(lam, beta))


def thrust_and_tower_moment(params: TurbineParams, surf, v: float, omega_r: float,
                            beta: float) -> tuple[float, float]:
    """Thrust force (pi/2) rho R^2 v^2 C_T [N] and tower-base moment h*F_t [N m]."""
    _check_positive(v, omega_r)
    lam = omega_r * params.R / v
    f_t = 0.5 * math.pi * params.rho * params.R ** 2 * v ** 2 * float(surf.ct(lam, beta))
    return f_t, params.h * f_t


# ---------------------------------------------------------------------------
# operating point and gains

@dataclass(frozen=True)
class OperatingPoint:
    """Steady-state values the turbine is linearized about (SI units)."""

    v0: float
    beta0: float
    omega_r0: float
    omega_g0: float
    T_r0: float
    T_g0: float
    M_t0: float
    M_s0: float
    P_ref0: float
    P_dem0: float

    def __post_init__(self):
        if self.omega_r0 <= 0.0 or self.omega_g0 <= 0.0:
            raise ValueError("operating-point speeds must be > 0")


def solve_operating_point(params: TurbineParams, surf, v0: float, p_dem0: float,
                          omega_g0: float = OMEGA_G_RATED) -> OperatingPoint:
    """Close the steady state for a demanded power at a given wind speed.

    The pitch loop regulates the generator at omega_g0, so the rotor speed
    and torques follow directly; the pitch angle is found by root-finding
    the aerodynamic torque balance to 1e-8 relative on power.
    """
    if v0 <= 0.0 or p_dem0 <= 0.0:
        raise DomainError("v0 and p_dem0 must be > 0")
    omega_r0 = omega_g0 / params.n_gb
    t_g0 = p_dem0 / (params.mu * omega_g0)
    t_r0 = params.n_gb * t_g0

    def resid(beta):
        return aero_torque(params, surf, v0, omega_r0, beta) - t_r0

    lo, hi = surf.beta_range
    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo * r_hi > 0.0:
        raise DomainError(
            f"no pitch in [{lo}, {hi}] deg balances {p_dem0 / 1e6:.2f} MW at v0 = {v0} m/s")
    beta0 = brentq(resid, lo, hi, xtol=1e-12, rtol=8.9e-16)
    if abs(resid(beta0) * omega_r0) > 1e-8 * p_dem0:
        raise DomainError("operating-point power balance did not converge")
    _, m_t0 = thrust_and_tower_moment(params, surf, v0, omega_r0, beta0)
    return OperatingPoint(v0=v0, beta0=beta0, omega_r0=omega_r0, omega_g0=omega_g0,
                          T_r0=t_r0, T_g0=t_g0, M_t0=m_t0, M_s0=t_r0,
                          P_ref0=p_dem0, P_dem0=p_dem0)


@dataclass(frozen=True)
class AeroGains:
    """Partial derivatives of rotor torque and tower moment at the operating point."""

    K_vTr: float
    K_wTr: float
    K_betaTr: float
    K_vMt: float
    K_omegaMt: float
    K_betaMt: float


# step sizes balance truncation against rounding at torque magnitudes ~1e6
GAIN_STEPS = (1.0e-3, 1.0e-4, 1.0e-3)  # (dv [m/s], domega [rad/s], dbeta [deg])


def compute_aero_gains(params: TurbineParams, surf, op: OperatingPoint,
                       steps=GAIN_STEPS) -> AeroGains:
    """Central finite differences of the static torque/moment maps at ``op``."""
    lam0 = op.omega_r0 * params.R / op.v0
    if not surf.contains(lam0, op.beta0):
        raise DomainError(f"operating point (lam={lam0:.3f}, beta={op.beta0:.3f}) "
                          "outside surface domain")
    t_r_at_op = aero_torque(params, surf, op.v0, op.omega_r0, op.beta0)
    if abs(t_r_at_op - op.T_r0) > 0.01 * abs(op.T_r0):
        warnings.warn("operating point torque differs from surface by more than 1%",
                      stacklevel=2)
    dv, dw, db = steps

    def cdiff(f, x0, dx):
        return (f(x0 + dx) - f(x0 - dx)) / (2.0 * dx)

    tr = lambda v, w, b: aero_torque(params, surf, v, w, b)
    mt = lambda v, w, b: thrust_and_tower_moment(params, surf, v, w, b)[1]
    return AeroGains(
        K_vTr=cdiff(lambda x: tr(x, op.omega_r0, op.beta0), op.v0, dv),
        K_wTr=cdiff(lambda x: tr(op.v0, x, op.beta0), op.omega_r0, dw),
        K_betaTr=cdiff(lambda x: tr(op.v0, op.omega_r0, x), op.beta0, db),
        K_vMt=cdiff(lambda x: mt(x, op.omega_r0, op.beta0), op.v0, dv),
        K_omegaMt=cdiff(lambda x: mt(op.v0, x, op.beta0), op.omega_r0, dw),
        K_betaMt=cdiff(lambda x: mt(op.v0, op.omega_r0, x), op.beta0, db),
    )


# ---------------------------------------------------------------------------
# state-space models

@dataclass(frozen=True)
class ContinuousSS:
    """Continuous LTI model dx = Ax + Bu + Bd d, y = Cx + Du + Dd d."""

    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Dd: np.ndarray


@dataclass(frozen=True)
class DiscreteSS:
    """Zero-order-hold discretization of :class:`ContinuousSS` at period Ts."""

    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Dd: np.ndarray
    Ts: float


def linearize_wt(params: TurbineParams, gains: AeroGains, op: OperatingPoint,
                 ms_formula: str = "as-printed") -> ContinuousSS:
    """Assemble the 3-state turbine model about ``op``.

    State: (beta - beta_ref0, omega_r - omega_r0, omega_g^f - omega_g0).
    Input: P_dem - P_dem0 [W].  Disturbance: v - v0 [m/s].
    Outputs: (M_t - M_t0, M_s - M_s0) [N m].

    The generator torque is eliminated through its power-tracking relation
    T_g = P_ref/(mu omega_g) linearized at the operating point, with
    P_ref = P_dem.  ``ms_formula`` selects the main-shaft output row:
    "as-printed" uses coefficient n_gb^2/J_t on the rotor-torque deviation;
    "inertia-weighted" uses n_gb^2 J_g/J_t (the dimensionally consistent
    two-inertia form).  Both share the n_gb J_r/J_t coefficient on the
    generator-torque deviation.
    """
    if ms_formula not in ("as-printed", "inertia-weighted"):
        raise ValueError(f"unknown ms_formula {ms_formula!r}")
    if abs(op.omega_g0 - params.n_gb * op.omega_r0) > 1e-9 * op.omega_g0:
        raise ValueError("operating point violates omega_g0 = n_gb * omega_r0")
    ngb, jt, mu = params.n_gb, params.J_t, params.mu
    tw, kp, ki = params.T_omega, params.K_P, params.K_I
    wg0, p0 = op.omega_g0, op.P_ref0

    # generator-torque sensitivities: dTg = kg_u*du + kg_w*domega_r
    kg_u = 1.0 / (mu * wg0)
    kg_w = -p0 / (mu * wg0 ** 2) * ngb

    a = np.array([
        [0.0, ngb * kp / tw, ki - kp / tw],
        [gains.K_betaTr / jt, (gains.K_wTr - ngb * kg_w) / jt, 0.0],
        [0.0, ngb / tw, -1.0 / tw],
    ])
    b = np.array([[0.0], [-ngb * kg_u / jt], [0.0]])
    bd = np.array([[0.0], [gains.K_vTr / jt], [0.0]])

    tr_coef = ngb ** 2 / jt if ms_formula == "as-printed" else ngb ** 2 * params.J_g / jt
    c = np.array([
        [gains.K_betaMt, gains.K_omegaMt, 0.0],
        [tr_coef * gains.K_betaTr, tr_coef * gains.K_wTr + ngb * params.J_r / jt * kg_w, 0.0],
    ])
    d = np.array([[0.0], [ngb * params.J_r / jt * kg_u]])
    dd = np.array([[gains.K_vMt], [tr_coef * gains.K_vTr]])
    return ContinuousSS(A=a, B=b, Bd=bd, C=c, D=d, Dd=dd)


def discretize(sys: ContinuousSS, Ts: float) -> DiscreteSS:
    """Exact zero-order-hold discretization via one augmented matrix exponential."""
    if Ts <= 0.0:
        raise ValueError("Ts must be > 0")
    n = sys.A.shape[0]
    m = sys.B.shape[1]
    q = sys.Bd.shape[1]
    blk = np.zeros((n + m + q, n + m + q))
    blk[:n, :n] = sys.A
    blk[:n, n:n + m] = sys.B
    blk[:n, n + m:] = sys.Bd
    e = expm(blk * Ts)
    return DiscreteSS(A=e[:n, :n], B=e[:n, n:n + m], Bd=e[:n, n + m:],
                      C=sys.C.copy(), D=sys.D.copy(), Dd=sys.Dd.copy(), Ts=Ts)
