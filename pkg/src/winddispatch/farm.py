"""Turbine models augmented with wind predictors and block-diagonal farm models.

Each discrete turbine model is driven by the measured wind deviation d, which
splits into the predictor output and the innovation: d(t) = vhat(t|t-1) + w(t).
Augmenting the turbine state with the predictor state turns the wind into a
white-noise-driven subsystem.  At the current step the wind is measured, so a
separate (A_0, C_0) pair propagates the measured deviation deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .turbine import (AnalyticSurface, ContinuousSS, DiscreteSS, OperatingPoint,
                      TurbineParams, compute_aero_gains, discretize, linearize_wt,
                      solve_operating_point)
from .windsim import PredictorSS


@dataclass(frozen=True)
class AugmentedWt:
    """One turbine with its predictor absorbed into the state.

    The stochastic update is driven by the innovation w; the first-step
    variant (A_0, same B/B_d) is driven by the measured wind deviation and
    reads the output through C_0, which ignores the predictor state.
    """

    A_a: np.ndarray
    B_a: np.ndarray
    B_da: np.ndarray
    C_a: np.ndarray
    D_a: np.ndarray
    D_da: np.ndarray
    A_0: np.ndarray
    C_0: np.ndarray
    sigma_w2: float

    @property
    def n(self) -> int:
        return self.A_a.shape[0]

    @property
    def ny(self) -> int:
        return self.C_a.shape[0]


def augment_wt(wt: DiscreteSS, pred: PredictorSS) -> AugmentedWt:
    """Stack the turbine and predictor states into one LTI block."""
    if abs(wt.Ts - pred.Ts) > 1e-12:
        raise ValueError(f"turbine Ts {wt.Ts} and predictor Ts {pred.Ts} differ")
    n_wt = wt.A.shape[0]
    n_v = pred.order
    n = n_wt + n_v
    a = np.zeros((n, n))
    a[:n_wt, :n_wt] = wt.A
    a[:n_wt, n_wt:] = wt.Bd @ pred.C_v
    a[n_wt:, n_wt:] = pred.A_v + pred.B_v @ pred.C_v
    b = np.vstack([wt.B, np.zeros((n_v, wt.B.shape[1]))])
    bd = np.vstack([wt.Bd, pred.B_v])
    c = np.hstack([wt.C, wt.Dd @ pred.C_v])
    a0 = np.zeros((n, n))
    a0[:n_wt, :n_wt] = wt.A
    a0[n_wt:, n_wt:] = pred.A_v
    c0 = np.hstack([wt.C, np.zeros((wt.C.shape[0], n_v))])
    return AugmentedWt(A_a=a, B_a=b, B_da=bd, C_a=c, D_a=wt.D.copy(),
                       D_da=wt.Dd.copy(), A_0=a0, C_0=c0, sigma_w2=pred.err_var)


@dataclass(frozen=True)
class TurbineUnit:
    """Everything describing one farm member: physics, linearization, predictor."""

    params: TurbineParams
    surface: object
    op: OperatingPoint
    disc: DiscreteSS
    pred: PredictorSS
    aug: AugmentedWt
    x_m: float = 0.0
    y_m: float = 0.0


def build_turbine_unit(params: TurbineParams, surface, v0: float, p_dem0: float,
                       pred: PredictorSS, Ts: float = 1.0,
                       x_m: float = 0.0, y_m: float = 0.0,
                       ms_formula: str = "as-printed") -> TurbineUnit:
    """Close the operating point, linearize, discretize, and augment."""
    op = solve_operating_point(params, surface, v0, p_dem0)
    gains = compute_aero_gains(params, surface, op)
    cont = linearize_wt(params, gains, op, ms_formula=ms_formula)
    disc = discretize(cont, Ts)
    return TurbineUnit(params=params, surface=surface, op=op, disc=disc,
                       pred=pred, aug=augment_wt(disc, pred), x_m=x_m, y_m=y_m)


def _blockdiag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class FarmModel:
    """Block-diagonal model of N turbines.

    Matrices are kept per turbine and densified lazily; the dense views are
    meant for small-N checks and for the dispatch condensation, which at
    N = 100 is still a few hundred rows.
    """

    units: tuple[TurbineUnit, ...]

    def __post_init__(self):
        if len(self.units) == 0:
            raise ValueError("a farm needs at least one turbine")

    @property
    def N(self) -> int:
        return len(self.units)

    @property
    def n(self) -> int:
        return sum(u.aug.n for u in self.units)

    @property
    def ny(self) -> int:
        return sum(u.aug.ny for u in self.units)

    @cached_property
    def state_offsets(self) -> tuple[int, ...]:
        offs = [0]
        for u in self.units:
            offs.append(offs[-1] + u.aug.n)
        return tuple(offs)

    @cached_property
    def Sigma_w(self) -> np.ndarray:
        return np.diag([u.aug.sigma_w2 for u in self.units])

    # dense views -----------------------------------------------------------
    @cached_property
    def A(self) -> np.ndarray:
        return _blockdiag([u.aug.A_a for u in self.units])

    @cached_property
    def B(self) -> np.ndarray:
        return _blockdiag([u.aug.B_a for u in self.units])

    @cached_property
    def Bd(self) -> np.ndarray:
        return _blockdiag([u.aug.B_da for u in self.units])

    @cached_property
    def C(self) -> np.ndarray:
        return _blockdiag([u.aug.C_a for u in self.units])

    @cached_property
    def D(self) -> np.ndarray:
        return _blockdiag([u.aug.D_a for u in self.units])

    @cached_property
    def Dd(self) -> np.ndarray:
        return _blockdiag([u.aug.D_da for u in self.units])

    @cached_property
    def A0(self) -> np.ndarray:
        return _blockdiag([u.aug.A_0 for u in self.units])

    @cached_property
    def C0(self) -> np.ndarray:
        return _blockdiag([u.aug.C_0 for u in self.units])

    def p_dem0(self) -> np.ndarray:
        return np.array([u.op.P_dem0 for u in self.units])


def assemble_farm(units) -> FarmModel:
    """Group turbine units into one block-diagonal farm model (order preserved)."""
    return FarmModel(units=tuple(units))


def step_farm(model: FarmModel, x: np.ndarray, u: np.ndarray, d_or_w: np.ndarray,
              first_step: bool):
    """One exact linear update of the farm model.

    With ``first_step`` the measured wind deviation drives the model through
    (A_0, C_0); otherwise the innovation drives the stochastic form.
    Block-wise evaluation keeps the cost linear in N.
    """
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    d = np.asarray(d_or_w, float)
    if x.shape != (model.n,) or u.shape != (model.N,) or d.shape != (model.N,):
        raise ValueError(f"dimension mismatch: x{x.shape}, u{u.shape}, d{d.shape}")
    x_next = np.empty_like(x)
    y = np.empty(model.ny)
    offs = model.state_offsets
    for i, unit in enumerate(model.units):
        blk = unit.aug
        xi = x[offs[i]:offs[i + 1]]
        a = blk.A_0 if first_step else blk.A_a
        c = blk.C_0 if first_step else blk.C_a
        x_next[offs[i]:offs[i + 1]] = a @ xi + blk.B_a[:, 0] * u[i] + blk.B_da[:, 0] * d[i]
        y[2 * i:2 * i + 2] = c @ xi + blk.D_a[:, 0] * u[i] + blk.D_da[:, 0] * d[i]
    return x_next, y
