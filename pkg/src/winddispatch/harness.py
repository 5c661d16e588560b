"""Closed-loop simulation harness, fatigue/tracking metrics, and comparisons.

A scenario fixes the farm, the wind statistics, one controller, a plant kind,
and the Monte Carlo seeds.  Each run steps the receding-horizon loop: measure
the state and per-turbine wind, dispatch setpoints, advance the plant one
period.  Comparisons are seed-paired: every controller sees exactly the same
wind realizations.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dispatch import (ChanceConstraint, DispatchCommand, DmpcController,
                       MpcConfig, box_constraints, edmpc_gains, make_transform,
                       proportional_dispatch, scheduler, solve_smpc)
from .farm import FarmModel
from .plant import LinearPlant, NonlinearPlant
from .windsim import WindProfile, generate_wind


@dataclass(frozen=True)
class Scenario:
    """One reproducible experiment definition."""

    model: FarmModel
    profile: WindProfile
    p_dem_wf: float
    controller: str                      # scheduler | proportional | edmpc | dmpc | smpc
    mpc: MpcConfig | None = None
    plant: str = "nonlinear-static"      # or "linear"
    duration: float = 900.0
    Ts: float = 1.0
    seeds: tuple = (1, 2, 3, 4, 5)
    warmup_s: float = 30.0
    use_box_constraints: bool = True
    name: str = "scenario"

    def __post_init__(self):
        n_steps = self.duration / self.Ts
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise ValueError("duration must be a multiple of Ts")
        p0 = self.model.p_dem0()
        if abs(p0.sum() - self.p_dem_wf) > 1e-6 * max(self.p_dem_wf, 1.0):
            raise ValueError("sum of turbine setpoints must equal the farm demand")
        if self.plant not in ("linear", "nonlinear-static"):
            raise ValueError(f"unknown plant kind {self.plant!r}")
        if self.controller not in ("scheduler", "proportional", "edmpc", "dmpc", "smpc"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.controller in ("edmpc", "dmpc", "smpc") and self.mpc is None:
            raise ValueError("MPC controllers need an MpcConfig")


@dataclass
class SimResult:
    t: np.ndarray
    p_out: np.ndarray        # (T, N) electrical output [W]
    p_dem: np.ndarray        # (T, N) dispatched setpoints [W]
    m_s: np.ndarray          # (T, N) main shaft torque [N m]
    m_t: np.ndarray          # (T, N) tower bending moment [N m]
    v: np.ndarray            # (T, N) wind speed [m/s]
    farm_out: np.ndarray     # (T,) total electrical output [W]
    diagnostics: list = field(default_factory=list)
    seed: int = 0

    def trimmed(self, warmup_s: float, Ts: float) -> "SimResult":
        k = int(round(warmup_s / Ts))
        return SimResult(t=self.t[k:], p_out=self.p_out[k:], p_dem=self.p_dem[k:],
                         m_s=self.m_s[k:], m_t=self.m_t[k:], v=self.v[k:],
                         farm_out=self.farm_out[k:], diagnostics=self.diagnostics[k:],
                         seed=self.seed)

    def to_csv_dir(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        groups = {"p_out_w": self.p_out, "p_dem_w": self.p_dem,
                  "m_s_nm": self.m_s, "m_t_nm": self.m_t, "wind_ms": self.v}
        n = self.p_out.shape[1]
        for name, arr in groups.items():
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t_s"] + [f"{name}_{i + 1}" for i in range(n)])
                for row_t, row in zip(self.t, arr):
                    w.writerow([f"{row_t:.6g}"] + [f"{x:.10g}" for x in row])
        with open(os.path.join(out_dir, "farm_out_w.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "farm_out_w"])
            for row_t, x in zip(self.t, self.farm_out):
                w.writerow([f"{row_t:.6g}", f"{x:.10g}"])


@dataclass(frozen=True)
class Metrics:
    J_P: float
    J_Ms: float
    J_Mt: float

    @property
    def J_tilde(self) -> float:
        return self.J_P + self.J_Ms + self.J_Mt

    def as_dict(self) -> dict:
        return {"J_tilde": self.J_tilde, "J_P": self.J_P,
                "J_Ms": self.J_Ms, "J_Mt": self.J_Mt}


def compute_metrics(result: SimResult, p_rated: float, Ts: float = 1.0,
                    jp_norm: str = "as-printed") -> Metrics:
    """Tracking and fatigue indices of one run.

    J_P is the root of the time-averaged squared tracking error summed over
    turbines and divided by N*P_rated ("as-printed") or by N*P_rated^2
    ("squared").  The fatigue indices are scaled sample standard deviations
    of the shaft torque and tower moment.
    """
    if result.p_out.shape[0] < 2:
        raise ValueError("need at least 2 samples for standard deviations")
    n = result.p_out.shape[1]
    err2 = (result.p_out - result.p_dem) ** 2
    denom = n * p_rated if jp_norm == "as-printed" else n * p_rated ** 2
    if jp_norm not in ("as-printed", "squared"):
        raise ValueError(f"unknown jp_norm {jp_norm!r}")
    j_p = float(np.sqrt(np.mean(np.sum(err2, axis=1) / denom)))
    j_ms = float(sum(0.2 * np.std(result.m_s[:, i] / 2.0e6, ddof=1) for i in range(n)))
    j_mt = float(sum(0.05 * np.std(result.m_t[:, i] / 23.0e6, ddof=1) for i in range(n)))
    return Metrics(J_P=j_p, J_Ms=j_ms, J_Mt=j_mt)


# ---------------------------------------------------------------------------
# controllers

class _SchedulerCtl:
    def __init__(self, scenario: Scenario):
        self.cmd = scheduler(scenario.p_dem_wf, scenario.model.N)

    def dispatch(self, x_aug, d, v_abs):
        return self.cmd


class _ProportionalCtl:
    def __init__(self, scenario: Scenario):
        self.p_dem_wf = scenario.p_dem_wf
        self.params = [u.params for u in scenario.model.units]
        self.surfs = [u.surface for u in scenario.model.units]
        self.p_dem0 = scenario.model.p_dem0()

    def dispatch(self, x_aug, d, v_abs):
        cmd = proportional_dispatch(self.p_dem_wf, v_abs, self.params, self.surfs)
        return DispatchCommand(p_dem=cmd.p_dem, u=cmd.p_dem - self.p_dem0,
                               diagnostics=cmd.diagnostics)


class _EdmpcCtl:
    def __init__(self, scenario: Scenario):
        model = scenario.model
        self.tf = make_transform(model.N)
        self.kx, self.kd = edmpc_gains(model, self.tf, scenario.mpc)
        self.p_dem0 = model.p_dem0()

    def dispatch(self, x_aug, d, v_abs):
        uhat = self.kx @ x_aug + self.kd @ d
        u = self.tf.T @ uhat
        return DispatchCommand(p_dem=self.p_dem0 + u, u=u,
                               diagnostics={"uhat_w": uhat})


class _DmpcCtl:
    def __init__(self, scenario: Scenario):
        cons = (box_constraints(scenario.model.N, scenario.mpc.u_max)
                if scenario.use_box_constraints else ())
        self.inner = DmpcController(scenario.model, scenario.mpc, cons)

    def dispatch(self, x_aug, d, v_abs):
        return self.inner.dispatch(x_aug, d)


class _SmpcCtl:
    def __init__(self, scenario: Scenario):
        self.model = scenario.model
        self.cfg = scenario.mpc
        self.tf = make_transform(self.model.N)
        self.cons = (box_constraints(self.model.N, self.cfg.u_max)
                     if scenario.use_box_constraints else ())

    def dispatch(self, x_aug, d, v_abs):
        cmd, _ = solve_smpc(self.model, self.tf, self.cfg, x_aug, d, self.cons)
        return cmd


_CONTROLLERS = {"scheduler": _SchedulerCtl, "proportional": _ProportionalCtl,
                "edmpc": _EdmpcCtl, "dmpc": _DmpcCtl, "smpc": _SmpcCtl}


def make_controller(scenario: Scenario):
    return _CONTROLLERS[scenario.controller](scenario)


def wind_seed(scenario_seed: int, turbine_index: int) -> int:
    """Deterministic independent stream seed for one turbine in one run."""
    return int(np.random.SeedSequence((scenario_seed, turbine_index)).generate_state(1)[0])


def synthesize_winds(scenario: Scenario, seed: int) -> np.ndarray:
    """Independent per-turbine wind series, (T, N), paired by the run seed."""
    cols = [generate_wind(scenario.profile, scenario.duration, scenario.Ts,
                          wind_seed(seed, i)).samples
            for i in range(scenario.model.N)]
    return np.column_stack(cols)


def simulate(scenario: Scenario, seed: int | None = None,
             winds: np.ndarray | None = None) -> SimResult:
    """Run one closed-loop realization; pure function of (scenario, seed).

    ``winds`` replaces the synthesized series with explicit (T, N) samples.
    """
    if seed is None:
        seed = scenario.seeds[0]
    model = scenario.model
    n = model.N
    steps = int(round(scenario.duration / scenario.Ts))
    if winds is None:
        winds = synthesize_winds(scenario, seed)
    winds = np.asarray(winds, float)
    if winds.shape != (steps, n):
        raise ValueError(f"winds must have shape ({steps}, {n})")
    v0 = np.array([u.op.v0 for u in model.units])
    if scenario.plant == "linear":
        plant = LinearPlant(model, Ts=scenario.Ts)
    else:
        plant = NonlinearPlant(model, Ts=scenario.Ts)
    controller = make_controller(scenario)

    # predictor bank shared by controller and (for the linear plant) the model
    pred_states = [np.zeros(u.pred.order) for u in model.units]
    res = SimResult(t=np.arange(steps) * scenario.Ts,
                    p_out=np.zeros((steps, n)), p_dem=np.zeros((steps, n)),
                    m_s=np.zeros((steps, n)), m_t=np.zeros((steps, n)),
                    v=winds[:steps].copy(), farm_out=np.zeros(steps), seed=seed)
    offs = model.state_offsets
    for t in range(steps):
        v_t = winds[t]
        d_t = v_t - v0
        if scenario.plant == "linear":
            x_aug = plant.x.copy()
        else:
            dev = plant.controller_state()
            x_aug = np.zeros(model.n)
            for i, u in enumerate(model.units):
                x_aug[offs[i]:offs[i] + 3] = dev[i]
                x_aug[offs[i] + 3:offs[i + 1]] = pred_states[i]
        try:
            cmd = controller.dispatch(x_aug, d_t, v_t)
        except Exception as exc:
            raise RuntimeError(f"dispatch failed at step {t}: {exc}") from exc
        ms, mt, pout = plant.step(cmd.p_dem, v_t)
        res.p_dem[t] = cmd.p_dem
        res.p_out[t] = pout
        res.m_s[t] = ms
        res.m_t[t] = mt
        res.farm_out[t] = pout.sum()
        res.diagnostics.append(cmd.diagnostics)
        for i, u in enumerate(model.units):
            pred_states[i] = u.pred.A_v @ pred_states[i] + u.pred.B_v[:, 0] * d_t[i]
    return res


@dataclass
class MonteCarloResult:
    per_seed: list              # [(seed, Metrics)]
    mean: Metrics
    std: Metrics


def _one_seed(args):
    scenario, seed = args
    res = simulate(scenario, seed)
    trimmed = res.trimmed(scenario.warmup_s, scenario.Ts)
    p_rated = scenario.model.units[0].params.P_rated
    return seed, compute_metrics(trimmed, p_rated, Ts=scenario.Ts)


def monte_carlo(scenario: Scenario, workers: int = 1) -> MonteCarloResult:
    """Run every seed, aggregate metric means/stds in seed order."""
    jobs = [(scenario, s) for s in scenario.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_one_seed, jobs))
    else:
        rows = [_one_seed(j) for j in jobs]
    rows.sort(key=lambda r: scenario.seeds.index(r[0]))
    arr = np.array([[m.J_P, m.J_Ms, m.J_Mt] for _, m in rows])
    mean = Metrics(*arr.mean(axis=0))
    std = Metrics(*arr.std(axis=0, ddof=1 if len(rows) > 1 else 0))
    return MonteCarloResult(per_seed=rows, mean=mean, std=std)


@dataclass
class ComparisonRow:
    label: str
    metrics: Metrics
    improvement: dict | None    # % vs baseline per index; None for baseline row


def compare(controllers: list, scenario: Scenario, workers: int = 1) -> list:
    """Paired-seed comparison; first entry is the baseline row.

    ``controllers`` entries are controller tags or (tag, MpcConfig) pairs.
    Improvement is (base - value)/base * 100, so lower indices show positive.
    """
    rows = []
    base = None
    for entry in controllers:
        if isinstance(entry, tuple):
            tag, cfg = entry
        else:
            tag, cfg = entry, scenario.mpc
        sc = replace(scenario, controller=tag, mpc=cfg)
        mc = monte_carlo(sc, workers=workers)
        if base is None:
            base = mc.mean
            rows.append(ComparisonRow(label=tag, metrics=mc.mean, improvement=None))
        else:
            imp = {}
            for key, val in mc.mean.as_dict().items():
                ref = base.as_dict()[key]
                imp[key] = 100.0 * (ref - val) / ref if ref != 0.0 else 0.0
            rows.append(ComparisonRow(label=tag, metrics=mc.mean, improvement=imp))
    return rows
