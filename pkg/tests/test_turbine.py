import math

import numpy as np
import pytest

from winddispatch.turbine import (AnalyticSurface, DomainError, TabulatedSurface,
                                  TurbineParams, aero_power, aero_torque,
                                  compute_aero_gains, discretize, linearize_wt,
                                  solve_operating_point, thrust_and_tower_moment)


class ConstantSurface:
    """Minimal surface with fixed coefficients, for hand-checkable values."""

    kind = "analytic"
    beta_range = (-5.0, 30.0)
    lam_range = (0.1, 25.0)

    def __init__(self, cp=0.0, ct=0.0):
        self._cp = cp
        self._ct = ct

    def cp(self, lam, beta):
        return self._cp + 0.0 * lam

    def cq(self, lam, beta):
        return self._cp / lam

    def ct(self, lam, beta):
        return self._ct + 0.0 * lam

    def contains(self, lam, beta):
        return True

    def cp_max(self):
        return max(self._cp, 1e-9)


def test_params_validation():
    with pytest.raises(ValueError):
        TurbineParams(rho=-1.0)
    with pytest.raises(ValueError):
        TurbineParams(mu=1.2)
    p = TurbineParams()
    assert p.J_t == p.J_r + p.n_gb ** 2 * p.J_g


def test_aero_power_zero_coefficient(params):
    assert aero_power(params, ConstantSurface(cp=0.0), 12.0, 1.2, 0.0) == 0.0


def test_aero_power_hand_value():
    # (pi/2) * 1.225 * 63^2 * 12^3 * 0.48, evaluated independently
    p = TurbineParams(rho=1.225, R=63.0)
    expected = (math.pi / 2) * 1.225 * 63.0 ** 2 * 12.0 ** 3 * 0.48
    got = aero_power(p, ConstantSurface(cp=0.48), 12.0, 1.2, 0.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(6.335e6, rel=1e-3)


def test_aero_power_linear_in_cp(params):
    p1 = aero_power(params, ConstantSurface(cp=0.2), 10.0, 1.0, 2.0)
    p2 = aero_power(params, ConstantSurface(cp=0.4), 10.0, 1.0, 2.0)
    assert p2 == pytest.approx(2.0 * p1, rel=1e-12)


def test_aero_torque_power_identity(params, surface):
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.uniform(8.0, 16.0)
        wr = rng.uniform(0.9, 1.5)
        beta = rng.uniform(0.0, 15.0)
        tq = aero_torque(params, surface, v, wr, beta)
        pw = aero_power(params, surface, v, wr, beta)
        assert tq * wr == pytest.approx(pw, rel=1e-9)


def test_aero_torque_hand_value():
    p = TurbineParams(rho=1.225, R=63.0)
    got = aero_torque(p, ConstantSurface(cp=0.48), 12.0, 1.2, 0.0)
    assert got == pytest.approx(6.335e6 / 1.2, rel=1e-3)


def test_thrust_and_moment(params):
    surf = ConstantSurface(ct=0.7)
    f_t, m_t = thrust_and_tower_moment(params, surf, 12.0, 1.2, 0.0)
    expected_ft = (math.pi / 2) * 1.225 * 63.0 ** 2 * 12.0 ** 2 * 0.7
    assert f_t == pytest.approx(expected_ft, rel=1e-12)
    assert m_t == pytest.approx(params.h * f_t, rel=0, abs=0)
    zf, zm = thrust_and_tower_moment(params, ConstantSurface(ct=0.0), 12.0, 1.2, 0.0)
    assert zf == 0.0 and zm == 0.0


def test_domain_errors(params, surface):
    with pytest.raises(DomainError):
        aero_power(params, surface, 0.0, 1.2, 0.0)
    with pytest.raises(DomainError):
        aero_torque(params, surface, 12.0, -1.0, 0.0)


def test_cq_identity_on_grid(surface):
    lams = np.linspace(3.0, 15.0, 13)
    betas = np.linspace(0.0, 20.0, 9)
    for lam in lams:
        for beta in betas:
            assert surface.cq(lam, beta) * lam == pytest.approx(
                surface.cp(lam, beta), rel=0, abs=1e-15)


def test_betz_sanity(surface):
    lams = np.linspace(4.0, 12.0, 40)
    cps = surface.cp(lams, 0.0)
    assert cps.max() <= 0.593
    assert cps.max() > 0.4


def test_tabulated_surface_roundtrip(tmp_path, surface):
    lam = np.linspace(3.0, 12.0, 19)
    beta = np.linspace(0.0, 20.0, 11)
    cp = surface.cp(lam[None, :], beta[:, None] * np.ones_like(lam[None, :]))
    cp = np.asarray([[surface.cp(l, b) for l in lam] for b in beta])
    cq = cp / lam[None, :]
    ct = np.asarray([[surface.ct(l, b) for l in lam] for b in beta])
    tab = TabulatedSurface(lam, beta, cp, cq, ct)
    path = tmp_path / "surf.txt"
    tab.save(path)
    tab2 = TabulatedSurface.load(path)
    assert np.allclose(tab2.cp_table, cp, rtol=1e-8)
    # interpolation at nodes is exact
    assert tab2.cp(lam[3], beta[4]) == pytest.approx(cp[4, 3], rel=1e-8)
    # identity violation is rejected
    with pytest.raises(ValueError):
        TabulatedSurface(lam, beta, cp, cq * 1.5, ct)


def test_operating_point_closure(params, surface, op12):
    assert op12.omega_g0 == pytest.approx(params.n_gb * op12.omega_r0, rel=1e-12)
    assert op12.T_r0 == pytest.approx(params.n_gb * op12.T_g0, rel=1e-12)
    # power balance at the closure
    tq = aero_torque(params, surface, op12.v0, op12.omega_r0, op12.beta0)
    assert tq * op12.omega_r0 == pytest.approx(op12.T_r0 * op12.omega_r0, rel=1e-10)
    with pytest.raises(DomainError):
        solve_operating_point(params, surface, 4.0, 5.0e6)  # not enough wind


def test_gains_zero_for_beta_constant_surface(params):
    from winddispatch.turbine import OperatingPoint
    surf = ConstantSurface(cp=0.3, ct=0.6)
    wr0 = 1.2671
    t_r0 = aero_torque(params, surf, 12.0, wr0, 5.0)
    op = OperatingPoint(v0=12.0, beta0=5.0, omega_r0=wr0,
                        omega_g0=params.n_gb * wr0, T_r0=t_r0,
                        T_g0=t_r0 / params.n_gb, M_t0=0.0, M_s0=t_r0,
                        P_ref0=3.0e6, P_dem0=3.0e6)
    g = compute_aero_gains(params, surf, op)
    assert g.K_betaTr == pytest.approx(0.0, abs=1e-9)
    assert g.K_betaMt == pytest.approx(0.0, abs=1e-9)


def test_gains_match_secant_oracle(params, surface, op12, gains12):
    dv = 1e-3
    hi = aero_torque(params, surface, op12.v0 + dv, op12.omega_r0, op12.beta0)
    lo = aero_torque(params, surface, op12.v0 - dv, op12.omega_r0, op12.beta0)
    assert gains12.K_vTr == pytest.approx((hi - lo) / (2 * dv), rel=1e-6)


def test_gains_match_symbolic_oracle(params, surface, op12, gains12):
    import sympy as sp

    lam_s, beta_s, v_s, w_s = sp.symbols("lam beta v w", positive=True)
    c1, c2, c3, c4, c5, c6 = surface.cp_coeffs
    inv_li = 1 / (lam_s + sp.Rational(8, 100) * beta_s) - sp.Rational(35, 1000) / (beta_s ** 3 + 1)
    cp_expr = c1 * (c2 * inv_li - c3 * beta_s - c4) * sp.exp(-c5 * inv_li) + c6 * lam_s
    tr_expr = (sp.pi / 2 * params.rho * params.R ** 3 * v_s ** 2
               * (cp_expr / lam_s)).subs(lam_s, w_s * params.R / v_s)
    subs = {v_s: op12.v0, w_s: op12.omega_r0, beta_s: op12.beta0}
    k_v = float(sp.diff(tr_expr, v_s).subs(subs))
    k_w = float(sp.diff(tr_expr, w_s).subs(subs))
    k_b = float(sp.diff(tr_expr, beta_s).subs(subs))
    assert gains12.K_vTr == pytest.approx(k_v, rel=1e-4)
    assert gains12.K_wTr == pytest.approx(k_w, rel=1e-4)
    assert gains12.K_betaTr == pytest.approx(k_b, rel=1e-4)


def test_gains_richardson_consistency(params, surface, op12):
    g1 = compute_aero_gains(params, surface, op12)
    g2 = compute_aero_gains(params, surface, op12,
                            steps=(0.5e-3, 0.5e-4, 0.5e-3))
    for name in ("K_vTr", "K_wTr", "K_betaTr", "K_vMt", "K_omegaMt", "K_betaMt"):
        a, b = getattr(g1, name), getattr(g2, name)
        assert abs(a - b) <= 1e-5 * max(abs(a), abs(b), 1.0)


def test_linearize_dimensions_and_filter_pole(params, surface, op12, gains12):
    sys = linearize_wt(params, gains12, op12)
    assert sys.A.shape == (3, 3)
    assert sys.B.shape == (3, 1) and sys.Bd.shape == (3, 1)
    assert sys.C.shape == (2, 3) and sys.D.shape == (2, 1) and sys.Dd.shape == (2, 1)
    assert sys.A[2, 2] == pytest.approx(-1.0 / params.T_omega, rel=1e-14)
    # tower-moment output row does not involve the filtered speed state
    assert sys.C[0, 2] == 0.0


def test_linearize_zero_gain_block_structure(params, op12):
    import dataclasses

    from winddispatch.turbine import AeroGains
    p0 = dataclasses.replace(params, K_P=1e-12, K_I=1e-12)
    zero = AeroGains(0, 0, 0, 0, 0, 0)
    sys = linearize_wt(p0, zero, op12)
    # pitch row decouples, filter pole remains
    eigs = np.linalg.eigvals(sys.A)
    assert np.min(np.abs(eigs - (-1.0 / p0.T_omega))) < 1e-9


def test_linear_model_matches_nonlinear_ode(params, surface, op12, gains12):
    """RK4 of the static-map ODE vs the linear model for a 1 kW step, 10 s."""
    sys = linearize_wt(params, gains12, op12)
    ngb, jt, mu, tw = params.n_gb, params.J_t, params.mu, params.T_omega
    kp, ki = params.K_P, params.K_I
    du = 1.0e3

    def f_nl(x):
        beta, wr, wgf = x
        wg = ngb * wr
        tr = aero_torque(params, surface, op12.v0, wr, beta)
        tg = (op12.P_dem0 + du) / (mu * wg)
        return np.array([(kp / tw) * (wg - wgf) + ki * (wgf - op12.omega_g0),
                         (tr - ngb * tg) / jt,
                         (wg - wgf) / tw])

    def f_lin(x):
        return sys.A @ x + sys.B[:, 0] * du

    def rk4(f, x, dt):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    x_nl = np.array([op12.beta0, op12.omega_r0, op12.omega_g0])
    x_li = np.zeros(3)
    dt = 0.01
    for _ in range(1000):
        x_nl = rk4(f_nl, x_nl, dt)
        x_li = rk4(f_lin, x_li, dt)
    dev = x_nl - np.array([op12.beta0, op12.omega_r0, op12.omega_g0])
    assert np.all(np.abs(x_li - dev) <= 0.02 * np.abs(dev))


def _expm_series_oracle(a, ts, terms=10, squarings=20):
    """Scaled-and-squared truncated Taylor series."""
    m = a * (ts / 2.0 ** squarings)
    e = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms + 1):
        term = term @ m / k
        e = e + term
    for _ in range(squarings):
        e = e @ e
    return e


def test_discretize_zero_a(params):
    from winddispatch.turbine import ContinuousSS
    sys = ContinuousSS(A=np.zeros((2, 2)), B=np.array([[1.0], [2.0]]),
                       Bd=np.array([[0.5], [0.0]]), C=np.eye(2),
                       D=np.zeros((2, 1)), Dd=np.zeros((2, 1)))
    d = discretize(sys, 0.7)
    assert np.allclose(d.A, np.eye(2), atol=1e-15)
    assert np.allclose(d.B, 0.7 * sys.B, atol=1e-12)
    assert np.allclose(d.Bd, 0.7 * sys.Bd, atol=1e-12)


def test_discretize_scalar_closed_form():
    from winddispatch.turbine import ContinuousSS
    a = -0.8
    sys = ContinuousSS(A=np.array([[a]]), B=np.array([[2.0]]),
                       Bd=np.array([[1.0]]), C=np.eye(1),
                       D=np.zeros((1, 1)), Dd=np.zeros((1, 1)))
    d = discretize(sys, 1.3)
    assert d.A[0, 0] == pytest.approx(math.exp(a * 1.3), rel=1e-12)
    assert d.B[0, 0] == pytest.approx((math.exp(a * 1.3) - 1.0) / a * 2.0, rel=1e-12)


def test_discretize_matches_series_oracle():
    from winddispatch.turbine import ContinuousSS
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.normal(size=(3, 3))
        a -= (np.max(np.real(np.linalg.eigvals(a))) + 0.5) * np.eye(3)
        sys = ContinuousSS(A=a, B=rng.normal(size=(3, 1)),
                           Bd=rng.normal(size=(3, 1)), C=np.eye(3),
                           D=np.zeros((3, 1)), Dd=np.zeros((3, 1)))
        d = discretize(sys, 1.0)
        assert np.max(np.abs(d.A - _expm_series_oracle(a, 1.0))) < 1e-10


def test_discretize_spectrum_matching(params, surface, op12, gains12):
    sys = linearize_wt(params, gains12, op12)
    d = discretize(sys, 1.0)
    ec = np.sort_complex(np.exp(np.linalg.eigvals(sys.A)))
    ed = np.sort_complex(np.linalg.eigvals(d.A))
    assert np.max(np.abs(ec - ed)) < 1e-9
    assert np.max(np.abs(np.linalg.eigvals(d.A))) < 1.0
