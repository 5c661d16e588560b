"""Kaimal turbulence synthesis, ARMA identification, and one-step predictors.

Wind is modeled as a slowly varying mean plus a zero-mean turbulence series
sampled at the farm controller rate.  The turbulence spectrum follows the
Kaimal form; series are synthesized in the frequency domain with random
phases and an exact variance rescale.  An ARMA model C(z)/A(z) fitted to a
turbulence record yields the optimal one-step-ahead predictor
(C(z) - A(z))/C(z), realized here in state space.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, field

import numpy as np


class IdentificationError(RuntimeError):
    """No admissible ARMA candidate survived the stability/invertibility filter."""


@dataclass(frozen=True)
class WindProfile:
    """Mean speed [m/s], turbulence intensity, and spectral length scale [m]."""

    v_bar: float
    T_I: float
    L_v: float = 340.0

    def __post_init__(self):
        if self.v_bar <= 0.0:
            raise ValueError("v_bar must be > 0")
        if not 0.0 <= self.T_I < 1.0:
            raise ValueError("T_I must be in [0, 1)")
        if self.L_v <= 0.0:
            raise ValueError("L_v must be > 0")

    @property
    def sigma2(self) -> float:
        """Turbulence variance (T_I * v_bar)^2 [m^2/s^2]."""
        return (self.T_I * self.v_bar) ** 2


@dataclass(frozen=True)
class WindSeries:
    samples: np.ndarray
    seed: int
    profile: WindProfile
    Ts: float = 1.0

    def __post_init__(self):
        if self.samples.size < 2:
            raise ValueError("a wind series needs at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("wind series contains non-finite values")

    def turbulence(self) -> np.ndarray:
        return self.samples - self.profile.v_bar

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "v_ms"])
            for i, v in enumerate(self.samples):
                w.writerow([f"{i * self.Ts:.6g}", f"{v:.10g}"])

    @staticmethod
    def from_csv(path, profile: WindProfile, seed: int = -1) -> "WindSeries":
        ts = []
        vs = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["t_s", "v_ms"]:
                raise ValueError(f"unexpected wind CSV header {header}")
            for row in reader:
                ts.append(float(row[0]))
                vs.append(float(row[1]))
        dt = ts[1] - ts[0] if len(ts) > 1 else 1.0
        return WindSeries(samples=np.array(vs), seed=seed, profile=profile, Ts=dt)


def kaimal_psd(profile: WindProfile, omega):
    """One-sided Kaimal power spectral density at angular frequency omega [rad/s].

    Normalized so that (1/2pi) * integral over omega in [0, inf) equals the
    turbulence variance.
    """
    omega = np.asarray(omega, float)
    if np.any(omega < 0.0):
        raise ValueError("omega must be >= 0")
    num = profile.sigma2 * 4.0 * profile.L_v / profile.v_bar
    return num / (1.0 + omega * 3.0 * profile.L_v / (np.pi * profile.v_bar)) ** (5.0 / 3.0)


#: Spectral folds added across the sampling rate so the synthesized series
#: carries the aliased energy a sampled continuous process would contain.
ALIAS_FOLDS = 3


def generate_wind(profile: WindProfile, duration: float, Ts: float, seed: int,
                  alias_folds: int = ALIAS_FOLDS) -> WindSeries:
    """Synthesize a turbulent wind series with the Kaimal spectrum.

    Deterministic for a given seed: amplitudes are taken from the spectrum
    (with ``alias_folds`` reflections across the Nyquist rate), phases are
    independent uniform, and the result is rescaled so the sample variance
    equals sigma^2 exactly and the sample mean equals v_bar.
    """
    if duration < 60.0:
        raise ValueError("duration must be at least 60 s")
    if Ts <= 0.0:
        raise ValueError("Ts must be > 0")
    n = int(round(duration / Ts))
    rng = np.random.default_rng(seed)
    if profile.T_I == 0.0:
        return WindSeries(samples=np.full(n, profile.v_bar), seed=seed,
                          profile=profile, Ts=Ts)
    freqs = np.fft.rfftfreq(n, d=Ts)
    psd = kaimal_psd(profile, 2.0 * np.pi * freqs)
    fs = 1.0 / Ts
    for m in range(1, alias_folds + 1):
        psd = psd + kaimal_psd(profile, 2.0 * np.pi * np.abs(m * fs - freqs))
        psd = psd + kaimal_psd(profile, 2.0 * np.pi * (m * fs + freqs))
    amp = np.sqrt(psd)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
    spec = amp * np.exp(1j * phase)
    spec[0] = 0.0
    if n % 2 == 0:
        spec[-1] = amp[-1] * np.sign(rng.standard_normal())
    x = np.fft.irfft(spec, n=n)
    x -= x.mean()
    x *= np.sqrt(profile.sigma2) / x.std(ddof=0)
    return WindSeries(samples=profile.v_bar + x, seed=seed, profile=profile, Ts=Ts)


# ---------------------------------------------------------------------------
# ARMA identification

def _poly_stable(poly: np.ndarray) -> bool:
    """All roots of the monic polynomial (in z) strictly inside the unit circle."""
    if poly.size <= 1:
        return True
    return bool(np.all(np.abs(np.roots(poly)) < 1.0 - 1e-9))


@dataclass(frozen=True)
class ArmaModel:
    """A(z) x = C(z) w with monic A, C and innovation variance sigma_w2."""

    a: np.ndarray
    c: np.ndarray
    sigma_w2: float
    mean: float

    def __post_init__(self):
        if self.a[0] != 1.0 or self.c[0] != 1.0:
            raise ValueError("A(z) and C(z) must be monic")
        if not _poly_stable(self.a):
            raise ValueError("A(z) has roots on or outside the unit circle")
        if not _poly_stable(self.c):
            raise ValueError("C(z) has roots on or outside the unit circle")
        if self.sigma_w2 < 0.0:
            raise ValueError("sigma_w2 must be >= 0")

    @property
    def na(self) -> int:
        return self.a.size - 1

    @property
    def nc(self) -> int:
        return self.c.size - 1


def arma_residuals(x: np.ndarray, a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Filter e = (A/C) x with zero initial conditions."""
    e = np.zeros_like(x, dtype=float)
    na, nc = a.size - 1, c.size - 1
    for t in range(x.size):
        acc = x[t]
        for i in range(1, min(na, t) + 1):
            acc += a[i] * x[t - i]
        for j in range(1, min(nc, t) + 1):
            acc -= c[j] * e[t - j]
        e[t] = acc
    return e


def simulate_arma(model: ArmaModel, n: int, seed: int, burn_in: int = 200) -> np.ndarray:
    """Draw one realization of the model (burn-in discarded, mean added)."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, np.sqrt(model.sigma_w2), size=n + burn_in)
    x = np.zeros(n + burn_in)
    na, nc = model.na, model.nc
    for t in range(n + burn_in):
        acc = w[t]
        for j in range(1, min(nc, t) + 1):
            acc += model.c[j] * w[t - j]
        for i in range(1, min(na, t) + 1):
            acc -= model.a[i] * x[t - i]
        x[t] = acc
    return model.mean + x[burn_in:]


def _fit_long_ar(x: np.ndarray, order: int) -> np.ndarray:
    cols = np.column_stack([x[order - i:x.size - i] for i in range(1, order + 1)])
    coef, *_ = np.linalg.lstsq(cols, x[order:], rcond=None)
    resid = x[order:] - cols @ coef
    return np.concatenate([np.zeros(order), resid])


def _fit_arma(x: np.ndarray, na: int, nc: int, e_long: np.ndarray):
    k = max(na, nc)
    n = x.size
    cols = [x[k - i:n - i] for i in range(1, na + 1)]
    cols += [e_long[k - j:n - j] for j in range(1, nc + 1)]
    theta, *_ = np.linalg.lstsq(np.column_stack(cols), x[k:], rcond=None)
    a = np.concatenate([[1.0], -theta[:na]])
    c = np.concatenate([[1.0], theta[na:]])
    return a, c


def identify_arma(train: WindSeries, max_na: int = 4, max_nc: int = 4) -> ArmaModel:
    """Two-stage least-squares fit over the (na, nc) grid, selected by FPE.

    A long AR regression supplies innovation estimates; each candidate order
    pair is then fitted by least squares on lagged outputs and innovations.
    Candidates violating stationarity or invertibility are discarded.  Ties
    in FPE = sigma^2 (L+n)/(L-n) break toward fewer parameters, then lower
    AR order.
    """
    if train.samples.size < 300:
        raise ValueError("need at least 300 training samples")
    if not (1 <= max_na <= 6 and 1 <= max_nc <= 6):
        raise ValueError("order bounds must lie in [1, 6]")
    x = train.samples - train.profile.v_bar
    n_samples = x.size
    e_long = _fit_long_ar(x, min(20, n_samples // 10))
    best = None
    for na in range(1, max_na + 1):
        for nc in range(1, max_nc + 1):
            a, c = _fit_arma(x, na, nc, e_long)
            if not (_poly_stable(a) and _poly_stable(c)):
                continue
            k = max(na, nc)
            resid = arma_residuals(x, a, c)
            s2 = float(np.var(resid[k:]))
            n_par = na + nc
            fpe = s2 * (n_samples + n_par) / (n_samples - n_par)
            key = (fpe, n_par, na)
            if best is None or key < best[0]:
                best = (key, a, c, s2)
    if best is None:
        raise IdentificationError("no stable/invertible ARMA candidate found")
    return ArmaModel(a=best[1], c=best[2], sigma_w2=best[3], mean=train.profile.v_bar)


# ---------------------------------------------------------------------------
# one-step-ahead predictor

@dataclass(frozen=True)
class PredictorSS:
    """State-space one-step predictor: x+ = A_v x + B_v vt, vhat = C_v x + mean."""

    A_v: np.ndarray
    B_v: np.ndarray
    C_v: np.ndarray
    err_var: float
    mean: float
    Ts: float = 1.0

    @property
    def order(self) -> int:
        return self.A_v.shape[0]

    def predict_series(self, series: np.ndarray) -> np.ndarray:
        """One-step predictions vhat(t|t-1) for an absolute wind series."""
        x = np.zeros(self.order)
        c = self.C_v[0]
        b = self.B_v[:, 0]
        out = np.empty(series.size)
        for t in range(series.size):
            out[t] = c @ x + self.mean
            x = self.A_v @ x + b * (series[t] - self.mean)
        return out

    def residuals(self, series: np.ndarray) -> np.ndarray:
        return series - self.predict_series(series)


def build_predictor(model: ArmaModel) -> PredictorSS:
    """Minimal realization of the one-step predictor (C(z) - A(z))/C(z).

    With monic A and C the numerator is strictly delayed, so the filter is
    causal; invertibility of C guarantees a stable realization.  Uses the
    controllable canonical form of order max(na, nc).
    """
    p = max(model.na, model.nc)
    a = np.concatenate([model.a, np.zeros(p - model.na)])
    c = np.concatenate([model.c, np.zeros(p - model.nc)])
    num = c[1:] - a[1:]
    if p == 0:
        raise ValueError("degenerate model with na = nc = 0")
    a_v = np.zeros((p, p))
    a_v[0, :] = -c[1:]
    if p > 1:
        a_v[1:, :-1] = np.eye(p - 1)
    b_v = np.zeros((p, 1))
    b_v[0, 0] = 1.0
    c_v = num.reshape(1, p)
    return PredictorSS(A_v=a_v, B_v=b_v, C_v=c_v, err_var=model.sigma_w2,
                       mean=model.mean)


def zero_predictor(profile: WindProfile) -> PredictorSS:
    """Degenerate predictor that always forecasts the mean.

    Used for the no-predictor ablation: the innovation then carries the full
    turbulence variance.
    """
    return PredictorSS(A_v=np.zeros((1, 1)), B_v=np.zeros((1, 1)),
                       C_v=np.zeros((1, 1)), err_var=profile.sigma2,
                       mean=profile.v_bar)


def predictor_impulse(pred: PredictorSS, n: int) -> np.ndarray:
    """First n Markov parameters C_v A_v^{k-1} B_v (k >= 1)."""
    out = np.empty(n)
    x = pred.B_v[:, 0].copy()
    c = pred.C_v[0]
    for k in range(n):
        out[k] = c @ x
        x = pred.A_v @ x
    return out


def variance_reduction(model: ArmaModel, validation: WindSeries) -> float:
    """Fraction of turbulence variance removed by the one-step predictor.

    Returns 1 - var(residual)/var(turbulence) on the validation series.
    """
    turb = validation.turbulence()
    denom = float(np.var(turb))
    if denom == 0.0:
        raise ValueError("validation series has zero variance")
    pred = build_predictor(model)
    resid = pred.residuals(validation.samples)
    return 1.0 - float(np.var(resid)) / denom


# ---------------------------------------------------------------------------
# predictor fixtures

def save_fixture(pred: PredictorSS, path, comment: str = ""):
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"mean = {pred.mean!r}\n")
        fh.write(f"err_var = {pred.err_var!r}\n")
        for name, mat in (("A", pred.A_v), ("B", pred.B_v), ("C", pred.C_v)):
            fh.write(f"[{name}]\n")
            for row in np.atleast_2d(mat):
                fh.write(", ".join(repr(float(v)) for v in row) + "\n")


def load_fixture(source) -> PredictorSS:
    """Load a predictor fixture from a path or a packaged fixture name."""
    try:
        text = open(source).read()
    except (OSError, TypeError):
        ref = importlib.resources.files("winddispatch").joinpath(
            f"data/fixtures/{source}.txt")
        text = ref.read_text()
    mean = err_var = None
    mats: dict[str, list[list[float]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            mats[current] = []
        elif "=" in line and current is None:
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "mean":
                mean = float(val)
            elif key == "err_var":
                err_var = float(val)
            else:
                raise ValueError(f"unknown fixture key {key!r}")
        else:
            mats[current].append([float(v) for v in line.split(",")])
    if mean is None or err_var is None or set(mats) != {"A", "B", "C"}:
        raise ValueError("fixture file is missing required entries")
    return PredictorSS(A_v=np.array(mats["A"]), B_v=np.array(mats["B"]),
                       C_v=np.array(mats["C"]), err_var=err_var, mean=mean)


#: Packaged predictor fixtures by wind profile.
FIXTURE_NAMES = ("v12_ti010", "v20_ti010", "v12_ti001", "v15_ti010")
