"""Scenario and farm description files: INI-style sections, strict schemas.

Physical values carry unit suffixes in their key names (``p_dem_wf_mw``,
``v0_ms``).  Unknown keys or sections are rejected before any computation.
Farms and scenarios can reference files shipped with the package through the
``builtin:`` prefix.
"""

from __future__ import annotations

import configparser
import hashlib
import importlib.resources
import os
from dataclasses import dataclass

import numpy as np

from .dispatch import MpcConfig
from .farm import FarmModel, assemble_farm, build_turbine_unit
from .harness import Scenario
from .turbine import AnalyticSurface, TabulatedSurface, TurbineParams
from .windsim import WindProfile, load_fixture, zero_predictor


class ScenarioError(ValueError):
    """Malformed scenario/farm configuration (CLI exit code 2)."""


_PARAM_KEYS = {
    "rho_kgm3": "rho", "radius_m": "R", "tower_height_m": "h",
    "gearbox_ratio": "n_gb", "rotor_inertia_kgm2": "J_r",
    "generator_inertia_kgm2": "J_g", "generator_efficiency": "mu",
    "speed_filter_s": "T_omega", "pitch_kp_deg_per_rads": "K_P",
    "pitch_ki_deg_per_rad": "K_I", "rated_power_w": "P_rated",
}

_FARM_SCHEMA = {
    "farm": {"count", "spacing_m"},
    "turbine": {"preset", "surface_file"} | set(_PARAM_KEYS),
    "operating_point": {"v0_ms", "p_dem0_mw"},
    "predictor": {"source"},
}

_SCENARIO_SCHEMA = {
    "farm": {"file"},
    "wind": {"ti", "mean_ms", "length_scale_m"},
    "controller": {"kind", "horizon", "r", "u_max_mw", "p_tilde", "rho_slack",
                   "box_constraints"},
    "plant": {"kind"},
    "run": {"duration_s", "ts_s", "seeds", "warmup_s", "p_dem_wf_mw"},
}


def _read_ini(path_or_text: str, is_text: bool = False) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if is_text:
            cp.read_string(path_or_text)
        else:
            with open(path_or_text) as fh:
                cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ScenarioError(f"cannot parse {path_or_text!r}: {exc}") from exc
    return cp


def _validate(cp: configparser.ConfigParser, schema: dict, what: str):
    for section in cp.sections():
        if section not in schema:
            raise ScenarioError(f"unknown section [{section}] in {what}")
        for key in cp[section]:
            if key not in schema[section]:
                raise ScenarioError(f"unknown key {key!r} in [{section}] of {what}")


def resolve_data_path(ref: str, kind: str, base_dir: str = ".") -> str:
    """Resolve ``builtin:<name>`` to packaged data, else a filesystem path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        ext = {"farms": ".farm", "scenarios": ".scn"}[kind]
        res = importlib.resources.files("winddispatch").joinpath(
            f"data/{kind}/{name}{ext}")
        if not res.is_file():
            raise ScenarioError(f"no builtin {kind[:-1]} named {name!r}")
        return str(res)
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    if not os.path.exists(path):
        raise ScenarioError(f"{kind[:-1]} file not found: {path}")
    return path


def load_farm(path: str, profile_hint: WindProfile | None = None) -> FarmModel:
    """Build the farm model a description file specifies."""
    cp = _read_ini(path)
    _validate(cp, _FARM_SCHEMA, os.path.basename(path))
    try:
        count = cp.getint("farm", "count")
    except (configparser.NoSectionError, configparser.NoOptionError, ValueError) as exc:
        raise ScenarioError(f"farm file needs [farm] count: {exc}") from exc
    if count < 1:
        raise ScenarioError("farm count must be >= 1")
    spacing = cp.getfloat("farm", "spacing_m", fallback=500.0)

    tsec = cp["turbine"] if cp.has_section("turbine") else {}
    preset = tsec.get("preset", "nrel5mw")
    if preset != "nrel5mw":
        raise ScenarioError(f"unknown turbine preset {preset!r}")
    overrides = {}
    for key, attr in _PARAM_KEYS.items():
        if key in tsec:
            overrides[attr] = float(tsec[key])
    params = TurbineParams(**overrides)
    if "surface_file" in tsec:
        surface = TabulatedSurface.load(os.path.join(os.path.dirname(path),
                                                     tsec["surface_file"]))
    else:
        surface = AnalyticSurface()

    try:
        v0 = cp.getfloat("operating_point", "v0_ms")
        p_dem0 = cp.getfloat("operating_point", "p_dem0_mw") * 1.0e6
    except (configparser.NoSectionError, configparser.NoOptionError, ValueError) as exc:
        raise ScenarioError(f"farm file needs [operating_point] v0_ms and "
                            f"p_dem0_mw: {exc}") from exc

    source = cp.get("predictor", "source", fallback="none")
    if source == "none":
        profile = profile_hint or WindProfile(v_bar=v0, T_I=0.1)
        pred = zero_predictor(profile)
    elif source.startswith("fixture:"):
        pred = load_fixture(source.split(":", 1)[1])
    elif source.startswith("file:"):
        pred = load_fixture(os.path.join(os.path.dirname(path),
                                         source.split(":", 1)[1]))
    else:
        raise ScenarioError(f"unknown predictor source {source!r}")
    if abs(pred.mean - v0) > 1e-9:
        raise ScenarioError(f"predictor mean {pred.mean} does not match the "
                            f"operating wind speed {v0}")

    units = [build_turbine_unit(params, surface, v0, p_dem0, pred,
                                x_m=spacing * i, y_m=0.0)
             for i in range(count)]
    return assemble_farm(units)


def load_scenario(path: str, name: str | None = None,
                  seeds_override=None) -> Scenario:
    """Parse, validate, and assemble a scenario file."""
    cp = _read_ini(path)
    _validate(cp, _SCENARIO_SCHEMA, os.path.basename(path))
    base_dir = os.path.dirname(os.path.abspath(path))

    def need(section, key, conv=str):
        try:
            return conv(cp.get(section, key))
        except (configparser.NoSectionError, configparser.NoOptionError) as exc:
            raise ScenarioError(f"missing [{section}] {key}") from exc
        except ValueError as exc:
            raise ScenarioError(f"bad value for [{section}] {key}: {exc}") from exc

    ti = need("wind", "ti", float)
    v_mean = need("wind", "mean_ms", float)
    l_v = cp.getfloat("wind", "length_scale_m", fallback=340.0)
    profile = WindProfile(v_bar=v_mean, T_I=ti, L_v=l_v)

    farm_ref = need("farm", "file")
    model = load_farm(resolve_data_path(farm_ref, "farms", base_dir), profile)
    for u in model.units:
        if abs(u.op.v0 - v_mean) > 1e-9:
            raise ScenarioError("wind mean_ms must match the farm operating wind")

    kind = need("controller", "kind")
    mpc = None
    if kind in ("edmpc", "dmpc", "smpc"):
        r_raw = cp.get("controller", "r", fallback="0.06")
        r = tuple(float(x) for x in r_raw.split(","))
        mpc = MpcConfig(
            n_h=cp.getint("controller", "horizon", fallback=2),
            r=r,
            u_max=cp.getfloat("controller", "u_max_mw", fallback=0.1) * 1.0e6,
            p_tilde=cp.getfloat("controller", "p_tilde", fallback=0.05),
            rho_slack=(cp.getfloat("controller", "rho_slack")
                       if cp.has_option("controller", "rho_slack") else None),
            mode=kind,
        )
    use_box = cp.getboolean("controller", "box_constraints", fallback=True)

    seeds = seeds_override
    if seeds is None:
        seeds = tuple(int(s) for s in need("run", "seeds").split(","))
    try:
        scenario = Scenario(
            model=model,
            profile=profile,
            p_dem_wf=need("run", "p_dem_wf_mw", float) * 1.0e6,
            controller=kind,
            mpc=mpc,
            plant=need("plant", "kind"),
            duration=need("run", "duration_s", float),
            Ts=cp.getfloat("run", "ts_s", fallback=1.0),
            seeds=tuple(seeds),
            warmup_s=cp.getfloat("run", "warmup_s", fallback=30.0),
            use_box_constraints=use_box,
            name=name or os.path.splitext(os.path.basename(path))[0],
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return scenario


def scenario_hash(path: str) -> str:
    """Content hash of the scenario text, for report provenance."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]
