import numpy as np
import pytest

from winddispatch.dispatch import MpcConfig
from winddispatch.farm import assemble_farm, build_turbine_unit
from winddispatch.turbine import (AnalyticSurface, TurbineParams,
                                  compute_aero_gains, solve_operating_point)
from winddispatch.windsim import load_fixture


@pytest.fixture(scope="session")
def params():
    return TurbineParams()


@pytest.fixture(scope="session")
def surface():
    return AnalyticSurface()


@pytest.fixture(scope="session")
def op12(params, surface):
    return solve_operating_point(params, surface, 12.0, 3.0e6)


@pytest.fixture(scope="session")
def gains12(params, surface, op12):
    return compute_aero_gains(params, surface, op12)


@pytest.fixture(scope="session")
def pred12():
    return load_fixture("v12_ti010")


def make_farm(n, params=None, surface=None, pred=None, v0=12.0, p_dem0=3.0e6):
    params = params or TurbineParams()
    surface = surface or AnalyticSurface()
    pred = pred or load_fixture("v12_ti010")
    units = [build_turbine_unit(params, surface, v0, p_dem0, pred)
             for _ in range(n)]
    return assemble_farm(units)


@pytest.fixture(scope="session")
def farm3():
    return make_farm(3)


@pytest.fixture(scope="session")
def farm2():
    return make_farm(2)


@pytest.fixture(scope="session")
def cfg_dmpc():
    return MpcConfig(n_h=2, r=(0.06,), u_max=1.0e5, mode="dmpc")
