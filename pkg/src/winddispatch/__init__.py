"""Wind-farm power dispatch: turbine models, wind predictors, MPC dispatchers."""

__version__ = "0.1.0"

from .dispatch import (ChanceConstraint, DispatchCommand, DmpcController,
                       InputTransform, MpcConfig, box_constraints, build_weights,
                       edmpc_gains, make_transform, proportional_dispatch,
                       scheduler, solve_dmpc, solve_smpc)
from .farm import (AugmentedWt, FarmModel, TurbineUnit, assemble_farm,
                   augment_wt, build_turbine_unit, step_farm)
from .harness import (Metrics, Scenario, SimResult, compare, compute_metrics,
                      monte_carlo, simulate)
from .optim import (QpProblem, SdpProblem, check_lmi, qp_kkt_residuals,
                    solve_qp, solve_sdp)
from .plant import LinearPlant, NonlinearPlant
from .scenario import load_farm, load_scenario
from .turbine import (AeroGains, AnalyticSurface, ContinuousSS, DiscreteSS,
                      OperatingPoint, TabulatedSurface, TurbineParams,
                      aero_power, aero_torque, compute_aero_gains, discretize,
                      linearize_wt, solve_operating_point,
                      thrust_and_tower_moment)
from .windsim import (ArmaModel, PredictorSS, WindProfile, WindSeries,
                      build_predictor, generate_wind, identify_arma,
                      kaimal_psd, load_fixture, variance_reduction,
                      zero_predictor)
