"""Heterogeneous-fleet interchange simulation and sensitivity toolkit."""

from .engine import (CrashError, MetricsRecord, Simulation, SimulationConfig,
                     run_simulation)
from .experiments import (Scenario, derive_run_seed, run_het_sweep,
                          run_ofat_campaign, run_single, run_sobol_campaign)
from .model import (B_EMERGENCY, CollisionGapError, LaneChangeContext,
                    LaneChangeDirection, LongitudinalContext, eidm_acceleration,
                    idm_acceleration, idm_desired_gap, mobil_incentive,
                    mobil_safety_ok)
from .network import (CloverleafGeometry, Connection, Detector, EntryBoundary,
                      ExitBoundary, RoadNetwork, RoadSegment, RouteTable,
                      build_cloverleaf)
from .params import (ControllerParams, FleetSpec, ParameterBounds, FIXED_NAMES,
                     SAMPLED_NAMES, THETA_NAMES, default_bounds)
from .sampling import (arrival_stream, mean_vector_box, sample_controller,
                       sample_fleet, sample_mean_vector, sample_theta,
                       vehicle_stream)
from .sensitivity import (OfatResult, SensitivityResult, SobolDesign,
                          ofat_from_responses, ofat_sweep, pearson_wald,
                          saltelli_design, sobol_indices, sobol_sequence)
from .units import MPH_TO_MPS, mph_to_mps, mps_to_mph

__version__ = "0.1.0"

__all__ = [
    "B_EMERGENCY", "MPH_TO_MPS", "CloverleafGeometry", "CollisionGapError",
    "Connection", "ControllerParams", "CrashError", "Detector", "EntryBoundary",
    "ExitBoundary", "FIXED_NAMES", "FleetSpec", "LaneChangeContext",
    "LaneChangeDirection", "LongitudinalContext", "MetricsRecord",
    "OfatResult", "ParameterBounds", "RoadNetwork", "RoadSegment", "RouteTable",
    "SAMPLED_NAMES", "Scenario", "SensitivityResult", "Simulation",
    "SimulationConfig", "SobolDesign", "THETA_NAMES", "arrival_stream",
    "build_cloverleaf", "default_bounds", "derive_run_seed", "eidm_acceleration",
    "idm_acceleration", "idm_desired_gap", "mean_vector_box", "mobil_incentive",
    "mobil_safety_ok", "mph_to_mps", "mps_to_mph", "ofat_from_responses",
    "ofat_sweep", "pearson_wald", "run_het_sweep", "run_ofat_campaign",
    "run_simulation", "run_single", "run_sobol_campaign", "sample_controller",
    "sample_fleet", "sample_mean_vector", "sample_theta", "saltelli_design",
    "sobol_indices", "sobol_sequence", "vehicle_stream",
]
