"""Deterministic desk-scale water-network control and anomaly-detection simulator."""

from .anomaly import AnomalyDetector, Detection, FusedDetector, fuse_neighbor, NeighborSample, RlsEstimator
from .controller import (
    apply_valve_command,
    ControllerConfig,
    default_u_bar,
    error_drift_f,
    error_gain_g,
    ErrorFrame,
    fit_polynomial_controller,
    PolynomialLaw,
    sontag_feedback,
)
from .errors import (
    FitError,
    IntegrationDivergenceError,
    PositivityError,
    ScenarioError,
    ValidationError,
    WaterlabError,
)
from .hydro import (
    derive_coefficients,
    integrate_step,
    PipeCoefficients,
    PipeSpec,
    PipeState,
    rhs_general,
    rhs_laminar,
    rk4_flow_step,
    steady_state_flow,
    valve_u_from_kv,
)
from .reference import (
    eval_reference,
    eval_reference_derivative,
    fit_reference,
    format_coefficients,
    FourierReference,
    generate_demand_pattern,
    load_demand_csv,
    parse_coefficients,
    save_demand_csv,
)
from .scenario import inject_fault, parse_scenario, parse_scenario_text, PipeSetup, ScenarioConfig, serialize_scenario
from .wcn import (
    ChannelSpec,
    DROPPED,
    FlowSample,
    LeakFault,
    Message,
    NodeSpec,
    run_closed_loop,
    schedule_send,
    SensorBiasFault,
    SensorSpikeFault,
    TimeSeriesLog,
    ValveCommand,
)

__version__ = "0.1.0"
