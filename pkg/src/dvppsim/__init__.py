"""Controller synthesis and linearized simulation for dynamic virtual power plants."""

from .adaptation import (
    CapacityEvent,
    CapacityState,
    adpf_snapshot,
    apply_capacity_event,
    q_capability,
    update_dc_gains,
)
from .design import (
    DesiredBehavior,
    DeviceDesign,
    DeviceSpec,
    Fleet,
    ParticipationFactor,
    check_participation,
    complete_fleet,
    design_fleet,
    disaggregate_following,
    disaggregate_forming,
    hybrid_split,
    make_adpf,
    make_tdes,
    verify_aggregation,
)
from .lti import (
    LpvGain,
    RationalTF,
    StateSpaceModel,
    TimeSeries,
    lpv_track,
    simulate,
    tf_eval,
    to_state_space,
)
from .network import (
    Edge,
    LaplacianMatrix,
    NetworkGraph,
    build_frequency_loop,
    build_laplacian,
    coherent_response,
    coi_frequency,
    kron_reduce,
    voltage_loop,
)
from .metrics import MetricsReport, compute_metrics
from .runner import montecarlo, run, verify
from .scenario import Scenario, load_scenario, parse_scenario
from .spatial import (
    AreaModel,
    RotationParams,
    build_area_model,
    lossless_flow_residual,
    poc_coupled_spec,
    rotate_power,
    sample_rx,
)

__version__ = "0.1.0"
