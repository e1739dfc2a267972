"""Observer-based control of multi-agent systems under STL tasks.

Library layout mirrors the control architecture: graph analysis
(:mod:`ppstl.graphs`), STL robustness (:mod:`ppstl.stl`), prescribed
performance funnels (:mod:`ppstl.funnels`), the k-hop observer
(:mod:`ppstl.observer`), the funnel controller (:mod:`ppstl.controller`),
dynamics and the deterministic simulator (:mod:`ppstl.dynamics`,
:mod:`ppstl.simulate`), scenario files (:mod:`ppstl.scenario`) and the
CLI (:mod:`ppstl.cli`).
"""

from .errors import (
    AssumptionViolationError,
    EmptyNeighborhoodError,
    InfeasibleError,
    InsufficientDataError,
    InvalidParameterError,
    LocalityError,
    PpstlError,
    ScenarioError,
)
from .graphs import (
    ClusterDecomposition,
    CommGraph,
    InducedMatrices,
    KHopNeighborhood,
    TaskGraph,
    check_assumptions,
    cluster_decomposition,
    induced_matrices,
    k_hop_neighbors,
    min_eigenvalue_check,
    min_required_k,
)
from .stl import (
    AffinePredicate,
    BoundPredicate,
    Conjunction,
    Literal,
    NormBallAbsolute,
    NormBallRelative,
    TemporalFormula,
    TimeWindow,
    monitor_series,
    monitor_trajectory,
    robustness,
    smooth_min,
    split_state_views,
    time_window,
)
from .funnels import (
    ExpPpf,
    FunnelMargins,
    ObserverFunnelSet,
    TaskFunnel,
    build_task_funnel,
    design_observer_funnels,
    feasibility_report,
    legacy_norm_constraint_check,
    ppf_norm,
    ppf_sum,
    rho_t_normball,
)
from .observer import (
    BankView,
    ObserverBank,
    disagreement,
    disagreement_rows,
    observer_derivative,
    transform,
)
from .controller import (
    ControlTask,
    TaskError,
    conjunction_funnel,
    task_error,
    validate_rho_max,
)
from .dynamics import CustomAffine, OmniRobot, SingleIntegrator, sample_disturbance
from .scenario import Scenario, builtin_scenario_path, parse_scenario, save_scenario
from .simulate import (
    Runtime,
    Trajectory,
    feasibility_check,
    run_simulation,
    satisfaction_report,
)

__version__ = "0.1.0"
