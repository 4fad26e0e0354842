"""Model-free learning of risk-constrained LQR with structured feedback."""

from .errors import (
    BatchFailure,
    ConfigError,
    DivergenceError,
    InitializationError,
    NumericalError,
    RiskLqrError,
    StabilityError,
    StabilizabilityError,
    StepRejected,
)
from .gains import (
    SparsityPattern,
    StructuredGain,
    pattern_from_graph,
    project_structure,
    sample_unit_perturbation,
)
from .gradients import GradientEstimate, exact_policy_gradient, zopg, zopg_batch
from .microgrid import (
    GridTopology,
    MgParams,
    assemble_network,
    build_blocks,
    build_case,
    initial_stabilizing_gain,
    riccati_baseline,
)
from .numlin import solve_dare, solve_dlyap, spectral_radius
from .objective import (
    ConstraintSpec,
    CostSpec,
    ExactEvaluator,
    McEvaluator,
    MultiplierBox,
    Problem,
    average_cost_exact,
    average_cost_mc,
    build_risk_constraint,
    lagrangian,
    max_oracle,
    phi,
)
from .optimize import (
    LocalConstants,
    OptimizerConfig,
    RunRecord,
    check_stationarity,
    estimate_local_constants,
    gdmax,
    gdmax_step_rule,
    moreau_envelope,
    problem_phi_oracle,
    sgdmax,
    sgdmax_parameter_rule,
)
from .system import (
    LtiSystem,
    NoiseModel,
    Trajectory,
    discretize,
    estimate_noise_statistics,
    rollout,
    sample_noise,
    step,
)

__version__ = "0.1.0"
