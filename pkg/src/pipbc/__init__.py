"""Robust PI passivity-based control toolkit.

Design, certify, and simulate PI controllers that regulate input-affine
plants around nonzero operating points while knowing only the input matrix
and measuring only the actuated coordinates.  Ships a rapid-thermal-process
plant class, a constant-structure port-Hamiltonian class, an assumption
certification pipeline, and a deterministic fixed-step simulation harness
that audits every inequality the design guarantees.
"""

from .controller import (
    IdealController,
    IdealGains,
    PerturbedController,
    PerturbedEstimate,
    RobustController,
    RobustGains,
    lambda_I,
    lambda_P,
    lyapunov_W,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DimensionError,
    EquilibriumSolveError,
    NoCertificateError,
    NonphysicalEquilibriumError,
    NotAssignableError,
    StructuralError,
)
from .model import (
    Dimensions,
    EquilibriumPair,
    InputMatrix,
    PlantModel,
    assemble_state,
    assignable_residual,
    input_matrix,
    left_annihilator,
    normalize_input_matrix,
    partition_state,
    solve_ustar,
)
from .sim import (
    AuditReport,
    IntegratorConfig,
    OracleData,
    Trajectory,
    audit,
    augmented_error,
    integrate_step,
    simulate_closed_loop,
    simulate_with_input,
)
from .storage import (
    DiagonalWeights,
    PhiFamily,
    SamplePlan,
    SeparableStorage,
    check_assumption3,
    dissipation_Q,
    incremental_storage,
    passive_output,
)
from .verify import CertificationReport, certify

__version__ = "0.1.0"
