"""Fixed-order H2 controller synthesis under conic sector constraints."""

from .benchmark import (
    BenchReport,
    ChainParams,
    ParamGrid,
    augment_with_filter,
    build_chain_plant,
    enumerate_parameter_sets,
    run_comparison,
)
from .cones import (
    Cone,
    ConeCertificate,
    csl_check,
    cst_complement,
    estimate_symmetric_cone,
    frequency_cone_oracle,
    scale_into_cone,
)
from .initializers import (
    IcoFailure,
    InitResult,
    InitializationError,
    init_arbitrary,
    init_conicc,
    init_ico,
    w_identity,
    w_optimize,
)
from .lti import (
    Controller,
    Plant,
    StateSpace,
    close_loop,
    h2_norm_sq,
    is_hurwitz,
    solve_lyapunov,
    solve_riccati,
)
from .synthesis import (
    IterateState,
    SynthesisOptions,
    SynthesisResult,
    design_h2_luenberger,
    iteration_bound,
    run_algorithm1,
    true_cost,
)
from .transform import (
    TransformData,
    assemble_closed_loop,
    build_transform,
    conic_lmi_matrix,
    pack_k,
    unpack_k,
)

__version__ = "0.1.0"
