"""commlink: co-design of distributed controllers and their communication graphs.

The package designs a delay-constrained distributed controller together with
the strongly connected communication graph it runs on, by penalizing the use
of candidate communication links in a convex FIR model-matching problem and
polishing the result on the selected graph.
"""

__version__ = "0.1.0"

from .commgraph import (
    EdgeSet,
    Graph,
    INFINITE,
    base_graph,
    comm_delays,
    enumerate_design_set,
    graph_delay,
    is_physically_built,
    max_graph,
    propagation_delays,
)
from .codesign import (
    CodesignConfig,
    CodesignResult,
    EnumRow,
    NestingReport,
    build_group_spec,
    enumerate_solve,
    lambda_sweep,
    nesting_report,
    run_codesign,
)
from .firmath import (
    FirTM,
    ObjectiveOracle,
    closed_loop_adjoint,
    closed_loop_apply,
    fir_h2_norm,
    implementability_check,
    lipschitz,
    objective,
    recover_controller,
    truncation_horizon,
)
from .qispace import (
    LinkSubspace,
    QiCertificate,
    TemporalMask,
    link_subspace,
    perp_masks,
    project,
    qi_delay_check,
    qi_product_check,
    subspace_masks,
)
from .solvers import (
    GroupSolution,
    GroupSpec,
    SolverError,
    SolverOptions,
    comm_link_norm,
    duality_gap,
    group_lasso_fista,
    lambda_max,
    polish_qp,
)
from .sysmodel import (
    Partition,
    PlantModel,
    ValidationReport,
    gen_chain_plant,
    load_plant,
    markov_params,
    save_plant,
    validate_plant,
)

__all__ = [name for name in dir() if not name.startswith("_")]
