"""Optimal transport with cumulant-generating-function costs and its embedding
into exponentially concave functions on probability measures."""

from .cgf import (
    BaseMeasure,
    cgf_eval,
    cgf_grad,
    cost_eval,
    cost_matrix,
    parse_base,
    tilt,
    tilt_logmoment,
)
from .ctransform import (
    GridFn,
    SuperdiffPair,
    concavity_residual,
    duality_gap,
    grid_tolerance,
    superdiff_check,
    transform_bwd,
    transform_fwd,
)
from .embedding import (
    ExpConcaveFn,
    SupergradientDensity,
    exp_concavity_check,
    gateaux_fd,
    pairing,
    phi_eval,
    portfolio_map,
    supergrad_inequality,
    supergradient,
    theorem5_residual,
)
from .errors import CGFTError
from .measures import (
    DiscreteMeasure,
    MeasureRep,
    NodeSet,
    exp_moment,
    gauss_hermite_nodes,
    mixture,
    seminorm,
    tv_distance,
)
from .transport import (
    Coupling,
    DualPotentials,
    TransportProblem,
    certify,
    monge_extract,
    solve_entropic,
    solve_exact,
)

__version__ = "0.1.0"
