"""Conservative heterogeneous decentralized data fusion over Gaussian
factor graphs."""

__version__ = "0.1.0"

from .canonical import (
    STATIC,
    CanonicalGaussian,
    VariableKey,
    deflate,
    deflation_constant,
    min_eigenvalue,
)
from .errors import NegativeInformationError, NumericalError, StructuralError
from .factorgraph import FactorGraph, FactorKind, FactorNode
from .filtering import (
    CommonStructure,
    FilterStepReport,
    LinearDynamics,
    decouple_local,
    exact_filter_step,
    filter_step,
    predict,
    regain_conditional_independence,
)
from .fusion import ChannelFilter, FusionMessage, fuse, prepare_message
from .network import Network, Robot
from .scenario import ScenarioConfig, paper_scenario
from .tracking import (
    CentralizedFilter,
    MonteCarloResult,
    monte_carlo,
    nees,
    nees_bounds,
    min_eig_diff,
    run_simulation,
)
