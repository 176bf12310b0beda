"""Shared constants for repeated interaction computations"""
import math

VERSION = "0.1.0"
TOOL_VERSION = f"repeated-interactions {VERSION}"

# Every superoperator matrix in the package uses this vectorization.
VEC_CONVENTION = "column-stacking: vec(A X B) = (B^T kron A) vec(X)"
BASIS_LAYOUT = "one-site index m*(d+1)+i, chain level m major, ground block first"

HERMITIAN_TOL = 1e-12
CLUSTER_TOL = 1e-9
# Distinct phases closer than this are too close to separate in a finite sweep.
CLUSTER_RESOLUTION = 1e-6
FAMILY_TOL = 1e-10

# Oscillatory integrals switch to Taylor series below this |frequency * tau|.
TAYLOR_THRESHOLD = 1e-6
TAYLOR_TERMS = 6
QUADRATURE_PANELS = 2000
QUADRATURE_ORDER = 4

ORACLE_MAX_DIM = 4096

# Errors at or below this level count as exact agreement.
EXACT_ERROR_TOL = 1e-10
DEGENERATE_COUPLING_TOL = 1e-14

MIN_SCHEDULE_POINTS = 3

REGIMES = ["weak", "regime2", "critical", "continuous"]

THEORETICAL_ORDERS = {
    "weak": 2.0,
    "regime2": 1.0,
    "critical": 1.0,
    "continuous": 1.0,
}

ORDER_WINDOWS = {
    "weak": (1.5, 2.5),
    "regime2": (0.7, 1.3),
    "critical": (0.7, math.inf),
    "continuous": (0.7, math.inf),
}

CONVERGENCE_COLUMNS = [
    "regime",
    "t",
    "tau",
    "lambda",
    "k",
    "error_schrodinger",
    "error_heisenberg",
]

EVOLUTION_COLUMNS = [
    "step",
    "t",
    "population_ground",
    "population_excited",
    "coherence_abs",
    "semigroup_population_ground",
    "trace_distance",
]

RESIDUAL_COLUMNS = ["check", "residual", "tolerance", "passed"]
