"""bamlab: a numerical laboratory for the parabolic Anderson model with
random traps (the Bouchaud-Anderson model)."""

from .environment import (
    Environment,
    PotentialDistribution,
    ScaleSet,
    TrapDistribution,
    build_scales,
    estimate_A,
    sample_environment,
    scale_a,
    truncate_potential,
)
from .evolution import MassFunction, evolve, localisation_ratio
from .lattice import Ball, Site, l1_ball, shortest_path_count
from .localisation import (
    InfluenceData,
    PsiMap,
    high_exceedances,
    local_profile,
    psi_functional,
    psi_local,
    radii_of_influence,
    top_k,
)
from .operators import SparseOperator, assemble
from .spectral import (
    EigenPair,
    eigenvalue_two_radius,
    path_expansion_eigenvalue,
    principal_eigenpair,
    verify_eigenfunction_fk,
)
from .walker import Path, Trajectory, chemical_distance, find_good_path, fk_estimate, path_weight, simulate_btm

__version__ = "0.1.0"
