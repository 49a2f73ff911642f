"""Monte Carlo engine for relativistic Schroedinger heat semigroups.

Evaluates e^{-t[H_j - m + V]}g for the three magnetic relativistic kinetic
energies (j = 1, 2, 3) through their path-integral representations, and
provides the mass-coupling machinery (jump map, subordinator map) that lets
a whole family of masses share one source of randomness for zero-mass-limit
experiments.
"""

__version__ = "0.1.0"

from .specfun import bessel_k, erfc, tail_bessel_integral
from .levy import JumpPath, LevyConfig, kernel, levy_density, sample_path, tail_mass
from .subordinator import (
    SubPath,
    ig_density,
    levy_exponent,
    sample_ig,
    sample_sub_path,
    sigma_density,
)
from .coupling import ell, ell_inv, psi, psi_inv, transform_path, transform_sub
from .fields import FieldBundle, make_fields, make_payoff
from .functionals import BrownianGrid, eval_S1, eval_S2, eval_S3, make_brownian
from .estimator import (
    Estimate,
    EstimatorKnobs,
    SweepRow,
    coupled_mass_sweep,
    estimate_semigroup,
    free_oracle,
    l2_experiment,
)

__all__ = [
    "__version__",
    "bessel_k",
    "erfc",
    "tail_bessel_integral",
    "JumpPath",
    "LevyConfig",
    "kernel",
    "levy_density",
    "sample_path",
    "tail_mass",
    "SubPath",
    "ig_density",
    "levy_exponent",
    "sample_ig",
    "sample_sub_path",
    "sigma_density",
    "ell",
    "ell_inv",
    "psi",
    "psi_inv",
    "transform_path",
    "transform_sub",
    "FieldBundle",
    "make_fields",
    "make_payoff",
    "BrownianGrid",
    "eval_S1",
    "eval_S2",
    "eval_S3",
    "make_brownian",
    "Estimate",
    "EstimatorKnobs",
    "SweepRow",
    "coupled_mass_sweep",
    "estimate_semigroup",
    "free_oracle",
    "l2_experiment",
]
