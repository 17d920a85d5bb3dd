"""Nuclear-spin flip-flop rates in rare-earth doped crystals.

Pipeline: doped lattice sphere -> spin Hamiltonian eigenstates -> dipolar
flip-flop matrix elements -> golden-rule rates per ion -> closed-form
three-level kinetics -> ensemble decay curves, plus a linewidth fit.
"""

from .config import RunConfig, load_config
from .crystal import DopedEnsemble, LatticeDefinition, generate_continuous, generate_ensemble, nearest_neighbors, read_lattice
from .dipole import coupling_tensor, flipflop_element
from .fit import DecayFitter, FitBounds, FitParams, FitResult, ModelContext, optimize, score
from .holeburn import SpectrumConfig, class_table, evaluate_population, simulate_spectrum
from .kinetics import DecayCurve, InitialPopulations, KineticsSolution, biexponential_fit, class_curve, ensemble_decay, evolve
from .rates import DensityParams, FieldRegime, RateTriple, density_of_states, ensemble_rates, pathway_rates, reduce_to_triple
from .spinham import HyperfineSystem, SpinParams, build_tensors, eigensystem, spin_operators

__version__ = "0.1.0"

__all__ = [
    "DecayCurve",
    "DecayFitter",
    "DensityParams",
    "DopedEnsemble",
    "FieldRegime",
    "FitBounds",
    "FitParams",
    "FitResult",
    "HyperfineSystem",
    "InitialPopulations",
    "KineticsSolution",
    "LatticeDefinition",
    "ModelContext",
    "RateTriple",
    "RunConfig",
    "SpectrumConfig",
    "SpinParams",
    "biexponential_fit",
    "build_tensors",
    "class_curve",
    "class_table",
    "coupling_tensor",
    "density_of_states",
    "eigensystem",
    "ensemble_decay",
    "ensemble_rates",
    "evaluate_population",
    "evolve",
    "flipflop_element",
    "generate_continuous",
    "generate_ensemble",
    "load_config",
    "nearest_neighbors",
    "optimize",
    "pathway_rates",
    "read_lattice",
    "reduce_to_triple",
    "score",
    "simulate_spectrum",
    "spin_operators",
]
