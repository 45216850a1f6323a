"""Edge-state spectral flow on a flux-threaded quantum Hall cylinder."""

from .model import (
    DisorderField,
    EnergyWindow,
    GridSpec,
    ParameterError,
    PhysicalParams,
    gap_window,
    sample_disorder,
    wall_potential,
    zero_disorder,
)
from .hamiltonian import HermitianMatrix, build_hamiltonian, hamiltonian_derivative
from .spectra import BranchTable, EigenPairs, count_below, edge_branches, eigen_window
from .flow import BranchSet, FlowReport, sweep_flux

__all__ = [
    "BranchSet", "BranchTable", "DisorderField", "EigenPairs", "EnergyWindow", "FlowReport",
    "GridSpec", "HermitianMatrix", "ParameterError", "PhysicalParams", "build_hamiltonian",
    "count_below", "edge_branches", "eigen_window", "gap_window", "hamiltonian_derivative",
    "sample_disorder", "sweep_flux", "wall_potential", "zero_disorder",
]
__version__ = "0.1.0"
