"""Synchronization and dark-state dynamics of dissipative XX qubit chains."""

from .dfs import NoiseSpec, build_dfs_basis, gcd_analysis, single_excitation_mode, slater_state
from .dynamics import IntegratorConfig, Trajectory, evolve
from .hilbert import ChainSpec, embed_product_state, enumerate_sector

__all__ = [
    "ChainSpec",
    "NoiseSpec",
    "IntegratorConfig",
    "Trajectory",
    "enumerate_sector",
    "embed_product_state",
    "gcd_analysis",
    "single_excitation_mode",
    "slater_state",
    "build_dfs_basis",
    "evolve",
]

__version__ = "0.1.0"
