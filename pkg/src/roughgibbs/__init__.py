"""Rough-path integration, Brownian currents, Gibbs path measures and cluster expansions."""

__version__ = "0.1.0"
