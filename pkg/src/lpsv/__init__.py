"""Large-portfolio stochastic-volatility toolkit: particle simulation, conditional-law
SPDE solver and cross-verification."""

__version__ = "0.1.0"
