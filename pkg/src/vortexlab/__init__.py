"""Pathwise numerical laboratory for the stochastic 3D vorticity equation.

Builds the transformed mild solution on a periodic box, drives it with
sampled Brownian rough paths, and verifies the rough-path weak formulation
with compensated-sum integrals of the controlled observables.
"""

__version__ = "0.1.0"
