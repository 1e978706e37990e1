"""Numerical detection and continuation of A-series singularities.

Subpackages cover the combinatorial layer (bell), a generic
finite-dimensional singularity classifier (classifier), the
finite-difference semilinear Poisson testbed (poisson), augmented
defining systems with analytic Jacobians (augmented), pseudoarclength
continuation with event detection (continuation), end-to-end workflows
(harness) and a command-line front end (cli).
"""

__version__ = "0.1.0"
