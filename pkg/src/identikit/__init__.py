"""Numerical diagnostics for semiparametric identification.

Discretizes score operators of latent-variable models on quadrature grids,
computes their weighted singular systems, classifies linear functionals as
regularly identified / irregularly identified / unidentified, evaluates
classical and generalized Fisher information, solves adjoint moment
equations for plug-in estimation, and measures estimator convergence rates
by Monte Carlo.
"""

from . import diagnostics, linop, mc, models, solvers

__version__ = "0.1.0"

__all__ = ["diagnostics", "linop", "mc", "models", "solvers", "__version__"]
