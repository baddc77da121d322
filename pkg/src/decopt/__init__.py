"""Inexact descent methods for differential-equation-constrained inverse problems.

The package provides:

- linsolve: residual-controlled tridiagonal/SOR/ADI/GMRES solvers
- problems: two inverse problems (ODE boundary value recovery, Laplace
  boundary control) with analytic solutions and reference data
- adjoint: exact and adaptively controlled inexact discrete-adjoint gradients
- descent: the inexact descent loop with gradient, quasi-Newton, and
  Newton-type direction policies
- theory: synthetic smooth functions, noisy gradient oracles, and
  numerical checks of the descent lemmas
- bench: the GD / IGD / IBFGS benchmark matrix and its outputs
"""

__version__ = "0.1.0"
