"""Toolkit for learning Hamiltonian vector fields from noisy trajectory data.

The package combines mono-implicit Runge-Kutta (MIRK) integrators, the mean
inverse integrator (MII) averaging operator, and Hamiltonian neural networks
into a single pipeline:

- :mod:`miikit.tableau` -- Butcher tableaus, MIRK extensions and property checks
- :mod:`miikit.systems` -- benchmark Hamiltonian systems (FPUT, double pendulum,
  Henon-Heiles)
- :mod:`miikit.integrators` -- forward solvers, inverse-explicit increments and
  geometric one-step methods
- :mod:`miikit.mii` -- the mean inverse integrator averaging operator
- :mod:`miikit.noise` -- analytic and Monte-Carlo noise-sensitivity estimates
- :mod:`miikit.model` -- differentiable scalar-field (Hamiltonian) models
- :mod:`miikit.training` -- loss functions, optimization and flow-error metrics
- :mod:`miikit.experiments` -- dataset generation and benchmark orchestration
"""

__version__ = "0.1.0"
