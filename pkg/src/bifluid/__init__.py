"""Numerical lab for a one-velocity bi-fluid system with inflow/outflow boundaries.

Modules: ``geometry`` (meshes, boundary partition, lifts), ``thermo``
(pressure, Helmholtz function, closures, truncations), ``transport``
(monotone density and ratio solvers with their budgets), ``momentum``
(Galerkin velocity), ``coupling`` (fixed point, time loop, energy,
sweeps), ``diagnostics`` (certificates) and ``scenario``/``cli``.
"""
__version__ = "0.1.0"
