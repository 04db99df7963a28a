"""Projected stochastic gradient methods for PDE-constrained optimization under uncertainty.

Modules
-------
mesh        nested triangulations of the unit square (newest vertex bisection)
spaces      P0 / P1 coefficient vectors
fem         P1 state and adjoint solves, gradient and objective samples
randfield   random coefficient fields from truncated expansions
optimizer   step-size rules, mesh schedules and the PSG loop
analysis    recursion oracle, rho, log-log slope fits
config, experiments, cli   experiment harness
"""
__version__ = "0.1.0"
