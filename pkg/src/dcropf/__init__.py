"""Robust set-point optimization for DC networks with uncertain
constant-power loads.

Submodules:

* ``netcase``: network description, JSON serialization, builtin cases
* ``statespace``: dynamic model matrices and Jacobian family
* ``powerflow``: reduced grid equations, Newton power flow, losses
* ``lmi``: semidefinite feasibility kernel with exact witness checking
* ``stabset``: robust stability certificates and voltage floors
* ``robustopf``: nominal and robustly feasible set-point optimization
* ``dynsim``: time-domain simulation of load scenarios
* ``harness``: end-to-end pipeline, validation and benchmarking
"""

__version__ = "0.1.0"
