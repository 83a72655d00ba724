"""Ring constellation reconfiguration with model predictive control.

Satellites sit on a common circular orbit and must re-space themselves
into an equally distributed ring after some of them deorbit. The package
provides the relative dynamics model, box-constrained QP machinery, three
controllers (centralized, decentralized with frozen neighbor data, and
decentralized with intention sharing), a nonlinear truth propagator, and
a scenario harness with a CLI.
"""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
