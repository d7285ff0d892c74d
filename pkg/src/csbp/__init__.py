"""Critical continuous-state branching processes and their coagulation equations.

Modules: ``mechanism`` (branching mechanisms), ``gml`` (generalized
Mittag-Leffler laws), ``exponent`` (Laplace-exponent flows), ``measures``
(inversion to mass distributions), ``simulate`` (Monte Carlo), ``scaling``
(scaling-limit harness) and ``cli``.
"""

__version__ = "0.1.0"
