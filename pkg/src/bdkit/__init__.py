"""Becker-Doring cluster kinetics with monomer injection.

Rate rules and detailed balance live in :mod:`bdkit.kinetics`, steady states
in :mod:`bdkit.equilibria`, the RK4 reference integrator in
:mod:`bdkit.ode_sim`, the well-balanced implicit scheme in
:mod:`bdkit.rd_scheme`, the linearized spectral-gap test in
:mod:`bdkit.linear_stability`, a priori bounds and run comparison in
:mod:`bdkit.diagnostics`, and configuration and the command line in
:mod:`bdkit.cli_io`.
"""

from .errors import BDError, ConfigError
from .kinetics import DetailedBalance, RateModel, build_model, make_rule

__all__ = ["BDError", "ConfigError", "DetailedBalance", "RateModel", "build_model", "make_rule"]
__version__ = "0.1.0"
