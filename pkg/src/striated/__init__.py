"""Striated-regularity diagnostics and a flow-map solver for 2D Euler."""

from .grid import Grid
from .holder_norms import HolderReport, NegHolderReport, holder_report, neg_holder_estimate
from .biot_savart import VorticityField, grad_velocity, velocity
from .flow_transport import EulerSolver, FlowState, advance, pushforward, transport_scalar
from .striated_algebra import serfati_bound_2d, serfati_bound_general

__version__ = "0.1.0"

__all__ = [
    "Grid", "HolderReport", "NegHolderReport", "holder_report", "neg_holder_estimate",
    "VorticityField", "grad_velocity", "velocity", "EulerSolver", "FlowState", "advance",
    "pushforward", "transport_scalar", "serfati_bound_2d", "serfati_bound_general",
]
