"""Embedded second-order-cone solver."""
from .ipm import ConeSolution, Settings, solve
from .kkt import KKTResiduals, cone_violation, kkt_residuals
from .program import ConeBlock, ConeProgram, ProgramBuilder, Status

__all__ = [
    "ConeBlock",
    "ConeProgram",
    "ConeSolution",
    "KKTResiduals",
    "ProgramBuilder",
    "Settings",
    "Status",
    "cone_violation",
    "kkt_residuals",
    "solve",
]
