"""KKT residuals re-evaluated from the original program, independent of the solver internals."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .ipm import ConeSolution
from .program import ConeBlock, ConeProgram, Status


class KKTResiduals(NamedTuple):
    stationarity: float
    primal_feas: float
    dual_feas: float
    complementarity: float

    def worst(self) -> float:
        return max(self)


def cone_violation(blk: ConeBlock, u: np.ndarray) -> float:
    """Distance-like violation of membership; zero inside the cone."""
    u = np.asarray(u, dtype=float)
    if blk.kind == "soc":
        return max(0.0, float(np.linalg.norm(u[1:]) - u[0]))
    excess = float(u[2:] @ u[2:] - 2.0 * u[0] * u[1])
    viol = max(0.0, -u[0], -u[1])
    if excess > 0:
        # distance along the norm direction; 2uv >= ||w||^2 <=> sqrt(2uv) >= ||w||
        viol = max(viol, float(np.linalg.norm(u[2:]) - np.sqrt(max(2.0 * u[0] * u[1], 0.0))))
    return viol


def kkt_residuals(prog: ConeProgram, sol: ConeSolution) -> KKTResiduals:
    if sol.status is not Status.OPTIMAL:
        raise ValueError(f"KKT residuals need an Optimal solution, got {sol.status.value}")
    x, y, zl = sol.x, sol.y, sol.z
    grad = prog.c + prog.A.T @ y + prog.G.T @ zl
    for blk, zb in zip(prog.cones, sol.cone_duals):
        np.subtract.at(grad, list(blk.indices), blk.weights() * zb)
    stationarity = np.linalg.norm(grad) / (1.0 + np.linalg.norm(prog.c))

    pf = [0.0]
    if prog.A.shape[0]:
        pf.append(np.linalg.norm(prog.A @ x - prog.b) / (1.0 + np.linalg.norm(prog.b)))
    slack = prog.h - prog.G @ x
    if slack.size:
        pf.append(np.linalg.norm(np.minimum(slack, 0.0)) / (1.0 + np.linalg.norm(prog.h)))
    df = [0.0]
    if zl.size:
        df.append(float(np.linalg.norm(np.minimum(zl, 0.0))))
    comp = float(abs(zl @ slack)) if slack.size else 0.0
    for blk, zb in zip(prog.cones, sol.cone_duals):
        u = blk.value(x)
        pf.append(cone_violation(blk, u) / (1.0 + np.linalg.norm(u)))
        df.append(cone_violation(blk, zb) / (1.0 + np.linalg.norm(zb)))
        comp += abs(float(zb @ u))
    comp /= 1.0 + abs(float(prog.c @ x))
    return KKTResiduals(float(stationarity), float(max(pf)), float(max(df)), float(comp))
