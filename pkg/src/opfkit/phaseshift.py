"""Phase shifters on cotree lines absorb cycle-condition defects of exact BFM relaxation solutions."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import bfm
from .angles import principal
from .bfm import BfmState, ComplexState
from .errors import DimensionError, PreconditionError
from .netmodel import Network, spanning_tree


@dataclass(frozen=True, eq=False)
class PhaseShifterPlan:
    tree: tuple[int, ...]
    phi: np.ndarray       # per line, zero on the tree
    theta: np.ndarray     # per bus, theta_0 = 0

    def __post_init__(self):
        object.__setattr__(self, "tree", tuple(sorted(int(l) for l in self.tree)))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).copy())
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).copy())
        if np.any(self.phi[list(self.tree)] != 0):
            raise ValueError("phase shifter angles must vanish on tree lines")

    @property
    def cotree(self) -> tuple[int, ...]:
        t = set(self.tree)
        return tuple(l for l in range(self.phi.size) if l not in t)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(l) for l in np.nonzero(self.phi)[0])

    def to_json(self) -> dict:
        return {"tree": list(self.tree),
                "phi": [{"line": l, "radians": float(self.phi[l])} for l in self.cotree],
                "theta": [{"bus": j, "radians": float(t)} for j, t in enumerate(self.theta)]}

    @classmethod
    def from_json(cls, doc: dict, m: int) -> "PhaseShifterPlan":
        phi = np.zeros(m)
        for e in doc["phi"]:
            phi[e["line"]] = e["radians"]
        theta = [e["radians"] for e in sorted(doc["theta"], key=lambda e: e["bus"])]
        return cls(tuple(doc["tree"]), phi, theta)


@dataclass(frozen=True, eq=False)
class PsState:
    state: ComplexState
    phi: np.ndarray
    residuals: dict

    @property
    def max_residual(self) -> float:
        return float(max(np.max(v, initial=0.0) for v in self.residuals.values()))


def _tree_order(net: Network, tree):
    """Parent line per bus when walking the given tree from bus 0; rejects non-spanning sets."""
    tree = tuple(int(l) for l in tree)
    if len(set(tree)) != net.n or any(not 0 <= l < net.m for l in tree):
        raise PreconditionError(f"a spanning tree needs {net.n} distinct line ids")
    adj = [[] for _ in net.buses]
    for l in tree:
        ln = net.lines[l]
        adj[ln.from_bus].append(l)
        adj[ln.to_bus].append(l)
    parent_line = [-1] * len(net.buses)
    seen = {0}
    order = [0]
    queue = deque([0])
    while queue:
        j = queue.popleft()
        for l in adj[j]:
            k = net.lines[l].other(j)
            if k not in seen:
                seen.add(k)
                parent_line[k] = l
                order.append(k)
                queue.append(k)
    if len(seen) != len(net.buses):
        raise PreconditionError("line set does not span the network")
    return order, parent_line


def convexify(net: Network, x: BfmState, tree=None, seed: int = 0, tol: float = 1e-6) -> PhaseShifterPlan:
    """theta = P(B_T^{-1} beta_T) by back-substitution; phi on cotree lines = P(beta - B theta)."""
    x.check(net)
    gap = bfm.relative_cone_gap(net, x)
    if np.any(np.abs(gap) > tol):
        l = int(np.argmax(np.abs(gap)))
        raise PreconditionError(f"cone gap {gap[l]:.3g} on line {l} exceeds {tol:g}; state is not exact")
    if tree is None:
        tree = spanning_tree(net, seed)[0]
    order, parent_line = _tree_order(net, tree)
    b = bfm.beta(net, x)
    theta = np.zeros(len(net.buses))
    for j in order[1:]:
        ln = net.lines[parent_line[j]]
        if ln.from_bus == j:
            theta[j] = theta[ln.to_bus] + b[parent_line[j]]
        else:
            theta[j] = theta[ln.from_bus] - b[parent_line[j]]
    phi = np.zeros(net.m)
    in_tree = set(int(l) for l in tree)
    for l, ln in enumerate(net.lines):
        if l not in in_tree:
            phi[l] = principal(b[l] - (theta[ln.from_bus] - theta[ln.to_bus]))
    return PhaseShifterPlan(tuple(tree), phi, principal(theta))


def reconstruct(net: Network, x: BfmState, plan: PhaseShifterPlan, tol: float = 1e-6) -> PsState:
    """V = sqrt(v) e^{i theta}, I = sqrt(ell) e^{i(theta_from - angle S)}, checked against the shifted equations."""
    x.check(net)
    if plan.phi.shape != (net.m,) or plan.theta.shape != (len(net.buses),):
        raise DimensionError("plan does not match the network")
    frm = np.array([ln.from_bus for ln in net.lines], dtype=int)
    V = np.sqrt(x.v) * np.exp(1j * plan.theta)
    I = np.sqrt(x.ell) * np.exp(1j * (plan.theta[frm] - np.angle(x.S)))
    xt = ComplexState(x.S, I, V, x.s)
    res = bfm.complex_residuals(net, xt, plan.phi)
    worst = max(float(np.max(v, initial=0.0)) for v in res.values())
    if worst > tol:
        raise PreconditionError(f"plan and state are inconsistent: residual {worst:.3g} exceeds {tol:g}")
    return PsState(xt, plan.phi.copy(), res)


def shifter_free_residual(net: Network, x: BfmState, plan: PhaseShifterPlan) -> float:
    """Largest Ohm's-law residual of the reconstructed voltages when every shifter is removed."""
    frm = np.array([ln.from_bus for ln in net.lines], dtype=int)
    V = np.sqrt(x.v) * np.exp(1j * plan.theta)
    I = np.sqrt(x.ell) * np.exp(1j * (plan.theta[frm] - np.angle(x.S)))
    res = bfm.complex_residuals(net, ComplexState(x.S, I, V, x.s))
    return float(np.max(res["ohm"], initial=0.0))
