"""Branch flow model: states, equation residuals, angle recovery, LinDistFlow and B-condition Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import principal
from .errors import DimensionError, NotRadialError, PreconditionError
from .netmodel import Network, orient_to_root, tree_walk


@dataclass(frozen=True, eq=False)
class BfmState:
    """x = (S, ell, v, s): sending-end branch power, squared current, squared voltage, injection."""

    S: np.ndarray
    ell: np.ndarray
    v: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", np.asarray(self.S, dtype=complex).copy())
        object.__setattr__(self, "ell", np.asarray(self.ell, dtype=float).copy())
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).copy())
        object.__setattr__(self, "s", np.asarray(self.s, dtype=complex).copy())
        if self.S.shape != self.ell.shape or self.v.shape != self.s.shape:
            raise DimensionError("S/ell and v/s must have matching lengths")
        if np.any(self.ell < 0):
            raise ValueError("ell must be nonnegative")
        if np.any(self.v <= 0):
            raise ValueError("v must be positive")

    def check(self, net: Network):
        if self.S.shape != (net.m,) or self.v.shape != (len(net.buses),):
            raise DimensionError(f"state sized for {self.S.size} lines / {self.v.size} buses, "
                                 f"network has {net.m} / {len(net.buses)}")
        return self

    def to_json(self) -> dict:
        return {
            "S": [{"line": l, "p": float(v.real), "q": float(v.imag)} for l, v in enumerate(self.S)],
            "ell": [float(v) for v in self.ell],
            "v": [float(v) for v in self.v],
            "s": [{"bus": j, "p": float(v.real), "q": float(v.imag)} for j, v in enumerate(self.s)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BfmState":
        S = [complex(e["p"], e["q"]) for e in sorted(doc["S"], key=lambda e: e["line"])]
        s = [complex(e["p"], e["q"]) for e in sorted(doc["s"], key=lambda e: e["bus"])]
        return cls(np.array(S, dtype=complex), doc["ell"], doc["v"], np.array(s, dtype=complex))

    def midpoint(self, other: "BfmState") -> "BfmState":
        return BfmState((self.S + other.S) / 2, (self.ell + other.ell) / 2,
                        (self.v + other.v) / 2, (self.s + other.s) / 2)


@dataclass(frozen=True, eq=False)
class ComplexState:
    """x~ = (S, I, V, s) with complex voltages and currents."""

    S: np.ndarray
    I: np.ndarray
    V: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        for name in ("S", "I", "V", "s"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex).copy())


@dataclass(frozen=True, eq=False)
class LinFlow:
    S_lin: np.ndarray
    v_lin: np.ndarray


@dataclass(frozen=True)
class Residuals:
    flow_balance: np.ndarray   # per bus, complex
    voltage_drop: np.ndarray   # per line, real
    cone_gap: np.ndarray       # per line, v_j ell - |S|^2

    def max_equality(self) -> float:
        vals = [np.max(np.abs(self.flow_balance), initial=0.0), np.max(np.abs(self.voltage_drop), initial=0.0)]
        return float(max(vals))


@dataclass(frozen=True)
class CycleViolation:
    lines: tuple[int, ...]     # cotree lines
    residual: np.ndarray       # principal-value residual per cotree line

    @property
    def worst(self) -> float:
        return float(np.max(np.abs(self.residual), initial=0.0))


def _ends(net: Network):
    frm = np.array([ln.from_bus for ln in net.lines], dtype=int)
    to = np.array([ln.to_bus for ln in net.lines], dtype=int)
    z = np.array([ln.z for ln in net.lines], dtype=complex)
    return frm, to, z


def project_state(xt: ComplexState) -> BfmState:
    return BfmState(xt.S, np.abs(xt.I) ** 2, np.abs(xt.V) ** 2, xt.s)


def residuals(net: Network, x: BfmState) -> Residuals:
    x.check(net)
    frm, to, z = _ends(net)
    fb = -x.s.copy()
    np.add.at(fb, frm, x.S)
    np.add.at(fb, to, -(x.S - z * x.ell))
    vd = x.v[frm] - x.v[to] - (2.0 * (np.conj(z) * x.S).real - np.abs(z) ** 2 * x.ell)
    gap = x.v[frm] * x.ell - np.abs(x.S) ** 2
    return Residuals(fb, vd, gap)


def relative_cone_gap(net: Network, x: BfmState) -> np.ndarray:
    frm, _, _ = _ends(net)
    r = residuals(net, x)
    return r.cone_gap / np.maximum(1.0, x.v[frm] * x.ell)


def beta(net: Network, x: BfmState) -> np.ndarray:
    """Angle of v_j - conj(z) S_jk per line, in (-pi, pi]."""
    x.check(net)
    frm, _, z = _ends(net)
    arg = x.v[frm] - np.conj(z) * x.S
    bad = tuple(int(l) for l in np.nonzero(arg == 0)[0])
    if bad:
        err = PreconditionError(f"angle undefined on line(s) {list(bad)}: v_j - conj(z) S_jk = 0")
        err.lines = bad
        raise err
    return principal(np.angle(arg))


def solve_cycle_angles(net: Network, beta_l, tol: float = 1e-8, seed: int = 0):
    """Bus angles theta (theta_0 = 0) with theta_from - theta_to = beta on every line, mod 2 pi.

    The tree part is solved by back-substitution from the root; cotree lines
    are then checked.  Returns the angles, or a CycleViolation carrying the
    principal-value residual of every cotree line when some exceeds ``tol``.
    """
    beta_l = np.asarray(beta_l, dtype=float)
    if beta_l.shape != (net.m,):
        raise DimensionError(f"beta has {beta_l.size} entries, network has {net.m} lines")
    walk = tree_walk(net, seed)
    theta = np.zeros(len(net.buses))
    for j in walk.order[1:]:
        l = walk.parent_line[j]
        ln = net.lines[l]
        if ln.from_bus == j:
            theta[j] = theta[ln.to_bus] + beta_l[l]
        else:
            theta[j] = theta[ln.from_bus] - beta_l[l]
    cot = walk.cotree
    if cot:
        res = np.array([principal(beta_l[l] - (theta[net.lines[l].from_bus] - theta[net.lines[l].to_bus]))
                        for l in cot])
        if np.max(np.abs(res)) > tol:
            return CycleViolation(tuple(cot), res)
    return principal(theta)


def lift_to_complex(net: Network, x: BfmState, theta, tol: float = 1e-7) -> ComplexState:
    """V = sqrt(v) e^{i theta}, I = sqrt(ell) e^{i(theta_j - angle S)} on exact states."""
    gap = relative_cone_gap(net, x)
    if np.any(np.abs(gap) > tol):
        raise PreconditionError(f"cone gap {float(np.max(np.abs(gap))):.3g} exceeds {tol:g}; state is not exact")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(net.buses),):
        raise DimensionError("theta must have one entry per bus")
    frm, to, _ = _ends(net)
    b = beta(net, x)
    mismatch = principal(theta[frm] - theta[to] - b)
    if np.any(np.abs(mismatch) > max(tol, 1e-8) * 10):
        raise PreconditionError(f"theta inconsistent with beta(x) (max {float(np.max(np.abs(mismatch))):.3g} rad)")
    V = np.sqrt(x.v) * np.exp(1j * theta)
    V[0] = np.sqrt(x.v[0])
    I = np.sqrt(x.ell) * np.exp(1j * (theta[frm] - np.angle(x.S)))
    return ComplexState(x.S, I, V, x.s)


def complex_residuals(net: Network, xt: ComplexState, phi=None) -> dict:
    """Max residuals of the complex branch flow equations (optionally with phase shifters).

    ohm: |V_j - z I_jk - V_k e^{-i phi}|, power: |S - V_j conj(I)|, flow: balance at each bus.
    """
    frm, to, z = _ends(net)
    phi = np.zeros(net.m) if phi is None else np.asarray(phi, dtype=float)
    ohm = np.abs(xt.V[frm] - z * xt.I - xt.V[to] * np.exp(-1j * phi))
    power = np.abs(xt.S - xt.V[frm] * np.conj(xt.I))
    fb = -xt.s.copy()
    np.add.at(fb, frm, xt.S)
    np.add.at(fb, to, -(xt.S - z * np.abs(xt.I) ** 2))
    return {"ohm": ohm, "power": power, "flow": np.abs(fb)}


def from_voltages(net: Network, V) -> ComplexState:
    """Complex state implied by bus voltages through Ohm's law."""
    V = np.asarray(V, dtype=complex)
    frm, to, z = _ends(net)
    I = (V[frm] - V[to]) / z
    S = V[frm] * np.conj(I)
    s = np.zeros(len(net.buses), dtype=complex)
    np.add.at(s, frm, S)
    np.add.at(s, to, -(S - z * np.abs(I) ** 2))
    return ComplexState(S, I, V, s)


def lindistflow(net: Network, s) -> LinFlow:
    """LinDistFlow flows/voltages; S_lin is returned in each line's stored direction."""
    if not net.radial:
        raise NotRadialError("LinDistFlow needs a radial network")
    s = np.asarray(s, dtype=complex)
    o = orient_to_root(net)
    child = o.line_child
    S_root = np.array([sum(s[i] for i in o.subtree[child[l]]) for l in range(net.m)], dtype=complex)
    z = np.array([ln.z for ln in net.lines], dtype=complex)
    v = np.full(len(net.buses), float(net.v0))
    for j in o.order[1:]:
        v[j] = net.v0 + 2.0 * sum((np.conj(z[l]) * S_root[l]).real for l in o.path[j])
    sign = np.where(np.array(o.towards_root), 1.0, -1.0)
    return LinFlow(sign * S_root, v)


def _root_flows(net: Network, s):
    o = orient_to_root(net)
    lf = lindistflow(net, s)
    sign = np.where(np.array(o.towards_root), 1.0, -1.0)
    return o, sign * lf.S_lin


def boundary_jacobians(net: Network, s_max=None, v_min=None) -> np.ndarray:
    """Per-line I - (2 / v_min_j) z [S_lin(s_max)]^+^T, j the downstream end; shape (m, 2, 2)."""
    if not net.radial:
        raise NotRadialError("boundary Jacobians need a radial network")
    s_max = np.array([b.s_sup() for b in net.buses]) if s_max is None else np.asarray(s_max, dtype=complex)
    v_min = np.array([b.v_min for b in net.buses]) if v_min is None else np.asarray(v_min, dtype=float)
    if np.any(v_min[1:] <= 0):
        raise PreconditionError("v_min must be positive")
    s_eval = s_max.copy()
    s_eval[0] = 0.0  # the slack is outside every subtree, its value never enters
    if not (np.all(np.isfinite(s_eval.real)) and np.all(np.isfinite(s_eval.imag))):
        raise PreconditionError("boundary Jacobians need finite s_max on every non-slack bus")
    o, S_root = _root_flows(net, s_eval)
    child = o.line_child
    out = np.empty((net.m, 2, 2))
    for l, ln in enumerate(net.lines):
        zv = np.array([ln.r, ln.x])
        Sp = np.maximum(np.array([S_root[l].real, S_root[l].imag]), 0.0)
        out[l] = np.eye(2) - (2.0 / v_min[child[l]]) * np.outer(zv, Sp)
    return out
