"""Second-order-cone relaxations of OPF as ConePrograms, and extraction back to domain states."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .bfm import BfmState
from .bim import PartialMatrix, canonical
from .conic import ConeProgram, ConeSolution, ProgramBuilder
from .cost import LINE_LOSS, LINEAR_W, PER_BUS_ACTIVE, CostSpec
from .errors import BuildError, NotRadialError, SolveError
from .netmodel import Box, DiscreteSet, Line, MagnitudeAngle, Network

_SQ2 = math.sqrt(2.0)


@dataclass
class VarMap:
    model: str
    groups: dict
    n_vars: int
    net: Network | None = None

    def __getitem__(self, name) -> np.ndarray:
        return self.groups[name]

    def values(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.groups[name]]


@dataclass(frozen=True, eq=False)
class AngleFlows:
    """Per-line real flows at unit voltage: P_from (P_jk) and P_to (P_kj), plus injections."""

    P_from: np.ndarray
    P_to: np.ndarray
    p: np.ndarray

    def theta(self, net: Network) -> np.ndarray:
        """Angle difference implied by the flows (exact when they lie on the ellipse)."""
        g = net.line_array("g")
        b = net.line_array("b")
        sin = (self.P_from - self.P_to) / (2 * b)
        cos = 1 - (self.P_from + self.P_to) / (2 * g)
        return np.arctan2(sin, cos)

    def ellipse_residual(self, net: Network) -> np.ndarray:
        """(P - g 1)^T (A A^T)^{-1} (P - g 1) - 1 per line."""
        out = np.empty(net.m)
        for l, ln in enumerate(net.lines):
            u = ellipse_factor(ln.g, ln.b).T @ (np.array([self.P_from[l], self.P_to[l]]) - ln.g)
            out[l] = u @ u - 1.0
        return out

    def to_json(self) -> dict:
        return {"P": [{"line": l, "P_from": float(a), "P_to": float(b)}
                      for l, (a, b) in enumerate(zip(self.P_from, self.P_to))],
                "p": [float(v) for v in self.p]}


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _injection_constraints(pb: ProgramBuilder, net: Network, p_idx, q_idx):
    for bus in net.buses:
        j = bus.id
        pb.add_bounds(p_idx[j], bus.p_min, bus.p_max)
        if q_idx is not None:
            pb.add_bounds(q_idx[j], bus.q_min, bus.q_max)
        iset = bus.injection_set
        if isinstance(iset, Box):
            continue
        if isinstance(iset, DiscreteSet):
            raise BuildError(f"bus {j}: discrete injection sets are not convex; "
                             "use opfkit.oracle.grid_solve for such cases")
        if q_idx is None:
            raise BuildError(f"bus {j}: dc buses accept box injection sets only")
        # |s| <= a as a cone (t = a fixed), and the angle wedge for phi <= pi/2
        t = pb.add_vars(f"mag_bound[{j}]", 1)[0]
        pb.add_eq([(t, 1.0)], iset.a)
        pb.add_cone("soc", [t, p_idx[j], q_idx[j]], name=f"inj{j}")
        if iset.phi < np.pi:
            if iset.phi > np.pi / 2:
                raise BuildError(f"bus {j}: |angle(s)| <= {iset.phi:.3f} with phi in (pi/2, pi) is not convex")
            sp, cp = math.sin(iset.phi), math.cos(iset.phi)
            pb.add_le([(p_idx[j], -sp), (q_idx[j], cp)], 0.0)
            pb.add_le([(p_idx[j], -sp), (q_idx[j], -cp)], 0.0)


def _active_cost(pb: ProgramBuilder, cost: CostSpec, p_idx):
    pb.add_objective([(p_idx[j], c) for j, c in enumerate(cost.linear)])
    quad = [(j, c) for j, c in enumerate(cost.quadratic) if c > 0]
    if quad:
        one = pb.add_vars("one", 1)[0]
        pb.add_eq([(one, 1.0)], 1.0)
        tau = pb.add_vars("epi", len(quad))
        for t, (j, c) in zip(tau, quad):
            # 2 * tau * (1 / (2c)) >= p^2  <=>  tau >= c p^2
            pb.add_cone("rsoc", [t, one, p_idx[j]], [1.0, 0.5 / c, 1.0], name=f"cost{j}")
            pb.add_objective([(t, 1.0)])


# ---------------------------------------------------------------------------
# branch flow model
# ---------------------------------------------------------------------------

def build_bfm_socp(net: Network, cost: CostSpec) -> tuple[ConeProgram, VarMap]:
    """Relaxed branch flow model: v_j ell_jk >= |S_jk|^2 as a rotated cone per line."""
    cost.validate(net)
    ac = not net.is_dc
    nb, m = len(net.buses), net.m
    pb = ProgramBuilder()
    P = pb.add_vars("P", m)
    Q = pb.add_vars("Q", m) if ac else None
    ell = pb.add_vars("ell", m)
    v = pb.add_vars("v", nb)
    p = pb.add_vars("p", nb)
    q = pb.add_vars("q", nb) if ac else None

    pb.add_eq([(v[0], 1.0)], net.v0)
    for bus in net.buses[1:]:
        pb.add_bounds(v[bus.id], bus.v_min, bus.v_max)

    bal_p = [[(p[j], -1.0)] for j in range(nb)]
    bal_q = [[(q[j], -1.0)] for j in range(nb)] if ac else None
    for l, ln in enumerate(net.lines):
        a, b = ln.from_bus, ln.to_bus
        bal_p[a].append((P[l], 1.0))
        bal_p[b] += [(P[l], -1.0), (ell[l], ln.r)]
        if ac:
            bal_q[a].append((Q[l], 1.0))
            bal_q[b] += [(Q[l], -1.0), (ell[l], ln.x)]
        drop = [(v[a], 1.0), (v[b], -1.0), (P[l], -2 * ln.r), (ell[l], abs(ln.z) ** 2)]
        if ac:
            drop.append((Q[l], -2 * ln.x))
        pb.add_eq(drop, 0.0)
        if ac:
            pb.add_cone("rsoc", [v[a], ell[l], P[l], Q[l]], [0.5, 1.0, 1.0, 1.0], name=f"line{l}")
        else:
            pb.add_cone("rsoc", [v[a], ell[l], P[l]], [0.5, 1.0, 1.0], name=f"line{l}")
    for j in range(nb):
        pb.add_eq(bal_p[j], 0.0)
        if ac:
            pb.add_eq(bal_q[j], 0.0)

    _injection_constraints(pb, net, p, q)

    if cost.kind == PER_BUS_ACTIVE:
        _active_cost(pb, cost, p)
    elif cost.kind == LINE_LOSS:
        pb.add_objective([(ell[l], w) for l, w in enumerate(cost.weights)])
    else:
        # W_ab = v_a - conj(z) S_ab on line a -> b, linear in x
        pb.add_objective([(v[j], c) for j, c in enumerate(cost.diag)])
        for l, ln in enumerate(net.lines):
            c = cost.offdiag[l]
            j, _ = canonical(net, l)
            if j != ln.from_bus:
                c = np.conj(c)  # tr contribution 2 Re(conj(C_ab) W_ab) is invariant under swapping both
            zc = np.conj(ln.z)
            # 2 Re(conj(c) (v_a - zc (P + iQ)))
            pb.add_objective([(v[ln.from_bus], 2 * c.real),
                              (P[l], -2 * (np.conj(c) * zc).real)])
            if ac:
                pb.add_objective([(Q[l], -2 * (np.conj(c) * zc * 1j).real)])
    prog = pb.build()
    return prog, VarMap("bfm", dict(pb.groups), prog.n, net)


# ---------------------------------------------------------------------------
# bus injection model
# ---------------------------------------------------------------------------

def build_bim_socp(net: Network, cost: CostSpec) -> tuple[ConeProgram, VarMap]:
    """Relaxed bus injection model over W_G: 2x2 psd blocks per line as rotated cones.

    For dc networks the off-diagonals are real and constrained nonnegative.
    """
    cost.validate(net)
    ac = not net.is_dc
    nb, m = len(net.buses), net.m
    pb = ProgramBuilder()
    d = pb.add_vars("d", nb)
    wr = pb.add_vars("wr", m)
    wi = pb.add_vars("wi", m) if ac else None
    p = pb.add_vars("p", nb)
    q = pb.add_vars("q", nb) if ac else None

    pb.add_eq([(d[0], 1.0)], net.v0)
    for bus in net.buses[1:]:
        pb.add_bounds(d[bus.id], bus.v_min, bus.v_max)

    rows_p = [[(p[j], -1.0)] for j in range(nb)]
    rows_q = [[(q[j], -1.0)] for j in range(nb)] if ac else None
    for l, ln in enumerate(net.lines):
        j, k = canonical(net, l)
        g, bb = ln.g, ln.b
        for a, sgn in ((j, 1.0), (k, -1.0)):
            rows_p[a] += [(d[a], g), (wr[l], -g)]
            if ac:
                rows_p[a].append((wi[l], bb * sgn))
                rows_q[a] += [(d[a], bb), (wr[l], -bb), (wi[l], -g * sgn)]
        if ac:
            pb.add_cone("rsoc", [d[j], d[k], wr[l], wi[l]], [1.0, 1.0, _SQ2, _SQ2], name=f"line{l}")
        else:
            pb.add_cone("rsoc", [d[j], d[k], wr[l]], [1.0, 1.0, _SQ2], name=f"line{l}")
            pb.add_le([(wr[l], -1.0)], 0.0)
    for j in range(nb):
        pb.add_eq(rows_p[j], 0.0)
        if ac:
            pb.add_eq(rows_q[j], 0.0)

    _injection_constraints(pb, net, p, q)

    if cost.kind == PER_BUS_ACTIVE:
        _active_cost(pb, cost, p)
    elif cost.kind == LINE_LOSS:
        for l, ln in enumerate(net.lines):
            j, k = canonical(net, l)
            c = cost.weights[l] * abs(ln.y) ** 2
            pb.add_objective([(d[j], c), (d[k], c), (wr[l], -2 * c)])
    else:
        pb.add_objective([(d[j], c) for j, c in enumerate(cost.diag)])
        for l, c in enumerate(cost.offdiag):
            pb.add_objective([(wr[l], 2 * c.real)])
            if ac:
                pb.add_objective([(wi[l], 2 * c.imag)])
            elif c.imag != 0:
                raise BuildError("dc networks take real off-diagonal cost coefficients")
    prog = pb.build()
    return prog, VarMap("bim", dict(pb.groups), prog.n, net)


# ---------------------------------------------------------------------------
# fixed-voltage angle model
# ---------------------------------------------------------------------------

def ellipse_factor(g: float, b: float) -> np.ndarray:
    """L with L L^T = (A A^T)^{-1}, A = [[-g, b], [-g, -b]]."""
    A = np.array([[-g, b], [-g, -b]])
    return np.linalg.cholesky(np.linalg.inv(A @ A.T))


def angle_point(g: float, b: float, theta: float) -> np.ndarray:
    return np.array([g - g * math.cos(theta) + b * math.sin(theta),
                     g - g * math.cos(theta) - b * math.sin(theta)])


def build_angle_socp(net: Network, cost: CostSpec) -> tuple[ConeProgram, VarMap]:
    """Convex hull of the per-line flow arcs at unit voltage, coupled through p_j = sum_k P_jk.

    Each line contributes its filled ellipse (a cone block) cut by the chord
    through the flows at theta_min and theta_max.
    """
    if not net.radial:
        raise NotRadialError("the angle relaxation is built for tree networks")
    if net.is_dc:
        raise BuildError("the angle model is an ac construction")
    if cost.kind != PER_BUS_ACTIVE or not cost.is_linear:
        raise BuildError("the angle model takes a linear per_bus_active cost")
    cost.validate(net)
    if net.v0 != 1.0 or any(not (b.v_min <= 1.0 <= b.v_max) for b in net.buses):
        raise BuildError("the angle model fixes |V| = 1; every bus must admit v = 1")
    for l, ln in enumerate(net.lines):
        if not (ln.g > 0 and ln.b > 0):
            raise BuildError(f"line {l}: the angle model needs g > 0 and b > 0")
        lim = math.atan(ln.b / ln.g)
        if not (-lim < ln.theta_min <= ln.theta_max < lim):
            warnings.warn(f"line {l}: theta bounds outside (-{lim:.4f}, {lim:.4f}); "
                          "the relaxation may not be exact", stacklevel=2)
    nb, m = len(net.buses), net.m
    pb = ProgramBuilder()
    Pf = pb.add_vars("P_from", m)
    Pt = pb.add_vars("P_to", m)
    p = pb.add_vars("p", nb)
    u = pb.add_vars("u", 2 * m)
    one = pb.add_vars("one", 1)[0]
    pb.add_eq([(one, 1.0)], 1.0)

    rows = [[(p[j], -1.0)] for j in range(nb)]
    for l, ln in enumerate(net.lines):
        g, b = ln.g, ln.b
        rows[ln.from_bus].append((Pf[l], 1.0))
        rows[ln.to_bus].append((Pt[l], 1.0))
        lo = max(ln.theta_min, -math.pi)
        hi = min(ln.theta_max, math.pi)
        if lo == hi:
            P0 = angle_point(g, b, lo)
            pb.add_eq([(Pf[l], 1.0)], P0[0])
            pb.add_eq([(Pt[l], 1.0)], P0[1])
        # u = L^T (P - g 1), ||u|| <= 1
        L = ellipse_factor(g, b)
        for r in range(2):
            pb.add_eq([(u[2 * l + r], 1.0), (Pf[l], -L[0, r]), (Pt[l], -L[1, r])], -g * (L[0, r] + L[1, r]))
        pb.add_cone("soc", [one, u[2 * l], u[2 * l + 1]], name=f"ellipse{l}")
        if lo < hi and hi - lo < 2 * math.pi:
            a, c = angle_point(g, b, lo), angle_point(g, b, hi)
            mid = angle_point(g, b, 0.5 * (lo + hi))
            chord = c - a
            nrm = np.array([chord[1], -chord[0]])
            if nrm @ (mid - a) > 0:
                nrm = -nrm
            # nrm^T P <= nrm^T a keeps the arc side
            pb.add_le([(Pf[l], nrm[0]), (Pt[l], nrm[1])], float(nrm @ a))
    for j in range(nb):
        pb.add_eq(rows[j], 0.0)
    for bus in net.buses:
        pb.add_bounds(p[bus.id], bus.p_min, bus.p_max)
    pb.add_objective([(p[j], c) for j, c in enumerate(cost.linear)])
    prog = pb.build()
    return prog, VarMap("angle", dict(pb.groups), prog.n, net)


# ---------------------------------------------------------------------------
# generic QCQP on a tree
# ---------------------------------------------------------------------------

def qcqp_graph(nv: int, edges) -> Network:
    """A Network used purely as a graph carrier for QCQP partial matrices (unit impedances)."""
    from .netmodel import Bus
    buses = (Bus(0, v_min=1.0, v_max=1.0),) + tuple(Bus(i, v_min=1e-6, v_max=math.inf) for i in range(1, nv))
    return Network(buses, tuple(Line(a, b, 1.0 + 0j) for a, b in edges))


def build_qcqp_socp(C0, Cs, bs, graph: Network) -> tuple[ConeProgram, VarMap]:
    """min tr(C0 W) s.t. tr(C_l W) <= b_l, W_G(j,k) psd, over partial matrices on ``graph``."""
    nv, m = len(graph.buses), graph.m
    pb = ProgramBuilder()
    d = pb.add_vars("d", nv)
    wr = pb.add_vars("wr", m)
    wi = pb.add_vars("wi", m)

    def terms(C):
        C = np.asarray(C, dtype=complex)
        out = [(d[j], float(C[j, j].real)) for j in range(nv)]
        for l in range(m):
            j, k = canonical(graph, l)
            out += [(wr[l], 2 * C[j, k].real), (wi[l], 2 * C[j, k].imag)]
            if abs(C[j, k] - np.conj(C[k, j])) > 1e-12 * max(1.0, abs(C[j, k])):
                raise BuildError("QCQP matrices must be Hermitian")
        return out

    for C, bl in zip(Cs, bs):
        pb.add_le(terms(C), float(bl))
    for l in range(m):
        j, k = canonical(graph, l)
        pb.add_cone("rsoc", [d[j], d[k], wr[l], wi[l]], [1.0, 1.0, _SQ2, _SQ2], name=f"edge{l}")
    pb.add_objective(terms(C0))
    prog = pb.build()
    return prog, VarMap("qcqp", dict(pb.groups), prog.n, graph)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def extract(sol: ConeSolution, vmap: VarMap, tol: float = 1e-7):
    if not sol.optimal:
        raise SolveError(f"cannot extract a state from a {sol.status.value} solve")
    x = sol.x
    g = vmap.groups
    if vmap.model == "bfm":
        net = vmap.net
        ell = x[g["ell"]]
        if np.any(ell < -tol * max(1.0, float(np.max(np.abs(ell), initial=0.0)))):
            raise SolveError("solver returned a negative squared current beyond tolerance")
        S = x[g["P"]] + 1j * x[g["Q"]] if "Q" in g else x[g["P"]].astype(complex)
        s = x[g["p"]] + 1j * x[g["q"]] if "q" in g else x[g["p"]].astype(complex)
        v = x[g["v"]].copy()
        v[0] = net.v0
        return BfmState(S, np.maximum(ell, 0.0), v, s)
    if vmap.model in ("bim", "qcqp"):
        off = x[g["wr"]] + 1j * x[g["wi"]] if "wi" in g else x[g["wr"]].astype(complex)
        diag = x[g["d"]].copy()
        if vmap.model == "bim":
            diag[0] = vmap.net.v0
        return PartialMatrix(diag, off)
    if vmap.model == "angle":
        return AngleFlows(x[g["P_from"]], x[g["P_to"]], x[g["p"]])
    raise ValueError(f"unknown model {vmap.model!r}")
