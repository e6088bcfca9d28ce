"""Sufficient-condition checkers for exact relaxation and a posteriori certification.

Every verdict carries a signed margin (positive means satisfied with slack)
and, where it helps, a witness naming the offending line, bus or path.
Monotonicity of the cost is read from the declared CostSpec flags.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bfm
from .angles import principal
from .bfm import BfmState, CycleViolation
from .bim import PartialMatrix, _phi_psi, canonical, cost_matrix, w_cycle_residual
from .cost import LINE_LOSS, PER_BUS_ACTIVE, CostSpec
from .errors import NotRadialError, PreconditionError
from .netmodel import Box, DiscreteSet, MagnitudeAngle, Network, orient_to_root

PASS, FAIL, NA = "pass", "fail", "not_applicable"
DEFAULT_TOL = 1e-6


@dataclass
class Verdict:
    verdict: str
    margin: float | None = None
    witness: dict | None = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_json(self) -> dict:
        out = {"verdict": self.verdict, "margin": _num(self.margin)}
        if self.witness is not None:
            out["witness"] = self.witness
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class ExactnessReport:
    conditions: dict = field(default_factory=dict)       # family -> {name: Verdict}
    alpha: np.ndarray | None = None                     # per-line separator angle when A2' passes
    certification: dict | None = None

    def verdict(self, family: str, name: str) -> Verdict:
        return self.conditions[family][name]

    @property
    def exact(self) -> bool | None:
        return None if self.certification is None else self.certification["verdict"] == "exact"

    def to_json(self) -> dict:
        conds = {}
        for fam, items in self.conditions.items():
            conds[fam] = {"verdict": family_verdict(items)}
            conds[fam].update({k: v.to_json() for k, v in items.items()})
        if self.alpha is not None and "A" in conds:
            conds["A"]["alpha"] = [float(a) for a in self.alpha]
        out = {"conditions": conds}
        if self.certification is not None:
            out["certification"] = self.certification
        return out


def family_verdict(items: dict) -> str:
    """pass when some combined condition set passes, fail when one fails and none passes."""
    combos = [v.verdict for k, v in items.items() if "+" in k]
    if PASS in combos:
        return PASS
    return FAIL if FAIL in combos else NA


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _all(*vs: Verdict, detail: str = "") -> Verdict:
    """Conjunction: fail beats not_applicable beats pass; margin is the smallest."""
    for kind in (FAIL, NA):
        bad = [v for v in vs if v.verdict == kind]
        if bad:
            return Verdict(kind, bad[0].margin, bad[0].witness, bad[0].detail or detail)
    ms = [v.margin for v in vs if v.margin is not None]
    return Verdict(PASS, min(ms) if ms else None, None, detail)


# ---------------------------------------------------------------------------
# half-plane test
# ---------------------------------------------------------------------------

def half_plane(angles, tol: float = 1e-12):
    """Whether the directions fit in a closed half-plane through the origin.

    Returns (ok, alpha, margin) with every angle in [alpha, alpha + pi]
    (mod 2 pi) when ok; margin = largest circular gap - pi.
    """
    a = np.sort(np.mod(np.asarray(angles, dtype=float), 2 * np.pi))
    if a.size == 0:
        return True, 0.0, math.pi
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
    i = int(np.argmax(gaps))
    gap = float(gaps[i])
    start = a[(i + 1) % a.size]
    span = 2 * np.pi - gap
    alpha = float(principal(start - max(math.pi - span, 0.0) / 2))
    return gap >= math.pi - tol, alpha, gap - math.pi


def line_angle_sets(net: Network, C0: np.ndarray | None = None):
    """Per line, the angles of [C0]_jk and the +-[Phi_i]_jk, +-[Psi_i]_jk of finite bounds."""
    Phi, Psi = _phi_psi(net)
    out = []
    for l in range(net.m):
        j, k = canonical(net, l)
        items = []
        if C0 is not None and C0[j, k] != 0:
            items.append(("C0", None, float(np.angle(C0[j, k]))))
        for i in (j, k):
            bus = net.buses[i]
            for name, M, lo, hi in (("Phi", Phi, bus.p_min, bus.p_max), ("Psi", Psi, bus.q_min, bus.q_max)):
                e = M[i][j, k]
                if e == 0:
                    continue
                if math.isfinite(hi):
                    items.append((f"+{name}", i, float(np.angle(e))))
                if math.isfinite(lo):
                    items.append((f"-{name}", i, float(np.angle(-e))))
        out.append(items)
    return out


def separating_angles(Cs, graph: Network):
    """A2 for a generic QCQP on ``graph``: per line (ok, alpha, margin) over all matrices in Cs."""
    out = []
    for l in range(graph.m):
        j, k = canonical(graph, l)
        angs = [float(np.angle(C[j, k])) for C in Cs if C[j, k] != 0]
        out.append(half_plane(angs))
    return out


# ---------------------------------------------------------------------------
# type A
# ---------------------------------------------------------------------------

def _tree_verdict(net: Network) -> Verdict:
    if net.radial:
        return Verdict(PASS)
    return Verdict(FAIL, float(net.n - net.m), {"cotree_lines": net.m - net.n}, "network has cycles")


def _a1(net: Network, cost: CostSpec) -> Verdict:
    if not cost.is_linear:
        return Verdict(NA, detail="quadratic per-bus costs are not of the form tr(C0 W)")
    C0 = cost_matrix(net, cost)
    lam = float(np.min(np.linalg.eigvalsh((C0 + C0.conj().T) / 2)))
    return Verdict(PASS if lam > 0 else FAIL, lam, None, "smallest eigenvalue of C0")


def _a4(net: Network) -> Verdict:
    for bus in net.buses:
        if not isinstance(bus.injection_set, Box):
            return Verdict(FAIL, None, {"bus": bus.id}, "non-box injection set bounds s from below")
        if math.isfinite(bus.p_min) or math.isfinite(bus.q_min):
            return Verdict(FAIL, None, {"bus": bus.id, "p_min": _num(bus.p_min), "q_min": _num(bus.q_min)},
                           "finite injection lower bound")
    return Verdict(PASS)


def check_typeA(net: Network, cost: CostSpec) -> ExactnessReport:
    if net.is_dc:
        raise PreconditionError("check_typeA is for ac networks; use check_dc")
    cost.validate(net)
    rep = ExactnessReport()
    tree = _tree_verdict(net)
    a1 = _a1(net, cost)

    if not cost.is_linear:
        a2 = Verdict(NA, detail="quadratic per-bus costs are outside the QCQP form")
        alpha = None
    elif any(not isinstance(b.injection_set, Box) for b in net.buses):
        bad = next(b.id for b in net.buses if not isinstance(b.injection_set, Box))
        a2 = Verdict(NA, None, {"bus": bad}, "non-box injection sets are outside the QCQP form")
        alpha = None
    else:
        C0 = cost_matrix(net, cost)
        alpha = np.zeros(net.m)
        worst = None
        for l, items in enumerate(line_angle_sets(net, C0)):
            ok, al, margin = half_plane([a for _, _, a in items])
            alpha[l] = al
            if worst is None or margin < worst[1]:
                worst = (l, margin, ok, items)
        if worst is None:
            a2 = Verdict(PASS, math.pi)
        else:
            l, margin, ok, items = worst
            wit = {"line": l, "angles": [{"term": t, "bus": i, "angle": a} for t, i, a in items]}
            a2 = Verdict(PASS if ok else FAIL, margin, None if ok else wit, "max circular gap minus pi")
        if a2.verdict != PASS:
            alpha = None

    bad_kind = cost.kind not in (LINE_LOSS, PER_BUS_ACTIVE)
    if bad_kind:
        a3 = Verdict(FAIL, detail="cost depends on W off-diagonals, i.e. on branch flows")
    elif not cost.strictly_increasing_in_ell:
        a3 = Verdict(FAIL, detail="cost not declared strictly increasing in ell")
    elif cost.kind == PER_BUS_ACTIVE and not cost.nondecreasing_in_s:
        a3 = Verdict(FAIL, detail="cost not declared nondecreasing in s")
    else:
        a3 = Verdict(PASS)
    a4 = _a4(net)

    rep.conditions["A"] = {
        "A1": a1, "A2'": a2, "A3": a3, "A4": a4, "tree": tree,
        "tree+A2'": _all(tree, a2, detail="optimal value and a solution are recoverable from the BIM relaxation"),
        "tree+A1+A2'": _all(tree, a1, a2, detail="BIM relaxation exact"),
        "tree+A3+A4": _all(tree, a3, a4, detail="BFM relaxation exact"),
    }
    rep.alpha = alpha
    return rep


# ---------------------------------------------------------------------------
# type B
# ---------------------------------------------------------------------------

def _s_inf(bus) -> complex:
    """Componentwise infimum of the injection set."""
    p_lo, q_lo = bus.p_min, bus.q_min
    iset = bus.injection_set
    if isinstance(iset, MagnitudeAngle):
        p_lo = max(p_lo, min(0.0, iset.a * math.cos(iset.phi)))
        q_lo = max(q_lo, -iset.a * math.sin(min(iset.phi, math.pi / 2)))
    elif isinstance(iset, DiscreteSet):
        p_lo = max(p_lo, min(pt.real for pt in iset.points))
        q_lo = max(q_lo, min(pt.imag for pt in iset.points))
    return complex(p_lo, q_lo)


def _b1(net: Network, cost: CostSpec, all_buses: bool) -> Verdict:
    if cost.kind != PER_BUS_ACTIVE:
        return Verdict(FAIL, detail="cost must be a sum of per-bus functions of Re s_j")
    if all_buses and not cost.strictly_increasing_all_p:
        return Verdict(FAIL, detail="every C_j must be declared strictly increasing")
    if not all_buses and not cost.strictly_increasing_slack:
        return Verdict(FAIL, detail="C_0 must be declared strictly increasing")
    b0 = net.buses[0]
    if not isinstance(b0.injection_set, Box) or any(
            math.isfinite(v) for v in (b0.p_min, b0.p_max, b0.q_min, b0.q_max)):
        return Verdict(FAIL, None, {"bus": 0}, "the slack injection must be unconstrained")
    return Verdict(PASS)


def vlin_coefficients(net: Network):
    """a, b with v_lin_j(s) = v0 + sum_i a[j, i] p_i + b[j, i] q_i (radial)."""
    o = orient_to_root(net)
    nb = len(net.buses)
    a = np.zeros((nb, nb))
    b = np.zeros((nb, nb))
    paths = [set(p) for p in o.path]
    for j in range(1, nb):
        for i in range(1, nb):
            common = paths[j] & paths[i]
            a[j, i] = 2 * sum(net.lines[l].r for l in common)
            b[j, i] = 2 * sum(net.lines[l].x for l in common)
    return a, b


def _b2(net: Network) -> Verdict:
    a, b = vlin_coefficients(net)
    sup = [bus.s_sup() for bus in net.buses]
    inf = [_s_inf(bus) for bus in net.buses]
    worst = None
    for j in range(1, len(net.buses)):
        val = net.v0
        for i in range(1, len(net.buses)):
            for coef, hi, lo, comp in ((a[j, i], sup[i].real, inf[i].real, "p"),
                                       (b[j, i], sup[i].imag, inf[i].imag, "q")):
                if coef == 0:
                    continue
                pick = hi if coef > 0 else lo
                if not math.isfinite(pick):
                    if math.isinf(net.buses[j].v_max):
                        continue
                    return Verdict(NA, None, {"bus": i, "component": comp},
                                   "injection set unbounded in the direction that raises v_lin")
                val += coef * pick
        margin = net.buses[j].v_max - val
        if worst is None or margin < worst[0]:
            worst = (margin, j, val)
    if worst is None:
        return Verdict(PASS)
    margin, j, val = worst
    wit = {"bus": j, "v_lin": _num(val), "v_max": _num(net.buses[j].v_max)}
    return Verdict(PASS if margin >= 0 else FAIL, margin, wit, "min over buses of v_max - sup v_lin")


def b3_products(net: Network):
    """All vectors A_{i_t} ... A_{i_t'} z_{i_t'+1} along leaf paths: list of (leaf, t, t', vector)."""
    s_sup = np.array([bus.s_sup() for bus in net.buses])
    jac = bfm.boundary_jacobians(net, s_sup)
    o = orient_to_root(net)
    out = []
    for leaf in o.leaves():
        path = o.path[leaf]          # lines of i_k (= leaf), ..., i_1
        k = len(path)
        line_of = {t: path[k - t] for t in range(1, k + 1)}
        for t in range(1, k):
            M = np.eye(2)
            for tp in range(t, k):
                M = M @ jac[line_of[tp]]
                ln = net.lines[line_of[tp + 1]]
                out.append((leaf, t, tp, M @ np.array([ln.r, ln.x])))
    return out


def _b3(net: Network) -> Verdict:
    try:
        prods = b3_products(net)
    except PreconditionError as exc:
        return Verdict(NA, detail=str(exc))
    if not prods:
        return Verdict(PASS, None, None, "no products: every leaf path has one line")
    leaf, t, tp, vec = min(prods, key=lambda e: float(np.min(e[3])))
    margin = float(np.min(vec))
    wit = {"leaf": leaf, "t": t, "t_prime": tp, "vector": [float(v) for v in vec]}
    return Verdict(PASS if margin > 0 else FAIL, margin, wit, "smallest product entry")


def check_typeB(net: Network, cost: CostSpec) -> ExactnessReport:
    if not net.radial:
        raise NotRadialError("type B conditions are stated for radial networks")
    cost.validate(net)
    b1, b2, b3 = _b1(net, cost, False), _b2(net), _b3(net)
    rep = ExactnessReport()
    rep.conditions["B"] = {"B1": b1, "B2": b2, "B3": b3,
                           "B1+B2+B3": _all(b1, b2, b3, detail="BFM relaxation exact")}
    return rep


# ---------------------------------------------------------------------------
# type C
# ---------------------------------------------------------------------------

def check_typeC(net: Network, cost: CostSpec) -> ExactnessReport:
    for l, ln in enumerate(net.lines):
        if not (ln.g > 0 and ln.b > 0):
            raise PreconditionError(f"line {l}: type C conditions need g > 0 and b > 0")
    worst = None
    for l, ln in enumerate(net.lines):
        lim = math.atan(ln.b / ln.g)
        if ln.theta_min > ln.theta_max:
            margin = -math.inf
        else:
            margin = min(ln.theta_min + lim, lim - ln.theta_max)
        if worst is None or margin < worst[0]:
            worst = (margin, l, lim)
    if worst is None:
        c2 = Verdict(PASS)
    else:
        margin, l, lim = worst
        ln = net.lines[l]
        wit = {"line": l, "theta_min": _num(ln.theta_min), "theta_max": _num(ln.theta_max), "limit": lim}
        ok = margin > 0
        c2 = Verdict(PASS if ok else FAIL, margin, None if ok else wit, "radians to +-atan(b/g)")
    if cost.kind != PER_BUS_ACTIVE or not cost.is_linear:
        c1 = Verdict(FAIL, detail="cost must be linear in the active injections")
    elif not cost.strictly_increasing_all_p:
        c1 = Verdict(FAIL, detail="cost not declared strictly increasing in each p_j")
    else:
        c1 = Verdict(PASS)
    tree = _tree_verdict(net)
    rep = ExactnessReport()
    rep.conditions["C"] = {"C1": c1, "C2": c2, "tree": tree,
                           "tree+C1+C2": _all(tree, c1, c2, detail="angle relaxation exact")}
    return rep


# ---------------------------------------------------------------------------
# dc networks
# ---------------------------------------------------------------------------

def check_dc(net: Network, cost: CostSpec) -> ExactnessReport:
    if not net.is_dc:
        raise PreconditionError("check_dc is for dc networks")
    cost.validate(net)
    worst = min(((b.v_min, b.id) for b in net.buses if not (0 < b.v_min <= b.v_max)), default=None)
    d0 = Verdict(PASS) if worst is None else Verdict(FAIL, None, {"bus": worst[1]}, "need 0 < v_min <= v_max")

    a1 = _a1(net, cost)
    if a1.verdict == PASS:
        C0 = cost_matrix(net, cost).real
        off = max((C0[canonical(net, l)] for l in range(net.m)), default=-math.inf)
        if off > 0:
            a1 = Verdict(FAIL, -float(off), None, "C0 has a positive off-diagonal entry")
    a4 = _a4(net)
    b1 = _b1(net, cost, False)
    b1p = _b1(net, cost, True)
    finite = [b.id for b in net.buses[1:] if math.isfinite(b.v_max)]
    b2pp = (Verdict(PASS) if not finite
            else Verdict(FAIL, None, {"bus": finite[0]}, "B2'': v_max must be infinite off the slack"))
    vmax = {b.v_max for b in net.buses[1:]}
    if len(vmax) > 1:
        b2p = Verdict(FAIL, None, {"v_max": sorted(_num(v) for v in vmax if math.isfinite(v))},
                      "B2': unequal v_max across buses 1..n")
    else:
        b2p = Verdict(PASS)
        for b in net.buses[1:]:
            if not isinstance(b.injection_set, Box):
                b2p = Verdict(FAIL, None, {"bus": b.id}, "B2': injection set must be an interval")
                break
            if not b.p_min < 0:
                b2p = Verdict(FAIL, _num(-b.p_min), {"bus": b.id}, "B2': need p_min < 0")
                break
    rep = ExactnessReport()
    rep.conditions["DC"] = {
        "D0": d0, "A1": a1, "A4": a4, "B1": b1, "B1'": b1p, "B2'": b2p, "B2''": b2pp,
        "A1+A4": _all(a1, a4, detail="BIM relaxation exact"),
        "B1+B2''+D0": _all(b1, b2pp, d0, detail="BIM relaxation with W_jk >= 0 exact"),
        "B1'+B2'+D0": _all(b1p, b2p, d0, detail="BIM relaxation with W_jk >= 0 exact"),
    }
    return rep


def check_all(net: Network, cost: CostSpec) -> ExactnessReport:
    """Every condition family that applies: DC, or A plus B (radial) plus C (fixed unit voltages)."""
    rep = ExactnessReport()
    if net.is_dc:
        rep.conditions.update(check_dc(net, cost).conditions)
        return rep
    a = check_typeA(net, cost)
    rep.conditions.update(a.conditions)
    rep.alpha = a.alpha
    if net.radial:
        rep.conditions.update(check_typeB(net, cost).conditions)
    unit = net.v0 == 1.0 and all(b.v_min == b.v_max == 1.0 for b in net.buses)
    if unit and all(ln.g > 0 and ln.b > 0 for ln in net.lines):
        rep.conditions.update(check_typeC(net, cost).conditions)
    return rep


def guaranteed(rep: ExactnessReport) -> list[str]:
    """Names of the combined condition sets that pass."""
    out = []
    for fam, items in rep.conditions.items():
        for name, v in items.items():
            if "+" in name and v.passed:
                out.append(f"{fam}:{name}")
    return out


# ---------------------------------------------------------------------------
# certification of a solved relaxation
# ---------------------------------------------------------------------------

def certify_solution(net: Network, solution, tol: float = DEFAULT_TOL, seed: int = 0) -> ExactnessReport:
    cert = {"tol": tol}
    if isinstance(solution, BfmState):
        gap = bfm.relative_cone_gap(net, solution)
        cert["model"] = "bfm"
        cert["max_cone_gap"] = float(np.max(np.abs(gap), initial=0.0))
        cert["worst_line"] = int(np.argmax(np.abs(gap))) if gap.size else None
        measure = cert["max_cone_gap"]
        cyc = 0.0
        if not net.radial:
            try:
                res = bfm.solve_cycle_angles(net, bfm.beta(net, solution), tol=tol, seed=seed)
                cyc = res.worst if isinstance(res, CycleViolation) else 0.0
            except PreconditionError:
                cyc = math.nan
    elif isinstance(solution, PartialMatrix):
        d = solution.rank1_defect(net)
        cert["model"] = "bim"
        cert["max_rank1_defect"] = float(np.max(np.abs(d), initial=0.0))
        cert["worst_line"] = int(np.argmax(np.abs(d))) if d.size else None
        measure = cert["max_rank1_defect"]
        cyc = 0.0
        if not net.radial:
            try:
                cyc = float(np.max(np.abs(w_cycle_residual(net, solution, seed)), initial=0.0))
            except PreconditionError:
                cyc = math.nan
    else:
        raise TypeError(f"cannot certify a {type(solution).__name__}")
    cert["cycle_residual"] = _num(cyc)
    exact = measure <= tol and math.isfinite(cyc) and cyc <= tol
    cert["verdict"] = "exact" if exact else "not_exact"
    return ExactnessReport(certification=cert)
