"""Brute-force and closed-form references for desk-scale cross-checks.

Nothing here touches the conic solver or the relaxation builders: power flow
quantities are evaluated directly from complex bus voltages, so every
comparison against a relaxation is a genuine second route.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .cost import LINE_LOSS, LINEAR_W, PER_BUS_ACTIVE, CostSpec
from .netmodel import DiscreteSet, MagnitudeAngle, Network

DEFAULT_RESOLUTION = {1: (201, 721), 2: (31, 96), 3: (7, 24)}


# ---------------------------------------------------------------------------
# physics straight from complex voltages
# ---------------------------------------------------------------------------

def _line_data(net: Network):
    frm = np.array([ln.from_bus for ln in net.lines], dtype=int)
    to = np.array([ln.to_bus for ln in net.lines], dtype=int)
    y = np.array([ln.y for ln in net.lines], dtype=complex)
    return frm, to, y


def injections(net: Network, V: np.ndarray):
    """(s, ell, I) for voltages V of shape (..., n+1).

    s_j = V_j * sum_k conj(y_jk (V_j - V_k)); ell on each line is |I|^2 with
    I = y (V_from - V_to).
    """
    frm, to, y = _line_data(net)
    V = np.asarray(V, dtype=complex)
    I = y * (V[..., frm] - V[..., to])
    s = np.zeros(V.shape, dtype=complex)
    np.add.at(s.T, frm, (V[..., frm] * np.conj(I)).T)
    np.add.at(s.T, to, (V[..., to] * np.conj(-I)).T)
    return s, np.abs(I) ** 2, I


def voltage_cost(net: Network, cost: CostSpec, V: np.ndarray) -> np.ndarray:
    s, ell, _ = injections(net, V)
    if cost.kind == PER_BUS_ACTIVE:
        p = s.real
        return p @ np.asarray(cost.linear) + (p * p) @ np.asarray(cost.quadratic)
    if cost.kind == LINE_LOSS:
        return ell @ np.asarray(cost.weights)
    # tr(C W) with W = V V^H restricted to the graph
    val = (np.abs(V) ** 2) @ np.asarray(cost.diag)
    for l, ln in enumerate(net.lines):
        j, k = sorted((ln.from_bus, ln.to_bus))
        w = V[..., j] * np.conj(V[..., k])
        c = cost.offdiag[l]
        val = val + 2.0 * (c.real * w.real + c.imag * w.imag)
    return val


def violation(net: Network, V: np.ndarray) -> np.ndarray:
    """Largest absolute constraint violation of voltages V (shape (..., n+1))."""
    V = np.asarray(V, dtype=complex)
    s, _, _ = injections(net, V)
    viol = np.zeros(V.shape[:-1])
    mag2 = np.abs(V) ** 2
    for bus in net.buses:
        j = bus.id
        sj = s[..., j]
        parts = [
            bus.v_min - mag2[..., j],
            mag2[..., j] - bus.v_max if math.isfinite(bus.v_max) else None,
            bus.p_min - sj.real if math.isfinite(bus.p_min) else None,
            sj.real - bus.p_max if math.isfinite(bus.p_max) else None,
            bus.q_min - sj.imag if math.isfinite(bus.q_min) else None,
            sj.imag - bus.q_max if math.isfinite(bus.q_max) else None,
        ]
        iset = bus.injection_set
        if isinstance(iset, MagnitudeAngle):
            parts.append(np.abs(sj) - iset.a)
            # angle excess, scaled by |s| to be a distance
            ang = np.abs(np.angle(sj))
            parts.append(np.where(np.abs(sj) > 0, np.abs(sj) * np.sin(np.clip(ang - iset.phi, 0, np.pi / 2)), 0.0))
        elif isinstance(iset, DiscreteSet):
            pts = np.array(iset.points)
            parts.append(np.min(np.abs(sj[..., None] - pts), axis=-1))
        for part in parts:
            if part is not None:
                viol = np.maximum(viol, part)
    ang = np.angle(V)
    for ln in net.lines:
        if math.isinf(ln.theta_min) and math.isinf(ln.theta_max):
            continue
        d = np.angle(np.exp(1j * (ang[..., ln.from_bus] - ang[..., ln.to_bus])))
        viol = np.maximum(viol, np.maximum(ln.theta_min - d, d - ln.theta_max))
    return viol


# ---------------------------------------------------------------------------
# grid search with optional local polish
# ---------------------------------------------------------------------------

@dataclass
class GridResult:
    V: np.ndarray
    value: float
    violation: float
    grid_value: float
    points: int
    polished: bool


def _axes(net: Network, resolution, v_cap):
    n = net.n
    if resolution is None:
        resolution = DEFAULT_RESOLUTION.get(n, DEFAULT_RESOLUTION[3])
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution), 4 * int(resolution))
    n_mag, n_ang = resolution
    per_bus = []
    for bus in net.buses[1:]:
        hi = bus.v_max if math.isfinite(bus.v_max) else v_cap
        if hi is None or not math.isfinite(hi):
            raise ValueError(f"bus {bus.id} has no finite v_max; pass v_cap")
        hi = min(hi, v_cap) if v_cap is not None else hi
        mags = np.linspace(math.sqrt(bus.v_min), math.sqrt(max(hi, bus.v_min)), n_mag)
        if net.is_dc:
            pts = mags.astype(complex)
        else:
            angs = -np.pi + 2 * np.pi * (np.arange(n_ang) + 1) / n_ang
            pts = (mags[:, None] * np.exp(1j * angs)[None, :]).ravel()
        per_bus.append(pts)
    return per_bus


def _polish(net: Network, cost: CostSpec, V_start: np.ndarray):
    n = net.n
    dc = net.is_dc
    v0 = math.sqrt(net.v0)

    def unpack(u):
        V = np.empty(n + 1, dtype=complex)
        V[0] = v0
        if dc:
            V[1:] = u
        else:
            V[1:] = u[:n] * np.exp(1j * u[n:])
        return V

    u0 = np.abs(V_start[1:]) if dc else np.concatenate([np.abs(V_start[1:]), np.angle(V_start[1:])])
    bounds = []
    for bus in net.buses[1:]:
        bounds.append((math.sqrt(bus.v_min), math.sqrt(bus.v_max) if math.isfinite(bus.v_max) else None))
    if not dc:
        bounds += [(None, None)] * n
    s_start, _, _ = injections(net, V_start)

    cons = []
    for bus in net.buses:
        j = bus.id
        for comp, lo, hi in ((0, bus.p_min, bus.p_max), (1, bus.q_min, bus.q_max)):
            if dc and comp == 1:
                continue
            part = (lambda u, j=j, comp=comp: (lambda s: s.real if comp == 0 else s.imag)(injections(net, unpack(u))[0][j]))
            if math.isfinite(lo) and lo == hi:
                cons.append({"type": "eq", "fun": lambda u, f=part, lo=lo: f(u) - lo})
                continue
            if math.isfinite(lo):
                cons.append({"type": "ineq", "fun": lambda u, f=part, lo=lo: f(u) - lo})
            if math.isfinite(hi):
                cons.append({"type": "ineq", "fun": lambda u, f=part, hi=hi: hi - f(u)})
        iset = bus.injection_set
        sj = lambda u, j=j: injections(net, unpack(u))[0][j]
        if isinstance(iset, MagnitudeAngle):
            cons.append({"type": "ineq", "fun": lambda u, f=sj, a=iset.a: a * a - abs(f(u)) ** 2})
            if iset.phi <= np.pi / 2:
                sp, cp = math.sin(iset.phi), math.cos(iset.phi)
                cons.append({"type": "ineq", "fun": lambda u, f=sj, sp=sp, cp=cp: f(u).real * sp - f(u).imag * cp})
                cons.append({"type": "ineq", "fun": lambda u, f=sj, sp=sp, cp=cp: f(u).real * sp + f(u).imag * cp})
        elif isinstance(iset, DiscreteSet):
            pts = np.array(iset.points)
            target = pts[np.argmin(np.abs(pts - s_start[j]))]
            cons.append({"type": "eq", "fun": lambda u, f=sj, t=target: np.array([f(u).real - t.real, f(u).imag - t.imag])})
    for ln in net.lines:
        if not dc and (math.isfinite(ln.theta_min) or math.isfinite(ln.theta_max)):
            def dth(u, ln=ln):
                V = unpack(u)
                return np.angle(V[ln.from_bus] * np.conj(V[ln.to_bus]))
            if math.isfinite(ln.theta_min):
                cons.append({"type": "ineq", "fun": lambda u, f=dth, lo=ln.theta_min: f(u) - lo})
            if math.isfinite(ln.theta_max):
                cons.append({"type": "ineq", "fun": lambda u, f=dth, hi=ln.theta_max: hi - f(u)})

    res = minimize(lambda u: float(voltage_cost(net, cost, unpack(u))), u0, method="SLSQP",
                   bounds=bounds, constraints=cons, options={"maxiter": 500, "ftol": 1e-14})
    return unpack(res.x)


def _spread(order, pts, k, min_dist):
    chosen = []
    for i in order:
        if all(np.max(np.abs(pts[i] - pts[c])) > min_dist for c in chosen):
            chosen.append(i)
        if len(chosen) >= k:
            break
    return chosen


def grid_solve(net: Network, cost: CostSpec, resolution=None, feas_tol: float = 1e-9,
               v_cap: float | None = None, polish: bool = False, polish_tol: float = 1e-7,
               candidates: int = 12):
    """Exhaustive voltage grid over buses 1..n (n <= 3); best feasible point or None.

    Magnitudes run over [sqrt(v_min), sqrt(v_max)] (with v_max capped at v_cap
    when infinite) and angles over (-pi, pi]; dc networks use the magnitude
    axis only.  A grid point counts as feasible when its largest constraint
    violation is at most ``feas_tol``.

    With ``polish`` the best and least-violating grid points seed a local
    SLSQP refinement of the nonconvex equations; polished points are accepted
    when their violation is at most ``polish_tol``.
    """
    if net.n > 3:
        raise ValueError("grid_solve supports at most three non-slack buses")
    cost.validate(net)
    per_bus = _axes(net, resolution, v_cap)
    sizes = tuple(len(p) for p in per_bus)
    total = int(np.prod(sizes))
    v0 = math.sqrt(net.v0)
    n = net.n

    def points(flat):
        idx = np.unravel_index(flat, sizes)
        V = np.empty((len(flat), n + 1), dtype=complex)
        V[:, 0] = v0
        for b in range(n):
            V[:, b + 1] = per_bus[b][idx[b]]
        return V

    best_val, best_flat = np.inf, None
    pool_idx, pool_viol, pool_val = [], [], []
    chunk = 1 << 17
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        V = points(flat)
        viol = violation(net, V)
        val = voltage_cost(net, cost, V)
        cand = np.where(viol <= feas_tol, val, np.inf)
        k = int(np.argmin(cand))
        if cand[k] < best_val:
            best_val, best_flat = float(cand[k]), int(flat[k])
        if polish:
            keep = np.argsort(viol)[: 4 * candidates]
            pool_idx.extend(flat[keep].tolist())
            pool_viol.extend(viol[keep].tolist())
            pool_val.extend(val[keep].tolist())
            loose = np.argsort(np.where(viol <= np.quantile(viol, 0.01), val, np.inf))[: 4 * candidates]
            pool_idx.extend(flat[loose].tolist())
            pool_viol.extend(viol[loose].tolist())
            pool_val.extend(val[loose].tolist())

    result = None
    if best_flat is not None:
        Vb = points(np.array([best_flat]))[0]
        result = GridResult(Vb, best_val, float(violation(net, Vb)), best_val, total, False)
    if not polish:
        return result

    pool_viol = np.array(pool_viol)
    pool_val = np.array(pool_val)
    pts = points(np.array(pool_idx, dtype=int))
    step = max(float(np.max(np.abs(np.diff(per_bus[b])))) if sizes[b] > 1 else 0.0 for b in range(n))
    by_viol = _spread(np.argsort(pool_viol), pts, candidates, 2 * step)
    loose = pool_viol <= np.quantile(pool_viol, 0.5)
    by_val = _spread(np.argsort(np.where(loose, pool_val, np.inf)), pts, candidates, 2 * step)
    starts = [pts[i] for i in dict.fromkeys(by_viol + by_val)]
    if result is not None:
        starts.insert(0, result.V)
    best = result
    for V_start in starts:
        Vp = _polish(net, cost, V_start)
        vi = float(violation(net, Vp))
        if vi <= polish_tol:
            val = float(voltage_cost(net, cost, Vp))
            if best is None or val < best.value:
                best = GridResult(Vp, val, vi, result.grid_value if result else np.nan, total, True)
    return best


# ---------------------------------------------------------------------------
# two-bus closed forms
# ---------------------------------------------------------------------------

@dataclass
class TwoBusRoot:
    ell: float
    v1: float
    p0: float
    q0: float
    high_voltage: bool


@dataclass
class TwoBusCurve:
    feasible: bool
    roots: list           # [high-voltage root, low-voltage root] when feasible
    samples: np.ndarray   # rows (ell, v1, p0, q0) across the relaxed segment between the roots
    discriminant: float


def _two_bus_point(z, s1, v0, ell):
    r, x = z.real, z.imag
    v1 = v0 + 2 * (r * s1.real + x * s1.imag) - abs(z) ** 2 * ell
    return v1, -s1.real + r * ell, -s1.imag + x * ell


def two_bus_bfm_curve(z: complex, s1: complex, v0: float = 1.0, samples: int = 101) -> TwoBusCurve:
    """Feasible set of the two-bus branch flow model with bus-1 injection s1.

    Line 1 -> 0 carries S = s1, so s0 = -(s1 - z ell) and
    v1 = v0 + 2 Re(conj(z) s1) - |z|^2 ell; with v1 ell = |s1|^2 this gives
    |z|^2 ell^2 - (2 r p1 + 2 x q1 + v0) ell + |s1|^2 = 0.
    Relaxing to v1 ell >= |s1|^2 keeps the segment between the two roots.
    """
    z, s1 = complex(z), complex(s1)
    if abs(z) == 0:
        raise ValueError("impedance must be nonzero")
    a = abs(z) ** 2
    bq = 2 * z.real * s1.real + 2 * z.imag * s1.imag + v0
    c = abs(s1) ** 2
    disc = bq * bq - 4 * a * c
    if disc < 0:
        return TwoBusCurve(False, [], np.zeros((0, 4)), disc)
    sq = math.sqrt(disc)
    # stable roots: the small one via the conjugate form
    big = (bq + sq) / (2 * a) if bq >= 0 else 2 * c / (bq - sq)
    small = 2 * c / (bq + sq) if bq + sq != 0 else (bq - sq) / (2 * a)
    lo_ell, hi_ell = min(small, big), max(small, big)
    roots = []
    for ell, hv in ((lo_ell, True), (hi_ell, False)):
        v1, p0, q0 = _two_bus_point(z, s1, v0, ell)
        roots.append(TwoBusRoot(ell, v1, p0, q0, hv))
    ells = np.linspace(lo_ell, hi_ell, max(int(samples), 2))
    rows = np.array([(e, *_two_bus_point(z, s1, v0, e)) for e in ells])
    return TwoBusCurve(True, roots, rows, disc)


@dataclass
class EllipseArc:
    theta: np.ndarray
    P: np.ndarray            # rows (P_jk, P_kj)
    pi_min_jk: float
    pi_min_kj: float
    theta_min_jk: float
    theta_min_kj: float


def angle_flows(g: float, b: float, theta):
    """(P_jk, P_kj) at unit voltage magnitudes for angle difference theta = theta_j - theta_k."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([g - g * np.cos(theta) + b * np.sin(theta),
                     g - g * np.cos(theta) - b * np.sin(theta)], axis=-1)


def two_bus_angle_ellipse(g: float, b: float, theta_lo: float = -np.pi, theta_hi: float = np.pi,
                          samples: int = 721) -> EllipseArc:
    if not (g > 0 and b > 0):
        raise ValueError("g and b must be positive")
    theta = np.linspace(theta_lo, theta_hi, max(int(samples), 2))
    t_jk, t_kj = -math.atan2(b, g), math.atan2(b, g)
    return EllipseArc(theta, angle_flows(g, b, theta),
                      float(angle_flows(g, b, t_jk)[0]), float(angle_flows(g, b, t_kj)[1]), t_jk, t_kj)


def ellipse_form(g: float, b: float, P) -> np.ndarray:
    """(P - g 1)^T (A A^T)^{-1} (P - g 1) with A = [[-g, b], [-g, -b]]; equals 1 on the ellipse."""
    A = np.array([[-g, b], [-g, -b]])
    M = np.linalg.inv(A @ A.T)
    d = np.asarray(P, dtype=float) - g
    return np.einsum("...i,ij,...j->...", d, M, d)


@dataclass
class LineAngleResult:
    theta: float
    P: np.ndarray
    value: float


def line_angle_grid(g: float, b: float, theta_lo: float, theta_hi: float, c_jk: float, c_kj: float,
                    p_jk=(-np.inf, np.inf), p_kj=(-np.inf, np.inf), samples: int = 10_000):
    """Brute-force min of c_jk P_jk + c_kj P_kj over a theta grid within the bounds; None if empty."""
    theta = np.linspace(theta_lo, theta_hi, int(samples))
    P = angle_flows(g, b, theta)
    ok = (P[:, 0] >= p_jk[0]) & (P[:, 0] <= p_jk[1]) & (P[:, 1] >= p_kj[0]) & (P[:, 1] <= p_kj[1])
    if not np.any(ok):
        return None
    val = np.where(ok, c_jk * P[:, 0] + c_kj * P[:, 1], np.inf)
    k = int(np.argmin(val))
    return LineAngleResult(float(theta[k]), P[k], float(val[k]))


# ---------------------------------------------------------------------------
# generic small QCQP
# ---------------------------------------------------------------------------

@dataclass
class QcqpGridResult:
    x: np.ndarray
    value: float
    violation: float
    polished: bool


def qcqp_value(C0, x):
    x = np.asarray(x, dtype=complex)
    return np.real(np.einsum("...i,ij,...j->...", np.conj(x), C0, x))


def qcqp_violation(Cs, bs, x):
    x = np.asarray(x, dtype=complex)
    out = np.full(x.shape[:-1], -np.inf)
    for C, bl in zip(Cs, bs):
        out = np.maximum(out, qcqp_value(C, x) - bl)
    return out


def qcqp_grid(C0, Cs, bs, mag_ranges, n_mag: int = 6, n_ang: int = 16, polish: bool = True):
    """min x^H C0 x s.t. x^H C_l x <= b_l by grid over per-entry magnitude and angle.

    ``mag_ranges`` bounds |x_j|; the phase of x_0 is pinned at zero since the
    problem is invariant under a global rotation.  The best exactly feasible
    grid point (optionally refined by SLSQP, kept only if still feasible) is
    returned, or None when no grid point is feasible.
    """
    C0 = np.asarray(C0, dtype=complex)
    nv = C0.shape[0]
    axes = []
    for j, (lo, hi) in enumerate(mag_ranges):
        mags = np.linspace(lo, hi, n_mag)
        if j == 0:
            axes.append(mags.astype(complex))
        else:
            angs = -np.pi + 2 * np.pi * (np.arange(n_ang) + 1) / n_ang
            axes.append((mags[:, None] * np.exp(1j * angs)[None, :]).ravel())
    best_val, best_x = np.inf, None
    rest = np.meshgrid(*[np.arange(len(a)) for a in axes[1:]], indexing="ij")
    rest = [r.ravel() for r in rest]
    for x0 in axes[0]:
        X = np.empty((rest[0].size, nv), dtype=complex)
        X[:, 0] = x0
        for j in range(1, nv):
            X[:, j] = axes[j][rest[j - 1]]
        viol = qcqp_violation(Cs, bs, X)
        val = np.where(viol <= 0.0, qcqp_value(C0, X), np.inf)
        k = int(np.argmin(val))
        if val[k] < best_val:
            best_val, best_x = float(val[k]), X[k].copy()
    if best_x is None:
        return None
    result = QcqpGridResult(best_x, best_val, float(qcqp_violation(Cs, bs, best_x)), False)
    if not polish:
        return result

    def unpack(u):
        x = np.empty(nv, dtype=complex)
        x[0] = u[0]
        x[1:] = u[1:nv] + 1j * u[nv:]
        return x

    u0 = np.concatenate([[best_x[0].real], best_x[1:].real, best_x[1:].imag])
    cons = [{"type": "ineq", "fun": lambda u, C=C, bl=bl: bl - float(qcqp_value(C, unpack(u)))}
            for C, bl in zip(Cs, bs)]
    res = minimize(lambda u: float(qcqp_value(C0, unpack(u))), u0, method="SLSQP", constraints=cons,
                   options={"maxiter": 500, "ftol": 1e-14})
    xp = unpack(res.x)
    vi = float(qcqp_violation(Cs, bs, xp))
    val = float(qcqp_value(C0, xp))
    if vi <= 1e-9 and val < best_val:
        return QcqpGridResult(xp, val, vi, True)
    return result


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_curve_csv(curve: TwoBusCurve, path):
    """Columns: ell, v1, p0, q0, exact (1 at the two power flow solutions)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "v1", "p0", "q0", "exact"])
        last = len(curve.samples) - 1
        for i, row in enumerate(curve.samples):
            w.writerow([repr(float(v)) for v in row] + [int(i in (0, last))])


def write_ellipse_csv(arc: EllipseArc, path):
    """Columns: theta, P_jk, P_kj."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "P_jk", "P_kj"])
        for t, (a, b) in zip(arc.theta, arc.P):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
