"""Primal-dual interior-point method on the homogeneous self-dual embedding.

Standard form handled internally::

    minimize c'x  s.t.  A x = b,  G x + s = h,  s in K

with K a product of a nonnegative orthant and Lorentz cones.  Rotated blocks
are carried through an exact orthogonal change of coordinates on their first
two entries, so no auxiliary variables or rescalings are introduced and the
returned slacks and duals are in the caller's rotated coordinates.

Each iteration uses Nesterov-Todd scaling and a Mehrotra predictor-corrector
step.  The reduced KKT system is dense and factored by LU with a small static
regularisation and iterative refinement against the unregularised matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .cones import NTScaling, ProductCone
from .program import ConeProgram, Status

_R2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class Settings:
    feastol: float = 1e-8
    gaptol: float = 1e-8
    max_iter: int = 200
    equilibrate: bool = True
    ruiz_iters: int = 25
    step: float = 0.99
    refine: int = 3
    regularization: float = 1e-12


@dataclass
class ConeSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    cone_duals: list[np.ndarray] = field(default_factory=list)
    cone_slacks: list[np.ndarray] = field(default_factory=list)
    primal_objective: float = np.nan
    dual_objective: float = np.nan
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Standard:
    """The program rewritten as A x = b, G x + s = h, s in (orthant x Lorentz)."""

    def __init__(self, prog: ConeProgram):
        n = prog.n
        self.n = n
        self.c = prog.c.copy()
        self.A = prog.A.copy()
        self.b = prog.b.copy()
        rows = [prog.G]
        hs = [prog.h]
        dims = []
        self.rotated = []
        for blk in prog.cones:
            k = blk.dim
            Gb = np.zeros((k, n))
            Gb[np.arange(k), list(blk.indices)] = -blk.weights()
            if blk.kind == "rsoc":
                Gb[:2] = _rotate(Gb[:2])
            rows.append(Gb)
            hs.append(np.zeros(k))
            dims.append(k)
            self.rotated.append(blk.kind == "rsoc")
        self.G = np.vstack(rows) if rows else np.zeros((0, n))
        self.h = np.concatenate(hs) if hs else np.zeros(0)
        self.cone = ProductCone(prog.G.shape[0], dims)

    def blocks_out(self, v: np.ndarray) -> list[np.ndarray]:
        out = []
        for sl, rot in zip(self.cone.blocks, self.rotated):
            vb = v[sl].copy()
            if rot:
                vb[:2] = _rotate(vb[:2])
            out.append(vb)
        return out


def _rotate(M: np.ndarray) -> np.ndarray:
    # (u, v) -> ((u+v)/sqrt2, (u-v)/sqrt2); symmetric and its own inverse
    return np.stack([(M[0] + M[1]) * _R2, (M[0] - M[1]) * _R2])


def _independent_rows(A: np.ndarray, b: np.ndarray):
    """Indices of a maximal independent row subset, and whether dropped rows are consistent."""
    p = A.shape[0]
    if p == 0:
        return np.arange(0), True
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0) * 10
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    if rank == p:
        return keep, True
    sol, *_ = np.linalg.lstsq(A[keep], b[keep], rcond=None)
    consistent = np.linalg.norm(A @ sol - b) <= 1e-9 * (1.0 + np.linalg.norm(b))
    return keep, consistent


def _ruiz(A, G, cone: ProductCone, iters: int):
    p, n = A.shape
    M = np.vstack([A, G])
    D = np.ones(M.shape[0])
    E = np.ones(n)
    for _ in range(iters):
        Mk = np.abs(M * D[:, None] * E[None, :])
        rn = Mk.max(axis=1) if n else np.ones(M.shape[0])
        for sl in cone.blocks:
            rn[p + sl.start: p + sl.stop] = rn[p + sl.start: p + sl.stop].max()
        cn = Mk.max(axis=0) if M.shape[0] else np.ones(n)
        rn[rn == 0.0] = 1.0
        cn[cn == 0.0] = 1.0
        D /= np.sqrt(rn)
        E /= np.sqrt(cn)
        if np.all(np.abs(rn - 1.0) < 1e-3) and np.all(np.abs(cn - 1.0) < 1e-3):
            break
    D = np.clip(D, 1e-4, 1e4)
    E = np.clip(E, 1e-4, 1e4)
    return D[:p], D[p:], E


def solve(prog: ConeProgram, settings: Settings | None = None) -> ConeSolution:
    """Solve a ConeProgram; numerical trouble is reported through the status."""
    settings = settings or Settings()
    std = _Standard(prog)
    n = std.n
    p_full = std.A.shape[0]
    keep, consistent = _independent_rows(std.A, std.b)
    if not consistent:
        return _empty(std, p_full, Status.INFEASIBLE)
    A0 = std.A[keep]
    b0 = std.b[keep]
    G0, h0, c0 = std.G, std.h, std.c
    cone = std.cone

    if settings.equilibrate and n:
        DA, DG, E = _ruiz(A0, G0, cone, settings.ruiz_iters)
    else:
        DA, DG, E = np.ones(A0.shape[0]), np.ones(G0.shape[0]), np.ones(n)
    A = A0 * DA[:, None] * E[None, :]
    b = b0 * DA
    G = G0 * DG[:, None] * E[None, :]
    h = h0 * DG
    c = c0 * E
    cnorm = np.max(np.abs(c)) if c.size else 0.0
    sc = 1.0 / cnorm if cnorm > 0 else 1.0
    sc = float(np.clip(sc, 1e-6, 1e6))
    c = c * sc

    runner = _Runner(A, b, G, h, c, cone, settings)
    it, status, (x, y, z, s, tau, kap) = runner.run(
        lambda x, y, z, s: (E * x, DA * y / sc, DG * z / sc, s / DG),
        (A0, b0, G0, h0, c0))

    xu, yu, zu, su = E * x, DA * y / sc, DG * z / sc, s / DG
    q_lin = prog.G.shape[0]
    y_full = np.zeros(p_full)
    if status is Status.OPTIMAL:
        xo, yo, zo, so = xu / tau, yu / tau, zu / tau, su / tau
    elif status is Status.INFEASIBLE:
        scale = -(b0 @ yu + h0 @ zu)
        xo, so = np.full(n, np.nan), np.full(cone.dim, np.nan)
        yo, zo = yu / scale, zu / scale
    elif status is Status.UNBOUNDED:
        scale = -(c0 @ xu)
        xo, so = xu / scale, su / scale
        yo, zo = np.full(len(keep), np.nan), np.full(cone.dim, np.nan)
    else:
        t = tau if tau > 0 else 1.0
        xo, yo, zo, so = xu / t, yu / t, zu / t, su / t
    y_full[keep] = yo
    if status is Status.UNBOUNDED:
        y_full[:] = np.nan

    sol = ConeSolution(status, xo, y_full, zo[:q_lin], so[:q_lin],
                       std.blocks_out(zo), std.blocks_out(so), iterations=it)
    if status in (Status.OPTIMAL, Status.MAXITER):
        sol.primal_objective = float(c0 @ xo) + prog.offset
        sol.dual_objective = float(-(b0 @ yo) - h0 @ zo) + prog.offset
        sol.primal_residual = max(_rel(A0 @ xo - b0, b0), _rel(G0 @ xo + so - h0, h0))
        sol.dual_residual = _rel(A0.T @ yo + G0.T @ zo + c0, c0)
        sol.gap = float(so @ zo)
    return sol


def _rel(r, ref) -> float:
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(ref))) if r.size else 0.0


def _empty(std: _Standard, p_full: int, status: Status) -> ConeSolution:
    nan = np.full
    return ConeSolution(status, nan(std.n, np.nan), nan(p_full, np.nan),
                        nan(std.cone.l, np.nan), nan(std.cone.l, np.nan),
                        std.blocks_out(np.full(std.cone.dim, np.nan)),
                        std.blocks_out(np.full(std.cone.dim, np.nan)))


class _Runner:
    def __init__(self, A, b, G, h, c, cone: ProductCone, settings: Settings):
        self.A, self.b, self.G, self.h, self.c = A, b, G, h, c
        self.cone = cone
        self.st = settings
        self.n = c.size
        self.p = A.shape[0]
        self.m = G.shape[0]

    # -- linear algebra ---------------------------------------------------
    def _factor(self, WiG: np.ndarray):
        """Factor the NT-scaled KKT matrix [[0, A', (W^-1 G)'], [A, 0, 0], [W^-1 G, 0, -I]]."""
        n, p, m = self.n, self.p, self.m
        N = n + p + m
        K = np.zeros((N, N))
        K[:n, n:n + p] = self.A.T
        K[n:n + p, :n] = self.A
        K[:n, n + p:] = WiG.T
        K[n + p:, :n] = WiG
        K[n + p:, n + p:] = -np.eye(m)
        delta = self.st.regularization
        Kr = K.copy()
        Kr[np.arange(n), np.arange(n)] += delta
        Kr[np.arange(n, n + p), np.arange(n, n + p)] -= delta
        lu = sla.lu_factor(Kr, check_finite=False)
        return K, lu

    def _ksolve(self, K, lu, rhs):
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        nr = np.linalg.norm(rhs)
        for _ in range(self.st.refine):
            res = rhs - K @ sol
            if np.linalg.norm(res) <= 1e-15 * (1.0 + nr):
                break
            sol = sol + sla.lu_solve(lu, res, check_finite=False)
        return sol

    def _split(self, v):
        n, p = self.n, self.p
        return v[:n], v[n:n + p], v[n + p:]

    # -- main loop --------------------------------------------------------
    def run(self, unscale, originals):
        A, b, G, h, c, cone, st = self.A, self.b, self.G, self.h, self.c, self.cone, self.st
        A0, b0, G0, h0, c0 = originals
        n, p, m = self.n, self.p, self.m

        # initial point: least-squares primal and least-norm dual, shifted into the cone
        K, lu = self._factor(G)
        x, _, zt = self._split(self._ksolve(K, lu, np.concatenate([np.zeros(n), b, h])))
        s = -zt
        _, y, z = self._split(self._ksolve(K, lu, np.concatenate([-c, np.zeros(p), np.zeros(m)])))
        e = cone.identity()
        if m:
            if cone.min_eig(s) <= 1e-8:
                s = s + (1.0 - cone.min_eig(s)) * e
            if cone.min_eig(z) <= 1e-8:
                z = z + (1.0 - cone.min_eig(z)) * e
        tau, kap = 1.0, 1.0
        deg = cone.degree + 1

        nb0 = max(1.0, np.linalg.norm(b0))
        nh0 = max(1.0, np.linalg.norm(h0))
        nc0 = max(1.0, np.linalg.norm(c0))
        it = 0
        status = Status.MAXITER
        for it in range(st.max_iter + 1):
            xu, yu, zu, su = unscale(x, y, z, s)
            # unscaled termination tests
            pres = max(np.linalg.norm(A0 @ xu - b0 * tau) / nb0 if p else 0.0,
                       np.linalg.norm(G0 @ xu + su - h0 * tau) / nh0 if m else 0.0) / tau
            dres = np.linalg.norm(A0.T @ yu + G0.T @ zu + c0 * tau) / nc0 / tau
            pcost = c0 @ xu / tau
            dcost = -(b0 @ yu + h0 @ zu) / tau
            gap = (su @ zu) / (tau * tau)
            gap_ok = gap <= st.gaptol * max(1.0, min(abs(pcost), abs(dcost))) and \
                abs(pcost - dcost) <= 10 * st.gaptol * max(1.0, min(abs(pcost), abs(dcost)))
            if pres <= st.feastol and dres <= st.feastol and gap_ok:
                status = Status.OPTIMAL
                break
            hzby = b0 @ yu + h0 @ zu
            if hzby < 0:
                cert = np.linalg.norm(A0.T @ yu + G0.T @ zu) / (-hzby)
                if cert <= st.feastol * max(1.0, np.linalg.norm(c0)) and cone.min_eig(zu) >= -1e-12 * np.linalg.norm(zu):
                    status = Status.INFEASIBLE
                    break
            cx = c0 @ xu
            if cx < 0:
                r1 = np.linalg.norm(A0 @ xu) / (-cx) if p else 0.0
                r2 = np.linalg.norm(G0 @ xu + su) / (-cx) if m else 0.0
                if max(r1, r2) <= st.feastol * max(1.0, np.linalg.norm(b0), np.linalg.norm(h0)):
                    status = Status.UNBOUNDED
                    break
            if it == st.max_iter:
                break

            # scaled residuals
            rx = A.T @ y + G.T @ z + c * tau
            ry = A @ x - b * tau
            rz = G @ x + s - h * tau
            rt = kap + c @ x + b @ y + h @ z
            mu = (s @ z + tau * kap) / deg

            try:
                W = NTScaling(cone, s, z)
                lam = W.lam
                WiG = np.column_stack([W.apply_inv(G[:, j]) for j in range(n)]) if n else np.zeros((m, 0))
                K, lu = self._factor(WiG)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError):
                break
            def kkt(r1, r2, r3):
                # original unknowns (dx, dy, dz) with dz = W^-1 dzt
                vx, vy, vzt = self._split(self._ksolve(K, lu, np.concatenate([r1, r2, W.apply_inv(r3)])))
                return vx, vy, W.apply_inv(vzt)

            u1x, u1y, u1z = kkt(-c, b, h)
            den = c @ u1x + b @ u1y + h @ u1z - kap / tau

            def direction(eta, d_s, d_k):
                ls = cone.div(lam, d_s)
                u2x, u2y, u2z = kkt(-eta * rx, -eta * ry, -eta * rz - W.apply(ls))
                dtau = (-eta * rt - d_k / tau - (c @ u2x + b @ u2y + h @ u2z)) / den
                dx = u2x + dtau * u1x
                dy = u2y + dtau * u1y
                dz = u2z + dtau * u1z
                # from the linearised primal equation; agrees with W(ls - W dz) in exact
                # arithmetic but does not amplify rounding through W^2
                ds = -eta * rz - G @ dx + h * dtau
                dkap = (d_k - kap * dtau) / tau
                return dx, dy, dz, ds, dtau, dkap

            def steplen(dz, ds, dtau, dkap):
                a = min(cone.max_step(s, ds), cone.max_step(z, dz)) if m else np.inf
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkap < 0:
                    a = min(a, -kap / dkap)
                return a

            # predictor
            aff = direction(1.0, -cone.prod(lam, lam), -tau * kap)
            a_aff = min(1.0, steplen(*aff[2:]))
            sigma = float(np.clip((1.0 - a_aff) ** 3, 0.0, 1.0))
            # corrector
            dsa = W.apply_inv(aff[3])
            dza = W.apply(aff[2])
            d_s = -cone.prod(lam, lam) - cone.prod(dsa, dza) + sigma * mu * e
            d_k = -tau * kap - aff[4] * aff[5] + sigma * mu
            dx, dy, dz, ds, dtau, dkap = direction(1.0 - sigma, d_s, d_k)
            alpha = min(1.0, st.step * steplen(dz, ds, dtau, dkap))
            if not np.isfinite(alpha) or alpha <= 1e-14:
                break
            x = x + alpha * dx
            y = y + alpha * dy
            z = z + alpha * dz
            s = s + alpha * ds
            tau = tau + alpha * dtau
            kap = kap + alpha * dkap
            if not (np.all(np.isfinite(x)) and np.isfinite(tau)):
                break
        return it, status, (x, y, z, s, tau, kap)
