"""Jordan-algebra helpers for the product of a nonnegative orthant and Lorentz cones.

Conventions follow the usual symmetric-cone interior-point setup: for a
Lorentz block ``u o v = (u'v, u0 v1 + v0 u1)`` with identity ``e = (1, 0, ...)``,
so each block contributes degree one.
"""
from __future__ import annotations

import numpy as np


class ProductCone:
    def __init__(self, n_lin: int, soc_dims):
        self.l = int(n_lin)
        self.q = [int(d) for d in soc_dims]
        self.blocks: list[slice] = []
        start = self.l
        for d in self.q:
            self.blocks.append(slice(start, start + d))
            start += d
        self.dim = start
        self.degree = self.l + len(self.q)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[: self.l] = 1.0
        for sl in self.blocks:
            e[sl.start] = 1.0
        return e

    def min_eig(self, u: np.ndarray) -> float:
        vals = [np.min(u[: self.l])] if self.l else []
        for sl in self.blocks:
            ub = u[sl]
            vals.append(ub[0] - np.linalg.norm(ub[1:]))
        return float(min(vals)) if vals else np.inf

    def prod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        w = np.empty(self.dim)
        w[: self.l] = u[: self.l] * v[: self.l]
        for sl in self.blocks:
            ub, vb = u[sl], v[sl]
            w[sl.start] = ub @ vb
            w[sl.start + 1: sl.stop] = ub[0] * vb[1:] + vb[0] * ub[1:]
        return w

    def div(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve lam o x = d for x (lam in the interior)."""
        x = np.empty(self.dim)
        x[: self.l] = d[: self.l] / lam[: self.l]
        for sl in self.blocks:
            lb, db = lam[sl], d[sl]
            l0, l1 = lb[0], lb[1:]
            rho = (l0 - np.linalg.norm(l1)) * (l0 + np.linalg.norm(l1))
            x0 = (l0 * db[0] - l1 @ db[1:]) / rho
            x[sl.start] = x0
            x[sl.start + 1: sl.stop] = (db[1:] - x0 * l1) / l0
        return x

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest alpha >= 0 with u + alpha du in the cone (u interior)."""
        alpha = np.inf
        if self.l:
            neg = du[: self.l] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-u[: self.l][neg] / du[: self.l][neg])))
        for sl in self.blocks:
            alpha = min(alpha, _soc_step(u[sl], du[sl]))
        return alpha


def _soc_step(u: np.ndarray, d: np.ndarray) -> float:
    # f(a) = (u0 + a d0)^2 - ||u1 + a d1||^2 = qa a^2 + 2 qb a + qc, qc > 0
    qa = d[0] ** 2 - d[1:] @ d[1:]
    qb = u[0] * d[0] - u[1:] @ d[1:]
    qc = (u[0] - np.linalg.norm(u[1:])) * (u[0] + np.linalg.norm(u[1:]))
    if qc <= 0:
        return 0.0
    disc = qb * qb - qa * qc
    roots = []
    if qa == 0.0:
        if qb < 0:
            roots.append(-qc / (2 * qb))
    elif disc >= 0:
        sq = np.sqrt(disc)
        # stable forms of the two roots of qa a^2 + 2 qb a + qc
        for denom in (-qb - sq, -qb + sq):
            if denom != 0.0:
                roots.append(qc / denom)
    pos = [r for r in roots if r > 0]
    step = min(pos) if pos else np.inf
    # also keep the first coordinate nonnegative
    if d[0] < 0:
        step = min(step, -u[0] / d[0])
    return float(step)


class NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lam, W symmetric."""

    def __init__(self, cone: ProductCone, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        l = cone.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.soc = []
        for sl in cone.blocks:
            sb, zb = s[sl], z[sl]
            aa = np.sqrt((sb[0] - np.linalg.norm(sb[1:])) * (sb[0] + np.linalg.norm(sb[1:])))
            bb = np.sqrt((zb[0] - np.linalg.norm(zb[1:])) * (zb[0] + np.linalg.norm(zb[1:])))
            sbar = sb / aa
            zbar = zb / bb
            gamma = np.sqrt(max((1.0 + sbar @ zbar) / 2.0, 0.0))
            w = sbar.copy()
            w[0] += zbar[0]
            w[1:] -= zbar[1:]
            w /= 2.0 * gamma
            # renormalise so that w'Jw = 1 holds to rounding
            w0 = np.sqrt(1.0 + w[1:] @ w[1:])
            w[0] = w0
            self.soc.append((np.sqrt(aa / bb), w))
        self.lam = self.apply(z)

    def apply(self, v: np.ndarray) -> np.ndarray:
        cone = self.cone
        out = np.empty(cone.dim)
        out[: cone.l] = self.d * v[: cone.l]
        for (beta, w), sl in zip(self.soc, cone.blocks):
            vb = v[sl]
            t = w[1:] @ vb[1:]
            out[sl.start] = beta * (w[0] * vb[0] + t)
            out[sl.start + 1: sl.stop] = beta * (w[1:] * vb[0] + vb[1:] + w[1:] * (t / (1.0 + w[0])))
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        cone = self.cone
        out = np.empty(cone.dim)
        out[: cone.l] = v[: cone.l] / self.d
        for (beta, w), sl in zip(self.soc, cone.blocks):
            vb = v[sl]
            t = w[1:] @ vb[1:]
            out[sl.start] = (w[0] * vb[0] - t) / beta
            out[sl.start + 1: sl.stop] = (-w[1:] * vb[0] + vb[1:] + w[1:] * (t / (1.0 + w[0]))) / beta
        return out

    def squared(self) -> np.ndarray:
        """Dense W^2 (block diagonal)."""
        cone = self.cone
        M = np.zeros((cone.dim, cone.dim))
        idx = np.arange(cone.l)
        M[idx, idx] = self.d ** 2
        for (beta, w), sl in zip(self.soc, cone.blocks):
            k = sl.stop - sl.start
            Wb = np.empty((k, k))
            Wb[0, 0] = w[0]
            Wb[0, 1:] = w[1:]
            Wb[1:, 0] = w[1:]
            Wb[1:, 1:] = np.eye(k - 1) + np.outer(w[1:], w[1:]) / (1.0 + w[0])
            M[sl, sl] = beta * beta * (Wb @ Wb)
        return M
