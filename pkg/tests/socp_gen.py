"""Random cone programs with a planted primal-dual optimum or a planted Farkas certificate."""
from __future__ import annotations

import numpy as np

from opfkit.conic import ConeBlock, ConeProgram

_R2 = 1.0 / np.sqrt(2.0)


def _to_rotated(u):
    u = u.copy()
    a, b = u[0], u[1]
    u[0], u[1] = (a + b) * _R2, (a - b) * _R2
    return u


def _complementary_pair(rng, k):
    """(primal, dual) in a Lorentz cone of dimension k with zero inner product."""
    mode = rng.integers(3)
    d = rng.normal(size=k - 1)
    d /= np.linalg.norm(d)
    if mode == 0:
        # primal interior, dual zero
        r = rng.uniform(0.1, 2.0)
        u = np.concatenate([[r + rng.uniform(0.2, 2.0)], r * d * rng.uniform(0, 1)])
        return u, np.zeros(k)
    if mode == 1:
        # both on the boundary, opposite rays
        a, b = rng.uniform(0.2, 2.0, size=2)
        return np.concatenate([[a], a * d]), np.concatenate([[b], -b * d])
    r = rng.uniform(0.1, 2.0)
    z = np.concatenate([[r + rng.uniform(0.2, 2.0)], r * d * rng.uniform(0, 1)])
    return np.zeros(k), z


def planted_feasible(rng, max_vars=50):
    """Returns (program, planted x, planted optimal value)."""
    n = int(rng.integers(4, max_vars + 1))
    x = rng.normal(size=n)
    perm = rng.permutation(n)
    cones, duals = [], []
    pos = 0
    nblocks = int(rng.integers(0, 6))
    for _ in range(nblocks):
        kind = "rsoc" if rng.random() < 0.5 else "soc"
        k = int(rng.integers(3 if kind == "rsoc" else 2, 7))
        if pos + k > n:
            break
        idx = perm[pos:pos + k]
        pos += k
        u, z = _complementary_pair(rng, k)
        if kind == "rsoc":
            u, z = _to_rotated(u), _to_rotated(z)
        w = rng.uniform(0.5, 2.0, size=k) * rng.choice([-1.0, 1.0], size=k)
        x[idx] = u / w
        cones.append(ConeBlock(kind, tuple(int(i) for i in idx), tuple(float(v) for v in w)))
        duals.append(z)

    q = int(rng.integers(0, n + 1))
    G = rng.normal(size=(q, n))
    active = rng.random(q) < 0.5
    slack = np.where(active, 0.0, rng.uniform(0.1, 2.0, size=q))
    zl = np.where(active, rng.uniform(0.1, 2.0, size=q), 0.0)
    h = G @ x + slack

    p = int(rng.integers(0, max(1, n // 2)))
    A = rng.normal(size=(p, n))
    b = A @ x
    y = rng.normal(size=p)

    c = -A.T @ y - G.T @ zl
    for blk, z in zip(cones, duals):
        c[list(blk.indices)] += blk.weights() * z

    # a problem with no constraints at all on free directions would be unbounded
    # unless c vanishes there; the construction satisfies KKT so the optimum is attained
    prog = ConeProgram(c, A, b, G, h, cones)
    return prog, x, float(c @ x)


def planted_infeasible(rng, max_vars=30):
    """Program with a Farkas certificate built in: A'y + G'z = 0, b'y + h'z < 0."""
    n = int(rng.integers(3, max_vars + 1))
    perm = rng.permutation(n)
    cones, pos = [], 0
    g = np.zeros(n)
    for _ in range(int(rng.integers(0, 4))):
        kind = "rsoc" if rng.random() < 0.5 else "soc"
        k = int(rng.integers(3, 6))
        if pos + k > n:
            break
        idx = perm[pos:pos + k]
        pos += k
        d = rng.normal(size=k - 1)
        z = np.concatenate([[np.linalg.norm(d) + rng.uniform(0.1, 1.0)], d])
        if kind == "rsoc":
            z = _to_rotated(z)
        w = rng.uniform(0.5, 2.0, size=k)
        cones.append(ConeBlock(kind, tuple(int(i) for i in idx), tuple(float(v) for v in w)))
        g[idx] -= w * z
    q = int(rng.integers(1, n + 1))
    G = rng.normal(size=(q, n))
    zl = rng.uniform(0.1, 1.0, size=q)
    g += G.T @ zl
    h = rng.normal(size=q)
    p = int(rng.integers(1, max(2, n // 2)))
    A = rng.normal(size=(p, n))
    yv = rng.normal(size=p)
    yv[-1] = 1.0
    A[-1] = -g - A[:-1].T @ yv[:-1]
    b = rng.normal(size=p)
    b[-1] = -(b[:-1] @ yv[:-1] + h @ zl) - rng.uniform(0.5, 2.0)
    # objective from a dual-feasible point so the only defect is primal infeasibility
    c = -A.T @ rng.normal(size=p) - G.T @ rng.uniform(0.0, 1.0, size=q)
    for blk in cones:
        k = blk.dim
        d = rng.normal(size=k - 1)
        zb = np.concatenate([[np.linalg.norm(d) + 0.5], d])
        if blk.kind == "rsoc":
            zb = _to_rotated(zb)
        c[list(blk.indices)] += blk.weights() * zb
    return ConeProgram(c, A, b, G, h, cones)
