"""Bus injection model: partial matrices, QCQP matrices, rank-one recovery, flattening and the map to BFM.

Off-diagonal entries are stored once per line for the canonical order
j < k; the (k, j) entry is the conjugate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import principal
from .bfm import BfmState
from .cost import LINE_LOSS, LINEAR_W, PER_BUS_ACTIVE, CostSpec
from .errors import BuildError, NotRadialError, PreconditionError
from .netmodel import Network, fundamental_cycles, tree_walk


def canonical(net: Network, l: int) -> tuple[int, int]:
    ln = net.lines[l]
    return (ln.from_bus, ln.to_bus) if ln.from_bus < ln.to_bus else (ln.to_bus, ln.from_bus)


@dataclass(frozen=True, eq=False)
class PartialMatrix:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diag", np.asarray(self.diag, dtype=float).copy())
        object.__setattr__(self, "offdiag", np.asarray(self.offdiag, dtype=complex).copy())

    @classmethod
    def from_voltage(cls, net: Network, V) -> "PartialMatrix":
        V = np.asarray(V, dtype=complex)
        off = np.empty(net.m, dtype=complex)
        for l in range(net.m):
            j, k = canonical(net, l)
            off[l] = V[j] * np.conj(V[k])
        return cls(np.abs(V) ** 2, off)

    def entry(self, net: Network, l: int, a: int) -> complex:
        """W_ab on line l, read from bus a towards the other end."""
        j, _ = canonical(net, l)
        return self.offdiag[l] if a == j else np.conj(self.offdiag[l])

    def rank1_defect(self, net: Network) -> np.ndarray:
        """Per line (d_j d_k - |W_jk|^2) / max(1, d_j d_k); zero iff 2x2 rank one, >= 0 iff psd."""
        out = np.empty(net.m)
        for l in range(net.m):
            j, k = canonical(net, l)
            dd = self.diag[j] * self.diag[k]
            out[l] = (dd - abs(self.offdiag[l]) ** 2) / max(1.0, dd)
        return out

    def is_psd2(self, net: Network, tol: float = 0.0) -> bool:
        return bool(np.all(self.diag >= -tol) and np.all(self.rank1_defect(net) >= -tol))

    def to_json(self) -> dict:
        return {"diag": [float(v) for v in self.diag],
                "offdiag": [{"line": l, "re": float(w.real), "im": float(w.imag)} for l, w in enumerate(self.offdiag)]}

    @classmethod
    def from_json(cls, doc: dict) -> "PartialMatrix":
        off = [complex(e["re"], e["im"]) for e in sorted(doc["offdiag"], key=lambda e: e["line"])]
        return cls(doc["diag"], np.array(off, dtype=complex))


@dataclass(frozen=True, eq=False)
class QcqpMatrices:
    C0: np.ndarray
    Phi: np.ndarray   # (n+1, n+1, n+1): Phi[j] gives p_j = V^H Phi[j] V
    Psi: np.ndarray   # q_j = V^H Psi[j] V
    J: np.ndarray     # J[j] = e_j e_j^T
    quadratic_cost: bool = False


def admittance_matrix(net: Network) -> np.ndarray:
    nb = len(net.buses)
    Y = np.zeros((nb, nb), dtype=complex)
    for ln in net.lines:
        j, k, y = ln.from_bus, ln.to_bus, ln.y
        Y[j, j] += y
        Y[k, k] += y
        Y[j, k] -= y
        Y[k, j] -= y
    return Y


def cost_matrix(net: Network, cost: CostSpec, Phi=None) -> np.ndarray:
    """Hermitian C0 with tr(C0 W) equal to the linear part of the cost."""
    nb = len(net.buses)
    cost.validate(net)
    if cost.kind == PER_BUS_ACTIVE:
        if Phi is None:
            Phi = _phi_psi(net)[0]
        return np.einsum("j,jab->ab", np.asarray(cost.linear), Phi)
    C0 = np.zeros((nb, nb), dtype=complex)
    if cost.kind == LINE_LOSS:
        for w, ln in zip(cost.weights, net.lines):
            j, k = ln.from_bus, ln.to_bus
            c = w * abs(ln.y) ** 2
            C0[j, j] += c
            C0[k, k] += c
            C0[j, k] -= c
            C0[k, j] -= c
        return C0
    C0[np.arange(nb), np.arange(nb)] = cost.diag
    for l, c in enumerate(cost.offdiag):
        j, k = canonical(net, l)
        C0[j, k] += c
        C0[k, j] += np.conj(c)
    return C0


def _phi_psi(net: Network):
    Y = admittance_matrix(net)
    nb = len(net.buses)
    Phi = np.zeros((nb, nb, nb), dtype=complex)
    Psi = np.zeros((nb, nb, nb), dtype=complex)
    for j in range(nb):
        Yj = np.zeros((nb, nb), dtype=complex)
        Yj[j] = Y[j]
        Phi[j] = (Yj + Yj.conj().T) / 2
        Psi[j] = (Yj.conj().T - Yj) / 2j
    return Phi, Psi


def build_qcqp_matrices(net: Network, cost: CostSpec) -> QcqpMatrices:
    if net.is_dc:
        raise BuildError("dc networks use the real specialisation; build_qcqp_matrices is for ac networks")
    Phi, Psi = _phi_psi(net)
    nb = len(net.buses)
    J = np.zeros((nb, nb, nb))
    J[np.arange(nb), np.arange(nb), np.arange(nb)] = 1.0
    return QcqpMatrices(cost_matrix(net, cost, Phi), Phi, Psi, J, not cost.is_linear)


def trace_w(net: Network, C: np.ndarray, W: PartialMatrix) -> float:
    """tr(C W) for a C supported on the graph."""
    val = float(np.real(np.diag(C)) @ W.diag)
    for l in range(net.m):
        j, k = canonical(net, l)
        c, w = C[j, k], W.offdiag[l]
        val += 2.0 * (c.real * w.real + c.imag * w.imag)
    return val


def w_cycle_residual(net: Network, W: PartialMatrix, seed: int = 0) -> np.ndarray:
    """Per basis cycle, the principal value of the signed sum of off-diagonal angles."""
    out = []
    for cyc in fundamental_cycles(net, seed):
        total = 0.0
        for l, sign in cyc:
            ln = net.lines[l]
            a = ln.from_bus if sign > 0 else ln.to_bus
            w = W.entry(net, l, a)
            if w == 0:
                raise PreconditionError(f"zero off-diagonal on line {l}; cycle angle undefined")
            total += np.angle(w)
        out.append(principal(total))
    return np.array(out, dtype=float)


def rank1_recover(net: Network, W: PartialMatrix, tol: float = 1e-7, seed: int = 0) -> np.ndarray:
    """Voltages V with V V^H equal to W on the graph (angle of V_0 pinned at zero)."""
    defect = W.rank1_defect(net)
    if np.any(np.abs(defect) > tol):
        l = int(np.argmax(np.abs(defect)))
        raise PreconditionError(f"W is not 2x2 rank one on line {l} (relative defect {defect[l]:.3g})")
    cyc = w_cycle_residual(net, W, seed) if net.m > net.n else np.zeros(0)
    if np.any(np.abs(cyc) > tol):
        raise PreconditionError(f"W violates the cycle condition (residual {float(np.max(np.abs(cyc))):.3g})")
    walk = tree_walk(net, seed)
    ang = np.zeros(len(net.buses))
    for k in walk.order[1:]:
        j, l = walk.parent[k], walk.parent_line[k]
        ang[k] = ang[j] - np.angle(W.entry(net, l, j))
    return np.sqrt(np.maximum(W.diag, 0.0)) * np.exp(1j * ang)


def flatten_w(net: Network, W: PartialMatrix, alpha) -> PartialMatrix:
    """Push each off-diagonal along e^{-i(pi/2 - alpha)} until its 2x2 block is rank one.

    With b = Re(W_jk e^{i(pi/2 - alpha)}) and c = d_j d_k - |W_jk|^2 the step is
    r = sqrt(b^2 + c) - b; lines with c <= 0 are left unchanged.
    """
    if not net.radial:
        raise NotRadialError("flattening applies to tree networks only; use phaseshift for meshes")
    alpha = np.asarray(alpha, dtype=float)
    out = W.offdiag.copy()
    for l in range(net.m):
        j, k = canonical(net, l)
        w = W.offdiag[l]
        c = W.diag[j] * W.diag[k] - abs(w) ** 2
        if c <= 0:
            continue
        gamma = np.pi / 2 - alpha[l]
        b = (w * np.exp(1j * gamma)).real
        r = np.sqrt(b * b + c) - b
        out[l] = w + r * np.exp(-1j * gamma)
    return PartialMatrix(W.diag, out)


def bim_to_bfm(net: Network, W: PartialMatrix) -> BfmState:
    nb = len(net.buses)
    S = np.empty(net.m, dtype=complex)
    ell = np.empty(net.m)
    s = np.zeros(nb, dtype=complex)
    for l, ln in enumerate(net.lines):
        a, b = ln.from_bus, ln.to_bus
        yh = np.conj(ln.y)
        w_ab = W.entry(net, l, a)
        S[l] = yh * (W.diag[a] - w_ab)
        ell[l] = abs(ln.y) ** 2 * (W.diag[a] + W.diag[b] - 2.0 * w_ab.real)
        s[a] += yh * (W.diag[a] - w_ab)
        s[b] += yh * (W.diag[b] - np.conj(w_ab))
    # clip rounding below zero; a genuinely negative value means W was not psd
    if np.any(ell < -1e-12 * max(1.0, float(np.max(np.abs(ell), initial=0.0)))):
        raise PreconditionError("W is not 2x2 psd: negative squared current")
    return BfmState(S, np.maximum(ell, 0.0), W.diag, s)
