"""Second-order-cone program container and an incremental builder."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAXITER = "MaxIter"


@dataclass(frozen=True)
class ConeBlock:
    """Cone membership of ``u = coeffs * x[indices]``.

    ``kind == "soc"``:  u[0] >= ||u[1:]||
    ``kind == "rsoc"``: 2 u[0] u[1] >= ||u[2:]||^2 with u[0], u[1] >= 0
    """

    kind: str
    indices: tuple[int, ...]
    coeffs: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("soc", "rsoc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        minimum = 1 if self.kind == "soc" else 2
        if len(self.indices) < minimum:
            raise ValueError(f"{self.kind} block needs at least {minimum} entries")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("a variable appears twice within one cone block")
        if self.coeffs is not None:
            if len(self.coeffs) != len(self.indices):
                raise ValueError("coeffs and indices differ in length")
            if any(cf == 0.0 or not np.isfinite(cf) for cf in self.coeffs):
                raise ValueError("cone coefficients must be finite and nonzero")

    @property
    def dim(self) -> int:
        return len(self.indices)

    def weights(self) -> np.ndarray:
        if self.coeffs is None:
            return np.ones(self.dim)
        return np.asarray(self.coeffs, dtype=float)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.weights() * np.asarray(x)[list(self.indices)]


@dataclass
class ConeProgram:
    """minimize c'x + offset  s.t.  A x = b,  G x <= h,  blocks in their cones."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cones: list[ConeBlock] = field(default_factory=list)
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.A.shape[0] != self.b.size:
            raise ValueError("equality matrix and rhs disagree")
        if self.G.shape[0] != self.h.size:
            raise ValueError("inequality matrix and rhs disagree")
        for arr, label in ((self.c, "c"), (self.A, "A"), (self.b, "b"), (self.G, "G"), (self.h, "h")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entry in {label}")
        for blk in self.cones:
            if min(blk.indices) < 0 or max(blk.indices) >= n:
                raise ValueError(f"cone block {blk.name!r} indexes outside the variable range")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.offset

    def scaled_objective(self, factor: float) -> "ConeProgram":
        return ConeProgram(self.c * factor, self.A, self.b, self.G, self.h, list(self.cones), self.offset * factor)

    def dump(self) -> str:
        """Plain-text listing, one constraint per line.

        Format::

            vars <n>
            obj <c_0> ... <c_{n-1}> offset <offset>
            eq <i> : <j>:<a_ij> ... = <b_i>
            le <i> : <j>:<g_ij> ... <= <h_i>
            cone <kind> <name> : <j>:<coeff> ...
        """
        lines = [f"vars {self.n}",
                 "obj " + " ".join(f"{v:.17g}" for v in self.c) + f" offset {self.offset:.17g}"]
        for tag, M, rhs, op in (("eq", self.A, self.b, "="), ("le", self.G, self.h, "<=")):
            for i in range(M.shape[0]):
                nz = np.flatnonzero(M[i])
                terms = " ".join(f"{j}:{M[i, j]:.17g}" for j in nz)
                lines.append(f"{tag} {i} : {terms} {op} {rhs[i]:.17g}")
        for blk in self.cones:
            terms = " ".join(f"{j}:{w:.17g}" for j, w in zip(blk.indices, blk.weights()))
            lines.append(f"cone {blk.kind} {blk.name or '-'} : {terms}")
        return "\n".join(lines) + "\n"


class ProgramBuilder:
    """Accumulates named variable groups and sparse rows, then emits a ConeProgram."""

    def __init__(self):
        self._names: list[str] = []
        self.groups: dict[str, np.ndarray] = {}
        self._eq: list[tuple[dict[int, float], float]] = []
        self._le: list[tuple[dict[int, float], float]] = []
        self._cones: list[ConeBlock] = []
        self._obj: dict[int, float] = {}
        self.offset = 0.0

    @property
    def n(self) -> int:
        return len(self._names)

    def add_vars(self, group: str, count: int) -> np.ndarray:
        if group in self.groups:
            raise ValueError(f"variable group {group!r} already exists")
        start = self.n
        idx = np.arange(start, start + count)
        self._names.extend(f"{group}[{k}]" for k in range(count))
        self.groups[group] = idx
        return idx

    @staticmethod
    def _row(terms) -> dict[int, float]:
        row: dict[int, float] = {}
        for j, a in terms:
            if a != 0.0:
                row[int(j)] = row.get(int(j), 0.0) + float(a)
        return row

    def add_eq(self, terms, rhs: float):
        self._eq.append((self._row(terms), float(rhs)))

    def add_le(self, terms, rhs: float):
        """sum a_j x_j <= rhs; infinite rhs is silently dropped."""
        if np.isposinf(rhs):
            return
        if not np.isfinite(rhs):
            raise ValueError("inequality rhs must be finite or +inf")
        self._le.append((self._row(terms), float(rhs)))

    def add_bounds(self, j: int, lo: float, hi: float):
        if np.isfinite(lo) and np.isfinite(hi) and lo == hi:
            self.add_eq([(j, 1.0)], lo)
            return
        if np.isfinite(lo):
            self.add_le([(j, -1.0)], -lo)
        self.add_le([(j, 1.0)], hi)

    def add_cone(self, kind: str, indices, coeffs=None, name: str = ""):
        blk = ConeBlock(kind, tuple(int(i) for i in indices),
                        None if coeffs is None else tuple(float(c) for c in coeffs), name)
        self._cones.append(blk)
        return blk

    def add_objective(self, terms, constant: float = 0.0):
        for j, a in terms:
            self._obj[int(j)] = self._obj.get(int(j), 0.0) + float(a)
        self.offset += float(constant)

    def build(self) -> ConeProgram:
        n = self.n
        c = np.zeros(n)
        for j, a in self._obj.items():
            c[j] = a
        A = np.zeros((len(self._eq), n))
        b = np.zeros(len(self._eq))
        for i, (row, rhs) in enumerate(self._eq):
            for j, a in row.items():
                A[i, j] = a
            b[i] = rhs
        G = np.zeros((len(self._le), n))
        h = np.zeros(len(self._le))
        for i, (row, rhs) in enumerate(self._le):
            for j, a in row.items():
                G[i, j] = a
            h[i] = rhs
        return ConeProgram(c, A, b, G, h, list(self._cones), self.offset)
