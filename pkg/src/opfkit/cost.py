"""Cost descriptions shared by the builders, checkers and oracles.

Monotonicity flags are declared by the caller; ``validate`` only rejects
declarations that the coefficients plainly contradict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PER_BUS_ACTIVE = "per_bus_active"
LINE_LOSS = "line_loss"
LINEAR_W = "linear_W"


@dataclass(frozen=True)
class CostSpec:
    kind: str
    linear: tuple[float, ...] = ()          # per bus, per_bus_active
    quadratic: tuple[float, ...] = ()       # per bus, per_bus_active (>= 0)
    weights: tuple[float, ...] = ()         # per line, line_loss
    diag: tuple[float, ...] = ()            # per bus, linear_W
    offdiag: tuple[complex, ...] = ()       # per line, linear_W: C_jk for the canonical j < k entry
    strictly_increasing_in_ell: bool = False
    nondecreasing_in_s: bool = False
    strictly_increasing_slack: bool = False
    strictly_increasing_all_p: bool = False

    def __post_init__(self):
        if self.kind not in (PER_BUS_ACTIVE, LINE_LOSS, LINEAR_W):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        for name in ("linear", "quadratic", "weights", "diag"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "offdiag", tuple(complex(v) for v in self.offdiag))
        self._check_flags()

    # -- constructors ------------------------------------------------------
    @classmethod
    def active(cls, linear, quadratic=None, **flags) -> "CostSpec":
        linear = tuple(linear)
        quadratic = tuple(quadratic) if quadratic is not None else (0.0,) * len(linear)
        return cls(PER_BUS_ACTIVE, linear=linear, quadratic=quadratic, **flags)

    @classmethod
    def loss(cls, weights, **flags) -> "CostSpec":
        return cls(LINE_LOSS, weights=tuple(weights), **flags)

    @classmethod
    def resistive_loss(cls, net) -> "CostSpec":
        """Sum of r * ell: the active power lost in the lines."""
        w = tuple(ln.r for ln in net.lines)
        return cls(LINE_LOSS, weights=w, strictly_increasing_in_ell=all(v > 0 for v in w),
                   nondecreasing_in_s=True)

    @classmethod
    def linear_w(cls, diag, offdiag, **flags) -> "CostSpec":
        return cls(LINEAR_W, diag=tuple(diag), offdiag=tuple(offdiag), **flags)

    # -- checks ------------------------------------------------------------
    def _check_flags(self):
        if any(c < 0 for c in self.quadratic):
            raise ValueError("per-bus quadratic coefficients must be nonnegative (convex cost)")
        if any(w < 0 for w in self.weights):
            raise ValueError("line-loss weights must be nonnegative")
        if self.strictly_increasing_in_ell and (self.kind != LINE_LOSS or not all(w > 0 for w in self.weights)):
            raise ValueError("strictly_increasing_in_ell contradicted: needs line_loss with positive weights")
        if self.kind == PER_BUS_ACTIVE:
            if self.nondecreasing_in_s and any(c < 0 for c in self.linear):
                raise ValueError("nondecreasing_in_s contradicted by a negative linear coefficient")
            if self.strictly_increasing_slack and not (self.linear and self.linear[0] > 0):
                raise ValueError("strictly_increasing_slack contradicted: slack coefficient must be positive")
            if self.strictly_increasing_all_p and not all(c > 0 for c in self.linear):
                raise ValueError("strictly_increasing_all_p contradicted: every linear coefficient must be positive")
            if len(self.quadratic) != len(self.linear):
                raise ValueError("linear and quadratic coefficient lists differ in length")
        else:
            if self.strictly_increasing_slack or self.strictly_increasing_all_p:
                raise ValueError(f"{self.kind} cost cannot be strictly increasing in injections")

    def validate(self, net) -> "CostSpec":
        nb = len(net.buses)
        if self.kind == PER_BUS_ACTIVE and len(self.linear) != nb:
            raise ValueError(f"per_bus_active needs {nb} coefficients, got {len(self.linear)}")
        if self.kind == LINE_LOSS and len(self.weights) != net.m:
            raise ValueError(f"line_loss needs {net.m} weights, got {len(self.weights)}")
        if self.kind == LINEAR_W and (len(self.diag) != nb or len(self.offdiag) != net.m):
            raise ValueError("linear_W needs one diagonal coefficient per bus and one off-diagonal per line")
        return self

    @property
    def is_linear(self) -> bool:
        return not any(self.quadratic)

    # -- evaluation from physical quantities ----------------------------
    def value(self, p=None, ell=None, diag=None, offdiag=None) -> float:
        """Cost from per-bus active injections, per-line squared currents or W entries."""
        if self.kind == PER_BUS_ACTIVE:
            p = np.asarray(p, dtype=float)
            return float(np.asarray(self.linear) @ p + np.asarray(self.quadratic) @ (p * p))
        if self.kind == LINE_LOSS:
            return float(np.asarray(self.weights) @ np.asarray(ell, dtype=float))
        c = np.asarray(self.offdiag, dtype=complex)
        w = np.asarray(offdiag, dtype=complex)
        return float(np.asarray(self.diag) @ np.asarray(diag, dtype=float)
                     + 2.0 * np.sum(c.real * w.real + c.imag * w.imag))


def parse_cost(spec: str | None, net) -> CostSpec:
    """CLI cost strings: ``loss``, ``active:c0,c1,...``, ``slack`` (p0 only)."""
    if spec is None or spec == "loss":
        return CostSpec.resistive_loss(net).validate(net)
    if spec == "slack":
        lin = [1.0] + [0.0] * net.n
        return CostSpec.active(lin, nondecreasing_in_s=True, strictly_increasing_slack=True).validate(net)
    if spec.startswith("active:"):
        lin = [float(tok) for tok in spec[len("active:"):].split(",")]
        return CostSpec.active(lin, nondecreasing_in_s=all(c >= 0 for c in lin),
                               strictly_increasing_slack=bool(lin) and lin[0] > 0,
                               strictly_increasing_all_p=all(c > 0 for c in lin)).validate(net)
    raise ValueError(f"unrecognised cost spec {spec!r}; use loss, slack or active:c0,c1,...")
