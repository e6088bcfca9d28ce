"""Network data model, case-file ingestion and graph utilities.

Voltage bounds and the slack voltage are held as *squared* magnitudes
(``v = |V|^2``).  Case files carry plain magnitudes; they are squared on
load and converted back on serialisation.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import CaseError, NotRadialError

AC = "ac"
DC = "dc"
INF = math.inf


# ---------------------------------------------------------------------------
# injection sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Only the rectangular bounds s_min <= s <= s_max apply."""


@dataclass(frozen=True)
class MagnitudeAngle:
    """|s| <= a and |angle(s)| <= phi, intersected with the box bounds."""

    a: float
    phi: float


@dataclass(frozen=True)
class DiscreteSet:
    """A finite list of admissible injections (not convex)."""

    points: tuple[complex, ...]


InjectionSet = Union[Box, MagnitudeAngle, DiscreteSet]


@dataclass(frozen=True)
class Bus:
    id: int
    s_min: complex = complex(-INF, -INF)
    s_max: complex = complex(INF, INF)
    v_min: float = 0.81
    v_max: float = 1.21
    injection_set: InjectionSet = field(default_factory=Box)

    @property
    def p_min(self) -> float:
        return self.s_min.real

    @property
    def p_max(self) -> float:
        return self.s_max.real

    @property
    def q_min(self) -> float:
        return self.s_min.imag

    @property
    def q_max(self) -> float:
        return self.s_max.imag

    def s_sup(self) -> complex:
        """Componentwise supremum of the injection set."""
        p_hi, q_hi = self.s_max.real, self.s_max.imag
        iset = self.injection_set
        if isinstance(iset, MagnitudeAngle):
            p_hi = min(p_hi, iset.a)
            q_hi = min(q_hi, iset.a * math.sin(min(iset.phi, math.pi / 2)))
        elif isinstance(iset, DiscreteSet):
            p_hi = min(p_hi, max(pt.real for pt in iset.points))
            q_hi = min(q_hi, max(pt.imag for pt in iset.points))
        return complex(p_hi, q_hi)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    z: complex
    theta_min: float = -INF
    theta_max: float = INF

    @property
    def r(self) -> float:
        return self.z.real

    @property
    def x(self) -> float:
        return self.z.imag

    @property
    def y(self) -> complex:
        return 1.0 / self.z

    @property
    def g(self) -> float:
        return (1.0 / self.z).real

    @property
    def b(self) -> float:
        # y = g - i b
        return -(1.0 / self.z).imag

    def other(self, bus: int) -> int:
        return self.to_bus if bus == self.from_bus else self.from_bus


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    kind: str = AC
    v0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate(self)

    @property
    def n(self) -> int:
        """Number of non-slack buses."""
        return len(self.buses) - 1

    @property
    def m(self) -> int:
        return len(self.lines)

    @property
    def radial(self) -> bool:
        return self.m == self.n

    @property
    def is_dc(self) -> bool:
        return self.kind == DC

    def incident(self) -> list[list[int]]:
        """Per-bus ascending list of incident line indices."""
        inc: list[list[int]] = [[] for _ in self.buses]
        for idx, ln in enumerate(self.lines):
            inc[ln.from_bus].append(idx)
            inc[ln.to_bus].append(idx)
        return inc

    def array(self, attr: str) -> np.ndarray:
        """Per-bus array of a Bus attribute (e.g. ``"v_min"``, ``"p_max"``)."""
        return np.array([getattr(bus, attr) for bus in self.buses])

    def line_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(ln, attr) for ln in self.lines])


def _validate(net: Network):
    if net.kind not in (AC, DC):
        raise CaseError(f"kind must be 'ac' or 'dc', got {net.kind!r}")
    if not net.buses:
        raise CaseError("network has no buses")
    ids = [bus.id for bus in net.buses]
    seen = set()
    for i in ids:
        if i in seen:
            raise CaseError(f"duplicate bus id {i}")
        seen.add(i)
    if ids != list(range(len(ids))):
        raise CaseError("bus ids must be 0..n in order")
    if not (math.isfinite(net.v0) and net.v0 > 0):
        raise CaseError("slack voltage v0 must be positive and finite")
    for bus in net.buses:
        if not bus.v_min > 0:
            raise CaseError(f"bus {bus.id}: nonpositive v_min")
        if bus.v_min > bus.v_max:
            raise CaseError(f"bus {bus.id}: v_min exceeds v_max")
        if bus.s_min.real > bus.s_max.real or bus.s_min.imag > bus.s_max.imag:
            raise CaseError(f"bus {bus.id}: s_min exceeds s_max")
        iset = bus.injection_set
        if isinstance(iset, MagnitudeAngle):
            if not (iset.a >= 0 and 0 <= iset.phi <= math.pi):
                raise CaseError(f"bus {bus.id}: magnitude_angle needs a >= 0 and 0 <= phi <= pi")
        elif isinstance(iset, DiscreteSet):
            if not iset.points:
                raise CaseError(f"bus {bus.id}: empty discrete injection set")
        if net.kind == DC and (bus.q_min != -INF or bus.q_max != INF):
            raise CaseError(f"bus {bus.id}: dc buses carry no reactive bounds")
        if net.kind == DC and not isinstance(iset, Box):
            raise CaseError(f"bus {bus.id}: dc buses take box injection sets only")
    slack = net.buses[0]
    if slack.v_min != net.v0 or slack.v_max != net.v0:
        raise CaseError("slack bus 0 must have v_min = v_max = v0")
    pairs = set()
    nb = len(net.buses)
    for idx, ln in enumerate(net.lines):
        if not (0 <= ln.from_bus < nb and 0 <= ln.to_bus < nb):
            raise CaseError(f"line {idx}: unknown bus")
        if ln.from_bus == ln.to_bus:
            raise CaseError(f"line {idx}: from equals to")
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in pairs:
            raise CaseError(f"line {idx}: duplicate line between buses {ln.from_bus} and {ln.to_bus}")
        pairs.add(key)
        if not (math.isfinite(ln.z.real) and math.isfinite(ln.z.imag)) or abs(ln.z) == 0:
            raise CaseError(f"line {idx}: impedance must be finite and nonzero")
        if ln.z.real < 0:
            raise CaseError(f"line {idx}: negative resistance")
        if net.kind == DC and (ln.z.imag != 0 or ln.z.real <= 0):
            raise CaseError(f"line {idx}: dc lines need x = 0 and r > 0")
        if ln.theta_min > ln.theta_max:
            raise CaseError(f"line {idx}: theta_min exceeds theta_max")
    # connectivity
    reach = {0}
    stack = [0]
    inc = net.incident()
    while stack:
        j = stack.pop()
        for idx in inc[j]:
            k = net.lines[idx].other(j)
            if k not in reach:
                reach.add(k)
                stack.append(k)
    if len(reach) != nb:
        raise CaseError("network graph is disconnected")


# ---------------------------------------------------------------------------
# case files
# ---------------------------------------------------------------------------

_TOP_KEYS = {"kind", "v0", "voltage_form", "buses", "lines"}
_BUS_KEYS = {"id", "v_min", "v_max", "p_min", "p_max", "q_min", "q_max", "injection_set"}
_LINE_KEYS = {"from", "to", "r", "x", "theta_min", "theta_max"}


def _num(value, default, where):
    if value is None:
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{where}: expected a number or null, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise CaseError(f"{where}: non-finite number (use null for unbounded)")
    return value


def _check_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise CaseError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise CaseError(f"{where}: unknown field(s) {sorted(extra)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise CaseError(f"{where}: missing field(s) {missing}")


def _parse_set(obj, where) -> InjectionSet:
    if not isinstance(obj, dict) or "type" not in obj:
        raise CaseError(f"{where}: injection_set needs a 'type'")
    kind = obj["type"]
    if kind == "box":
        _check_keys(obj, {"type"}, where)
        return Box()
    if kind == "magnitude_angle":
        _check_keys(obj, {"type", "a", "phi"}, where, ("a", "phi"))
        return MagnitudeAngle(_num(obj["a"], None, where + ".a"), _num(obj["phi"], None, where + ".phi"))
    if kind == "discrete":
        _check_keys(obj, {"type", "points"}, where, ("points",))
        pts = obj["points"]
        if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 2 for p in pts):
            raise CaseError(f"{where}.points: expected a list of [p, q] pairs")
        return DiscreteSet(tuple(complex(_num(p, None, where), _num(q, None, where)) for p, q in pts))
    raise CaseError(f"{where}: unknown injection_set type {kind!r}")


def load_case(data: bytes | str) -> Network:
    """Parse and validate a JSON case document."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CaseError(f"case file is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CaseError(f"malformed case document: {exc}") from None
    _check_keys(doc, _TOP_KEYS, "case", ("buses", "lines"))
    if "v0" not in doc or doc["v0"] is None:
        raise CaseError("case: missing slack v0")
    kind = doc.get("kind", AC)
    form = doc.get("voltage_form", "magnitude")
    if form not in ("magnitude", "squared"):
        raise CaseError("case.voltage_form must be 'magnitude' or 'squared'")
    sq = (lambda u: u * u) if form == "magnitude" else (lambda u: u)
    v0_mag = _num(doc["v0"], None, "case.v0")
    if v0_mag <= 0:
        raise CaseError("case.v0 must be positive")
    if not isinstance(doc["buses"], list) or not isinstance(doc["lines"], list):
        raise CaseError("case: buses and lines must be lists")
    buses = []
    seen = set()
    for pos, raw in enumerate(doc["buses"]):
        where = f"buses[{pos}]"
        _check_keys(raw, _BUS_KEYS, where, ("id",))
        bid = raw["id"]
        if isinstance(bid, bool) or not isinstance(bid, int):
            raise CaseError(f"{where}: bus id must be an integer")
        if bid in seen:
            raise CaseError(f"duplicate bus id {bid}")
        seen.add(bid)
        if bid == 0:
            for key in ("v_min", "v_max"):
                val = raw.get(key)
                if val is not None and _num(val, None, where) != v0_mag:
                    raise CaseError(f"{where}: slack {key} must equal v0")
            vmin_mag = vmax_mag = v0_mag
        else:
            if raw.get("v_min") is None:
                raise CaseError(f"{where}: nonpositive v_min (v_min is required)")
            vmin_mag = _num(raw.get("v_min"), None, where + ".v_min")
            vmax_mag = _num(raw.get("v_max"), INF, where + ".v_max")
            if vmin_mag <= 0:
                raise CaseError(f"{where}: nonpositive v_min")
        s_min = complex(_num(raw.get("p_min"), -INF, where), _num(raw.get("q_min"), -INF, where))
        s_max = complex(_num(raw.get("p_max"), INF, where), _num(raw.get("q_max"), INF, where))
        iset = _parse_set(raw["injection_set"], where + ".injection_set") if "injection_set" in raw else Box()
        buses.append(Bus(bid, s_min, s_max, sq(vmin_mag), sq(vmax_mag), iset))
    buses.sort(key=lambda b: b.id)
    lines = []
    for pos, raw in enumerate(doc["lines"]):
        where = f"lines[{pos}]"
        _check_keys(raw, _LINE_KEYS, where, ("from", "to", "r", "x"))
        for key in ("from", "to"):
            if isinstance(raw[key], bool) or not isinstance(raw[key], int):
                raise CaseError(f"{where}.{key}: bus reference must be an integer")
        lines.append(Line(raw["from"], raw["to"],
                          complex(_num(raw["r"], None, where + ".r"), _num(raw["x"], None, where + ".x")),
                          _num(raw.get("theta_min"), -INF, where), _num(raw.get("theta_max"), INF, where)))
    return Network(tuple(buses), tuple(lines), kind, sq(v0_mag))


def load_case_file(path) -> Network:
    try:
        with open(path, "rb") as fh:
            return load_case(fh.read())
    except OSError as exc:
        raise CaseError(f"cannot read case file: {exc}") from None


def _magnitude(v: float) -> float | None:
    """A float m with m*m == v, or None when no double squares exactly to v."""
    if math.isinf(v):
        return v
    m = math.sqrt(v)
    for cand in (m, math.nextafter(m, 0.0), math.nextafter(m, INF)):
        if cand * cand == v:
            return cand
    return None


def _out(v: float):
    return None if math.isinf(v) else v


def case_dict(net: Network) -> dict:
    """JSON-ready case; magnitudes when every voltage squares back exactly, else squared values."""
    values = [net.v0] + [v for bus in net.buses for v in (bus.v_min, bus.v_max)]
    mags = [_magnitude(v) for v in values]
    if any(m is None for m in mags):
        conv, form = (lambda v: v), "squared"
    else:
        conv, form = _magnitude, "magnitude"
    buses = []
    for bus in net.buses:
        entry = {
            "id": bus.id,
            "v_min": conv(bus.v_min),
            "v_max": _out(conv(bus.v_max)),
            "p_min": _out(bus.p_min),
            "p_max": _out(bus.p_max),
            "q_min": _out(bus.q_min),
            "q_max": _out(bus.q_max),
        }
        iset = bus.injection_set
        if isinstance(iset, MagnitudeAngle):
            entry["injection_set"] = {"type": "magnitude_angle", "a": iset.a, "phi": iset.phi}
        elif isinstance(iset, DiscreteSet):
            entry["injection_set"] = {"type": "discrete", "points": [[p.real, p.imag] for p in iset.points]}
        buses.append(entry)
    lines = []
    for ln in net.lines:
        entry = {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x}
        if not math.isinf(ln.theta_min):
            entry["theta_min"] = ln.theta_min
        if not math.isinf(ln.theta_max):
            entry["theta_max"] = ln.theta_max
        lines.append(entry)
    doc = {"kind": net.kind, "v0": conv(net.v0)}
    if form == "squared":
        doc["voltage_form"] = form
    doc.update(buses=buses, lines=lines)
    return doc


def serialize(net: Network) -> str:
    return json.dumps(case_dict(net), indent=2)


# ---------------------------------------------------------------------------
# graph utilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeWalk:
    """Breadth-first spanning tree rooted at bus 0."""

    tree: tuple[int, ...]
    cotree: tuple[int, ...]
    order: tuple[int, ...]          # buses in visiting order
    parent: tuple[int, ...]         # parent bus, -1 at the root
    parent_line: tuple[int, ...]    # line to parent, -1 at the root

    def path_to_root(self, bus: int) -> list[int]:
        path = []
        while self.parent[bus] >= 0:
            path.append(self.parent_line[bus])
            bus = self.parent[bus]
        return path


def tree_walk(net: Network, seed: int = 0) -> TreeWalk:
    """BFS from bus 0; incident lines scanned by ascending index (seed 0) or a seeded priority."""
    if seed == 0:
        rank = np.arange(net.m)
    else:
        rank = np.empty(net.m, dtype=int)
        rank[np.random.default_rng(seed).permutation(net.m)] = np.arange(net.m)
    inc = [sorted(lst, key=lambda l: rank[l]) for lst in net.incident()]
    nb = len(net.buses)
    parent = [-1] * nb
    parent_line = [-1] * nb
    seen = [False] * nb
    seen[0] = True
    order = [0]
    queue = deque([0])
    tree = []
    while queue:
        j = queue.popleft()
        for idx in inc[j]:
            k = net.lines[idx].other(j)
            if not seen[k]:
                seen[k] = True
                parent[k] = j
                parent_line[k] = idx
                tree.append(idx)
                order.append(k)
                queue.append(k)
    tree_set = set(tree)
    cotree = tuple(l for l in range(net.m) if l not in tree_set)
    return TreeWalk(tuple(sorted(tree)), cotree, tuple(order), tuple(parent), tuple(parent_line))


def spanning_tree(net: Network, seed: int = 0) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(tree_links, cotree_links), both as ascending line indices."""
    walk = tree_walk(net, seed)
    return walk.tree, walk.cotree


def fundamental_cycles(net: Network, seed: int = 0) -> list[list[tuple[int, int]]]:
    """One cycle per cotree line, as (line, sign) with sign +1 when traversed from -> to.

    Each cycle starts with its cotree line in its own direction and returns
    through the tree.
    """
    walk = tree_walk(net, seed)
    cycles = []
    for l in walk.cotree:
        ln = net.lines[l]
        a, b = ln.from_bus, ln.to_bus
        # tree path b -> a through their common ancestor
        up_b = [b]
        while walk.parent[up_b[-1]] >= 0:
            up_b.append(walk.parent[up_b[-1]])
        up_a = [a]
        while walk.parent[up_a[-1]] >= 0:
            up_a.append(walk.parent[up_a[-1]])
        anc = set(up_a)
        meet = next(k for k in up_b if k in anc)
        steps = [(l, +1)]
        node = b
        while node != meet:
            pl = walk.parent_line[node]
            steps.append((pl, +1 if net.lines[pl].from_bus == node else -1))
            node = walk.parent[node]
        down = []
        node = a
        while node != meet:
            pl = walk.parent_line[node]
            # traversed from parent towards a
            down.append((pl, +1 if net.lines[pl].to_bus == node else -1))
            node = walk.parent[node]
        steps.extend(reversed(down))
        cycles.append(steps)
    return cycles


def reduced_incidence(net: Network, tree_order=None) -> np.ndarray:
    """Line-by-bus incidence with the slack column removed.

    Row ``r`` corresponds to line ``tree_order[r]`` (all lines by index when
    omitted); column ``j - 1`` to bus ``j``.  Entry +1 where the line leaves the
    bus, -1 where it enters.
    """
    order = list(range(net.m)) if tree_order is None else list(tree_order)
    B = np.zeros((len(order), net.n))
    for r, l in enumerate(order):
        ln = net.lines[l]
        if ln.from_bus > 0:
            B[r, ln.from_bus - 1] = 1.0
        if ln.to_bus > 0:
            B[r, ln.to_bus - 1] = -1.0
    return B


@dataclass(frozen=True)
class Orientation:
    """Radial network seen from the slack bus."""

    towards_root: tuple[bool, ...]     # per line: True when from_bus is the downstream end
    parent: tuple[int, ...]            # per bus, -1 at the root
    parent_line: tuple[int, ...]       # per bus, -1 at the root
    path: tuple[tuple[int, ...], ...]  # per bus: lines from the bus up to the root
    subtree: tuple[frozenset, ...]     # per bus: buses at or below it
    order: tuple[int, ...]             # buses, root first (parents precede children)

    def downstream(self, line: int) -> int:
        """The bus of ``line`` farther from the root (the sending end towards the root)."""
        child = [j for j in range(len(self.parent)) if self.parent_line[j] == line]
        return child[0]

    @property
    def line_child(self) -> tuple[int, ...]:
        out = [-1] * len(self.towards_root)
        for j, pl in enumerate(self.parent_line):
            if pl >= 0:
                out[pl] = j
        return tuple(out)

    def leaves(self) -> list[int]:
        has_child = {p for p in self.parent if p >= 0}
        return [j for j in range(1, len(self.parent)) if j not in has_child]


def orient_to_root(net: Network) -> Orientation:
    if not net.radial:
        raise NotRadialError(f"network has {net.m} lines and {net.n} non-slack buses; not a tree")
    walk = tree_walk(net, 0)
    nb = len(net.buses)
    towards = [False] * net.m
    for j in range(1, nb):
        pl = walk.parent_line[j]
        towards[pl] = net.lines[pl].from_bus == j
    paths = tuple(tuple(walk.path_to_root(j)) for j in range(nb))
    sub = [set([j]) for j in range(nb)]
    for j in reversed(walk.order):
        p = walk.parent[j]
        if p >= 0:
            sub[p] |= sub[j]
    return Orientation(tuple(towards), walk.parent, walk.parent_line, paths,
                       tuple(frozenset(s) for s in sub), walk.order)


def reorient(net: Network, orient: Orientation | None = None) -> Network:
    """Copy of a radial network with every line pointing towards bus 0 (indices kept)."""
    orient = orient or orient_to_root(net)
    lines = []
    for ln, tw in zip(net.lines, orient.towards_root):
        if tw:
            lines.append(ln)
        else:
            lines.append(Line(ln.to_bus, ln.from_bus, ln.z, -ln.theta_max, -ln.theta_min))
    return Network(net.buses, tuple(lines), net.kind, net.v0)
