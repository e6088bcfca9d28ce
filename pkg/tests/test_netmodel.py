import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opfkit.errors import CaseError, NotRadialError
from opfkit.netmodel import (
    AC, DC, Box, DiscreteSet, Line, MagnitudeAngle, Network, fundamental_cycles, load_case,
    orient_to_root, reduced_incidence, reorient, serialize, spanning_tree,
)

from nets import feeder, load_bus, random_connected, slack, triangle, two_bus

INF = math.inf


def _doc(**over):
    doc = {
        "kind": "ac", "v0": 1.0,
        "buses": [{"id": 0}, {"id": 1, "v_min": 0.9, "v_max": 1.1,
                              "p_min": None, "p_max": None, "q_min": None, "q_max": None}],
        "lines": [{"from": 1, "to": 0, "r": 0.01, "x": 0.02}],
    }
    doc.update(over)
    return doc


def test_minimal_two_bus_case():
    net = load_case(json.dumps(_doc()).encode())
    assert (net.n, net.m, net.radial) == (1, 1, True)
    assert net.buses[1].v_min == pytest.approx(0.81)
    assert net.buses[1].p_max == INF and net.buses[1].q_min == -INF
    ln = net.lines[0]
    assert ln.y == pytest.approx(1 / (0.01 + 0.02j))
    assert ln.g - 1j * ln.b == pytest.approx(ln.y)


def test_duplicate_bus_id_rejected():
    doc = _doc()
    doc["buses"].append(dict(doc["buses"][1]))
    with pytest.raises(CaseError, match="duplicate bus id"):
        load_case(json.dumps(doc))


def test_triangle_is_not_radial():
    doc = _doc()
    doc["buses"].append({"id": 2, "v_min": 0.9, "v_max": 1.1})
    doc["lines"] += [{"from": 2, "to": 0, "r": 0.01, "x": 0.02}, {"from": 1, "to": 2, "r": 0.01, "x": 0.02}]
    net = load_case(json.dumps(doc))
    assert (net.m, net.n, net.radial) == (3, 2, False)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.pop("v0"), "missing slack v0"),
    (lambda d: d["buses"][1].update(v_min=0.0), "nonpositive v_min"),
    (lambda d: d["buses"][1].update(colour="red"), "unknown field"),
    (lambda d: d["lines"].clear(), "disconnected"),
    (lambda d: d["lines"].append({"from": 0, "to": 1, "r": 0.01, "x": 0.02}), "duplicate line"),
    (lambda d: d["buses"][0].update(v_min=0.95), "slack"),
    (lambda d: d["lines"][0].update(r=-0.01), "negative resistance"),
])
def test_validation_errors(mutate, msg):
    doc = _doc()
    mutate(doc)
    with pytest.raises(CaseError, match=msg):
        load_case(json.dumps(doc))


def test_malformed_document():
    with pytest.raises(CaseError, match="malformed"):
        load_case(b"{not json")


def test_dc_lines_must_be_resistive():
    doc = _doc(kind="dc")
    with pytest.raises(CaseError, match="dc lines"):
        load_case(json.dumps(doc))
    doc["lines"][0]["x"] = 0.0
    assert load_case(json.dumps(doc)).is_dc


def test_round_trip_with_sets_and_infinities():
    b1 = load_bus(1, s_min=complex(-0.5, -INF), s_max=complex(INF, 0.2), v_min=0.9 ** 2, v_max=INF)
    b2 = load_bus(2, s_max=complex(1.0, 1.0), injection_set=MagnitudeAngle(0.7, 0.3))
    b3 = load_bus(3, injection_set=DiscreteSet((0.1 + 0.2j, -0.3 + 0j)))
    net = Network((slack(1.05 ** 2), b1, b2, b3),
                  (Line(1, 0, 0.01 + 0.02j), Line(2, 1, 0.03 + 0.01j, -0.4, 0.5), Line(3, 0, 0.02 + 0.02j)),
                  AC, 1.05 ** 2)
    assert load_case(serialize(net)) == net


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.5, 1.5, allow_nan=False), min_size=1, max_size=4),
       st.floats(0.8, 1.2), st.integers(0, 10_000))
def test_round_trip_property(vmags, v0mag, seed):
    rng = np.random.default_rng(seed)
    n = len(vmags)
    buses = [slack(v0mag ** 2)]
    for i, vm in enumerate(vmags, start=1):
        lo = vm * vm
        hi = INF if rng.random() < 0.3 else lo * rng.uniform(1.0, 2.0)
        p = sorted(rng.normal(size=2))
        pmin = -INF if rng.random() < 0.3 else p[0]
        pmax = INF if rng.random() < 0.3 else p[1]
        buses.append(load_bus(i, s_min=complex(pmin, -INF), s_max=complex(pmax, rng.normal()), v_min=lo, v_max=hi))
    edges = random_connected(rng, n, int(rng.integers(0, 2)))
    lines = [Line(a, b, complex(rng.uniform(0, 0.1), rng.uniform(-0.1, 0.1)) + 0.01) for a, b in edges]
    net = Network(tuple(buses), tuple(lines), AC, v0mag ** 2)
    assert load_case(serialize(net)) == net


def test_round_trip_field_exact_for_squared_magnitudes():
    rng = np.random.default_rng(5)
    for _ in range(200):
        vm = rng.uniform(0.5, 1.5)
        v = vm * vm
        net = two_bus(v_min=v, v_max=v * 1.3)
        assert load_case(serialize(net)) == net


def test_spanning_tree_examples():
    star = feeder([(1, 0), (2, 1), (3, 1)], [0.01 + 0.02j] * 3)
    assert spanning_tree(star, 0) == ((0, 1, 2), ())
    tri = triangle()
    tree, cot = spanning_tree(tri, 0)
    assert len(tree) == 2 and len(cot) == 1
    assert spanning_tree(tri, 0) == spanning_tree(tri, 0)
    # ascending tie-break: bus 0 touches lines 0 and 1 first
    assert cot == (2,)
    for seed in range(1, 6):
        tree, cot = spanning_tree(tri, seed)
        assert len(cot) == 1 and len(tree) == 2


def test_reduced_incidence_examples():
    assert reduced_incidence(two_bus()).tolist() == [[1.0]]
    # path 2->1->0, rows (1->0), (2->1), columns (bus 1, bus 2)
    path = feeder([(1, 0), (2, 1)], [0.01j + 0.01, 0.01 + 0.01j])
    assert reduced_incidence(path).tolist() == [[1.0, 0.0], [-1.0, 1.0]]
    tri = Network(triangle().buses, (Line(1, 0, 0.01 + 0.01j), Line(2, 0, 0.01 + 0.01j), Line(1, 2, 0.01 + 0.01j)))
    assert reduced_incidence(tri, [2]).tolist() == [[1.0, -1.0]]


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 7), st.integers(0, 4), st.integers(0, 10_000))
def test_incidence_and_tree_properties(n, extra, seed):
    rng = np.random.default_rng(seed)
    edges = random_connected(rng, n, extra)
    buses = [slack()] + [load_bus(i) for i in range(1, n + 1)]
    net = Network(tuple(buses), tuple(Line(a, b, 0.01 + 0.02j) for a, b in edges))
    B = reduced_incidence(net)
    assert np.linalg.matrix_rank(B) == n
    tree, cot = spanning_tree(net, int(rng.integers(0, 5)))
    assert len(tree) == n and len(tree) + len(cot) == net.m
    assert sorted(tree + cot) == list(range(net.m))
    BT = reduced_incidence(net, tree)
    assert abs(abs(np.linalg.det(BT)) - 1.0) < 1e-12
    if net.radial:
        perm = rng.permutation(net.m)
        assert abs(abs(np.linalg.det(reduced_incidence(net, perm))) - 1.0) < 1e-12
    # every fundamental cycle closes: signed incidence rows sum to zero
    for cyc in fundamental_cycles(net):
        total = sum(sign * B[l] for l, sign in cyc)
        assert np.allclose(total, 0.0)


def test_orient_to_root():
    net = two_bus(orient=(0, 1))
    o = orient_to_root(net)
    assert o.towards_root == (False,)
    assert o.subtree[1] == frozenset({1}) and o.path[1] == (0,)
    flipped = reorient(net, o)
    assert (flipped.lines[0].from_bus, flipped.lines[0].to_bus) == (1, 0)
    star = feeder([(1, 0), (2, 0), (3, 0)], [0.01 + 0.01j] * 3)
    o = orient_to_root(star)
    assert all(len(o.path[j]) == 1 for j in (1, 2, 3))
    assert o.subtree[0] == frozenset({0, 1, 2, 3})
    with pytest.raises(NotRadialError):
        orient_to_root(triangle())
