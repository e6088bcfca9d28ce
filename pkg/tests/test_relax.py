import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nets import INF, dc_bus, feeder, load_bus, random_tree_edges, slack, triangle, two_bus
from opfkit import bfm, oracle
from opfkit.bim import rank1_recover
from opfkit.conic import Settings, solve
from opfkit.cost import CostSpec
from opfkit.errors import BuildError, NotRadialError, SolveError
from opfkit.netmodel import AC, DC, Bus, DiscreteSet, Line, MagnitudeAngle, Network
from opfkit.relax import build_angle_socp, build_bfm_socp, build_bim_socp, extract


def solve_model(builder, net, cost):
    prog, vm = builder(net, cost)
    sol = solve(prog)
    assert sol.optimal, sol.status
    return sol, extract(sol, vm)


def test_two_bus_dimensions():
    net = two_bus(s1=-0.3 - 0.1j)
    prog, vm = build_bfm_socp(net, CostSpec.resistive_loss(net))
    assert prog.n == 3 * (net.m + net.n + 1)
    assert len(prog.cones) == 1 and prog.cones[0].kind == "rsoc"
    assert sorted(np.concatenate(list(vm.groups.values())).tolist()) == list(range(prog.n))


def test_two_bus_matches_closed_form():
    z, s1 = 0.02 + 0.04j, -0.6 - 0.25j
    net = two_bus(z, s1, fixed=True)
    cost = CostSpec.resistive_loss(net)
    sol, x = solve_model(build_bfm_socp, net, cost)
    hv = oracle.two_bus_bfm_curve(z, s1).roots[0]
    assert abs(sol.primal_objective - z.real * hv.ell) < 1e-8
    assert abs(x.v[1] - hv.v1) < 1e-7
    assert abs(bfm.relative_cone_gap(net, x)[0]) < 1e-7
    assert bfm.residuals(net, x).max_equality() < 1e-7


def test_binding_voltage_cap_leaves_cone_gap():
    z, s1 = 0.02 + 0.04j, -0.6 - 0.25j
    hv = oracle.two_bus_bfm_curve(z, s1).roots[0]
    net = two_bus(z, s1, fixed=True, v_min=0.01, v_max=hv.v1 - 0.02)
    _, x = solve_model(build_bfm_socp, net, CostSpec.resistive_loss(net))
    assert x.v[1] == pytest.approx(hv.v1 - 0.02, abs=1e-7)
    assert bfm.relative_cone_gap(net, x)[0] > 1e-3


@pytest.mark.parametrize("make", [
    lambda: two_bus(s1=-0.5 - 0.2j, fixed=True),
    lambda: triangle(),
    lambda: feeder([(1, 0), (2, 1), (3, 1)], [0.01 + 0.02j, 0.03 + 0.01j, 0.02 + 0.02j],
                   {i: dict(s_min=-0.3 - 0.1j, s_max=-0.3 - 0.1j) for i in (1, 2, 3)}),
])
def test_bim_and_bfm_agree(make):
    net = make()
    costs = [CostSpec.resistive_loss(net), CostSpec.active([1.0] + [0.2] * net.n),
             CostSpec.linear_w(np.linspace(1, 0.4, net.n + 1), [0.1 - 0.3j * (l + 1) for l in range(net.m)])]
    for cost in costs:
        a, _ = solve_model(build_bfm_socp, net, cost)
        b, _ = solve_model(build_bim_socp, net, cost)
        assert abs(a.primal_objective - b.primal_objective) < 1e-7 * max(1.0, abs(a.primal_objective))


def test_no_load_fixed_point():
    net = Network((slack(1.1), load_bus(1, v_min=0.5, v_max=2.0), load_bus(2, v_min=0.5, v_max=2.0)),
                  (Line(1, 0, 0.01 + 0.02j), Line(2, 1, 0.02 + 0.01j)), AC, 1.1)
    _, W = solve_model(build_bim_socp, net, CostSpec.resistive_loss(net))
    np.testing.assert_allclose(W.diag, 1.1, atol=1e-6)
    np.testing.assert_allclose(W.offdiag, 1.1, atol=1e-6)


def test_dc_triangle_is_rank_one():
    buses = (dc_bus(0, v_min=1.0, v_max=1.0), dc_bus(1, p_max=-0.2), dc_bus(2, p_max=-0.1))
    net = triangle((0.05, 0.08, 0.04), buses, DC)
    cost = CostSpec.linear_w([1.0, 1.0, 1.0], [-0.1, -0.1, -0.1])
    prog, vm = build_bim_socp(net, cost)
    sol = solve(prog)
    assert sol.optimal
    W = extract(sol, vm)
    assert np.all(W.offdiag.imag == 0) and np.all(W.offdiag.real >= -1e-9)
    assert np.max(np.abs(W.rank1_defect(net))) < 1e-6
    V = rank1_recover(net, W, tol=1e-6)
    ref = oracle.grid_solve(net, cost, resolution=(161, 1), polish=True)
    assert ref is not None and sol.primal_objective <= ref.value + 1e-6
    assert abs(sol.primal_objective - ref.value) < 1e-5
    assert np.all(np.abs(np.angle(V)) < 1e-6)


def test_dc_bfm_has_no_reactive_variables():
    buses = (dc_bus(0, v_min=1.0, v_max=1.0), dc_bus(1, p_max=-0.2))
    net = Network(buses, (Line(1, 0, 0.05),), DC)
    prog, vm = build_bfm_socp(net, CostSpec.resistive_loss(net))
    assert "Q" not in vm.groups and "q" not in vm.groups
    sol = solve(prog)
    x = extract(sol, vm)
    # hand root: v1 = 1 + 2 r p1 - r^2 ell, v1 ell = p1^2
    r, p1 = 0.05, -0.2
    ell = 2 * p1 ** 2 / ((1 + 2 * r * p1) + math.sqrt((1 + 2 * r * p1) ** 2 - 4 * r * r * p1 * p1))
    assert abs(x.ell[0] - ell) < 1e-8


def test_injection_set_handling():
    net = Network((slack(), Bus(1, v_min=0.81, v_max=1.21, injection_set=DiscreteSet((-0.1 + 0j, -0.2 + 0j)))),
                  (Line(1, 0, 0.01 + 0.02j),))
    with pytest.raises(BuildError, match="oracle"):
        build_bfm_socp(net, CostSpec.resistive_loss(net))
    net = Network((slack(), Bus(1, v_min=0.81, v_max=1.21, injection_set=MagnitudeAngle(0.5, 2.0))),
                  (Line(1, 0, 0.01 + 0.02j),))
    with pytest.raises(BuildError, match="not convex"):
        build_bfm_socp(net, CostSpec.resistive_loss(net))
    # generation bus limited to |s| <= 0.5 within 30 degrees; slack pays
    net = Network((slack(), Bus(1, v_min=0.81, v_max=1.21, injection_set=MagnitudeAngle(0.5, math.pi / 6))),
                  (Line(1, 0, 0.01 + 0.02j),))
    for builder in (build_bfm_socp, build_bim_socp):
        prog, vm = builder(net, CostSpec.active([1.0, 0.0]))
        sol = solve(prog)
        s1 = complex(sol.x[vm["p"][1]], sol.x[vm["q"][1]])
        assert abs(s1) <= 0.5 + 1e-7
        assert abs(np.angle(s1)) <= math.pi / 6 + 1e-6
        assert abs(s1) > 0.49


def test_extract_rejects_non_optimal():
    net = two_bus(s1=-5.0 - 5.0j, fixed=True, v_min=0.99, v_max=1.01)
    prog, vm = build_bfm_socp(net, CostSpec.resistive_loss(net))
    sol = solve(prog)
    assert not sol.optimal
    with pytest.raises(SolveError):
        extract(sol, vm)
    sol = solve(prog, Settings(max_iter=1))
    with pytest.raises(SolveError):
        extract(sol, vm)


def angle_net(specs, edges, p_bounds=None):
    """Unit-voltage tree; specs are (g, b, lo, hi) per line with y = g - i b."""
    nb = len(edges) + 1
    p_bounds = p_bounds or {}
    buses = [Bus(i, complex(p_bounds.get(i, (-INF, INF))[0], -INF), complex(p_bounds.get(i, (-INF, INF))[1], INF),
                 1.0, 1.0) for i in range(nb)]
    lines = [Line(a, b, 1.0 / complex(g, -bb), lo, hi) for (a, b), (g, bb, lo, hi) in zip(edges, specs)]
    return Network(tuple(buses), tuple(lines), AC, 1.0)


def test_angle_model_single_line():
    q = math.pi / 4
    net = angle_net([(1.0, 1.0, -q + 1e-9, q - 1e-9)], [(0, 1)])
    _, af = solve_model(build_angle_socp, net, CostSpec.active([1.0, 1.0]))
    assert abs(af.ellipse_residual(net)[0]) < 1e-6
    ref = oracle.line_angle_grid(1.0, 1.0, -q, q, 1.0, 1.0)
    assert abs(af.P_from[0] + af.P_to[0] - ref.value) < 1e-4


def test_angle_model_zero_interval():
    net = angle_net([(1.0, 2.0, 0.0, 0.0)], [(0, 1)])
    _, af = solve_model(build_angle_socp, net, CostSpec.active([1.0, 3.0]))
    assert abs(af.P_from[0]) < 1e-7 and abs(af.P_to[0]) < 1e-7


def test_angle_model_star_decomposes():
    specs = [(1.0, 2.0, -0.6, 0.4), (2.0, 1.0, -0.3, 0.2)]
    c = [1.0, 2.0, 0.5]
    net = angle_net(specs, [(0, 1), (0, 2)])
    _, af = solve_model(build_angle_socp, net, CostSpec.active(c))
    for l, (g, b, lo, hi) in enumerate(specs):
        ref = oracle.line_angle_grid(g, b, lo, hi, c[0], c[l + 1])
        assert abs(c[0] * af.P_from[l] + c[l + 1] * af.P_to[l] - ref.value) < 1e-4
        assert abs(af.ellipse_residual(net)[l]) < 1e-6
        assert lo - 1e-6 <= af.theta(net)[l] <= hi + 1e-6


def test_angle_model_preconditions():
    with pytest.raises(NotRadialError):
        build_angle_socp(triangle(), CostSpec.active([1.0, 1.0, 1.0]))
    net = angle_net([(1.0, -1.0, -0.1, 0.1)], [(0, 1)])
    with pytest.raises(BuildError):
        build_angle_socp(net, CostSpec.active([1.0, 1.0]))
    net = angle_net([(1.0, 1.0, -1.0, 0.1)], [(0, 1)])
    with pytest.warns(UserWarning):
        build_angle_socp(net, CostSpec.active([1.0, 1.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_relaxation_below_oracle_two_bus(seed):
    rng = np.random.default_rng(seed)
    z = complex(rng.uniform(0.01, 0.1), rng.uniform(0.01, 0.1))
    s1 = complex(-rng.uniform(0.05, 0.8), rng.uniform(-0.4, 0.4))
    net = two_bus(z, s1, v_min=0.81, v_max=1.21)
    cost = CostSpec.active([1.0, 0.0])
    prog, _ = build_bfm_socp(net, cost)
    sol = solve(prog)
    ref = oracle.grid_solve(net, cost, polish=True)
    if ref is None:
        return
    assert sol.optimal
    assert sol.primal_objective <= ref.value + 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_models_agree_on_random_trees(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    edges = random_tree_edges(rng, n)
    edges = [(a, b) if rng.random() < 0.5 else (b, a) for a, b in edges]
    zs = [complex(rng.uniform(0.005, 0.05), rng.uniform(0.005, 0.05)) for _ in edges]
    kw = {i: dict(s_max=complex(-rng.uniform(0, 0.2), rng.uniform(-0.1, 0.1)) if rng.random() < 0.7
                  else complex(0.3, 0.3)) for i in range(1, n + 1)}
    net = feeder(edges, zs, kw)
    cost = CostSpec.active(rng.uniform(0.1, 1.0, n + 1))
    a = solve(build_bfm_socp(net, cost)[0])
    b = solve(build_bim_socp(net, cost)[0])
    assert a.status == b.status
    if a.optimal:
        assert abs(a.primal_objective - b.primal_objective) < 1e-6 * max(1.0, abs(a.primal_objective))
