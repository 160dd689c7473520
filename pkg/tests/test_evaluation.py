import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iotprice.blocks import codebook_problem, emitted_rows, power_problem
from iotprice.evaluation import (alpha_rows, complexity_delta, complexity_table, ip_iterations, jain_index,
                                 parse_grid, power_rows, rho_rows, run_cell, sweep_lmax)
from iotprice.orchestrator import max_min_scalarization, run_weight_one
from iotprice.scenario import generate_scenario
from conftest import random_allocation, random_topology_config, small_config

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_jain_known_values():
    assert jain_index(1, 0, 0) == pytest.approx(1 / 3)
    assert jain_index(5, 5, 5) == pytest.approx(1.0)
    assert jain_index(1, 1, 0) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        jain_index(0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(x=st.tuples(finite, finite, finite).filter(lambda t: sum(v * v for v in t) > 1e-6),
       k=st.floats(1e-3, 1e3), perm=st.permutations([0, 1, 2]))
def test_jain_bounds_and_invariances(x, k, perm):
    j = jain_index(*x)
    assert 0.0 <= j <= 1.0 + 1e-12
    assert jain_index(*(k * v for v in x)) == pytest.approx(j, rel=1e-9)
    assert jain_index(*(x[i] for i in perm)) == pytest.approx(j, rel=1e-12)


def test_table_spot_cells(default_scenario):
    t = default_scenario.topology
    assert complexity_delta("weight_one", "L", t) == 0
    assert complexity_delta("max_min", "L", t) == 3
    assert complexity_delta("max_min", "rho", t) == rho_rows(t) + 3
    assert complexity_delta("max_min", "p", t) == power_rows(t) + 3
    assert complexity_delta("conventional", "L", t) == t.num_inps + t.num_isps + 9
    S, V, U = t.num_sensors, t.num_isps, t.num_users
    assert complexity_delta("conventional", "alpha", t) == S * (2 * V + U + 2) + V + 7
    assert alpha_rows(t) == S * (2 * V + U + 2)
    assert power_rows(t) == (2 + 2) + 2 * 12 + 8 == 36
    with pytest.raises(KeyError):
        complexity_delta("greedy", "p", t)


def test_complexity_table_shape(default_scenario):
    cells = complexity_table(default_scenario.topology)
    assert len(cells) == 12
    zero = [c for c in cells if c.approach == "weight_one" and c.block == "L"][0]
    assert zero.delta == 0 and zero.iterations == 0.0
    c = [c for c in cells if c.approach == "max_min" and c.block == "p"][0]
    assert c.iterations == pytest.approx(math.log(39 / 1e-8) / math.log(10))


def test_ip_iterations_grows_with_delta():
    assert ip_iterations(0) == 0.0
    assert ip_iterations(100) > ip_iterations(10) > 0


def test_predicted_rows_match_emitted_rows():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        s = generate_scenario(random_topology_config(rng), seed)
        a = random_allocation(s, rng, density=1.0)
        a.p_dl = np.where(a.rho_dl > 0, np.maximum(a.p_dl, 1e-3), 0.0)
        a.p_ul = np.where(a.rho_ul > 0, np.maximum(a.p_ul, 1e-4), 0.0)
        t = s.topology
        assert emitted_rows(power_problem(s, a)) == power_rows(t), seed
        assert emitted_rows(codebook_problem(s, a)) == rho_rows(t), seed
        mm = max_min_scalarization(s)
        assert emitted_rows(power_problem(s, a), mm) == complexity_delta("max_min", "p", t)
        assert emitted_rows(codebook_problem(s, a), mm) == complexity_delta("max_min", "rho", t)


@pytest.mark.parametrize("spec,points", [
    ("lmax:0.1:1.0:5", [0.1, 0.325, 0.55, 0.775, 1.0]),
    ("lmax:0.5:0.5:1", [0.5]),
])
def test_parse_grid(spec, points):
    axis, grid = parse_grid(spec)
    assert axis == "lmax" and grid == pytest.approx(points)


@pytest.mark.parametrize("spec", ["lmax:1:0:3", "lmax:0:1", "pmax:0:1:3", "lmax:a:1:3", "lmax:0:1:0"])
def test_parse_grid_rejects(spec):
    with pytest.raises(ValueError, match="malformed"):
        parse_grid(spec)


def test_sweep_rejects_bad_grids(small_scenario):
    with pytest.raises(ValueError):
        sweep_lmax(small_scenario, [])
    with pytest.raises(ValueError):
        sweep_lmax(small_scenario, [0.5, 0.2])


def test_single_point_sweep_equals_direct_run(small_scenario):
    res = sweep_lmax(small_scenario, [0.4], approaches=("weight_one",))
    row = res.cell("weight_one", 0.4)
    direct = run_weight_one(small_scenario.with_price_cap(0.4))
    assert row.status == "ok" and res.succeeded == 1
    assert row.total == direct.revenues.sum_totals
    assert row.phi_user == direct.totals["user"]
    assert row.iterations == direct.iterations
    assert res.series("weight_one", "total").tolist() == [row.total]


def test_failed_cell_is_recorded():
    s = generate_scenario(small_config(), 1)
    row = run_cell(s, "conventional", 0.5, minima=dict.fromkeys(
        ("isp_total", "user_total", "sens_total", "inp_total", "inp_each", "isp_each"), 1e12))
    assert row.status == "failed" and "floor" in row.message
    assert math.isnan(row.total)
