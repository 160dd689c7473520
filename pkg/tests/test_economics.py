import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iotprice.economics import (GROUPS, TERMS, external_balance, inp_revenue, isp_revenue, selection_caps,
                                sensor_revenue, service_quality, total_revenues, user_revenue)
from iotprice.link import Allocation, PriceVector, evaluate_links
from iotprice.scenario import generate_scenario
from conftest import degenerate_config, random_allocation, random_topology_config


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_sum_of_totals_ignores_prices(seed):
    rng = np.random.default_rng(seed)
    s = generate_scenario(random_topology_config(rng), seed % 97)
    a = random_allocation(s, rng)
    base = total_revenues(s, a).sum_totals
    lo, hi = PriceVector.bounds(s)
    b = a.with_prices(PriceVector.from_flat(s, lo + rng.random(lo.size) * (hi - lo)))
    assert total_revenues(s, b).sum_totals == pytest.approx(base, rel=1e-9, abs=1e-6)
    assert external_balance(s, a) == pytest.approx(base, rel=1e-9, abs=1e-6)


def test_sum_of_totals_with_extreme_prices(rng):
    # far outside the box the transfers dwarf the total, so compare against the gross flow
    s = generate_scenario(seed=1)
    a = random_allocation(s, rng)
    base = total_revenues(s, a).sum_totals
    rev = total_revenues(s, a.with_prices(PriceVector.from_flat(s, rng.random(PriceVector.size(s)) * 1e7)))
    gross = sum(np.abs(v).sum() for v in rev.breakdown.values())
    assert abs(rev.sum_totals - base) <= 1e-13 * gross


def test_breakdown_recomputes_groups(default_scenario, rng):
    a = random_allocation(default_scenario, rng)
    rev = total_revenues(default_scenario, a)
    for g in GROUPS:
        assert np.allclose(getattr(rev, g), rev.recompute(g))
        for name, _ in TERMS[g]:
            assert f"{g}.{name}" in rev.breakdown


def test_per_player_accessors(default_scenario, rng):
    s = default_scenario
    a = random_allocation(s, rng)
    rev = total_revenues(s, a)
    assert inp_revenue(s, a, 1) == pytest.approx(rev.inp[1])
    assert sensor_revenue(s, a, 4) == pytest.approx(rev.sens[4])
    assert isp_revenue(s, a, 0) == pytest.approx(rev.isp[0])
    assert user_revenue(s, a, 7) == pytest.approx(rev.user[7])
    assert rev.vector().size == 2 + 12 + 2 + 8


def test_selection_caps_saturate(default_scenario):
    alpha = np.zeros((12, 8))
    alpha[0, :] = 1.0          # sensor 0 feeds every user of both ISPs
    alpha[1, 5] = 1.0
    per_isp, overall = selection_caps(default_scenario, alpha)
    assert per_isp[:, 0].tolist() == [1.0, 1.0]
    assert per_isp[:, 1].tolist() == [0.0, 1.0]
    assert overall[:3].tolist() == [1.0, 1.0, 0.0]


def test_service_quality(default_scenario):
    a = Allocation.zeros(default_scenario)
    a.alpha[:, 2] = 1.0
    Q = service_quality(default_scenario, a)
    assert Q[2] == pytest.approx(np.log(2.0))
    assert Q[0] == 0.0
    assert service_quality(default_scenario, a, 2) == pytest.approx(np.log(2.0))


def test_single_link_hand_computation():
    s = generate_scenario(degenerate_config(), 4)
    ec = s.economics
    a = Allocation.zeros(s)
    a.rho_dl[0, 0, 0] = a.rho_ul[0, 0] = a.alpha[0, 0] = 1.0
    a.p_dl[0, 0, 0], a.p_ul[0, 0] = 2.0, 0.05
    a.prices = PriceVector(power_bs=np.array([300.0]), bw=np.array([0.2]), sens_data=np.array([[700.0]]),
                           up_rate=np.array([0.3]), dn_rate=np.array([0.4]), reserv_user=np.array([[900.0]]))
    links = evaluate_links(s, a)
    W = ec.subcarrier_bandwidth
    r_dl = np.log2(1 + links.gain_dl[0, 0, 0] * 2.0 / s.channels.noise_dl[0, 0, 0])
    r_ul = np.log2(1 + links.gain_ul[0, 0, 0] * 0.05 / s.channels.noise_ul[0, 0])
    Q = np.log(2.0)
    reg = (ec.dl_band[0] + ec.ul_band[0]) * ec.regulator_bw_price[0]
    inp = 300 * 2 + 0.2 * W * 2 - 1000 * 2 - reg
    sens = 700 + r_ul * 0.3 - 2000 - 1000 * 0.05 - 0.2 * W
    isp = 0.4 * W * r_dl + 900 * Q - 300 * 2 - 0.2 * W - 700 - r_ul * 0.3
    user = Q * 1e5 - 0.4 * W * r_dl - 900 * Q
    rev = total_revenues(s, a)
    assert rev.inp[0] == pytest.approx(inp, rel=1e-12)
    assert rev.sens[0] == pytest.approx(sens, rel=1e-12)
    assert rev.isp[0] == pytest.approx(isp, rel=1e-12)
    assert rev.user[0] == pytest.approx(user, rel=1e-12)


def test_zero_allocation_pays_fixed_costs(default_scenario):
    rev = total_revenues(default_scenario, Allocation.zeros(default_scenario))
    ec = default_scenario.economics
    assert rev.inp_total == pytest.approx(-((ec.dl_band + ec.ul_band) * ec.regulator_bw_price).sum())
    assert rev.sens_total == 0.0 and rev.user_total == 0.0 and rev.isp_total == 0.0
