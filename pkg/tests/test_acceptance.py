"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line."""
import itertools
import time

import numpy as np
import pytest

from iotprice.blocks import emitted_rows, power_problem
from iotprice.dc import dc_linearize_downlink, dc_linearize_uplink
from iotprice.economics import total_revenues
from iotprice.evaluation import complexity_delta, parse_grid, power_rows, rho_rows, sweep_lmax
from iotprice.link import Allocation, PriceVector, check_constraints
from iotprice.orchestrator import APPROACHES, run_approach, run_weight_one, weight_one_scalarization
from iotprice.scenario import generate_scenario
from conftest import degenerate_config, random_allocation, random_topology_config
from test_dc import grad_rel_error

pytestmark = pytest.mark.slow

SEEDS = range(10)
SWEEP = "lmax:0.1:1.0:5"


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def seeded_runs():
    runs = {}
    for seed in SEEDS:
        s = generate_scenario(seed=seed)
        for approach in APPROACHES:
            runs[seed, approach] = (s, run_approach(s, approach))
    return runs


@pytest.fixture(scope="session")
def lmax_sweep():
    t0 = time.perf_counter()
    res = sweep_lmax(generate_scenario(seed=0), parse_grid(SWEEP)[1])
    return res, time.perf_counter() - t0


def ordering_violations(res, attr, tol=1e-9):
    """Count broken links of the chain max-min >= weight-one >= conventional (Jain) or the revenue chain."""
    chain = {"jain": ("max_min", "weight_one", "conventional"),
             "total": ("weight_one", "max_min", "conventional")}[attr]
    bad = []
    for g in res.grid:
        vals = [getattr(res.cell(a, g), attr) for a in chain]
        for (a, x), (b, y) in zip(zip(chain, vals), zip(chain[1:], vals[1:])):
            if not x >= y - tol * max(1.0, abs(y)):
                bad.append(f"L_max={g:g}: {a} {x:.6g} < {b} {y:.6g}")
    return bad


def steps_monotone(trace, tol=1e-9):
    return all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def test_criterion_1_monotone_convergence(seeded_runs, capsys):
    bad = []
    for (seed, approach), (_, rep) in seeded_runs.items():
        traces = [rep.objective_trace]
        if approach == "conventional":
            traces += [p.objective_trace for p in rep.phases["players"].values()]
            traces.append(rep.phases["calibration"].objective_trace)
        if not all(steps_monotone(t) for t in traces):
            bad.append(f"seed {seed} {approach}: trace decreases")
        if not (rep.converged and rep.iterations <= 50):
            bad.append(f"seed {seed} {approach}: not converged in 50 iterations")
    report(capsys, 1, not bad, "; ".join(bad) or f"{len(seeded_runs)} runs monotone and converged")


def test_criterion_2_fairness_ordering(lmax_sweep, capsys):
    res, _ = lmax_sweep
    bad = ordering_violations(res, "jain")
    low = [f"L_max={g:g}: {res.cell('max_min', g).jain:.4f}" for g in res.grid
           if not res.cell("max_min", g).jain >= 0.9]
    ok = len(bad) <= 1 and not low and res.succeeded == len(res.rows)
    report(capsys, 2, ok, f"{len(bad)} ordering violations {bad}; max-min Jain below 0.9: {low}")


def test_criterion_3_revenue_ordering(lmax_sweep, capsys):
    res, _ = lmax_sweep
    bad = ordering_violations(res, "total")
    report(capsys, 3, len(bad) <= 1, f"{len(bad)} ordering violations {bad}")


def test_criterion_4_user_trend_and_inp_share(lmax_sweep, capsys):
    res, _ = lmax_sweep
    bad = []
    for a in APPROACHES:
        user = res.series(a, "phi_user")
        tol = 0.01 * (user.max() - user.min())
        if np.any(np.diff(user) > tol):
            bad.append(f"{a}: user total rises {user.round(1).tolist()}")
        top = res.cell(a, res.grid[-1])
        if not (top.phi_inp >= top.phi_isp and top.phi_inp >= top.phi_sens):
            bad.append(f"{a} at L_max={res.grid[-1]:g}: InP {top.phi_inp:.6g}, ISP {top.phi_isp:.6g}, "
                       f"sensors {top.phi_sens:.6g}")
    report(capsys, 4, not bad, "; ".join(bad) or "user totals fall and InPs lead at the largest cap")


def brute_force_weight_one(s, points=50):
    """Exhaustive search over binary ρ and α, a power grid and all price vertices.

    The objective is affine in the prices for a fixed allocation, so the best
    vertex is found by moving each price to the bound that raises it.
    """
    scal = weight_one_scalarization(s)
    lo, hi = PriceVector.bounds(s)
    grid_dl = np.r_[0.0, np.geomspace(1e-12, 1.0, points - 1)] * s.economics.power_caps[0]
    grid_ul = np.r_[0.0, np.geomspace(1e-12, 1.0, points - 1)] * s.economics.battery_caps[0]

    def value(a, x):
        return scal.value(total_revenues(s, a.with_prices(PriceVector.from_flat(s, x))).vector())

    best = -np.inf
    for r_dl, r_ul in itertools.product([0.0, 1.0], repeat=2):
        for p_dl, p_ul in itertools.product(grid_dl, grid_ul):
            a = Allocation.zeros(s)
            a.rho_dl[0, 0, 0], a.rho_ul[0, 0] = r_dl, r_ul
            a.p_dl[0, 0, 0], a.p_ul[0, 0] = p_dl * r_dl, p_ul * r_ul
            a.prices = PriceVector.from_flat(s, lo)
            if not check_constraints(s, a).feasible:
                continue
            for al in (0.0, 1.0):
                a.alpha[0, 0] = al
                base = value(a, lo)
                gain = 0.0
                for k in range(lo.size):
                    x = lo.copy()
                    x[k] = hi[k]
                    gain += max(0.0, value(a, x) - base)
                best = max(best, base + gain)
    return best


def test_criterion_5_oracle_equivalence(capsys):
    s = generate_scenario(degenerate_config(), 0)
    got = run_weight_one(s).objective
    best = brute_force_weight_one(s)
    gap = (best - got) / abs(best)
    report(capsys, 5, gap <= 0.05, f"algorithm {got:.6g}, brute force {best:.6g}, gap {100 * gap:.3f}%")


def test_criterion_6_gradient_suite(capsys):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        s = generate_scenario(random_topology_config(rng), seed)
        a = random_allocation(s, rng, density=0.7)
        worst = max(worst, grad_rel_error(dc_linearize_downlink(s, a), a.rho_dl > 0),
                    grad_rel_error(dc_linearize_uplink(s, a), a.rho_ul > 0))
    report(capsys, 6, worst < 1e-5, f"worst relative gradient error {worst:.2e} over 100 instances")


def test_criterion_7_constraint_audit(seeded_runs, capsys):
    silent = []
    flagged = 0
    for (seed, approach), (s, rep) in seeded_runs.items():
        a = rep.allocation
        audit = check_constraints(s, a)
        binary = all(np.all((x == 0) | (x == 1)) for x in (a.rho_dl, a.rho_ul, a.alpha))
        ok = audit.feasible and binary
        if not rep.feasible:
            flagged += 1
        elif not ok:
            silent.append(f"seed {seed} {approach}: {audit.summary()}")
    report(capsys, 7, not silent and len(seeded_runs) == 30,
           f"{len(seeded_runs)} runs, {flagged} flagged infeasible, {len(silent)} silent violations {silent}")


def test_criterion_8_complexity_table(capsys):
    t = generate_scenario(seed=0).topology
    cells = (complexity_delta("weight_one", "L", t) == 0,
             complexity_delta("max_min", "rho", t) == rho_rows(t) + 3,
             complexity_delta("conventional", "L", t) == t.num_inps + t.num_isps + 9)
    mismatched = []
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        s = generate_scenario(random_topology_config(rng), seed)
        a = random_allocation(s, rng, density=1.0)
        a.p_dl = np.where(a.rho_dl > 0, np.maximum(a.p_dl, 1e-3), 0.0)
        a.p_ul = np.where(a.rho_ul > 0, np.maximum(a.p_ul, 1e-4), 0.0)
        got, want = emitted_rows(power_problem(s, a)), power_rows(s.topology)
        if got != want:
            mismatched.append(f"topology {seed}: emitted {got}, predicted {want}")
    report(capsys, 8, all(cells) and not mismatched,
           f"spot cells {cells}; N_p mismatches {mismatched}")


def test_criterion_9_closed_economy(capsys):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        s = generate_scenario(random_topology_config(rng), seed)
        a = random_allocation(s, rng)
        base = total_revenues(s, a).sum_totals
        lo, hi = PriceVector.bounds(s)
        b = a.with_prices(PriceVector.from_flat(s, lo + rng.random(lo.size) * (hi - lo)))
        worst = max(worst, abs(total_revenues(s, b).sum_totals - base) / max(1.0, abs(base)))
    report(capsys, 9, worst <= 1e-9, f"worst relative change {worst:.2e} over 100 allocations")


def test_runtime_budget(seeded_runs, lmax_sweep, capsys):
    slowest = max(rep.runtime for _, rep in seeded_runs.values())
    _, sweep_time = lmax_sweep
    ok = slowest < 60.0 and sweep_time < 900.0
    with capsys.disabled():
        print(f"\nruntime budget: {'PASS' if ok else 'FAIL'} - slowest run {slowest:.1f} s, "
              f"5-point sweep {sweep_time:.0f} s")
    assert ok
