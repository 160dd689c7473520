"""Alternating block ascent and the three pricing approaches."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .blocks import (InfeasibleError, Row, Scalarization, StepOptions, group_vector, player_slices,
                     price_model, solve_alpha_step, solve_codebook_step, solve_power_step, solve_price_step)
from .economics import PlayerRevenues, total_revenues
from .link import Allocation, ConstraintReport, PriceVector, check_constraints, evaluate_links
from .scenario import Scenario

log = logging.getLogger(__name__)

APPROACHES = ("weight_one", "max_min", "conventional")
BLOCKS = ("L", "alpha", "p", "rho")


@dataclass
class RunOptions:
    max_iter: int = 50
    rel_tol: float = 1e-4
    blocks: tuple = BLOCKS
    initial_price_frac: float = 0.5
    floor_frac: float = 0.75          # utility floors keep x - floor_frac*|x| of the calibration value
    phase_two: str = "max_min"        # "max_min" or "weight_one"
    polish_alpha: bool = True
    guard_tol: float = 1e-9           # relative drop treated as round-off when a candidate is rejected
    step: StepOptions = field(default_factory=StepOptions)


@dataclass
class TraceEntry:
    iteration: int
    block: str
    objective: float
    accepted: bool
    note: str = ""
    totals: dict | None = None      # player-group totals, recorded for init and sweep entries


@dataclass
class RunReport:
    approach: str
    allocation: Allocation
    revenues: PlayerRevenues
    objective: float
    converged: bool
    iterations: int
    trace: list
    warnings: list
    constraints: ConstraintReport
    runtime: float
    phases: dict = field(default_factory=dict)     # conventional: per-player sub-reports and floors

    @property
    def objective_trace(self) -> list:
        """Objective after every completed sweep, starting with the initial value."""
        return [e.objective for e in self.trace if e.block in ("init", "sweep")]

    @property
    def totals(self) -> dict:
        return self.revenues.totals()

    @property
    def feasible(self) -> bool:
        return self.constraints.feasible


# ---------------------------------------------------------------------------
# scalarizations
# ---------------------------------------------------------------------------

def weight_one_scalarization(s: Scenario) -> Scalarization:
    w = s.economics.weights
    return Scalarization(group_vector(s, inp=w.inp, sens=w.sens, isp=w.isp, user=w.user), label="weight_one")


def max_min_scalarization(s: Scenario) -> Scalarization:
    """t + users, with t below the ISP, InP and sensor totals."""
    rows = [Row("isp_total", group_vector(s, isp=1.0), 1.0),
            Row("inp_total", group_vector(s, inp=1.0), 1.0),
            Row("sens_total", group_vector(s, sens=1.0), 1.0)]
    return Scalarization(group_vector(s, user=1.0), use_t=True, rows=rows, label="max_min")


def floor(x: float, frac: float) -> float:
    return x - frac * abs(x)


# ---------------------------------------------------------------------------
# initial point
# ---------------------------------------------------------------------------

INIT_POWER_SHARES = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99)   # fractions of the caps tried in turn


def initial_allocation(s: Scenario, prices: PriceVector | None = None) -> Allocation:
    """Feasible starting point.

    Users are visited in index order and attached to their nearest BS with
    the least-loaded codebook that keeps reuse within K; sensors do the same
    at their own BS.  Powers start at 1% of each cap split evenly, α = 1
    and prices sit at mid-box unless given.  While a rate floor fails, powers
    are scaled up towards the caps; if that is not enough, users are ranked
    by effective gain instead of distance.  Starting low matters: a price
    step can tie transmit power to a money transfer, after which the power
    step never lowers it again.
    """
    err = None
    for rank in ("distance", "gain"):
        try:
            return _initial_allocation(s, prices, rank)
        except InfeasibleError as exc:
            err = exc
    raise err


def _initial_allocation(s: Scenario, prices, rank: str) -> Allocation:
    t, ec = s.topology, s.economics
    a = Allocation.zeros(s, prices if prices is not None else PriceVector.filled(s, 0.5))
    inp = t.bs_inp
    q = s.codebooks.dl_incidence
    use = np.zeros((t.num_inps, t.max_dl_subcarriers))
    valid = t.dl_valid()
    if rank == "distance":
        score = s.channels.dl_distance
    else:
        score = -np.where(valid[:, None, :], evaluate_links(s, a).gain_dl, 0.0).max(axis=2)
    for u in range(t.num_users):
        picked = None
        for b in np.argsort(score[:, u], kind="stable"):
            i = inp[b]
            cands = [c for c in np.where(valid[b])[0] if not np.any(use[i] + q[i, c] > t.reuse_limit)]
            if cands:
                # avoid codebooks already active at other BSs of this InP (they interfere)
                clash = np.array([a.rho_dl[bb, :, :].sum(axis=0) for bb in t.bs_of_inp(i) if bb != b]).sum(axis=0) \
                    if len(t.bs_of_inp(i)) > 1 else np.zeros(a.rho_dl.shape[2])
                picked = (b, min(cands, key=lambda c: (clash[c], use[i] @ q[i, c], c)))
                break
        if picked is None:
            raise InfeasibleError(f"no codebook left for user {u}", "reuse_dl")
        b, c = picked
        a.rho_dl[b, u, c] = 1.0
        use[inp[b]] += q[inp[b], c]
    qu = s.codebooks.ul_incidence
    use = np.zeros((t.num_inps, t.max_ul_subcarriers))
    vul = t.ul_valid()
    sinp = t.sensor_inp
    for sn in range(t.num_sensors):
        i = sinp[sn]
        cands = [c for c in np.where(vul[sn])[0] if not np.any(use[i] + qu[i, c] > t.reuse_limit)]
        if not cands:
            raise InfeasibleError(f"no codebook left for sensor {sn}", "reuse_ul")
        c = min(cands, key=lambda c: (use[i] @ qu[i, c], c))
        a.rho_ul[sn, c] = 1.0
        use[i] += qu[i, c]
    a.alpha[:] = 1.0
    per_bs = a.rho_dl.sum(axis=(1, 2))
    for share in INIT_POWER_SHARES:
        for b in range(t.num_bs):
            if per_bs[b]:
                a.p_dl[b] = np.where(a.rho_dl[b] > 0, share * ec.power_caps[b] / per_bs[b], 0.0)
        a.p_ul = np.where(a.rho_ul > 0, share * ec.battery_caps[:, None], 0.0)
        rep = check_constraints(s, a)
        if rep.feasible:
            return a
    raise InfeasibleError(f"initial allocation infeasible: {rep.summary()}",
                          (rep.violated_families() or [""])[0])


# ---------------------------------------------------------------------------
# alternating loop
# ---------------------------------------------------------------------------

class _Evaluator:
    def __init__(self, s: Scenario, scal: Scalarization):
        self.s, self.scal = s, scal

    def __call__(self, a: Allocation):
        """(objective, feasible, revenues)."""
        links = evaluate_links(self.s, a)
        rev = total_revenues(self.s, a, links)
        phi = rev.vector()
        ok = check_constraints(self.s, a, links=links).feasible and self.scal.feasible(phi)
        return self.scal.value(phi), ok, rev


def polish_alpha(s: Scenario, a: Allocation, scal: Scalarization, max_passes: int = 4) -> Allocation:
    """Binary local search on α: single flips and whole-sensor toggles, first improvement."""
    links = evaluate_links(s, a)

    def score(alpha):
        b = a.copy()
        b.alpha = alpha
        phi = total_revenues(s, b, links).vector()
        return scal.value(phi) if scal.feasible(phi) else -np.inf

    alpha = a.alpha.copy()
    best = score(alpha)
    S, U = alpha.shape
    for _ in range(max_passes):
        improved = False
        moves = [("row", sn, None) for sn in range(S)] + [("one", sn, u) for sn in range(S) for u in range(U)]
        for kind, sn, u in moves:
            cand = alpha.copy()
            if kind == "one":
                cand[sn, u] = 1.0 - cand[sn, u]
            else:
                cand[sn] = 0.0 if cand[sn].any() else 1.0
            v = score(cand)
            if v > best + 1e-12 * max(1.0, abs(best)):
                alpha, best, improved = cand, v, True
        if not improved:
            break
    out = a.copy()
    out.alpha = alpha
    return out


def _block_candidate(s, a, name, scal, opts: RunOptions, fixed_prices):
    so = opts.step
    if name == "L":
        return a.with_prices(solve_price_step(s, a, scal, so, fixed=fixed_prices)), ""
    if name == "alpha":
        st = solve_alpha_step(s, a, scal, so)
        out = a.copy()
        out.alpha = st.alpha
        if opts.polish_alpha:
            out = polish_alpha(s, out, scal)
        return out, st.result.status
    if name == "p":
        st = solve_power_step(s, a, scal, so)
        out = a.copy()
        out.p_dl, out.p_ul = st.p_dl, st.p_ul
        return out, "restored" if st.restored else ""
    if name == "rho":
        st = solve_codebook_step(s, a, scal, so)
        out = a.copy()
        out.rho_dl, out.rho_ul, out.p_dl, out.p_ul = st.rho_dl, st.rho_ul, st.p_dl, st.p_ul
        return out, st.note
    raise ValueError(f"unknown block {name!r}")


def alternating_loop(s: Scenario, a0: Allocation, scal: Scalarization, opts: RunOptions | None = None,
                     fixed_prices: np.ndarray | None = None, label: str = ""):
    """Block ascent over ``opts.blocks`` with an exact monotonicity guard.

    A block's candidate replaces the incumbent only if it is feasible and its
    exact objective is not lower.  Returns (allocation, trace, warnings, converged, iterations).
    """
    opts = opts or RunOptions()
    ev = _Evaluator(s, scal)
    a = a0.copy()
    obj, ok, rev = ev(a)
    if not ok:
        raise InfeasibleError(f"{label or scal.label}: starting point is infeasible", "initial allocation")
    trace = [TraceEntry(0, "init", obj, True, totals=rev.totals())]
    warnings = []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        start = obj
        for name in opts.blocks:
            if name == "L" and fixed_prices is not None and np.all(fixed_prices):
                continue
            try:
                cand, note = _block_candidate(s, a, name, scal, opts, fixed_prices)
                val, ok, crev = ev(cand)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                val, ok, note, cand = -np.inf, False, f"error: {exc}", None
            accept = ok and val >= obj
            if accept:
                a, obj, rev = cand, val, crev
            elif ok and val >= obj - opts.guard_tol * max(1.0, abs(obj)):
                note = (note + " no gain").strip()      # solver round-off, not a decrease worth reporting
            else:
                why = "infeasible" if not ok else f"objective {val:.9g} < {obj:.9g}"
                warnings.append(f"{label or scal.label} iter {it} block {name}: candidate rejected ({why}) {note}".strip())
            trace.append(TraceEntry(it, name, obj, accept, note))
        trace.append(TraceEntry(it, "sweep", obj, True, totals=rev.totals()))
        # a fixed point is only declared after one full sweep that started from a swept state
        if it >= 2 and abs(obj - start) <= opts.rel_tol * max(1.0, abs(obj)):
            converged = True
            break
    return a, trace, warnings, converged, it


def _report(s, approach, a, scal, trace, warnings, converged, it, t0, phases=None) -> RunReport:
    links = evaluate_links(s, a)
    rev = total_revenues(s, a, links)
    return RunReport(approach, a, rev, scal.value(rev.vector()), converged, it, trace, warnings,
                     check_constraints(s, a, links=links), time.perf_counter() - t0, phases or {})


# ---------------------------------------------------------------------------
# approaches
# ---------------------------------------------------------------------------

def run_weight_one(s: Scenario, opts: RunOptions | None = None, a0: Allocation | None = None) -> RunReport:
    """Maximise the weighted sum of all player revenues."""
    opts = opts or RunOptions()
    t0 = time.perf_counter()
    scal = weight_one_scalarization(s)
    a0 = a0 or initial_allocation(s, PriceVector.filled(s, opts.initial_price_frac))
    a, tr, wr, conv, it = alternating_loop(s, a0, scal, opts, label="weight_one")
    return _report(s, "weight_one", a, scal, tr, wr, conv, it, t0)


def run_max_min(s: Scenario, opts: RunOptions | None = None, a0: Allocation | None = None) -> RunReport:
    """Maximise users' revenue plus the smallest of the ISP, InP and sensor totals."""
    opts = opts or RunOptions()
    t0 = time.perf_counter()
    scal = max_min_scalarization(s)
    a0 = a0 or initial_allocation(s, PriceVector.filled(s, opts.initial_price_frac))
    a, tr, wr, conv, it = alternating_loop(s, a0, scal, opts, label="max_min")
    return _report(s, "max_min", a, scal, tr, wr, conv, it, t0)


def price_owners(s: Scenario) -> dict:
    """Boolean masks over the flat price vector: which prices each player sets."""
    t = s.topology
    sl = PriceVector.slices(s)
    n = PriceVector.size(s)
    out = {}
    for i in range(t.num_inps):
        m = np.zeros(n, bool)
        for b in t.bs_of_inp(i):
            m[sl["power_bs"].start + b] = True
        m[sl["bw"].start + i] = True
        out[f"inp{i}"] = m
    V, S, U = t.num_isps, t.num_sensors, t.num_users
    for v in range(V):
        m = np.zeros(n, bool)
        m[sl["sens_data"].start + v * S: sl["sens_data"].start + (v + 1) * S] = True
        m[sl["dn_rate"].start + v] = True
        m[sl["reserv_user"].start + v * U: sl["reserv_user"].start + (v + 1) * U] = True
        out[f"isp{v}"] = m
    m = np.zeros(n, bool)
    m[sl["up_rate"]] = True
    out["sdo"] = m
    return out


def conventional_floors(s: Scenario, rev: PlayerRevenues, frac: float) -> dict:
    """Utility floors derived from a calibration run."""
    return {
        "isp_total": floor(rev.isp_total, frac),
        "user_total": floor(rev.user_total, frac),
        "sens_total": floor(rev.sens_total, frac),
        "inp_total": floor(rev.inp_total, frac),
        "inp_each": floor(float(rev.inp.min()), frac),
        "isp_each": floor(float(rev.isp.min()), frac),
    }


def player_scalarization(s: Scenario, player: str, minima: dict) -> Scalarization:
    """Own revenue, with floors on everybody else."""
    t = s.topology
    ps = player_slices(s)
    P = sum(x.stop - x.start for x in ps.values())
    rows = []

    def unit(group, k):
        e = np.zeros(P)
        e[ps[group].start + k] = 1.0
        return e

    if player.startswith("inp"):
        me = int(player[3:])
        w = unit("inp", me)
        rows += [Row(f"inp{i}_floor", unit("inp", i), 0.0, minima["inp_each"]) for i in range(t.num_inps) if i != me]
        rows += [Row(f"isp{v}_floor", unit("isp", v), 0.0, minima["isp_each"]) for v in range(t.num_isps)]
        rows.append(Row("sens_floor", group_vector(s, sens=1.0), 0.0, minima["sens_total"]))
    elif player.startswith("isp"):
        me = int(player[3:])
        w = unit("isp", me)
        rows += [Row(f"isp{v}_floor", unit("isp", v), 0.0, minima["isp_each"]) for v in range(t.num_isps) if v != me]
        rows += [Row(f"inp{i}_floor", unit("inp", i), 0.0, minima["inp_each"]) for i in range(t.num_inps)]
        rows.append(Row("sens_floor", group_vector(s, sens=1.0), 0.0, minima["sens_total"]))
    elif player == "sdo":
        w = group_vector(s, sens=1.0)
        rows += [Row(f"inp{i}_floor", unit("inp", i), 0.0, minima["inp_each"]) for i in range(t.num_inps)]
        rows += [Row(f"isp{v}_floor", unit("isp", v), 0.0, minima["isp_each"]) for v in range(t.num_isps)]
    else:
        raise ValueError(f"unknown player {player!r}")
    rows.append(Row("user_floor", group_vector(s, user=1.0), 0.0, minima["user_total"]))
    rows = [r for r in rows if r.rhs > -np.inf]       # a floor at -inf constrains nothing
    return Scalarization(w, rows=rows, label=player)


def _restore_floors(s: Scenario, a: Allocation, scal: Scalarization, free: np.ndarray) -> Allocation:
    """Move the player's own prices (allocation fixed) until every floor holds, or raise."""
    phi = total_revenues(s, a).vector()
    if scal.feasible(phi):
        return a
    m = price_model(s, a)
    lo, hi = PriceVector.bounds(s)
    x = a.prices.flatten()
    lo = np.where(free, lo, x)
    hi = np.where(free, hi, x)
    rows = [r for r in scal.rows if r.t_coef == 0]
    A = np.array([-(r.coef @ m.lin) for r in rows])
    b = np.array([r.coef @ m.const - r.rhs for r in rows])
    res = linprog(-(scal.weights @ m.lin), A_ub=A, b_ub=b, bounds=list(zip(lo, hi)), method="highs")
    if res.status != 0:
        worst = min(scal.row_slacks(phi), key=lambda kv: kv[1])
        raise InfeasibleError(f"{scal.label}: floor {worst[0]} cannot be met by its prices "
                              f"(short by {-worst[1]:.6g})", f"{scal.label}:{worst[0]}")
    return a.with_prices(PriceVector.from_flat(s, np.clip(res.x, lo, hi)))


def run_conventional(s: Scenario, opts: RunOptions | None = None, minima: dict | None = None) -> RunReport:
    """Each player sets its own prices against floors on the others, then a central allocation.

    Phase 0 is a weight-one calibration run whose revenues define the floors
    (unless ``minima`` is given).  In phase 1 every InP, every ISP and the
    sensing operator runs the alternating scheme on its own revenue with only
    its own prices free.  Phase 2 fixes the reported prices and reallocates
    (α, p, ρ) centrally.
    """
    opts = opts or RunOptions()
    t0 = time.perf_counter()
    calib = run_weight_one(s, opts)
    floors = dict(minima) if minima else conventional_floors(s, calib.revenues, opts.floor_frac)
    owners = price_owners(s)
    start = calib.allocation
    reported = start.prices.flatten()
    phases = {"calibration": calib, "floors": floors, "players": {}}
    warnings = list(calib.warnings)
    for player, mask in owners.items():
        scal = player_scalarization(s, player, floors)
        a0 = _restore_floors(s, start, scal, mask)
        a, tr, wr, conv, it = alternating_loop(s, a0, scal, opts, fixed_prices=~mask, label=player)
        phases["players"][player] = _report(s, player, a, scal, tr, wr, conv, it, t0)
        reported[mask] = a.prices.flatten()[mask]
        warnings += wr

    final_prices = PriceVector.from_flat(s, reported)
    scal2 = max_min_scalarization(s) if opts.phase_two == "max_min" else weight_one_scalarization(s)
    # the central unit runs the scheme from the standard starting point
    try:
        a0 = initial_allocation(s, final_prices)
    except InfeasibleError:
        a0 = start.with_prices(final_prices)
    n = PriceVector.size(s)
    a, tr, wr, conv, it = alternating_loop(s, a0, scal2, opts, fixed_prices=np.ones(n, bool),
                                           label="conventional")
    warnings += wr
    rep = _report(s, "conventional", a, scal2, tr, warnings, conv, it, t0, phases)
    return rep


def run_approach(s: Scenario, approach: str, opts: RunOptions | None = None, **kw) -> RunReport:
    if approach == "weight_one":
        return run_weight_one(s, opts)
    if approach == "max_min":
        return run_max_min(s, opts)
    if approach == "conventional":
        return run_conventional(s, opts, **kw)
    raise ValueError(f"unknown approach {approach!r}; expected one of {', '.join(APPROACHES)}")
