"""Block subproblems of the alternating scheme: prices, data selection, powers, codebooks.

Every block is described by an :class:`AtomModel`: each player's revenue as a
function of the block variables, written as

    const + lin·x + Σ_k coef_k log(a_k·x + b_k) + Σ_j mu_j min(d_j·x, 1)

With the other blocks fixed this form is exact.  A scalarization (weighted
sum, epigraph rows, utility floors) mixes the player rows; the resulting
functions are made concave by replacing every convex piece with its tangent
at the anchor, which gives a minorant that touches at the anchor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .economics import (dl_codebook_width, isp_membership, selection_caps, service_quality,
                        total_revenues, ul_codebook_width)
from .kernel import ConcaveModel, InnerResult, SolverOptions, SubproblemSpec, inner_solve, with_elastic
from .link import (Allocation, PriceVector, check_constraints, dl_effective_gain, evaluate_links,
                   same_inp_mask, ul_effective_gain)
from .scenario import Scenario

log = logging.getLogger(__name__)
LN2 = np.log(2.0)


class InfeasibleError(RuntimeError):
    """A subproblem or initialization has no feasible point; ``binding`` names the culprit."""

    def __init__(self, message: str, binding: str = ""):
        super().__init__(message)
        self.binding = binding


# ---------------------------------------------------------------------------
# player indexing and scalarizations
# ---------------------------------------------------------------------------

def player_slices(s: Scenario) -> dict:
    """Position of each player group in the stacked revenue vector [InP, sensors, ISP, users]."""
    t = s.topology
    sizes = (("inp", t.num_inps), ("sens", t.num_sensors), ("isp", t.num_isps), ("user", t.num_users))
    out, k = {}, 0
    for name, n in sizes:
        out[name] = slice(k, k + n)
        k += n
    return out


def num_players(s: Scenario) -> int:
    t = s.topology
    return t.num_inps + t.num_sensors + t.num_isps + t.num_users


def group_vector(s: Scenario, **groups) -> np.ndarray:
    """Stacked player vector with each named group filled by a scalar or an array."""
    w = np.zeros(num_players(s))
    sl = player_slices(s)
    for name, val in groups.items():
        w[sl[name]] = val
    return w


@dataclass
class Row:
    name: str
    coef: np.ndarray        # (P,) over stacked players
    t_coef: float = 0.0     # coefficient of the epigraph scalar t
    rhs: float = 0.0        # coef·Φ - t_coef·t >= rhs


@dataclass
class Scalarization:
    """Objective ``weights·Φ + t`` (t only when ``use_t``) with extra revenue rows."""
    weights: np.ndarray
    use_t: bool = False
    rows: list = field(default_factory=list)
    label: str = ""

    def best_t(self, phi: np.ndarray) -> float:
        vals = [(r.coef @ phi - r.rhs) / r.t_coef for r in self.rows if r.t_coef > 0]
        return min(vals) if vals else 0.0

    def value(self, phi: np.ndarray) -> float:
        v = float(self.weights @ phi)
        if self.use_t:
            v += self.best_t(phi)
        return v

    def row_slacks(self, phi: np.ndarray) -> list:
        """(name, slack) for rows without t; negative slack means a violated floor."""
        return [(r.name, float(r.coef @ phi - r.rhs)) for r in self.rows if r.t_coef == 0]

    def feasible(self, phi: np.ndarray, tol: float = 1e-9) -> bool:
        return all(sl >= -tol * max(1.0, abs(r.rhs)) for (_, sl), r in
                   zip(self.row_slacks(phi), [r for r in self.rows if r.t_coef == 0]))


# ---------------------------------------------------------------------------
# atom models
# ---------------------------------------------------------------------------

@dataclass
class AtomModel:
    const: np.ndarray              # (R,)
    lin: np.ndarray                # (R, n)
    log_A: sp.csr_matrix           # (K, n)
    log_b: np.ndarray              # (K,)
    log_coef: np.ndarray           # (R, K), natural-log units
    min_A: sp.csr_matrix           # (J, n)
    min_coef: np.ndarray           # (R, J)

    @property
    def n(self) -> int:
        return self.lin.shape[1]

    def value(self, x) -> np.ndarray:
        out = self.const + self.lin @ x
        if self.log_A.shape[0]:
            y = self.log_A @ x + self.log_b
            used = np.any(self.log_coef != 0, axis=0)
            out = out + self.log_coef[:, used] @ np.log(y[used])
        if self.min_A.shape[0]:
            out = out + self.min_coef @ np.minimum(self.min_A @ x, 1.0)
        return out

    def combine(self, E) -> "AtomModel":
        E = np.atleast_2d(E)
        return AtomModel(E @ self.const, E @ self.lin, self.log_A, self.log_b, E @ self.log_coef,
                         self.min_A, E @ self.min_coef)

    def stack(self, other: "AtomModel") -> "AtomModel":
        """Rows of ``self`` followed by rows of ``other`` (same atoms required)."""
        return AtomModel(np.r_[self.const, other.const], np.vstack([self.lin, other.lin]),
                         self.log_A, self.log_b, np.vstack([self.log_coef, other.log_coef]),
                         self.min_A, np.vstack([self.min_coef, other.min_coef]))

    def empty_rows(self) -> "AtomModel":
        return AtomModel(np.zeros(0), np.zeros((0, self.n)), self.log_A, self.log_b,
                         np.zeros((0, self.log_A.shape[0])), self.min_A, np.zeros((0, self.min_A.shape[0])))


@dataclass
class Minorant:
    """Concave minorant of every row of an AtomModel at an anchor."""
    c: np.ndarray         # (R,)
    lin: np.ndarray       # (R, n)
    log_w: np.ndarray     # (R, K) >= 0
    delta_w: np.ndarray   # (R, J) >= 0, weights on epigraph variables δ_j <= min(d_j·x, 1)

    def value(self, model: AtomModel, x) -> np.ndarray:
        """Value with every δ at its best feasible level min(d·x, 1)."""
        out = self.c + self.lin @ x
        if model.log_A.shape[0]:
            y = model.log_A @ x + model.log_b
            used = np.any(self.log_w > 0, axis=0)
            out = out + self.log_w[:, used] @ np.log(y[used])
        if model.min_A.shape[0]:
            out = out + self.delta_w @ np.minimum(model.min_A @ x, 1.0)
        return out


def minorize(model: AtomModel, x0) -> Minorant:
    """Tangent-replace the convex pieces (negative log coefficients, negative min coefficients)."""
    R = model.const.size
    c = model.const.copy()
    lin = model.lin.copy()
    K = model.log_A.shape[0]
    log_w = np.zeros((R, K))
    if K:
        y0 = model.log_A @ x0 + model.log_b
        neg = np.minimum(model.log_coef, 0.0)
        log_w = np.maximum(model.log_coef, 0.0)
        cols = np.where(np.any(neg < 0, axis=0))[0]
        if cols.size:
            Ay = sp.diags(1.0 / y0[cols]) @ model.log_A[cols]         # a_k / y0_k
            lin += (sp.csr_matrix(neg[:, cols]) @ Ay).toarray()
            c += neg[:, cols] @ (np.log(y0[cols]) - (Ay @ x0))
    J = model.min_A.shape[0]
    delta_w = np.zeros((R, J))
    if J:
        d0 = model.min_A @ x0
        mu = model.min_coef
        delta_w = np.maximum(mu, 0.0)
        neg = np.minimum(mu, 0.0)
        below = d0 < 1.0
        if np.any(below):
            lin += (sp.csr_matrix(neg[:, below]) @ model.min_A[below]).toarray()
        c += neg[:, ~below].sum(axis=1)
    return Minorant(c, lin, log_w, delta_w)


# ---------------------------------------------------------------------------
# subproblem assembly
# ---------------------------------------------------------------------------

@dataclass
class BlockProblem:
    """A block's exact model plus everything needed to emit a SubproblemSpec."""
    block: str
    players: AtomModel          # per-player revenue rows (R = P)
    qos: AtomModel              # rate requirement rows, >= 0
    qos_names: list
    G: sp.csr_matrix            # physical linear rows
    h: np.ndarray
    row_names: list
    lo: np.ndarray
    hi: np.ndarray
    x0: np.ndarray
    row_relax: float = 0.0      # extra relative slack granted to rows without t


@dataclass
class AssembledSpec:
    spec: SubproblemSpec
    n_x: int
    delta_idx: np.ndarray       # min-atom index of each δ variable
    has_t: bool
    objective: Minorant         # over x (δ at best level, t excluded)
    rows: Minorant              # scalarization rows then QoS rows
    row_t: np.ndarray
    row_rhs: np.ndarray
    obj_model: AtomModel
    row_model: AtomModel

    def best_t(self, x) -> float:
        """Largest epigraph t the surrogate rows allow at x (δ at best level)."""
        if not self.has_t:
            return 0.0
        vals = self.rows.value(self.row_model, x) - self.row_rhs
        on = self.row_t > 0
        return float(np.min(vals[on] / self.row_t[on])) if np.any(on) else 0.0

    def surrogate(self, x) -> float:
        """Minorant of the scalarized objective at x."""
        return float(self.objective.value(self.obj_model, x)[0]) + self.best_t(x)

    def rows_ok(self, x, tol=1e-9) -> bool:
        """Surrogate floor and rate rows (those without t) hold at x."""
        vals = self.rows.value(self.row_model, x) - self.row_rhs
        off = self.row_t == 0
        return bool(np.all(vals[off] >= -tol * np.maximum(1.0, np.abs(self.row_rhs[off]))))


def assemble(bp: BlockProblem, scal: Scalarization, opts: "StepOptions") -> AssembledSpec:
    x0 = bp.x0
    obj_model = bp.players.combine(scal.weights[None, :])
    if scal.rows:
        E = np.array([r.coef for r in scal.rows])
        row_model = bp.players.combine(E).stack(bp.qos)
        row_t = np.r_[[r.t_coef for r in scal.rows], np.zeros(bp.qos.const.size)]
        row_rhs = np.r_[[r.rhs for r in scal.rows], np.zeros(bp.qos.const.size)]
        names = [r.name for r in scal.rows] + list(bp.qos_names)
    else:
        row_model = bp.qos
        row_t = np.zeros(bp.qos.const.size)
        row_rhs = np.zeros(bp.qos.const.size)
        names = list(bp.qos_names)
    mo = minorize(obj_model, x0)
    mr = minorize(row_model, x0)

    n = bp.players.n
    J = bp.players.min_A.shape[0]
    need = np.where(np.any(mo.delta_w > 0, axis=0) | np.any(mr.delta_w > 0, axis=0))[0] if J else np.zeros(0, int)
    nd = need.size
    has_t = scal.use_t
    N = n + nd + (1 if has_t else 0)

    def widen(lin_x, dw):
        out = np.zeros((lin_x.shape[0], N))
        out[:, :n] = lin_x
        if nd:
            out[:, n:n + nd] = dw[:, need]
        return out

    obj_lin = widen(mo.lin, mo.delta_w)[0]
    if has_t:
        obj_lin[-1] = 1.0
    con_lin = widen(mr.lin, mr.delta_w)
    if has_t:
        con_lin[:, -1] = -row_t
    # rows without t get a relative slack so that rows tight at the anchor
    # still have an interior; the exact audit uses the same tolerance
    relax = max(opts.row_relax, bp.row_relax) * np.maximum(1.0, np.abs(row_rhs))
    con_c = mr.c - row_rhs + np.where(row_t > 0, 0.0, relax)
    K = bp.players.log_A.shape[0]
    atom_A = sp.hstack([bp.players.log_A, sp.csr_matrix((K, N - n))]).tocsr() if K else sp.csr_matrix((0, N))

    # physical rows, then δ_j <= d_j·x
    G = sp.hstack([bp.G, sp.csr_matrix((bp.G.shape[0], N - n))]).tocsr()
    h = bp.h
    row_names = list(bp.row_names)
    if nd:
        D = bp.players.min_A[need]
        Gd = sp.hstack([-D, sp.identity(nd), sp.csr_matrix((nd, N - n - nd))]).tocsr()
        G = sp.vstack([G, Gd]).tocsr()
        h = np.r_[h, np.zeros(nd)]
        row_names += [f"epigraph[{j}]" for j in need]
    lo = np.r_[bp.lo, np.full(nd, -np.inf), [-np.inf] if has_t else []]
    hi = np.r_[bp.hi, np.ones(nd), [np.inf] if has_t else []]

    # strictly interior auxiliaries where possible
    z0 = np.zeros(N)
    z0[:n] = x0
    if nd:
        dval = np.minimum(bp.players.min_A[need] @ x0, 1.0)
        z0[n:n + nd] = dval - opts.aux_margin * np.maximum(1.0, np.abs(dval))
    obj_val = float(obj_model.value(x0)[0])
    if has_t:
        vals = mr.value(row_model, x0) - row_rhs
        tv = vals[row_t > 0] / row_t[row_t > 0]
        t_now = float(tv.min()) if tv.size else 0.0
        z0[-1] = t_now - opts.aux_margin * max(1.0, abs(t_now))
        obj_val += t_now
    scale = max(1.0, abs(obj_val))
    spec = SubproblemSpec(
        block=bp.block, n=N,
        objective=ConcaveModel(lin=obj_lin, c0=float(mo.c[0]), weights=mo.log_w[0]),
        atom_A=atom_A, atom_b=bp.players.log_b,
        con_lin=con_lin, con_w=sp.csr_matrix(mr.log_w), con_c=con_c, con_names=names,
        G=G, h=h, row_names=row_names, lo=lo, hi=hi, x0=z0, scale=scale,
    )
    return AssembledSpec(spec, n, need, has_t, mo, mr, row_t, row_rhs, obj_model, row_model)


@dataclass
class StepOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    aux_margin: float = 1e-6
    elastic_penalty: float = 1e6
    sca_passes: int = 1
    price_tie_rtol: float = 1e-9
    codebook_qos_relax: float = 1e-2
    row_relax: float = 1e-9
    power_interior: float = 1e-10
    codebook_solver: SolverOptions = field(default_factory=lambda: SolverOptions(gap_tol=1e-6, max_total=300))
    codebook_interior: float = 1e-3


def _solve(asm: AssembledSpec, opts: StepOptions, solver: SolverOptions | None = None) -> tuple[InnerResult, bool]:
    """Solve, falling back to the elastic restoration problem on infeasibility."""
    solver = solver or opts.solver
    res = inner_solve(asm.spec, solver)
    if res.status != "infeasible":
        return res, False
    log.info("%s: infeasible at anchor (%s); elastic restoration", asm.spec.block, res.binding)
    el = with_elastic(asm.spec, opts.elastic_penalty)
    res2 = inner_solve(el, solver)
    res2.x = res2.x[:asm.spec.n]
    res2.binding = res.binding
    return res2, True


# ---------------------------------------------------------------------------
# price block
# ---------------------------------------------------------------------------

def price_model(s: Scenario, a: Allocation, links=None) -> AtomModel:
    """Each player's revenue as an affine function of the flat price vector."""
    t, ec = s.topology, s.economics
    links = links or evaluate_links(s, a)
    W = ec.subcarrier_bandwidth
    P = num_players(s)
    ps = player_slices(s)
    nL = PriceVector.size(s)
    sl = PriceVector.slices(s)
    G = np.zeros((P, nL))
    inp, sinp, vu = t.bs_inp, t.sensor_inp, t.user_isp
    I0, S0, V0, U0 = ps["inp"].start, ps["sens"].start, ps["isp"].start, ps["user"].start
    wdl, wul = dl_codebook_width(s), ul_codebook_width(s)

    tx_dl = (a.rho_dl * a.p_dl).sum(axis=2)                       # (B, U)
    bw_dl = (a.rho_dl * wdl[:, None, :]).sum(axis=2)               # (B, U)
    bw_ul = (a.rho_ul * wul).sum(axis=1)                           # (S,)
    rate_u = (links.rate_dl * wdl[:, None, :]).sum(axis=(0, 2))    # (U,)
    rate_s = links.rate_ul.sum(axis=1)                             # (S,)
    m_vs, _ = selection_caps(s, a.alpha)
    Q = service_quality(s, a)

    for b in range(t.num_bs):
        k = sl["power_bs"].start + b
        G[I0 + inp[b], k] += tx_dl[b].sum()
        for u in range(t.num_users):
            G[V0 + vu[u], k] -= tx_dl[b, u]
    for b in range(t.num_bs):
        k = sl["bw"].start + inp[b]
        G[I0 + inp[b], k] += W * bw_dl[b].sum()
        for u in range(t.num_users):
            G[V0 + vu[u], k] -= W * bw_dl[b, u]
    for sn in range(t.num_sensors):
        k = sl["bw"].start + sinp[sn]
        G[I0 + sinp[sn], k] += W * bw_ul[sn]
        G[S0 + sn, k] -= W * bw_ul[sn]
    V, S, U = t.num_isps, t.num_sensors, t.num_users
    for v in range(V):
        for sn in range(S):
            k = sl["sens_data"].start + v * S + sn
            G[S0 + sn, k] += m_vs[v, sn]
            G[V0 + v, k] -= m_vs[v, sn]
    for sn in range(S):
        k = sl["up_rate"].start + sn
        G[S0 + sn, k] += m_vs[:, sn].sum() * rate_s[sn]
        for v in range(V):
            G[V0 + v, k] -= m_vs[v, sn] * rate_s[sn]
    for u in range(U):
        k = sl["dn_rate"].start + vu[u]
        G[V0 + vu[u], k] += W * rate_u[u]
        G[U0 + u, k] -= W * rate_u[u]
        k = sl["reserv_user"].start + vu[u] * U + u
        G[V0 + vu[u], k] += Q[u]
        G[U0 + u, k] -= Q[u]

    phi = total_revenues(s, a, links).vector()
    const = phi - G @ a.prices.flatten()
    return AtomModel(const, G, sp.csr_matrix((0, nL)), np.zeros(0), np.zeros((P, 0)),
                     sp.csr_matrix((0, nL)), np.zeros((P, 0)))


def solve_price_step(s: Scenario, a: Allocation, scal: Scalarization, opts: StepOptions | None = None,
                     fixed: np.ndarray | None = None) -> PriceVector:
    """Optimal prices for fixed (ρ, p, α).

    Without revenue rows the problem separates: each price goes to the bound
    favoured by the sign of its net coefficient, ties going to the lower
    bound.  With rows (epigraph or floors) an LP is solved, then a second LP
    picks the smallest normalised prices among the optimal ones.
    ``fixed`` is a boolean mask of prices held at their current value.
    """
    opts = opts or StepOptions()
    m = price_model(s, a)
    lo, hi = PriceVector.bounds(s)
    cur = a.prices.flatten()
    if fixed is not None:
        lo = np.where(fixed, cur, lo)
        hi = np.where(fixed, cur, hi)
    c = scal.weights @ m.lin
    if not scal.rows:
        mag = np.abs(scal.weights[:, None] * m.lin).sum(axis=0)
        up = c > opts.price_tie_rtol * np.maximum(mag, 1e-300)
        return PriceVector.from_flat(s, np.where(up, hi, lo))
    return PriceVector.from_flat(s, _price_lp(m, scal, lo, hi, cur, opts))


def _price_lp(m: AtomModel, scal: Scalarization, lo, hi, cur, opts):
    nL = lo.size
    has_t = scal.use_t
    N = nL + (1 if has_t else 0)
    c = np.zeros(N)
    c[:nL] = -(scal.weights @ m.lin)
    if has_t:
        c[-1] = -1.0
    A, b = [], []
    for r in scal.rows:
        row = np.zeros(N)
        row[:nL] = -(r.coef @ m.lin)
        if has_t:
            row[-1] = r.t_coef
        A.append(row)
        b.append(r.coef @ m.const - r.rhs)
    A, b = np.array(A), np.array(b)
    bounds = list(zip(lo, hi)) + ([(None, None)] if has_t else [])
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        log.info("price LP status %s (%s); keeping current prices", res.status, res.message)
        return cur
    opt = res.fun
    # lexicographic tie-break: least normalised prices among optimal points
    span = np.where(hi > lo, hi - lo, 1.0)
    c2 = np.zeros(N)
    c2[:nL] = 1.0 / span
    A2 = np.vstack([A, c[None, :]])
    b2 = np.r_[b, opt + 1e-9 * max(1.0, abs(opt))]
    res2 = linprog(c2, A_ub=A2, b_ub=b2, bounds=bounds, method="highs")
    x = res2.x if res2.status == 0 else res.x
    return np.clip(x[:nL], lo, hi)


# ---------------------------------------------------------------------------
# data-selection block
# ---------------------------------------------------------------------------

def alpha_model(s: Scenario, a: Allocation, links=None) -> AtomModel:
    """Revenues as functions of α (flattened sensor-major, shape (S, U))."""
    t, ec = s.topology, s.economics
    links = links or evaluate_links(s, a)
    S, U, V = t.num_sensors, t.num_users, t.num_isps
    n = S * U
    P = num_players(s)
    ps = player_slices(s)
    S0, V0, U0 = ps["sens"].start, ps["isp"].start, ps["user"].start
    vu = t.user_isp
    L = a.prices
    q = ec.sensing_quality_gain
    K = isp_membership(s)

    # Q_u = q log(1 + Σ_s α[s,u] / S)
    rows, cols = [], []
    for u in range(U):
        for sn in range(S):
            rows.append(u)
            cols.append(sn * U + u)
    logA = sp.csr_matrix((np.full(len(rows), 1.0 / S), (rows, cols)), shape=(U, n))
    logb = np.ones(U)
    logc = np.zeros((P, U))
    for u in range(U):
        lru = L.reserv_user[vu[u], u]
        logc[V0 + vu[u], u] += q * lru
        logc[U0 + u, u] += q * (ec.user_reservation[u] - lru)

    # min atoms: m_vs (V*S) then m_s (S)
    rate_s = links.rate_ul.sum(axis=1)
    r2, c2, v2 = [], [], []
    for v in range(V):
        for sn in range(S):
            j = v * S + sn
            for u in np.where(K[v] > 0)[0]:
                r2.append(j)
                c2.append(sn * U + u)
                v2.append(1.0)
    for sn in range(S):
        j = V * S + sn
        for u in range(U):
            r2.append(j)
            c2.append(sn * U + u)
            v2.append(1.0)
    minA = sp.csr_matrix((v2, (r2, c2)), shape=(V * S + S, n))
    minc = np.zeros((P, V * S + S))
    for v in range(V):
        for sn in range(S):
            val = L.sens_data[v, sn] + rate_s[sn] * L.up_rate[sn]
            minc[S0 + sn, v * S + sn] += val
            minc[V0 + v, v * S + sn] -= val
    for sn in range(S):
        minc[S0 + sn, V * S + sn] -= ec.sensor_reservation[sn]

    model = AtomModel(np.zeros(P), np.zeros((P, n)), logA, logb, logc, minA, minc)
    phi = total_revenues(s, a, links).vector()
    model.const = phi - model.value(a.alpha.ravel())
    return model


def alpha_problem(s: Scenario, a: Allocation, links=None) -> BlockProblem:
    m = alpha_model(s, a, links)
    n = m.n
    return BlockProblem("alpha", m, m.empty_rows(), [], sp.csr_matrix((0, n)), np.zeros(0), [],
                        np.zeros(n), np.ones(n), _interior(a.alpha.ravel(), 0.0, 1.0))


def _interior(x, lo, hi, frac=1e-6):
    span = np.asarray(hi, float) - np.asarray(lo, float)
    return np.clip(x, lo + frac * span, hi - frac * span)


@dataclass
class AlphaStep:
    alpha: np.ndarray           # rounded (binary)
    relaxed: np.ndarray
    delta: np.ndarray           # (V, S) min{Σ_{u∈K_v} α, 1} at the relaxed optimum
    beta: np.ndarray            # (S,) min{Σ_u α, 1}
    result: InnerResult


def solve_alpha_step(s: Scenario, a: Allocation, scal: Scalarization, opts: StepOptions | None = None) -> AlphaStep:
    """Relaxed concave α problem with epigraph variables, then rounding at 1/2."""
    opts = opts or StepOptions()
    bp = alpha_problem(s, a)
    asm = assemble(bp, scal, opts)
    res, _ = _solve(asm, opts)
    t = s.topology
    relaxed = np.clip(res.x[:asm.n_x], 0.0, 1.0).reshape(t.num_sensors, t.num_users)
    delta, beta = selection_caps(s, relaxed)
    return AlphaStep((relaxed >= 0.5).astype(float), relaxed, delta, beta, res)


# ---------------------------------------------------------------------------
# rate blocks (power and codebook)
# ---------------------------------------------------------------------------

@dataclass
class RateIndex:
    dl: list          # [(b, u, c)] variable entries
    ul: list          # [(s, c)]
    factor_dl: np.ndarray   # multiplier turning each variable into ρ·p
    factor_ul: np.ndarray

    @property
    def n(self) -> int:
        return len(self.dl) + len(self.ul)


def rate_model(s: Scenario, a: Allocation, idx: RateIndex, block: str, links=None):
    """Revenues and rate requirements as functions of the block variables.

    ``block`` is ``"p"`` (variables are powers of active links, factor ρ) or
    ``"rho"`` (variables are codebook indicators, factor = candidate power).
    Returns (players model, QoS model, qos names, products z = factor·x at current).
    """
    t, ec = s.topology, s.economics
    links = links or evaluate_links(s, a)
    W = ec.subcarrier_bandwidth
    P = num_players(s)
    ps = player_slices(s)
    I0, S0, V0, U0 = ps["inp"].start, ps["sens"].start, ps["isp"].start, ps["user"].start
    inp, sb, sinp, vu = t.bs_inp, t.sensor_bs, t.sensor_inp, t.user_isp
    L = a.prices
    Gd, Gu = links.gain_dl, links.gain_ul
    wdl, wul = dl_codebook_width(s), ul_codebook_width(s)
    m_vs, _ = selection_caps(s, a.alpha)
    nd = len(idx.dl)
    n = idx.n
    lin = np.zeros((P, n))
    cpow = ec.power_supplier_price

    for k, (b, u, c) in enumerate(idx.dl):
        f = idx.factor_dl[k]
        lin[I0 + inp[b], k] += (L.power_bs[b] - cpow) * f
        lin[V0 + vu[u], k] -= L.power_bs[b] * f
        if block == "rho":
            bwv = L.bw[inp[b]] * W * wdl[b, c]
            lin[I0 + inp[b], k] += bwv
            lin[V0 + vu[u], k] -= bwv
    for k, (sn, c) in enumerate(idx.ul):
        f = idx.factor_ul[k]
        lin[S0 + sn, nd + k] -= cpow * f
        if block == "rho":
            bwv = L.bw[sinp[sn]] * W * wul[sn, c]
            lin[I0 + sinp[sn], nd + k] += bwv
            lin[S0 + sn, nd + k] -= bwv

    # atoms: for every link a pair (f: signal+interference+noise, g: interference+noise)
    same = same_inp_mask(s)
    by_code_dl = {}
    for k, (b, u, c) in enumerate(idx.dl):
        by_code_dl.setdefault(c, []).append(k)
    by_code_ul = {}
    for k, (sn, c) in enumerate(idx.ul):
        by_code_ul.setdefault(c, []).append(k)

    ar, ac, av, ab = [], [], [], []
    coef_cols = []     # (player row, atom, value)
    qos_terms = []     # (qos row, atom, value)
    U, S = t.num_users, t.num_sensors
    atom = 0
    for k, (b, u, c) in enumerate(idx.dl):
        interf = [(j, Gd[b2, u, c] * idx.factor_dl[j]) for j in by_code_dl[c]
                  for (b2, _, _) in [idx.dl[j]] if same[b, b2] > 0]
        sig = Gd[b, u, c] * idx.factor_dl[k]
        noise = s.channels.noise_dl[b, u, c]
        for j, g in [(k, sig)] + interf:       # f atom
            ar.append(atom); ac.append(j); av.append(g)
        ab.append(noise)
        for j, g in interf:                    # g atom
            ar.append(atom + 1); ac.append(j); av.append(g)
        ab.append(noise)
        kap = L.dn_rate[vu[u]] * W * wdl[b, c] / LN2
        coef_cols += [(V0 + vu[u], atom, kap), (V0 + vu[u], atom + 1, -kap),
                      (U0 + u, atom, -kap), (U0 + u, atom + 1, kap)]
        qos_terms += [(u, atom, 1.0 / LN2), (u, atom + 1, -1.0 / LN2)]
        atom += 2
    for k, (sn, c) in enumerate(idx.ul):
        b = sb[sn]
        col = nd + k
        interf = []
        for j in by_code_ul[c]:
            s2 = idx.ul[j][0]
            if sb[s2] != b and sinp[s2] == sinp[sn]:
                interf.append((nd + j, Gu[b, s2, c] * idx.factor_ul[j]))
        sig = Gu[b, sn, c] * idx.factor_ul[k]
        noise = s.channels.noise_ul[sn, c]
        for j, g in [(col, sig)] + interf:
            ar.append(atom); ac.append(j); av.append(g)
        ab.append(noise)
        for j, g in interf:
            ar.append(atom + 1); ac.append(j); av.append(g)
        ab.append(noise)
        kap_s = L.up_rate[sn] * m_vs[:, sn].sum() / LN2
        coef_cols += [(S0 + sn, atom, kap_s), (S0 + sn, atom + 1, -kap_s)]
        for v in range(t.num_isps):
            kv = L.up_rate[sn] * m_vs[v, sn] / LN2
            if kv:
                coef_cols += [(V0 + v, atom, -kv), (V0 + v, atom + 1, kv)]
        qos_terms += [(U + sn, atom, 1.0 / LN2), (U + sn, atom + 1, -1.0 / LN2)]
        atom += 2
    K = atom
    A = sp.csr_matrix((av, (ar, ac)), shape=(K, n))
    logb = np.array(ab)
    logc = np.zeros((P, K))
    for r, k, v in coef_cols:
        logc[r, k] += v
    empty_min = sp.csr_matrix((0, n))
    players = AtomModel(np.zeros(P), lin, A, logb, logc, empty_min, np.zeros((P, 0)))
    x_cur = current_values(a, idx, block)
    phi = total_revenues(s, a, links).vector()
    players.const = phi - players.value(x_cur)

    qc = np.zeros((U + S, K))
    for r, k, v in qos_terms:
        qc[r, k] += v
    need = np.r_[ec.min_dl_rate[vu], ec.min_ul_rate]
    qos = AtomModel(-need, np.zeros((U + S, n)), A, logb, qc, empty_min, np.zeros((U + S, 0)))
    names = [f"rate_dl[user {u}]" for u in range(U)] + [f"rate_ul[sensor {sn}]" for sn in range(S)]
    return players, qos, names


def current_values(a: Allocation, idx: RateIndex, block: str) -> np.ndarray:
    src_dl = a.p_dl if block == "p" else a.rho_dl
    src_ul = a.p_ul if block == "p" else a.rho_ul
    return np.r_[[src_dl[e] for e in idx.dl], [src_ul[e] for e in idx.ul]].astype(float)


def power_index(s: Scenario, a: Allocation) -> RateIndex:
    dl = [tuple(int(i) for i in e) for e in zip(*np.nonzero(a.rho_dl > 0))]
    ul = [tuple(int(i) for i in e) for e in zip(*np.nonzero(a.rho_ul > 0))]
    return RateIndex(dl, ul, np.array([a.rho_dl[e] for e in dl]), np.array([a.rho_ul[e] for e in ul]))


def power_problem(s: Scenario, a: Allocation, links=None, interior: float = 0.0) -> BlockProblem:
    """Powers of active links under the power and battery caps and the rate floors."""
    t, ec = s.topology, s.economics
    idx = power_index(s, a)
    players, qos, names = rate_model(s, a, idx, "p", links)
    n, nd = idx.n, len(idx.dl)
    r, c, v = [], [], []
    for k, (b, u, cc) in enumerate(idx.dl):
        r.append(b); c.append(k); v.append(idx.factor_dl[k])
    B = t.num_bs
    for k, (sn, cc) in enumerate(idx.ul):
        r.append(B + sn); c.append(nd + k); v.append(idx.factor_ul[k])
    G = sp.csr_matrix((v, (r, c)), shape=(B + t.num_sensors, n))
    h = np.r_[ec.power_caps, ec.battery_caps]
    row_names = [f"power_bs[bs {b}]" for b in range(B)] + [f"battery[sensor {sn}]" for sn in range(t.num_sensors)]
    caps = np.r_[[ec.power_caps[e[0]] for e in idx.dl], [ec.battery_caps[e[0]] for e in idx.ul]]
    bp = BlockProblem("p", players, qos, names, G, h, row_names, np.zeros(n), caps,
                      current_values(a, idx, "p") * (1.0 - interior))
    bp.index = idx
    return bp


def emitted_rows(bp: BlockProblem, scal: Scalarization | None = None) -> int:
    """Constraint rows of a rate subproblem: linear rows, rate floors and scalarization rows."""
    return bp.G.shape[0] + bp.qos.const.size + (len(scal.rows) if scal else 0)


@dataclass
class PowerStep:
    p_dl: np.ndarray
    p_ul: np.ndarray
    surrogate_gain: float
    restored: bool
    result: InnerResult | None


def solve_power_step(s: Scenario, a: Allocation, scal: Scalarization, opts: StepOptions | None = None) -> PowerStep:
    """One or more D.C. passes over the powers of the active links."""
    opts = opts or StepOptions()
    cur = a
    total_gain, restored, res = 0.0, False, None
    for _ in range(max(1, opts.sca_passes)):
        bp = power_problem(s, cur, interior=opts.power_interior)
        if bp.players.n == 0:
            break
        asm = assemble(bp, scal, opts)
        res, rest = _solve(asm, opts)
        x = np.clip(res.x[:asm.n_x], bp.lo, bp.hi)
        before = asm.surrogate(current_values(cur, bp.index, "p"))
        after = asm.surrogate(x)
        if not np.all(np.isfinite(x)) or after < before:
            break
        restored |= rest
        total_gain += after - before
        nxt = cur.copy()
        for k, e in enumerate(bp.index.dl):
            nxt.p_dl[e] = x[k]
        nd = len(bp.index.dl)
        for k, e in enumerate(bp.index.ul):
            nxt.p_ul[e] = x[nd + k]
        cur = nxt
        if after - before <= 1e-12 * max(1.0, abs(before)):
            break
    return PowerStep(cur.p_dl, cur.p_ul, total_gain, restored, res)


# ---------------------------------------------------------------------------
# codebook block
# ---------------------------------------------------------------------------

def candidate_powers(s: Scenario, a: Allocation):
    """Power each (BS, user, codebook) / (sensor, codebook) entry would use if switched on."""
    t, ec = s.topology, s.economics
    valid_dl, valid_ul = t.dl_valid(), t.ul_valid()
    pc_dl = np.where(a.rho_dl > 0, a.p_dl, 0.0)
    tx_user = (a.rho_dl * a.p_dl).sum(axis=(0, 2))
    home = np.argmax((a.rho_dl > 0).any(axis=2), axis=0)
    served = (a.rho_dl > 0).any(axis=(0, 2))
    load = (a.rho_dl > 0).any(axis=2).sum(axis=1)          # users per BS
    for b in range(t.num_bs):
        share = ec.power_caps[b] / max(1, load[b] + 1)
        for u in range(t.num_users):
            base = tx_user[u] if served[u] else share
            if served[u] and home[u] != b:
                base = min(base, share)
            for c in np.where(valid_dl[b])[0]:
                if a.rho_dl[b, u, c] == 0:
                    pc_dl[b, u, c] = max(base, 1e-9)
    tx_s = (a.rho_ul * a.p_ul).sum(axis=1)
    pc_ul = np.where(a.rho_ul > 0, a.p_ul, 0.0)
    for sn in range(t.num_sensors):
        base = tx_s[sn] if tx_s[sn] > 0 else 0.5 * ec.battery_caps[sn]
        for c in np.where(valid_ul[sn])[0]:
            if a.rho_ul[sn, c] == 0:
                pc_ul[sn, c] = base
    return pc_dl, pc_ul


def codebook_index(s: Scenario, a: Allocation) -> RateIndex:
    t = s.topology
    pc_dl, pc_ul = candidate_powers(s, a)
    vd, vu_ = t.dl_valid(), t.ul_valid()
    dl = [(b, u, c) for b in range(t.num_bs) for u in range(t.num_users) for c in np.where(vd[b])[0]]
    dl = [(int(b), int(u), int(c)) for b, u, c in dl]
    ul = [(int(sn), int(c)) for sn in range(t.num_sensors) for c in np.where(vu_[sn])[0]]
    return RateIndex(dl, ul, np.array([pc_dl[e] for e in dl]), np.array([pc_ul[e] for e in ul]))


def codebook_rows(s: Scenario, idx: RateIndex):
    """Association, reuse and cap rows over relaxed codebook indicators.

    Association rows are emitted literally, one per ordered pair of entries
    of the same user on different BSs, so the row count follows the
    closed-form constraint count exactly.
    """
    t, ec = s.topology, s.economics
    inp = t.bs_inp
    nd = len(idx.dl)
    r, c, v, h, names = [], [], [], [], []
    row = 0
    per_user = {}
    for k, (b, u, cc) in enumerate(idx.dl):
        per_user.setdefault(u, []).append(k)
    for fam, want_same in (("association_cross", False), ("association_same", True)):
        for u, ks in per_user.items():
            for x in range(len(ks)):
                bx = idx.dl[ks[x]][0]
                for y in range(len(ks)):
                    by = idx.dl[ks[y]][0]
                    if bx == by or (inp[bx] == inp[by]) != want_same:
                        continue
                    r += [row, row]; c += [ks[x], ks[y]]; v += [1.0, 1.0]
                    h.append(1.0)
                    names.append(f"{fam}[user {u}]")
                    row += 1
    K = t.reuse_limit
    q, qu = s.codebooks.dl_incidence, s.codebooks.ul_incidence
    for i in range(t.num_inps):
        for nsub in range(t.dl_subcarriers[i]):
            for k, (b, u, cc) in enumerate(idx.dl):
                if inp[b] == i and q[i, cc, nsub]:
                    r.append(row); c.append(k); v.append(1.0)
            h.append(K); names.append(f"reuse_dl[inp {i}, subcarrier {nsub}]"); row += 1
    sinp = t.sensor_inp
    for i in range(t.num_inps):
        for m in range(t.ul_subcarriers[i]):
            for k, (sn, cc) in enumerate(idx.ul):
                if sinp[sn] == i and qu[i, cc, m]:
                    r.append(row); c.append(nd + k); v.append(1.0)
            h.append(K); names.append(f"reuse_ul[inp {i}, subcarrier {m}]"); row += 1
    for b in range(t.num_bs):
        for k, (bb, u, cc) in enumerate(idx.dl):
            if bb == b:
                r.append(row); c.append(k); v.append(idx.factor_dl[k])
        h.append(ec.power_caps[b]); names.append(f"power_bs[bs {b}]"); row += 1
    for sn in range(t.num_sensors):
        for k, (ss, cc) in enumerate(idx.ul):
            if ss == sn:
                r.append(row); c.append(nd + k); v.append(idx.factor_ul[k])
        h.append(ec.battery_caps[sn]); names.append(f"battery[sensor {sn}]"); row += 1
    G = sp.csr_matrix((v, (r, c)), shape=(row, idx.n))
    return G, np.array(h, float), names


def codebook_problem(s: Scenario, a: Allocation, links=None, qos_relax: float = 0.0,
                     interior: float = 0.0) -> BlockProblem:
    """Relaxed codebook problem anchored at the incoming binary ρ.

    The anchor sits on the box and on tight association rows, so the start is
    pulled inside: x0 = (1 - interior)·ρ + interior²·(1 - ρ).  ``qos_relax``
    loosens the rate floors of the relaxation by that fraction; the rounded
    allocation is audited against the exact floors afterwards.
    """
    idx = codebook_index(s, a)
    players, qos, names = rate_model(s, a, idx, "rho", links)
    qos.const = qos.const * (1.0 - qos_relax)
    G, h, row_names = codebook_rows(s, idx)
    n = idx.n
    cur = current_values(a, idx, "rho")
    x0 = (1.0 - interior) * cur + interior ** 2 * (1.0 - cur)
    bp = BlockProblem("rho", players, qos, names, G, h, row_names, np.zeros(n), np.ones(n), x0,
                      row_relax=qos_relax)
    bp.index = idx
    return bp


@dataclass
class CodebookStep:
    relaxed_dl: np.ndarray
    relaxed_ul: np.ndarray
    rho_dl: np.ndarray
    rho_ul: np.ndarray
    p_dl: np.ndarray
    p_ul: np.ndarray
    changed: bool
    result: InnerResult | None
    note: str = ""


def round_codebooks(s: Scenario, a: Allocation, idx: RateIndex, x_relaxed):
    """Greedy rounding: one codebook per user and per sensor.

    Entries are visited in decreasing relaxed value (ties: lowest index).  An
    entry is taken if its user/sensor is still unassigned and the choice keeps
    reuse and the power caps.
    """
    t, ec = s.topology, s.economics
    nd = len(idx.dl)
    rho_dl = np.zeros_like(a.rho_dl)
    rho_ul = np.zeros_like(a.rho_ul)
    q, qu = s.codebooks.dl_incidence, s.codebooks.ul_incidence
    inp, sinp = t.bs_inp, t.sensor_inp
    use_dl = np.zeros((t.num_inps, t.max_dl_subcarriers))
    use_ul = np.zeros((t.num_inps, t.max_ul_subcarriers))
    pw = np.zeros(t.num_bs)
    order = sorted(range(nd), key=lambda k: (-x_relaxed[k], k))
    done = set()
    for k in order:
        b, u, c = idx.dl[k]
        if u in done:
            continue
        i = inp[b]
        if np.any(use_dl[i] + q[i, c] > t.reuse_limit):
            continue
        if pw[b] + idx.factor_dl[k] > ec.power_caps[b]:
            continue
        rho_dl[b, u, c] = 1.0
        use_dl[i] += q[i, c]
        pw[b] += idx.factor_dl[k]
        done.add(u)
    order = sorted(range(len(idx.ul)), key=lambda k: (-x_relaxed[nd + k], k))
    done = set()
    for k in order:
        sn, c = idx.ul[k]
        if sn in done:
            continue
        i = sinp[sn]
        if np.any(use_ul[i] + qu[i, c] > t.reuse_limit):
            continue
        rho_ul[sn, c] = 1.0
        use_ul[i] += qu[i, c]
        done.add(sn)
    return rho_dl, rho_ul


def solve_codebook_step(s: Scenario, a: Allocation, scal: Scalarization, opts: StepOptions | None = None) -> CodebookStep:
    """Relaxed D.C. codebook problem followed by greedy rounding and repair.

    The rounded allocation always satisfies association, reuse and caps.  If it breaks a rate
    floor, users and sensors whose rate fell short are returned to their
    incoming codebook; if that still fails the incoming ρ is kept.
    """
    opts = opts or StepOptions()
    bp = codebook_problem(s, a, qos_relax=opts.codebook_qos_relax, interior=opts.codebook_interior)
    idx = bp.index
    asm = assemble(bp, scal, opts)
    res, _ = _solve(asm, opts, opts.codebook_solver)
    x = np.clip(res.x[:asm.n_x], 0.0, 1.0)
    nd = len(idx.dl)
    rel_dl = np.zeros_like(a.rho_dl)
    rel_ul = np.zeros_like(a.rho_ul)
    for k, e in enumerate(idx.dl):
        rel_dl[e] = x[k]
    for k, e in enumerate(idx.ul):
        rel_ul[e] = x[nd + k]
    rho_dl, rho_ul = round_codebooks(s, a, idx, x)
    pc_dl, pc_ul = candidate_powers(s, a)

    def build(rd, ru):
        out = a.copy()
        out.rho_dl, out.rho_ul = rd.copy(), ru.copy()
        out.p_dl = np.where(rd > 0, pc_dl, 0.0)
        out.p_ul = np.where(ru > 0, pc_ul, 0.0)
        return out

    cand = build(rho_dl, rho_ul)
    served = rho_dl.any(axis=(0, 2)).all() and rho_ul.any(axis=1).all()
    rep = check_constraints(s, cand) if served else None
    note = ""
    if rep is None or not rep.feasible:
        # revert short users/sensors to their incoming codebooks
        rd, ru = rho_dl.copy(), rho_ul.copy()
        bad_u = {v.index[1] for v in rep.violations["rate_dl"]} if rep else set(range(s.topology.num_users))
        bad_s = {v.index[1] for v in rep.violations["rate_ul"]} if rep else set(range(s.topology.num_sensors))
        if rep is not None:
            bad_u |= set(np.where(~rho_dl.any(axis=(0, 2)))[0])
            bad_s |= set(np.where(~rho_ul.any(axis=1))[0])
        for u in bad_u:
            rd[:, u, :] = a.rho_dl[:, u, :]
        for sn in bad_s:
            ru[sn] = a.rho_ul[sn]
        cand = build(rd, ru)
        if check_constraints(s, cand).feasible:
            note = "partial revert"
        else:
            cand = a.copy()
            note = "rounding infeasible; incoming codebooks kept"
    changed = not (np.array_equal(cand.rho_dl, a.rho_dl) and np.array_equal(cand.rho_ul, a.rho_ul))
    return CodebookStep(rel_dl, rel_ul, cand.rho_dl, cand.rho_ul, cand.p_dl, cand.p_ul, changed, res, note)
