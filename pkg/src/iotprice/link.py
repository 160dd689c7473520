"""SCMA link model: allocation state, SINR/rate evaluation and constraint audit."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .scenario import Scenario


# ---------------------------------------------------------------------------
# decision state
# ---------------------------------------------------------------------------

@dataclass
class PriceVector:
    power_bs: np.ndarray      # L^Power,BS_b, (B,)
    bw: np.ndarray            # L^BW_i, (I,)
    sens_data: np.ndarray     # L^Sens,Data_{v,s}, (V, S)
    up_rate: np.ndarray       # L^Up,Rate_s, (S,)
    dn_rate: np.ndarray       # L^Dn,Rate_v, (V,)
    reserv_user: np.ndarray   # L^Reserv,User_{v,u}, (V, U)

    FAMILIES = ("power_bs", "bw", "sens_data", "up_rate", "dn_rate", "reserv_user")
    # families whose box is SF * L_max instead of L_max
    SCALED = ("power_bs", "sens_data", "reserv_user")

    @classmethod
    def shapes(cls, s: Scenario) -> dict:
        t = s.topology
        V, S, U = t.num_isps, t.num_sensors, t.num_users
        return {"power_bs": (t.num_bs,), "bw": (t.num_inps,), "sens_data": (V, S),
                "up_rate": (S,), "dn_rate": (V,), "reserv_user": (V, U)}

    @classmethod
    def filled(cls, s: Scenario, frac: float = 0.0) -> "PriceVector":
        """Every price at ``frac`` of its upper bound."""
        lo, hi = cls.bounds(s)
        return cls.from_flat(s, lo + frac * (hi - lo))

    @classmethod
    def bounds(cls, s: Scenario) -> tuple[np.ndarray, np.ndarray]:
        ec = s.economics
        hi = []
        for name, shape in cls.shapes(s).items():
            cap = ec.price_cap * (ec.price_scale if name in cls.SCALED else 1.0)
            hi.append(np.full(int(np.prod(shape)), cap))
        hi = np.concatenate(hi)
        return np.zeros_like(hi), hi

    @classmethod
    def from_flat(cls, s: Scenario, x) -> "PriceVector":
        x = np.asarray(x, dtype=float)
        parts, k = {}, 0
        for name, shape in cls.shapes(s).items():
            n = int(np.prod(shape))
            parts[name] = x[k:k + n].reshape(shape).copy()
            k += n
        if k != x.size:
            raise ValueError(f"price vector has {x.size} entries, expected {k}")
        return cls(**parts)

    @classmethod
    def slices(cls, s: Scenario) -> dict:
        out, k = {}, 0
        for name, shape in cls.shapes(s).items():
            n = int(np.prod(shape))
            out[name] = slice(k, k + n)
            k += n
        return out

    @classmethod
    def size(cls, s: Scenario) -> int:
        return sum(int(np.prod(sh)) for sh in cls.shapes(s).values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, n)) for n in self.FAMILIES])

    def copy(self) -> "PriceVector":
        return PriceVector(*(np.array(getattr(self, n), dtype=float) for n in self.FAMILIES))

    def scaled(self, k: float) -> "PriceVector":
        return PriceVector(*(k * np.asarray(getattr(self, n), float) for n in self.FAMILIES))

    def violations(self, s: Scenario, tol: float = 1e-9) -> list:
        lo, hi = self.bounds(s)
        x = self.flatten()
        bad = np.where((x < lo - tol) | (x > hi + tol * np.maximum(1, hi)))[0]
        return [(int(k), float(x[k]), float(lo[k]), float(hi[k])) for k in bad]


@dataclass
class Allocation:
    rho_dl: np.ndarray     # ρ[b, u, c]
    p_dl: np.ndarray       # p[b, u, c] in W
    rho_ul: np.ndarray     # ρ'[s, c'] (sensor s always reports to its own BS)
    p_ul: np.ndarray       # p'[s, c'] in W
    alpha: np.ndarray      # α[s, u]
    prices: PriceVector
    relaxed: bool = False

    @classmethod
    def zeros(cls, s: Scenario, prices: PriceVector | None = None) -> "Allocation":
        t = s.topology
        B, U, S = t.num_bs, t.num_users, t.num_sensors
        return cls(
            rho_dl=np.zeros((B, U, t.max_dl_codebooks)),
            p_dl=np.zeros((B, U, t.max_dl_codebooks)),
            rho_ul=np.zeros((S, t.max_ul_codebooks)),
            p_ul=np.zeros((S, t.max_ul_codebooks)),
            alpha=np.zeros((S, U)),
            prices=prices if prices is not None else PriceVector.filled(s, 0.0),
        )

    def copy(self) -> "Allocation":
        return Allocation(self.rho_dl.copy(), self.p_dl.copy(), self.rho_ul.copy(),
                          self.p_ul.copy(), self.alpha.copy(), self.prices.copy(), self.relaxed)

    def with_prices(self, prices: PriceVector) -> "Allocation":
        out = self.copy()
        out.prices = prices.copy()
        return out

    def check_shapes(self, s: Scenario) -> None:
        t = s.topology
        B, U, S = t.num_bs, t.num_users, t.num_sensors
        want = {"rho_dl": (B, U, t.max_dl_codebooks), "p_dl": (B, U, t.max_dl_codebooks),
                "rho_ul": (S, t.max_ul_codebooks), "p_ul": (S, t.max_ul_codebooks),
                "alpha": (S, U)}
        for name, shape in want.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ValueError(f"allocation.{name} has shape {got}, expected {shape}")
        for name, shape in PriceVector.shapes(s).items():
            got = np.shape(getattr(self.prices, name))
            if got != shape:
                raise ValueError(f"allocation.prices.{name} has shape {got}, expected {shape}")


# ---------------------------------------------------------------------------
# gains and SINR
# ---------------------------------------------------------------------------

def dl_effective_gain(s: Scenario) -> np.ndarray:
    """G[b, u, c] = Σ_n q[c, n] λ[b, n, c] |h[b, u, n]|²."""
    t = s.topology
    q = s.codebooks.dl_incidence[t.bs_inp]            # (B, C, N)
    lam = s.codebooks.dl_split                         # (B, N, C)
    return np.einsum("bcn,bnc,bun->buc", q, lam, s.channels.dl_gain)


def ul_effective_gain(s: Scenario) -> np.ndarray:
    """G'[b, s, c'] = Σ_m q'[c', m] λ'[b(s), m, c'] |h'[b, s, m]|² (gain of sensor s at BS b)."""
    t = s.topology
    sb = t.sensor_bs
    q = s.codebooks.ul_incidence[t.sensor_inp]        # (S, C', M)
    lam = s.codebooks.ul_split[sb]                     # (S, M, C')
    return np.einsum("scm,smc,bsm->bsc", q, lam, s.channels.ul_gain)


def same_inp_mask(s: Scenario) -> np.ndarray:
    """(B, B) mask of distinct BS pairs belonging to the same InP."""
    inp = s.topology.bs_inp
    m = (inp[:, None] == inp[None, :]).astype(float)
    np.fill_diagonal(m, 0.0)
    return m


def ul_interferer_mask(s: Scenario) -> np.ndarray:
    """(B, S) mask: sensor s' interferes at BS b (same InP, different cell)."""
    t = s.topology
    inp, sb = t.bs_inp, t.sensor_bs
    return ((inp[:, None] == inp[sb][None, :]) & (np.arange(t.num_bs)[:, None] != sb[None, :])).astype(float)


@dataclass
class LinkState:
    gain_dl: np.ndarray      # G[b, u, c]
    gain_ul: np.ndarray      # G'[b, s, c']
    signal_dl: np.ndarray    # ρ G p (at the serving BS)
    interf_dl: np.ndarray
    sinr_dl: np.ndarray
    rate_dl: np.ndarray      # bps/Hz, (B, U, C)
    signal_ul: np.ndarray
    interf_ul: np.ndarray
    sinr_ul: np.ndarray
    rate_ul: np.ndarray      # bps/Hz, (S, C')


def evaluate_links(s: Scenario, a: Allocation, gains=None) -> LinkState:
    """Vectorised SINRs and rates for every (BS, user, codebook) and (sensor, codebook)."""
    t = s.topology
    G = dl_effective_gain(s) if gains is None else gains[0]
    Gu = ul_effective_gain(s) if gains is None else gains[1]
    load = (a.rho_dl * a.p_dl).sum(axis=1)                       # (B, C)
    interf = np.einsum("bk,kuc,kc->buc", same_inp_mask(s), G, load)
    signal = a.rho_dl * G * a.p_dl
    sinr = signal / (interf + s.channels.noise_dl)
    sb = t.sensor_bs
    tx = a.rho_ul * a.p_ul                                       # (S, C')
    interf_u = np.einsum("bs,bsc,sc->bc", ul_interferer_mask(s), Gu, tx)[sb]
    signal_u = tx * Gu[sb, np.arange(t.num_sensors)]
    sinr_u = signal_u / (interf_u + s.channels.noise_ul)
    return LinkState(G, Gu, signal, interf, sinr, np.log2(1.0 + sinr),
                     signal_u, interf_u, sinr_u, np.log2(1.0 + sinr_u))


def _check_index(name, value, n):
    if not 0 <= value < n:
        raise IndexError(f"{name}={value} out of range [0, {n})")


def downlink_sinr(s: Scenario, a: Allocation, b: int, u: int, c: int) -> float:
    """SINR at user ``u`` from BS ``b`` on codebook ``c`` (explicit sums)."""
    t, cb, ch = s.topology, s.codebooks, s.channels
    _check_index("b", b, t.num_bs)
    _check_index("u", u, t.num_users)
    i = t.bs_inp[b]
    _check_index("c", c, t.dl_codebooks[i])
    N = t.dl_subcarriers[i]
    num = 0.0
    for n in range(N):
        num += cb.dl_incidence[i, c, n] * cb.dl_split[b, n, c] * a.p_dl[b, u, c] * ch.dl_gain[b, u, n]
    num *= a.rho_dl[b, u, c]
    interf = 0.0
    for b2 in t.bs_of_inp(i):
        if b2 == b:
            continue
        for u2 in range(t.num_users):
            for n in range(N):
                interf += (a.rho_dl[b2, u2, c] * cb.dl_incidence[i, c, n] * cb.dl_split[b2, n, c]
                           * a.p_dl[b2, u2, c] * ch.dl_gain[b2, u, n])
    return float(num / (interf + ch.noise_dl[b, u, c]))


def uplink_sinr(s: Scenario, a: Allocation, b: int, sensor: int, c: int) -> float:
    """SINR at BS ``b`` from its sensor ``sensor`` on uplink codebook ``c``."""
    t, cb, ch = s.topology, s.codebooks, s.channels
    _check_index("b", b, t.num_bs)
    _check_index("sensor", sensor, t.num_sensors)
    if t.sensor_bs[sensor] != b:
        raise IndexError(f"sensor {sensor} is not served by BS {b}")
    i = t.bs_inp[b]
    _check_index("c", c, t.ul_codebooks[i])
    M = t.ul_subcarriers[i]
    num = 0.0
    for m in range(M):
        num += cb.ul_incidence[i, c, m] * cb.ul_split[b, m, c] * a.p_ul[sensor, c] * ch.ul_gain[b, sensor, m]
    num *= a.rho_ul[sensor, c]
    interf = 0.0
    for b2 in t.bs_of_inp(i):
        if b2 == b:
            continue
        for s2 in np.where(t.sensor_bs == b2)[0]:
            for m in range(M):
                interf += (a.rho_ul[s2, c] * cb.ul_incidence[i, c, m] * cb.ul_split[b2, m, c]
                           * a.p_ul[s2, c] * ch.ul_gain[b, s2, m])
    return float(num / (interf + ch.noise_ul[sensor, c]))


def rate(sinr):
    """Spectral efficiency log2(1 + SINR) in bps/Hz."""
    x = np.asarray(sinr, dtype=float)
    if np.any(x < 0):
        raise ValueError("SINR must be non-negative")
    out = np.log2(1.0 + x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# constraint audit
# ---------------------------------------------------------------------------

FAMILIES = {
    "association_cross": "one BS across InPs",
    "association_same": "one BS within an InP",
    "reuse_dl": "downlink subcarrier reuse <= K",
    "reuse_ul": "uplink subcarrier reuse <= K",
    "power_bs": "BS power cap",
    "battery": "sensor battery cap",
    "rate_dl": "user downlink rate >= R_min",
    "rate_ul": "sensor uplink rate >= R_min",
    "domain": "variable domains",
}


@dataclass
class Violation:
    index: tuple
    lhs: float
    rhs: float
    slack: float    # rhs - lhs for <=, lhs - rhs for >=; negative when violated


@dataclass
class ConstraintReport:
    violations: dict = field(default_factory=lambda: {k: [] for k in FAMILIES})
    min_slack: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not any(self.violations.values())

    def violated_families(self) -> list:
        return [k for k, v in self.violations.items() if v]

    def count(self) -> int:
        return sum(len(v) for v in self.violations.values())

    def summary(self) -> str:
        if self.feasible:
            return "feasible"
        parts = []
        for k, v in self.violations.items():
            if v:
                worst = min(v, key=lambda x: x.slack)
                parts.append(f"{FAMILIES[k]}: {len(v)} violation(s), worst at {worst.index} "
                             f"(lhs={worst.lhs:.6g}, rhs={worst.rhs:.6g})")
        return "; ".join(parts)


def _audit(report, family, lhs, rhs, index_fn, sense="<=", tol=1e-9):
    lhs = np.asarray(lhs, float)
    rhs = np.broadcast_to(np.asarray(rhs, float), lhs.shape)
    slack = rhs - lhs if sense == "<=" else lhs - rhs
    if slack.size:
        report.min_slack[family] = float(slack.min())
    bad = slack < -tol * np.maximum(1.0, np.abs(rhs))
    for idx in zip(*np.nonzero(bad)):
        report.violations[family].append(
            Violation(index_fn(tuple(int(k) for k in idx)), float(lhs[idx]), float(rhs[idx]), float(slack[idx])))


def check_constraints(s: Scenario, a: Allocation, tol: float = 1e-9, links: LinkState | None = None) -> ConstraintReport:
    """Audit every constraint family and record slacks."""
    a.check_shapes(s)
    t, ec = s.topology, s.economics
    rep = ConstraintReport()
    links = links or evaluate_links(s, a)
    inp = t.bs_inp

    # association: any two codebooks of the same user on different BSs sum to <= 1
    top = a.rho_dl.max(axis=2)                          # (B, U)
    pair = top[:, None, :] + top[None, :, :]            # (B, B, U)
    B = t.num_bs
    upper = np.triu(np.ones((B, B), bool), 1)
    cross = upper & (inp[:, None] != inp[None, :])
    same = upper & (inp[:, None] == inp[None, :])
    _audit(rep, "association_cross", np.where(cross[:, :, None], pair, 0.0), 1.0,
           lambda k: ("bs", k[0], "bs", k[1], "user", k[2]), tol=tol)
    _audit(rep, "association_same", np.where(same[:, :, None], pair, 0.0), 1.0,
           lambda k: ("bs", k[0], "bs", k[1], "user", k[2]), tol=tol)

    # subcarrier reuse per InP
    K = t.reuse_limit
    use_dl = np.zeros((t.num_inps, t.max_dl_subcarriers))
    load = a.rho_dl.sum(axis=1)                          # (B, C)
    for b in range(B):
        use_dl[inp[b]] += load[b] @ s.codebooks.dl_incidence[inp[b]]
    _audit(rep, "reuse_dl", use_dl, K, lambda k: ("inp", k[0], "subcarrier", k[1]), tol=tol)
    use_ul = np.zeros((t.num_inps, t.max_ul_subcarriers))
    sinp = t.sensor_inp
    for sn in range(t.num_sensors):
        use_ul[sinp[sn]] += a.rho_ul[sn] @ s.codebooks.ul_incidence[sinp[sn]]
    _audit(rep, "reuse_ul", use_ul, K, lambda k: ("inp", k[0], "subcarrier", k[1]), tol=tol)

    # power caps
    _audit(rep, "power_bs", (a.rho_dl * a.p_dl).sum(axis=(1, 2)), ec.power_caps,
           lambda k: ("bs", k[0]), tol=tol)
    _audit(rep, "battery", (a.rho_ul * a.p_ul).sum(axis=1), ec.battery_caps,
           lambda k: ("sensor", k[0]), tol=tol)

    # rate floors
    need = ec.min_dl_rate[t.user_isp]
    _audit(rep, "rate_dl", links.rate_dl.sum(axis=(0, 2)), need, lambda k: ("user", k[0]), ">=", tol)
    _audit(rep, "rate_ul", links.rate_ul.sum(axis=1), ec.min_ul_rate, lambda k: ("sensor", k[0]), ">=", tol)

    # domains
    dom = rep.violations["domain"]
    for name in ("p_dl", "p_ul"):
        arr = getattr(a, name)
        for idx in zip(*np.nonzero(arr < -tol)):
            dom.append(Violation((name,) + tuple(int(k) for k in idx), float(arr[idx]), 0.0, float(arr[idx])))
    for name in ("rho_dl", "rho_ul", "alpha"):
        arr = getattr(a, name)
        if a.relaxed:
            bad = (arr < -tol) | (arr > 1 + tol)
        else:
            bad = ~np.isin(arr, (0.0, 1.0))
        for idx in zip(*np.nonzero(bad)):
            dom.append(Violation((name,) + tuple(int(k) for k in idx), float(arr[idx]), 1.0, -abs(float(arr[idx]))))
    invalid_dl = ~t.dl_valid()[:, None, :] & (a.rho_dl != 0)
    for idx in zip(*np.nonzero(invalid_dl)):
        dom.append(Violation(("rho_dl",) + tuple(int(k) for k in idx), float(a.rho_dl[idx]), 0.0, -1.0))
    invalid_ul = ~t.ul_valid() & (a.rho_ul != 0)
    for idx in zip(*np.nonzero(invalid_ul)):
        dom.append(Violation(("rho_ul",) + tuple(int(k) for k in idx), float(a.rho_ul[idx]), 0.0, -1.0))
    for k, val, lo, hi in a.prices.violations(s, tol):
        dom.append(Violation(("price", k), val, hi, -1.0))
    return rep
