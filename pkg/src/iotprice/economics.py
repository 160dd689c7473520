"""Four-player revenue model: InPs, sensors, ISPs and users."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .link import Allocation, LinkState, evaluate_links
from .scenario import Scenario

# income (+) and cost (-) terms of every player, in evaluation order
TERMS = {
    "inp": (("phi_power", +1), ("phi_bw", +1), ("psi_power", -1), ("psi_bw", -1)),
    "sens": (("phi_data", +1), ("phi_rate", +1), ("psi_reserv", -1), ("psi_power", -1), ("psi_bw", -1)),
    "isp": (("phi_rate", +1), ("phi_data", +1), ("psi_power", -1), ("psi_bw", -1),
            ("psi_data", -1), ("psi_uplink", -1)),
    "user": (("phi_data", +1), ("psi_rate", -1), ("psi_service", -1)),
}
GROUPS = ("inp", "sens", "isp", "user")


@dataclass
class PlayerRevenues:
    inp: np.ndarray
    sens: np.ndarray
    isp: np.ndarray
    user: np.ndarray
    breakdown: dict = field(default_factory=dict)   # "group.term" -> per-player array

    @property
    def inp_total(self) -> float:
        return float(self.inp.sum())

    @property
    def sens_total(self) -> float:
        return float(self.sens.sum())

    @property
    def isp_total(self) -> float:
        return float(self.isp.sum())

    @property
    def user_total(self) -> float:
        return float(self.user.sum())

    @property
    def sum_totals(self) -> float:
        return self.inp_total + self.sens_total + self.isp_total + self.user_total

    def totals(self) -> dict:
        return {"isp": self.isp_total, "inp": self.inp_total,
                "sens": self.sens_total, "user": self.user_total}

    def vector(self) -> np.ndarray:
        """All per-player revenues ordered [InPs, sensors, ISPs, users]."""
        return np.concatenate([self.inp, self.sens, self.isp, self.user])

    def recompute(self, group: str) -> np.ndarray:
        return sum(sign * self.breakdown[f"{group}.{name}"] for name, sign in TERMS[group])


def dl_codebook_width(s: Scenario) -> np.ndarray:
    """Σ_n q[c, n] for every (BS, codebook): number of subcarriers a DL codebook spans."""
    return s.codebooks.dl_incidence.sum(axis=2)[s.topology.bs_inp]       # (B, C)


def ul_codebook_width(s: Scenario) -> np.ndarray:
    """Σ_m q'[c', m] for every (sensor, codebook)."""
    return s.codebooks.ul_incidence.sum(axis=2)[s.topology.sensor_inp]   # (S, C')


def isp_membership(s: Scenario) -> np.ndarray:
    """(V, U) 0/1 matrix of the sets K_v."""
    t = s.topology
    k = np.zeros((t.num_isps, t.num_users))
    k[t.user_isp, np.arange(t.num_users)] = 1.0
    return k


def selection_caps(s: Scenario, alpha) -> tuple[np.ndarray, np.ndarray]:
    """min{Σ_{u∈K_v} α, 1} as (V, S) and min{Σ_u α, 1} as (S,)."""
    alpha = np.asarray(alpha, float)
    per_isp = np.minimum(isp_membership(s) @ alpha.T, 1.0)
    overall = np.minimum(alpha.sum(axis=1), 1.0)
    return per_isp, overall


def service_quality(s: Scenario, a: Allocation, u: int | None = None):
    """Q_u = q·ln(1 + Σ_s α[s, u] / S); all users when ``u`` is None."""
    q = s.economics.sensing_quality_gain
    frac = np.asarray(a.alpha, float).sum(axis=0) / s.topology.num_sensors
    Q = q * np.log1p(frac)
    return Q if u is None else float(Q[u])


def total_revenues(s: Scenario, a: Allocation, links: LinkState | None = None) -> PlayerRevenues:
    t, ec = s.topology, s.economics
    L = a.prices
    links = links or evaluate_links(s, a)
    W = ec.subcarrier_bandwidth
    inp, sinp, vu = t.bs_inp, t.sensor_inp, t.user_isp
    I, V = t.num_inps, t.num_isps
    K = isp_membership(s)

    tx_dl = (a.rho_dl * a.p_dl).sum(axis=2)                       # (B, U)
    bw_dl = (a.rho_dl * dl_codebook_width(s)[:, None, :]).sum(axis=2)   # (B, U) subcarrier count
    rate_dl = (links.rate_dl * dl_codebook_width(s)[:, None, :]).sum(axis=(0, 2))   # (U,)
    tx_ul = (a.rho_ul * a.p_ul).sum(axis=1)                       # (S,)
    bw_ul = (a.rho_ul * ul_codebook_width(s)).sum(axis=1)         # (S,)
    rate_ul = links.rate_ul.sum(axis=1)                           # (S,)
    m_vs, m_s = selection_caps(s, a.alpha)
    Q = service_quality(s, a)

    def by_inp(x_bs):
        return np.bincount(inp, weights=x_bs, minlength=I)

    power_income_bs = L.power_bs * tx_dl.sum(axis=1)
    bd = {}
    bd["inp.phi_power"] = by_inp(power_income_bs)
    bd["inp.phi_bw"] = L.bw * W * (by_inp(bw_dl.sum(axis=1)) + np.bincount(sinp, weights=bw_ul, minlength=I))
    bd["inp.psi_power"] = ec.power_supplier_price * by_inp(tx_dl.sum(axis=1))
    bd["inp.psi_bw"] = (ec.dl_band + ec.ul_band) * ec.regulator_bw_price

    bd["sens.phi_data"] = (m_vs * L.sens_data).sum(axis=0)
    bd["sens.phi_rate"] = m_vs.sum(axis=0) * rate_ul * L.up_rate
    bd["sens.psi_reserv"] = m_s * ec.sensor_reservation
    bd["sens.psi_power"] = ec.power_supplier_price * tx_ul
    bd["sens.psi_bw"] = L.bw[sinp] * W * bw_ul

    bd["isp.phi_rate"] = L.dn_rate * W * (K @ rate_dl)
    bd["isp.phi_data"] = (K * L.reserv_user) @ Q
    bd["isp.psi_power"] = K @ (L.power_bs @ tx_dl)
    bd["isp.psi_bw"] = K @ ((L.bw[inp] * W) @ bw_dl)
    bd["isp.psi_data"] = (m_vs * L.sens_data).sum(axis=1)
    bd["isp.psi_uplink"] = m_vs @ (rate_ul * L.up_rate)

    L_ru = L.reserv_user[vu, np.arange(t.num_users)]
    bd["user.phi_data"] = Q * ec.user_reservation
    bd["user.psi_rate"] = L.dn_rate[vu] * W * rate_dl
    bd["user.psi_service"] = Q * L_ru

    out = PlayerRevenues(np.zeros(I), np.zeros(t.num_sensors), np.zeros(V), np.zeros(t.num_users), bd)
    for g in GROUPS:
        setattr(out, g, out.recompute(g))
    return out


def inp_revenue(s: Scenario, a: Allocation, i: int) -> float:
    return float(total_revenues(s, a).inp[i])


def sensor_revenue(s: Scenario, a: Allocation, sensor: int) -> float:
    return float(total_revenues(s, a).sens[sensor])


def isp_revenue(s: Scenario, a: Allocation, v: int) -> float:
    return float(total_revenues(s, a).isp[v])


def user_revenue(s: Scenario, a: Allocation, u: int) -> float:
    return float(total_revenues(s, a).user[u])


def external_balance(s: Scenario, a: Allocation) -> float:
    """Net money entering the four-player economy from outside.

    User reservation value minus what is paid to the power supplier, the
    regulator and for sensing.  Every L-priced transfer is internal, so this
    equals the sum of the four totals.
    """
    ec = s.economics
    Q = service_quality(s, a)
    _, m_s = selection_caps(s, a.alpha)
    power = (a.rho_dl * a.p_dl).sum() + (a.rho_ul * a.p_ul).sum()
    return float(Q @ ec.user_reservation
                 - ec.power_supplier_price * power
                 - ((ec.dl_band + ec.ul_band) * ec.regulator_bw_price).sum()
                 - m_s @ ec.sensor_reservation)
