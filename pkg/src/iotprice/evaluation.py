"""Fairness, constraint-count formulas and L_max sweeps."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .orchestrator import APPROACHES, RunOptions, run_approach
from .scenario import Scenario, Topology

log = logging.getLogger(__name__)

BLOCK_NAMES = ("rho", "p", "alpha", "L")


def jain_index(phi_isp: float, phi_inp: float, phi_sens: float) -> float:
    """(Σx)² / (3 Σx²) over the ISP, InP and sensor totals."""
    x = np.array([phi_isp, phi_inp, phi_sens], float)
    sq = float(x @ x)
    if sq == 0.0:
        raise ValueError("fairness index is undefined when all three totals are zero")
    return float(x.sum() ** 2 / (3.0 * sq))


def jain_of(totals: dict) -> float:
    return jain_index(totals["isp"], totals["inp"], totals["sens"])


# ---------------------------------------------------------------------------
# constraint counts
# ---------------------------------------------------------------------------

def rho_rows(topo: Topology) -> int:
    """Rows of the codebook subproblem under the weighted-sum scalarization.

    Association pairs of one user across InPs and inside an InP, reuse per
    subcarrier in both directions, power caps, and per-sensor battery and
    rate rows plus per-user rate rows.
    """
    I, U, S = topo.num_inps, topo.num_users, topo.num_sensors
    C = np.asarray(topo.dl_codebooks, int)
    B = np.asarray(topo.bs_per_inp, int)
    cross = sum(int(C[i] * C[k] * B[i] * B[k]) for i in range(I) for k in range(I) if k != i)
    same = int((C ** 2 * B * (B - 1)).sum())
    return (U * cross + U * same + sum(topo.dl_subcarriers) + sum(topo.ul_subcarriers)
            + int(B.sum()) + 2 * S + U)


def power_rows(topo: Topology) -> int:
    return topo.num_bs + 2 * topo.num_sensors + topo.num_users


def alpha_rows(topo: Topology) -> int:
    S, V, U = topo.num_sensors, topo.num_isps, topo.num_users
    return S * (2 * V + U + 2)


def complexity_delta(approach: str, block: str, topo: Topology) -> int:
    """Constraint count Δ of one block subproblem for one approach."""
    I, V = topo.num_inps, topo.num_isps
    base = {"rho": rho_rows(topo), "p": power_rows(topo), "alpha": alpha_rows(topo), "L": 0}
    extra = {
        "weight_one": {"rho": 0, "p": 0, "alpha": 0, "L": 0},
        "max_min": {"rho": 3, "p": 3, "alpha": 2, "L": 3},
        "conventional": {"rho": I + V + 9, "p": I + V + 9, "alpha": V + 7, "L": I + V + 9},
    }
    if approach not in extra or block not in base:
        raise KeyError(f"no constraint count for approach {approach!r}, block {block!r}")
    return base[block] + extra[approach][block]


def ip_iterations(delta: int, t0: float = 1.0, stop: float = 1e-8, growth: float = 10.0) -> float:
    """Barrier-stage estimate log(Δ / (t0·stop)) / log(growth)."""
    if delta <= 0:
        return 0.0
    return math.log(delta / (t0 * stop)) / math.log(growth)


@dataclass
class ComplexityCell:
    approach: str
    block: str
    delta: int
    iterations: float


def complexity_table(topo: Topology, t0: float = 1.0, stop: float = 1e-8, growth: float = 10.0) -> list:
    return [ComplexityCell(a, b, d := complexity_delta(a, b, topo), ip_iterations(d, t0, stop, growth))
            for a in APPROACHES for b in BLOCK_NAMES]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    approach: str
    l_max: float
    phi_isp: float = float("nan")
    phi_inp: float = float("nan")
    phi_sens: float = float("nan")
    phi_user: float = float("nan")
    total: float = float("nan")
    jain: float = float("nan")
    iterations: int = 0
    ms: float = 0.0
    status: str = "ok"
    message: str = ""


@dataclass
class SweepResult:
    grid: list
    approaches: tuple
    rows: list = field(default_factory=list)

    def cell(self, approach: str, l_max: float) -> SweepRow:
        for r in self.rows:
            if r.approach == approach and r.l_max == l_max:
                return r
        raise KeyError((approach, l_max))

    def series(self, approach: str, attr: str) -> np.ndarray:
        return np.array([getattr(self.cell(approach, g), attr) for g in self.grid])

    @property
    def succeeded(self) -> int:
        return sum(r.status == "ok" for r in self.rows)


def run_cell(s: Scenario, approach: str, l_max: float, opts: RunOptions | None = None, **kw) -> SweepRow:
    t0 = time.perf_counter()
    row = SweepRow(approach, float(l_max))
    try:
        rep = run_approach(s.with_price_cap(l_max), approach, opts, **kw)
    except Exception as exc:            # a failed cell is recorded and the sweep goes on
        log.warning("sweep cell %s at L_max=%g failed: %s", approach, l_max, exc)
        row.status, row.message = "failed", str(exc)
        row.ms = 1e3 * (time.perf_counter() - t0)
        return row
    tot = rep.totals
    row.phi_isp, row.phi_inp, row.phi_sens, row.phi_user = tot["isp"], tot["inp"], tot["sens"], tot["user"]
    row.total = rep.revenues.sum_totals
    try:
        row.jain = jain_of(tot)
    except ValueError:
        row.jain = float("nan")
    row.iterations = rep.iterations
    row.ms = 1e3 * (time.perf_counter() - t0)
    if not rep.feasible:
        row.status = "infeasible"
    return row


def sweep_lmax(s_base: Scenario, grid, approaches=APPROACHES, opts: RunOptions | None = None,
               **kw) -> SweepResult:
    """Rerun every approach at every price cap of ``grid`` (ascending)."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("sweep grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("sweep grid must be ascending")
    out = SweepResult(grid, tuple(approaches))
    for approach in approaches:
        for g in grid:
            out.rows.append(run_cell(s_base, approach, g, opts, **kw))
    return out


def parse_grid(spec: str) -> tuple[str, list]:
    """``lmax:<start>:<stop>:<steps>`` -> ("lmax", evenly spaced points)."""
    parts = spec.split(":")
    if len(parts) != 4 or parts[0] != "lmax":
        raise ValueError(f"malformed sweep grid {spec!r}; expected lmax:<start>:<stop>:<steps>")
    try:
        start, stop, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError as exc:
        raise ValueError(f"malformed sweep grid {spec!r}: {exc}") from None
    if steps < 1 or stop < start or start < 0:
        raise ValueError(f"malformed sweep grid {spec!r}: need steps >= 1 and 0 <= start <= stop")
    if steps == 1:
        return "lmax", [start]
    return "lmax", [float(x) for x in np.linspace(start, stop, steps)]
