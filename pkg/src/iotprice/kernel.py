"""Log-barrier interior-point solver for small smooth concave programs.

Problems have the form::

    maximize    c0 + lin·x - ½ xᵀ Q x + Σ_k w_k log(a_k·x + b_k)
    subject to  con_lin_j·x + Σ_k W_jk log(a_k·x + b_k) + con_c_j >= 0
                G x <= h,   lo <= x <= hi

with w, W >= 0, so the objective and every constraint function are concave.
The log-affine "atoms" (a_k, b_k) are shared between the objective and the
constraints; that is how D.C. surrogates of SINR rates are expressed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, LinAlgError

log = logging.getLogger(__name__)


@dataclass
class ConcaveModel:
    """c0 + lin·x - ½ xᵀ quad x + Σ_k weights_k log(atom_k(x))."""
    lin: np.ndarray
    c0: float = 0.0
    weights: np.ndarray | None = None   # (K,) >= 0, over the subproblem's atoms
    quad: np.ndarray | None = None      # (n, n) PSD


@dataclass
class SubproblemSpec:
    block: str
    n: int
    objective: ConcaveModel
    atom_A: sp.csr_matrix | None = None      # (K, n)
    atom_b: np.ndarray | None = None         # (K,)
    con_lin: np.ndarray | None = None        # (m, n) dense
    con_w: sp.csr_matrix | None = None       # (m, K) >= 0
    con_c: np.ndarray | None = None          # (m,)
    con_names: list = field(default_factory=list)
    G: sp.csr_matrix | None = None           # (r, n)
    h: np.ndarray | None = None              # (r,)
    row_names: list = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    x0: np.ndarray | None = None
    scale: float = 1.0                       # objective magnitude, for stopping rules

    def __post_init__(self):
        n = self.n
        if self.atom_A is None:
            self.atom_A = sp.csr_matrix((0, n))
            self.atom_b = np.zeros(0)
        self.atom_A = sp.csr_matrix(self.atom_A)
        K = self.atom_A.shape[0]
        if self.con_lin is None:
            self.con_lin = np.zeros((0, n))
            self.con_w = sp.csr_matrix((0, K))
            self.con_c = np.zeros(0)
        self.con_lin = np.atleast_2d(np.asarray(self.con_lin, float)).reshape(-1, n)
        self.con_w = sp.csr_matrix(self.con_w) if self.con_w is not None else sp.csr_matrix((len(self.con_lin), K))
        if self.G is None:
            self.G = sp.csr_matrix((0, n))
            self.h = np.zeros(0)
        self.G = sp.csr_matrix(self.G)
        self.h = np.asarray(self.h, float)
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, float)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, float)
        if self.objective.weights is None:
            self.objective.weights = np.zeros(K)
        if self.x0 is None:
            self.x0 = _box_centre(self.lo, self.hi)
        self.validate()

    def validate(self) -> None:
        n, K = self.n, self.atom_A.shape[0]
        if self.objective.lin.shape != (n,):
            raise ValueError(f"{self.block}: objective has {self.objective.lin.shape} coefficients, expected ({n},)")
        if self.atom_A.shape[1] != n or self.atom_b.shape != (K,):
            raise ValueError(f"{self.block}: atom rows do not match {n} variables")
        if self.objective.weights.shape != (K,) or np.any(self.objective.weights < 0):
            raise ValueError(f"{self.block}: objective log weights must be {K} non-negative values")
        m = self.con_lin.shape[0]
        if self.con_w.shape != (m, K) or self.con_c.shape != (m,):
            raise ValueError(f"{self.block}: concave constraint blocks have inconsistent shapes")
        if self.con_w.nnz and self.con_w.data.min() < 0:
            raise ValueError(f"{self.block}: concave constraint log weights must be non-negative")
        if self.G.shape[1] != n or self.G.shape[0] != self.h.shape[0]:
            raise ValueError(f"{self.block}: linear rows do not match {n} variables")
        if np.any(self.lo > self.hi):
            raise ValueError(f"{self.block}: empty box")

    @property
    def num_constraints(self) -> int:
        """Constraint count seen by the barrier (rows + concave rows + finite bounds)."""
        return (self.G.shape[0] + self.con_lin.shape[0]
                + int(np.isfinite(self.lo).sum()) + int(np.isfinite(self.hi).sum()))

    # -- evaluation -------------------------------------------------------
    def atoms(self, x):
        return self.atom_A @ x + self.atom_b

    def objective_value(self, x) -> float:
        o = self.objective
        val = o.c0 + o.lin @ x
        if o.quad is not None:
            val -= 0.5 * x @ o.quad @ x
        if self.atom_A.shape[0]:
            y = self.atoms(x)
            mask = o.weights > 0
            val += o.weights[mask] @ np.log(y[mask])
        return float(val)

    def constraint_values(self, x) -> np.ndarray:
        out = self.con_lin @ x + self.con_c
        if self.con_w.nnz:
            ly = np.log(np.maximum(self.atoms(x), 1e-300))
            out = out + self.con_w @ ly
        return out

    def slacks(self, x) -> dict:
        return {
            "concave": self.constraint_values(x),
            "rows": self.h - self.G @ x,
            "lower": (x - self.lo)[np.isfinite(self.lo)],
            "upper": (self.hi - x)[np.isfinite(self.hi)],
        }

    def max_violation(self, x) -> float:
        worst = 0.0
        for v in self.slacks(x).values():
            if v.size:
                worst = max(worst, float(-v.min()))
        return worst

    def binding(self, x) -> str:
        """Name of the row with the smallest slack."""
        sl = self.slacks(x)
        best, name = np.inf, "none"
        if sl["concave"].size:
            j = int(np.argmin(sl["concave"]))
            best, name = sl["concave"][j], _name(self.con_names, j, "concave")
        if sl["rows"].size:
            j = int(np.argmin(sl["rows"]))
            if sl["rows"][j] < best:
                best, name = sl["rows"][j], _name(self.row_names, j, "row")
        return name


def _name(names, j, kind):
    return names[j] if j < len(names) else f"{kind}[{j}]"


def _box_centre(lo, hi):
    x = np.zeros_like(lo)
    both = np.isfinite(lo) & np.isfinite(hi)
    x[both] = 0.5 * (lo[both] + hi[both])
    x[np.isfinite(lo) & ~both] = lo[np.isfinite(lo) & ~both] + 1.0
    x[np.isfinite(hi) & ~both] = hi[np.isfinite(hi) & ~both] - 1.0
    return x


@dataclass
class InnerResult:
    x: np.ndarray
    value: float
    converged: bool
    status: str                 # optimal | infeasible | max_iter
    iterations: int
    max_violation: float
    gap: float = np.inf
    binding: str = ""
    message: str = ""


@dataclass
class SolverOptions:
    t0: float = 1.0
    growth: float = 10.0        # ξ_e
    gap_tol: float = 1e-8       # ϱ, relative to spec.scale
    newton_tol: float = 1e-10
    max_newton: int = 60
    max_total: int = 600
    phase1_cap: float = 1e-4
    armijo: float = 0.25


class _Gram:
    """Dense Mᵀ diag(w) M for a fixed sparse M, by precomputed entry pairs."""

    def __init__(self, M: sp.csr_matrix):
        M = sp.csr_matrix(M)
        self.n = M.shape[1]
        ii, jj, rr, vv = [], [], [], []
        for r in range(M.shape[0]):
            lo, hi = M.indptr[r], M.indptr[r + 1]
            cols, vals = M.indices[lo:hi], M.data[lo:hi]
            if cols.size == 0:
                continue
            ii.append(np.repeat(cols, cols.size))
            jj.append(np.tile(cols, cols.size))
            vv.append(np.outer(vals, vals).ravel())
            rr.append(np.full(cols.size ** 2, r))
        cat = (lambda x, dt: np.concatenate(x).astype(dt)) if ii else (lambda x, dt: np.zeros(0, dt))
        self.flat = cat(ii, np.int64) * self.n + cat(jj, np.int64)
        self.rows = cat(rr, np.int64)
        self.vals = cat(vv, float)

    def __call__(self, w) -> np.ndarray:
        out = np.bincount(self.flat, weights=w[self.rows] * self.vals, minlength=self.n * self.n)
        return out.reshape(self.n, self.n)


class _Barrier:
    """Barrier function t·f0/scale + Σ log(slack) with gradient and Hessian."""

    def __init__(self, spec: SubproblemSpec):
        self.s = spec
        self.fin_lo = np.isfinite(spec.lo)
        self.fin_hi = np.isfinite(spec.hi)
        self.At = spec.atom_A.T.tocsr()
        self.Gt = spec.G.T.tocsr()
        self.used = used_atoms(spec)
        self.gram_atoms = _Gram(spec.atom_A)
        self.gram_rows = _Gram(spec.G)

    def parts(self, x):
        s = self.s
        y = s.atoms(x) if s.atom_A.shape[0] else np.zeros(0)
        if np.any(y[self.used] <= 0):
            return None
        y = np.where(self.used, y, 1.0)
        F = s.con_lin @ x + s.con_c
        if s.con_w.nnz:
            F = F + s.con_w @ np.log(y)
        r = s.h - s.G @ x
        dl = (x - s.lo)[self.fin_lo]
        du = (s.hi - x)[self.fin_hi]
        if (F.size and F.min() <= 0) or (r.size and r.min() <= 0) or (dl.size and dl.min() <= 0) \
                or (du.size and du.min() <= 0):
            return None
        return y, F, r, dl, du

    def value(self, x, t, parts=None):
        p = parts if parts is not None else self.parts(x)
        if p is None:
            return -np.inf
        y, F, r, dl, du = p
        v = t * self.s.objective_value(x) / self.s.scale
        return v + np.log(F).sum() + np.log(r).sum() + np.log(dl).sum() + np.log(du).sum()

    def grad_hess(self, x, t, parts):
        s = self.s
        y, F, r, dl, du = parts
        n = s.n
        o = s.objective
        ts = t / s.scale
        g = ts * o.lin.copy()
        H = np.zeros((n, n))
        if o.quad is not None:
            g -= ts * (o.quad @ x)
            H -= ts * o.quad
        diag_atoms = np.zeros(y.size)
        if y.size:
            inv = 1.0 / y
            g += self.At @ (ts * o.weights * inv)
            diag_atoms += ts * o.weights * inv ** 2
        if F.size:
            J = s.con_lin.copy()
            if s.con_w.nnz:
                J = J + (s.con_w.multiply(inv[None, :]) @ s.atom_A).toarray()
                diag_atoms += (s.con_w.T @ (1.0 / F)) * inv ** 2
            g += J.T @ (1.0 / F)
            H -= (J.T * (1.0 / F ** 2)) @ J
        if y.size and np.any(diag_atoms):
            H -= self.gram_atoms(diag_atoms)
        if r.size:
            g -= self.Gt @ (1.0 / r)
            H -= self.gram_rows(1.0 / r ** 2)
        d = np.zeros(n)
        gb = np.zeros(n)
        gb[self.fin_lo] += 1.0 / dl
        d[self.fin_lo] += 1.0 / dl ** 2
        gb[self.fin_hi] -= 1.0 / du
        d[self.fin_hi] += 1.0 / du ** 2
        g += gb
        H[np.diag_indices(n)] -= d
        return g, H


def _newton_stage(bar: _Barrier, x, t, opts: SolverOptions, budget: int, stop=None):
    """Maximise the barrier function for fixed t; returns (x, iterations, ok)."""
    it = 0
    parts = bar.parts(x)
    val = bar.value(x, t, parts)
    while it < budget:
        it += 1
        g, H = bar.grad_hess(x, t, parts)
        M = -H
        dx = _pd_solve(M, g)
        lam2 = float(g @ dx)
        if not np.isfinite(lam2):
            return x, it, False
        if lam2 / 2 <= opts.newton_tol:
            return x, it, True
        step = 1.0
        while step > 1e-14:
            xn = x + step * dx
            pn = bar.parts(xn)
            if pn is not None:
                vn = bar.value(xn, t, pn)
                # inside the quadratic region a full feasible step is taken
                # without the sufficient-increase test, which rounding can defeat
                if vn >= val + opts.armijo * step * lam2 or (step == 1.0 and lam2 < 1e-4):
                    break
            step *= 0.5
        else:
            return x, it, True          # no progress possible: numerically at the optimum
        x, parts, val = xn, pn, vn
        if stop is not None and stop(x):
            return x, it, True
    return x, it, False


def _pd_solve(M, g):
    """Solve M dx = g for symmetric PD M, adding a growing ridge if Cholesky fails."""
    reg = 0.0
    top = max(1.0, float(np.abs(np.diag(M)).max()))
    for _ in range(8):
        try:
            return cho_solve(cho_factor(M + reg * np.eye(len(g)), check_finite=False), g, check_finite=False)
        except LinAlgError:
            reg = 1e-12 * top if reg == 0.0 else reg * 100
    return np.linalg.lstsq(M, g, rcond=None)[0]


def _barrier_solve(spec: SubproblemSpec, x0, opts: SolverOptions, stop=None):
    bar = _Barrier(spec)
    m = max(spec.num_constraints, 1)
    t = opts.t0
    x = x0.copy()
    total = 0
    ok = True
    while True:
        x, it, ok_stage = _newton_stage(bar, x, t, opts, min(opts.max_newton, opts.max_total - total), stop)
        total += it
        if stop is not None and stop(x):
            return x, total, True, m / t
        if m / t <= opts.gap_tol:
            return x, total, ok_stage, m / t
        if total >= opts.max_total:
            return x, total, False, m / t
        t *= opts.growth


def _strictly_feasible(spec: SubproblemSpec, x) -> bool:
    return _Barrier(spec).parts(x) is not None


def _phase_one(spec: SubproblemSpec, x0, opts: SolverOptions):
    """Find a strictly feasible point by maximising a common slack s."""
    n = spec.n
    sl = spec.slacks(x0)
    smin = min([v.min() for v in sl.values() if v.size] + [1.0])
    fin_lo, fin_hi = np.isfinite(spec.lo), np.isfinite(spec.hi)
    eye = sp.identity(n, format="csr")
    rows = [sp.hstack([spec.G, np.ones((spec.G.shape[0], 1))]),
            sp.hstack([-eye[fin_lo], np.ones((int(fin_lo.sum()), 1))]),
            sp.hstack([eye[fin_hi], np.ones((int(fin_hi.sum()), 1))])]
    G = sp.vstack(rows).tocsr()
    h = np.concatenate([spec.h, -spec.lo[fin_lo], spec.hi[fin_hi]])
    cap = opts.phase1_cap
    aug = SubproblemSpec(
        block=spec.block + ":phase1", n=n + 1,
        objective=ConcaveModel(lin=np.r_[np.zeros(n), 1.0], weights=np.zeros(spec.atom_A.shape[0])),
        atom_A=sp.hstack([spec.atom_A, sp.csr_matrix((spec.atom_A.shape[0], 1))]).tocsr(),
        atom_b=spec.atom_b,
        con_lin=np.hstack([spec.con_lin, -np.ones((spec.con_lin.shape[0], 1))]),
        con_w=spec.con_w, con_c=spec.con_c,
        G=G, h=h,
        lo=np.r_[np.full(n, -np.inf), -np.inf], hi=np.r_[np.full(n, np.inf), cap],
        x0=np.r_[x0, min(smin, 0.0) - 1.0], scale=1.0,
    )
    z0 = aug.x0
    if not _atoms_ok(spec, x0):
        return None, 0
    if not _strictly_feasible(aug, z0):
        return None, 0
    p1 = SolverOptions(**{**opts.__dict__, "gap_tol": cap * 1e-3})
    z, it, _, _ = _barrier_solve(aug, z0, p1, stop=lambda z: z[-1] >= 0.5 * cap)
    if z[-1] > 0 and _strictly_feasible(spec, z[:-1]):
        return z[:-1], it
    return None, it


def inner_solve(spec: SubproblemSpec, opts: SolverOptions | None = None) -> InnerResult:
    """Maximise the subproblem's concave objective by a log-barrier interior-point method.

    The barrier weight follows ``t0 * growth**k`` and the run stops once the
    duality-gap proxy ``m / t`` falls below ``gap_tol`` (in units of
    ``spec.scale``).  A phase-one problem is solved when ``x0`` is not
    strictly feasible.
    """
    opts = opts or SolverOptions()
    x0 = np.asarray(spec.x0, float)
    it1 = 0
    if not _strictly_feasible(spec, x0):
        x1, it1 = _phase_one(spec, x0, opts)
        if x1 is None:
            return InnerResult(x0, spec.objective_value(x0) if _atoms_ok(spec, x0) else -np.inf,
                               False, "infeasible", it1, spec.max_violation(x0) if _atoms_ok(spec, x0) else np.inf,
                               binding=spec.binding(x0) if _atoms_ok(spec, x0) else "atom domain",
                               message="no strictly feasible point found")
        x0 = x1
    x, it, ok, gap = _barrier_solve(spec, x0, opts)
    status = "optimal" if ok else "max_iter"
    if not ok:
        log.debug("%s: barrier stopped after %d Newton steps (gap %.3g)", spec.block, it + it1, gap)
    return InnerResult(x, spec.objective_value(x), ok, status, it + it1, spec.max_violation(x),
                       gap=gap * spec.scale, binding=spec.binding(x))


def used_atoms(spec: SubproblemSpec) -> np.ndarray:
    used = spec.objective.weights > 0
    if spec.con_w.nnz:
        used = used | (np.asarray(abs(spec.con_w).sum(axis=0)).ravel() > 0)
    return used


def _atoms_ok(spec, x):
    if not spec.atom_A.shape[0]:
        return True
    return bool(np.all(spec.atoms(x)[used_atoms(spec)] > 0))


def with_elastic(spec: SubproblemSpec, penalty: float = 1e6) -> SubproblemSpec:
    """Copy of ``spec`` whose concave constraints may be violated at a linear price.

    Adds one slack e_j >= 0 per concave row (F_j + e_j >= 0) and subtracts
    ``penalty * Σ e`` (in units of ``spec.scale``) from the objective.
    """
    n, m = spec.n, spec.con_lin.shape[0]
    K = spec.atom_A.shape[0]
    F0 = spec.constraint_values(spec.x0) if _atoms_ok(spec, spec.x0) else np.full(m, -1.0)
    e0 = np.maximum(0.0, -F0) + 1.0
    quad = None
    if spec.objective.quad is not None:
        quad = np.zeros((n + m, n + m))
        quad[:n, :n] = spec.objective.quad
    return SubproblemSpec(
        block=spec.block + ":elastic", n=n + m,
        objective=ConcaveModel(lin=np.r_[spec.objective.lin, -penalty * spec.scale * np.ones(m)],
                               c0=spec.objective.c0, weights=spec.objective.weights.copy(), quad=quad),
        atom_A=sp.hstack([spec.atom_A, sp.csr_matrix((K, m))]).tocsr(), atom_b=spec.atom_b,
        con_lin=np.hstack([spec.con_lin, np.eye(m)]), con_w=spec.con_w, con_c=spec.con_c,
        con_names=spec.con_names,
        G=sp.hstack([spec.G, sp.csr_matrix((spec.G.shape[0], m))]).tocsr(), h=spec.h,
        row_names=spec.row_names,
        lo=np.r_[spec.lo, np.zeros(m)], hi=np.r_[spec.hi, np.full(m, np.inf)],
        x0=np.r_[spec.x0, e0], scale=spec.scale,
    )
