import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from iotprice.kernel import ConcaveModel, SolverOptions, SubproblemSpec, inner_solve, with_elastic


def active_set_qp(Q, c, A, b):
    """max c·x - ½xᵀQx s.t. A x <= b, by enumerating active sets (tiny problems only)."""
    n, m = len(c), len(b)
    best, arg = -np.inf, None
    for k in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Aa = A[act]
            K = np.block([[Q, Aa.T], [Aa, np.zeros((k, k))]])
            rhs = np.r_[c, b[act]]
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(A @ x <= b + 1e-9) and np.all(lam >= -1e-9):
                val = c @ x - 0.5 * x @ Q @ x
                if val > best:
                    best, arg = val, x
    return arg, best


def test_unconstrained_concave_quadratic():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = np.array([1.0, -1.0])
    spec = SubproblemSpec("qp", 2, ConcaveModel(lin=c, quad=Q), lo=np.full(2, -10.0), hi=np.full(2, 10.0))
    res = inner_solve(spec)
    assert res.status == "optimal"
    assert np.allclose(res.x, np.linalg.solve(Q, c), atol=1e-6)


def test_box_lp_vertex():
    spec = SubproblemSpec("lp", 3, ConcaveModel(lin=np.array([1.0, -2.0, 0.5])), lo=np.zeros(3), hi=np.ones(3))
    res = inner_solve(spec)
    assert np.allclose(res.x, [1.0, 0.0, 1.0], atol=1e-6)
    assert res.value == pytest.approx(1.5, abs=1e-6)


def test_log_objective_closed_form():
    # max log(x) + log(y) s.t. x + y <= 2  ->  x = y = 1
    A = sp.csr_matrix(np.eye(2))
    spec = SubproblemSpec("log", 2, ConcaveModel(lin=np.zeros(2), weights=np.ones(2)), atom_A=A,
                          atom_b=np.zeros(2), G=sp.csr_matrix([[1.0, 1.0]]), h=np.array([2.0]),
                          lo=np.zeros(2), x0=np.array([0.5, 0.5]))
    res = inner_solve(spec)
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_concave_constraint():
    # max -x s.t. log(x) >= log(3)  ->  x = 3, starting infeasible (phase one)
    spec = SubproblemSpec("rate", 1, ConcaveModel(lin=np.array([-1.0])), atom_A=sp.csr_matrix([[1.0]]),
                          atom_b=np.zeros(1), con_lin=np.zeros((1, 1)), con_w=sp.csr_matrix([[1.0]]),
                          con_c=np.array([-np.log(3.0)]), lo=np.array([0.0]), hi=np.array([10.0]),
                          x0=np.array([1.0]))
    res = inner_solve(spec)
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(3.0, rel=1e-6)


def test_infeasible_reports_binding_row():
    spec = SubproblemSpec("bad", 1, ConcaveModel(lin=np.array([1.0])), G=sp.csr_matrix([[1.0], [-1.0]]),
                          h=np.array([1.0, -2.0]), row_names=["cap", "floor"], x0=np.array([0.0]))
    res = inner_solve(spec)
    assert res.status == "infeasible"
    assert res.binding in ("cap", "floor")


def test_elastic_copy_is_always_feasible():
    spec = SubproblemSpec("rate", 1, ConcaveModel(lin=np.array([-1.0])), atom_A=sp.csr_matrix([[1.0]]),
                          atom_b=np.zeros(1), con_lin=np.zeros((1, 1)), con_w=sp.csr_matrix([[1.0]]),
                          con_c=np.array([-np.log(30.0)]), lo=np.array([0.0]), hi=np.array([10.0]),
                          x0=np.array([1.0]))
    assert inner_solve(spec).status == "infeasible"
    res = inner_solve(with_elastic(spec, 20.0))
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(10.0, rel=1e-6)          # pushes to the cap, pays for the rest
    assert res.x[1] == pytest.approx(np.log(3.0), rel=1e-5)


def test_spec_validation():
    with pytest.raises(ValueError):
        SubproblemSpec("x", 2, ConcaveModel(lin=np.zeros(3)))
    with pytest.raises(ValueError):
        SubproblemSpec("x", 1, ConcaveModel(lin=np.zeros(1)), lo=np.ones(1), hi=np.zeros(1))
    with pytest.raises(ValueError):
        SubproblemSpec("x", 1, ConcaveModel(lin=np.zeros(1), weights=-np.ones(1)),
                       atom_A=sp.csr_matrix([[1.0]]), atom_b=np.zeros(1))


def test_iteration_budget_reported():
    Q = np.eye(2)
    spec = SubproblemSpec("qp", 2, ConcaveModel(lin=np.ones(2), quad=Q), lo=np.zeros(2), hi=np.ones(2))
    res = inner_solve(spec, SolverOptions(max_total=2))
    assert res.status == "max_iter" and not res.converged


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_random_qp_matches_active_set_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 4
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    b = rng.random(m) + 0.5                      # x = 0 strictly feasible
    Abox = np.vstack([A, np.eye(n), -np.eye(n)])
    bbox = np.r_[b, np.full(2 * n, 5.0)]
    x_or, v_or = active_set_qp(Q, c, Abox, bbox)
    spec = SubproblemSpec("qp", n, ConcaveModel(lin=c, quad=Q), G=sp.csr_matrix(A), h=b,
                          lo=np.full(n, -5.0), hi=np.full(n, 5.0), x0=np.zeros(n))
    res = inner_solve(spec)
    assert res.status == "optimal"
    assert res.value == pytest.approx(v_or, abs=1e-6 * max(1.0, abs(v_or)))
    assert np.allclose(res.x, x_or, atol=1e-4)
