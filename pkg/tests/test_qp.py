import numpy as np
import pytest

from sosmpc.errors import InfeasibleError, TooLargeError, UnboundedError
from sosmpc.qp import kkt_enumerate_solve, kkt_residuals, qp_solve


def random_qp(rng, n, m, psd=False, n_eq=0, bounds=False):
    G = rng.standard_normal((n, n))
    H = G @ G.T + (0.0 if psd else 0.1) * np.eye(n)
    if psd:
        k = max(1, n - 2)
        G = rng.standard_normal((n, k))
        H = G @ G.T
    q = rng.standard_normal(n) * 3
    x0 = rng.standard_normal(n) * 0.5          # keeps the problem feasible
    A = rng.standard_normal((m, n))
    b = A @ x0 + rng.uniform(0.0, 1.0, m)
    E = e = None
    if n_eq:
        E = rng.standard_normal((n_eq, n))
        e = E @ x0
    lb = ub = None
    if bounds:
        lb = x0 - rng.uniform(0.1, 2.0, n)
        ub = x0 + rng.uniform(0.1, 2.0, n)
    return dict(H=H, q=q, A=A, b=b, E=E, e=e, lb=lb, ub=ub)


def test_single_active_constraint():
    res = qp_solve([[2.0]], [0.0], A=[[-1.0]], b=[-1.0])
    assert res.x[0] == pytest.approx(1.0)
    assert res.value == pytest.approx(1.0)
    assert res.active_set == {0}
    assert res.multipliers[0] == pytest.approx(2.0)


def test_symmetric_halfspace():
    # (x-2)^2 + (y-2)^2 with the constant dropped
    res = qp_solve(2 * np.eye(2), [-4.0, -4.0], A=[[1.0, 1.0]], b=[2.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0])
    assert res.value + 8.0 == pytest.approx(2.0)


def test_oracle_small_examples():
    res = kkt_enumerate_solve([[2.0]], [0.0], A=[[-1.0]], b=[-1.0])
    assert res.x[0] == pytest.approx(1.0)
    res = kkt_enumerate_solve(2 * np.eye(2), [0.0, 0.0], E=[[1.0, 1.0]], e=[1.0])
    np.testing.assert_allclose(res.x, [0.5, 0.5])


def test_six_variable_instance_matches_oracle():
    rng = np.random.default_rng(6)
    prob = random_qp(rng, 6, 10)
    a = qp_solve(**prob)
    o = kkt_enumerate_solve(**prob)
    assert a.value == pytest.approx(o.value, rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(a.x, o.x, atol=1e-7)


@pytest.mark.parametrize("psd", [False, True])
def test_random_against_oracle(psd):
    rng = np.random.default_rng(17 + psd)
    for trial in range(60):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 9))
        prob = random_qp(rng, n, m, psd=psd, n_eq=int(rng.integers(0, 2)) if n > 1 else 0,
                         bounds=bool(trial % 2) or psd)
        a = qp_solve(**prob)
        o = kkt_enumerate_solve(**prob)
        scale = max(1.0, abs(o.value))
        assert abs(a.value - o.value) <= 1e-9 * scale * 10, trial
        r = kkt_residuals(a, **prob)
        assert r["stationarity"] <= 1e-8 * r["scale"]
        assert r["primal"] <= 1e-9 * r["scale"]
        assert r["complementarity"] <= 1e-8 * r["scale"]
        assert r["dual"] <= 1e-10 * r["scale"]


def test_active_set_reports_tight_rows():
    rng = np.random.default_rng(2)
    prob = random_qp(rng, 5, 12)
    res = qp_solve(**prob)
    slack = prob["b"] - prob["A"] @ res.x
    for i in res.active:
        assert abs(slack[i]) <= 1e-8 * max(1.0, abs(prob["b"][i]))
    assert all(slack[i] > 1e-6 for i in range(len(slack)) if i not in res.active_set)


def test_infeasible():
    with pytest.raises(InfeasibleError):
        qp_solve(np.eye(1), [0.0], A=[[1.0], [-1.0]], b=[0.0, -1.0])
    with pytest.raises(InfeasibleError):
        qp_solve(np.eye(2), [0.0, 0.0], E=[[1.0, 1.0], [1.0, 1.0]], e=[1.0, 2.0])
    with pytest.raises(InfeasibleError):
        kkt_enumerate_solve(np.eye(1), [0.0], A=[[1.0], [-1.0]], b=[0.0, -1.0])


def test_unbounded_linear_program():
    with pytest.raises(UnboundedError):
        qp_solve(np.zeros((2, 2)), [1.0, 0.0], A=[[0.0, 1.0]], b=[1.0])


def test_linear_program_with_bounds():
    res = qp_solve(np.zeros((2, 2)), [-1.0, -2.0], A=[[1.0, 1.0]], b=[1.5], lb=[0, 0], ub=[1, 1])
    np.testing.assert_allclose(res.x, [0.5, 1.0], atol=1e-12)
    assert res.value == pytest.approx(-2.5)


def test_dependent_consistent_equalities():
    res = qp_solve(np.eye(2), [0.0, 0.0], E=[[1.0, 1.0], [2.0, 2.0]], e=[1.0, 2.0])
    np.testing.assert_allclose(res.x, [0.5, 0.5])


def test_oracle_size_cap():
    with pytest.raises(TooLargeError):
        kkt_enumerate_solve(np.eye(2), np.zeros(2), A=np.ones((17, 2)), b=np.ones(17))
