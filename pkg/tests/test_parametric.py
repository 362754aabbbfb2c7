import json

import numpy as np
import pytest

from sosmpc.errors import InfeasibleError
from sosmpc.microgrid import ChpParams, StorageParams, chp_problem, storage_problem
from sosmpc.parametric import (LocalProblem, SliceBundle, centralized_solve, condense,
                               parametric_slice)
from sosmpc.pwq import pwq_derivative, pwq_eval, pwq_validate


def clamped_tracking():
    """J = (U - Theta)^2, 0 <= U <= 1, -1 <= Theta <= 2, no local parameters."""
    return LocalProblem(Qpp=[[1.0]], Quu=[[1.0]], Qpu=[[-2.0]],
                        C_U=[[1.0], [-1.0], [0.0], [0.0]], C_c=[1.0, 0.0, 2.0, 1.0],
                        C_p=[[0.0], [0.0], [-1.0], [1.0]])


def pointwise(prob, phi, theta):
    return prob.solve_at(phi, theta)[1]


def test_clamped_tracking_slice():
    sb = parametric_slice(clamped_tracking(), [])
    v = sb.value
    assert v.breakpoints == pytest.approx((-1.0, 0.0, 1.0, 2.0))
    h = [p.h for p in v.pieces]
    f = [p.f for p in v.pieces]
    g = [p.g for p in v.pieces]
    np.testing.assert_allclose(h, [2.0, 0.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(f, [0.0, 0.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(g, [0.0, 0.0, 1.0], atol=1e-12)
    for theta, u in [(-0.5, 0.0), (0.5, 0.5), (1.5, 1.0)]:
        assert sb.policy_at(theta)[0] == pytest.approx(u)
    assert pwq_eval(v, -0.5) == pytest.approx(0.25)
    assert pointwise(clamped_tracking(), [], -0.5) == pytest.approx(0.25)


def test_left_piece_policy_at_breakpoint():
    sb = parametric_slice(clamped_tracking(), [])
    K, k = sb.policy[0]
    assert sb.policy_at(0.0) == pytest.approx(K * 0.0 + k)


def test_chp_slice_matches_pointwise_qp():
    prob = chp_problem(ChpParams(0.0, 0.6))
    phi = np.zeros(2)
    sb = parametric_slice(prob, phi)
    assert pwq_validate(sb.value).ok
    lo, hi = sb.interval
    assert (lo, hi) == pytest.approx((0.0, 20.0))
    for theta in np.linspace(lo, hi, 50):
        ref = pointwise(prob, phi, theta)
        assert pwq_eval(sb.value, theta) == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_infeasible_slice():
    # U <= Theta - 5, U >= 0, Theta <= 1
    prob = LocalProblem(Qpp=[[1.0]], Quu=[[1.0]], Qpu=[[0.0]],
                        C_U=[[1.0], [-1.0], [0.0]], C_c=[-5.0, 0.0, 1.0],
                        C_p=[[1.0], [0.0], [-1.0]])
    with pytest.raises(InfeasibleError):
        parametric_slice(prob, [])


def _random_subsystem(rng):
    zeta = rng.uniform()
    if rng.uniform() < 0.5:
        prob = chp_problem(ChpParams(zeta, rng.uniform(0.5, 0.7)))
        xmax = 20 * (1 + 4 * zeta)
        phi = np.full(2, rng.uniform(0, 0.5) * xmax)   # a steady state
    else:
        prob = storage_problem(StorageParams(zeta, "e"))
        phi = rng.uniform(0, 1, 2)
    return prob, phi


def test_slices_valid_continuous_and_differentiable():
    rng = np.random.default_rng(4)
    for _ in range(8):
        prob, phi = _random_subsystem(rng)
        try:
            sb = parametric_slice(prob, phi)
        except InfeasibleError:
            continue
        v = sb.value
        assert pwq_validate(v).ok
        lo, hi = v.domain
        width = hi - lo
        # policy continuity across breakpoints
        for r in range(v.n_pieces - 1):
            z = v.breakpoints[r + 1]
            (K1, k1), (K2, k2) = sb.policy[r], sb.policy[r + 1]
            np.testing.assert_allclose(K1 * z + k1, K2 * z + k2, atol=1e-8 * max(1.0, width))
        # slope against central differences of the pointwise optimum
        step = 1e-5 * width
        for r in range(v.n_pieces):
            a, b = v.breakpoints[r], v.breakpoints[r + 1]
            if b - a < 10 * step:
                continue
            z = 0.5 * (a + b)
            fd = (pointwise(prob, phi, z + step) - pointwise(prob, phi, z - step)) / (2 * step)
            assert pwq_derivative(v, z) == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_slice_value_equals_pointwise_on_random_samples():
    rng = np.random.default_rng(9)
    prob = storage_problem(StorageParams(0.3, "h"))
    phi = np.array([0.2, 0.5])
    sb = parametric_slice(prob, phi)
    lo, hi = sb.interval
    for theta in rng.uniform(lo, hi, 200):
        assert pwq_eval(sb.value, theta) == pytest.approx(pointwise(prob, phi, theta), rel=1e-7, abs=1e-9)


def test_condense_matches_simulation():
    A = np.array([[0.7, -0.15], [1.0, 0.0]])
    B = np.array([[0.6], [0.0]])
    Sx, Su = condense(A, B, 5)
    x0 = np.array([1.0, -2.0])
    U = np.array([0.3, -0.1, 0.5, 0.0, 1.0])
    x, traj = x0, []
    for u in U:
        x = A @ x + B[:, 0] * u
        traj.append(x)
    np.testing.assert_allclose(Sx @ x0 + Su @ U, np.concatenate(traj), atol=1e-14)


def test_local_problem_checks():
    with pytest.raises(ValueError):
        LocalProblem(Qpp=[[1.0]], Quu=[[0.0]], Qpu=[[0.0]], C_U=[[1.0]], C_c=[1.0], C_p=[[0.0]])
    with pytest.raises(ValueError):
        LocalProblem(Qpp=[[1.0]], Quu=[[1.0, 2.0], [0.0, 1.0]], Qpu=[[0.0, 0.0]],
                     C_U=[[1.0, 0.0]], C_c=[1.0], C_p=[[0.0]])


def test_json_round_trips():
    prob = chp_problem(ChpParams(0.25, 0.55))
    back = LocalProblem.from_dict(json.loads(json.dumps(prob.to_dict())))
    for name in ("Qpp", "Quu", "Qpu", "C_U", "C_c", "C_p"):
        assert np.array_equal(getattr(back, name), getattr(prob, name))
    sb = parametric_slice(clamped_tracking(), [])
    sb2 = SliceBundle.from_dict(json.loads(json.dumps(sb.to_dict())))
    assert sb2.value == sb.value
    for (K1, k1), (K2, k2) in zip(sb.policy, sb2.policy):
        assert np.array_equal(K1, K2) and np.array_equal(k1, k2)


def test_centralized_single_and_pair():
    p = clamped_tracking()
    res = centralized_solve([p], [[]], [([1.0], 1.5)])
    assert res.theta[0] == pytest.approx(1.5)
    assert res.value == pytest.approx(0.25)
    res = centralized_solve([p, p], [[], []], [{"a": [1.0, 1.0], "b": 1.0}])
    np.testing.assert_allclose(res.theta, [0.5, 0.5], atol=1e-9)
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_centralized_inequality_coupling():
    p = clamped_tracking()
    res = centralized_solve([p], [[]], [([1.0], -0.5, "le")])
    assert res.theta[0] == pytest.approx(-0.5)
    assert res.value == pytest.approx(0.25)
