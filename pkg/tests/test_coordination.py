import math
import random

import numpy as np
import pytest

from sosmpc.coordination import (Coupling, CoordinationInstance, add_slacks, coordinate,
                                 hierarchical_step, recover_theta, slice_to_separable, RecoveryMap)
from sosmpc.cqkp import bps_solve
from sosmpc.errors import DomainError, PipelineError
from sosmpc.microgrid import build_fleet, couplings_at
from sosmpc.parametric import LocalProblem, centralized_solve
from sosmpc.pwq import Piece, PwqScalar, pwq_eval

from pwq_factory import random_convex

SQ_LINE = PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 2.0, -1.0)])
FLAT = PwqScalar([-1.0, 0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 0.0, 0.0), Piece(2.0, -2.0, 1.0)])
SQUARE = PwqScalar([-1.0, 1.0], [Piece(2.0, 0.0, 0.0)])


def assert_fill_order(res, tol_rel=1e-8):
    rmap = res.stats["rmap"]
    th = res.theta_parts
    for idx, wid in zip(rmap.indices, rmap.widths):
        for r, (k, w) in enumerate(zip(idx, wid)):
            tol = tol_rel * max(w, 1e-300)
            if th[k] > tol:
                for s in range(r):
                    assert th[idx[s]] >= wid[s] - tol_rel * wid[s]
            if th[k] < w - tol:
                for s in range(r + 1, len(idx)):
                    assert th[idx[s]] <= tol_rel * wid[s]


def test_add_slacks_examples():
    inst = CoordinationInstance([PwqScalar([0.0, 3.0], [Piece(1.0, 0.0, 0.0)])], [Coupling([1.0], 2.0, "le")])
    eq = add_slacks(inst)
    assert eq.n_slack == 1
    assert eq.slices[1].domain == (0.0, 2.0)
    assert eq.couplings[0] == Coupling([1.0, 1.0], 2.0, "eq")
    same = CoordinationInstance([SQUARE], [Coupling([1.0], 0.5)])
    assert add_slacks(same) is same


def test_slack_pair_matches_grid():
    rng = random.Random(1)
    f1 = random_convex(rng, lo=0.0, hi=1.0)
    f2 = random_convex(rng, lo=0.0, hi=1.0)
    inst = CoordinationInstance([f1, f2], [Coupling([1.0, 1.0], 1.0, "le")])
    eq = add_slacks(inst)
    assert eq.slices[2].domain == (0.0, 1.0)
    res = coordinate(inst)
    grid = np.linspace(0.0, 1.0, 200)
    v1 = np.array([pwq_eval(f1, z) for z in grid])
    v2 = np.array([pwq_eval(f2, z) for z in grid])
    tot = v1[:, None] + v2[None, :]
    tot[grid[:, None] + grid[None, :] > 1.0 + 1e-12] = np.inf
    best = tot.min()
    assert res.value <= best + 1e-9
    assert best - res.value <= 10 * (1.0 / 199)
    assert res.residuals[0] == 0.0


def test_slice_to_separable_example():
    inst = CoordinationInstance([SQ_LINE], [Coupling([1.0], 1.5)])
    knap, rmap, offset, fixed = slice_to_separable(inst)
    assert knap.d == (2.0, 0.0)
    assert knap.a == (0.0, -2.0)
    assert knap.l == (0.0, 0.0) and knap.u == (1.0, 1.0)
    assert knap.B == ((1.0, 1.0),) and knap.c == (1.5,)
    assert fixed == {}
    sol = bps_solve(knap)
    assert sol.x == [pytest.approx(1.0), pytest.approx(0.5)]
    assert recover_theta(sol.x, rmap) == [pytest.approx(1.5)]
    assert sol.value + offset == pytest.approx(pwq_eval(SQ_LINE, 1.5)) == 2.0


def test_recover_theta_examples():
    rmap = RecoveryMap([0.0], [[0, 1]], [[1.0, 1.0]])
    assert recover_theta([1.0, 0.5], rmap) == [1.5]
    rmap = RecoveryMap([-1.0, 2.0], [[0], [1, 2]], [[2.0], [1.0, 1.0]])
    assert recover_theta([0.0, 0.0, 0.0], rmap) == [-1.0, 2.0]


def test_coordinate_examples():
    res = coordinate(CoordinationInstance([FLAT, FLAT], [Coupling([1.0, 1.0], 1.0)]))
    assert res.value == pytest.approx(0.0, abs=1e-15)
    assert math.fsum(res.theta) == pytest.approx(1.0, abs=1e-15)
    res = coordinate(CoordinationInstance([SQUARE, SQUARE], [Coupling([1.0, 1.0], 1.0)]))
    assert res.theta == [pytest.approx(0.5), pytest.approx(0.5)]
    assert res.value == pytest.approx(0.5)


def test_two_rows_dispatch_to_hyperplane_search():
    f = [SQUARE, SQUARE, SQUARE]
    inst = CoordinationInstance(f, [Coupling([1.0, 1.0, 1.0], 1.0), Coupling([1.0, 0.0, 0.0], 0.2)])
    res = coordinate(inst)
    assert res.theta == [pytest.approx(0.2), pytest.approx(0.4), pytest.approx(0.4)]
    assert max(res.residuals) <= 1e-9


def test_invalid_slice_rejected():
    bad = PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 1.0, 0.0)])
    with pytest.raises(DomainError):
        coordinate(CoordinationInstance([bad], [Coupling([1.0], 1.0)]))


def test_point_slice_is_eliminated():
    point = PwqScalar([0.3, 0.3], [Piece(0.0, 0.0, 4.0)])
    res = coordinate(CoordinationInstance([point, SQUARE], [Coupling([1.0, 1.0], 0.8)]))
    assert res.theta == [0.3, pytest.approx(0.5)]
    assert res.value == pytest.approx(4.25)


def test_random_pipeline_properties():
    rng = random.Random(42)
    for _ in range(100):
        M = rng.randint(1, 5)
        slices = [random_convex(rng) for _ in range(M)]
        a = [rng.choice([1.0, -1.0, rng.uniform(0.2, 2.0)]) for _ in range(M)]
        lo = sum(min(ai * s.domain[0], ai * s.domain[1]) for ai, s in zip(a, slices))
        hi = sum(max(ai * s.domain[0], ai * s.domain[1]) for ai, s in zip(a, slices))
        inst = CoordinationInstance(slices, [Coupling(a, rng.uniform(lo, hi))])
        res = coordinate(inst)
        assert_fill_order(res)
        total = math.fsum(pwq_eval(s, t) for s, t in zip(slices, res.theta))
        assert res.knapsack_value == pytest.approx(total, rel=1e-9, abs=1e-9)
        assert res.residuals[0] <= 1e-9 * max(1.0, abs(inst.couplings[0].b))


def test_relaxation_exact_on_pinned_single_slice():
    rng = random.Random(7)
    for _ in range(200):
        f = random_convex(rng)
        c = rng.uniform(*f.domain)
        res = coordinate(CoordinationInstance([f], [Coupling([1.0], c)]))
        assert res.theta[0] == pytest.approx(c, abs=1e-12)
        assert res.value == pwq_eval(f, res.theta[0])
        assert res.knapsack_value == pytest.approx(pwq_eval(f, c), rel=1e-9, abs=1e-9)


def test_pair_matches_grid_search():
    rng = random.Random(3)
    for _ in range(10):
        f1, f2 = random_convex(rng), random_convex(rng)
        c = rng.uniform(-8, 8)
        res = coordinate(CoordinationInstance([f1, f2], [Coupling([1.0, 1.0], c)]))
        lo, hi = max(-5.0, c - 5.0), min(5.0, c + 5.0)
        grid = np.linspace(lo, hi, 10_000)
        vals = [pwq_eval(f1, z) + pwq_eval(f2, c - z) for z in grid]
        best = min(vals)
        step = grid[1] - grid[0]
        assert res.value <= best + 1e-9
        assert best - res.value <= 30.0 * step


def test_inward_shift_lowers_sum():
    rng = random.Random(10)
    for _ in range(2000):
        f = random_convex(rng, strict=True)
        lo, hi = f.domain
        x1, x2 = sorted(rng.uniform(lo, hi) for _ in range(2))
        if x2 - x1 < 1e-6:
            continue
        xi = rng.uniform(0.0, x2 - x1)
        if xi <= 0.0 or xi >= x2 - x1:
            continue
        lhs = pwq_eval(f, x1 + xi) + pwq_eval(f, x2 - xi)
        rhs = pwq_eval(f, x1) + pwq_eval(f, x2)
        assert lhs < rhs + 1e-12 * max(1.0, abs(rhs))


def test_json_round_trip():
    inst = CoordinationInstance([SQ_LINE, FLAT], [Coupling([1.0, 2.0], 1.0), Coupling([0.0, 1.0], 0.5, "le")])
    back = CoordinationInstance.from_dict(inst.to_dict())
    assert back.slices == inst.slices and back.couplings == inst.couplings


# --- hierarchical step ---------------------------------------------------

def clamped_tracking():
    return LocalProblem(Qpp=[[1.0]], Quu=[[1.0]], Qpu=[[-2.0]],
                        C_U=[[1.0], [-1.0], [0.0], [0.0]], C_c=[1.0, 0.0, 2.0, 1.0],
                        C_p=[[0.0], [0.0], [-1.0], [1.0]])


def test_single_subsystem_pinned():
    p = clamped_tracking()
    res = hierarchical_step([p], [[]], [Coupling([1.0], 0.7)])
    U, _ = p.solve_at([], 0.7)
    assert res.u0[0] == pytest.approx(U[0])
    assert set(res.timings) == {"slice", "coordinate", "evaluate"}


@pytest.mark.parametrize("case", [1, 2])
def test_microgrid_step_matches_centralized(case):
    fleet = build_fleet(6, 0)
    cp = couplings_at(fleet, 8, case)
    h = hierarchical_step(fleet.problems, fleet.phis(), cp)
    c = centralized_solve(fleet.problems, fleet.phis(), cp)
    assert h.value == pytest.approx(c.value, rel=1e-5)
    assert max(h.coordination.residuals) <= 1e-7 * max(1.0, max(abs(r.b) for r in cp))


def test_infeasible_coupling_names_coordination_phase():
    fleet = build_fleet(6, 0)
    cap = sum(s.theta_bounds[1] * a for s, a in zip(fleet.subsystems, fleet.e_coef))
    with pytest.raises(PipelineError) as info:
        hierarchical_step(fleet.problems, fleet.phis(), [Coupling(fleet.e_coef, 2 * cap)])
    assert info.value.phase == "coordinate"
    assert info.value.to_dict()["error"] == "infeasible"
