import json
import math
import random

import pytest

from sosmpc.errors import DomainError
from sosmpc.pwq import Piece, PwqScalar, pwq_derivative, pwq_eval, pwq_minimize, pwq_validate

from pwq_factory import random_convex


def sq_then_line():
    # z^2 on [0, 1], 2z - 1 on [1, 2]
    return PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 2.0, -1.0)])


def test_eval_examples():
    f = sq_then_line()
    assert pwq_eval(f, 1.5) == 2.0
    assert pwq_eval(f, 1.0) == 1.0
    assert f.pieces[0](1.0) == f.pieces[1](1.0) == 1.0


def test_eval_outside_domain():
    f = sq_then_line()
    with pytest.raises(DomainError):
        pwq_eval(f, 2.1)
    with pytest.raises(DomainError):
        pwq_eval(f, -1e-3)
    # within the domain tolerance
    assert pwq_eval(f, 2.0 + 1e-12) == pytest.approx(3.0)


def test_validate_ok():
    assert pwq_validate(sq_then_line()).ok


def test_validate_convexity_violation():
    f = PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 1.0, 0.0)])
    rep = pwq_validate(f)
    assert "convexity" in rep.kinds()
    assert "continuity" not in rep.kinds()
    assert rep.violations[0].location == 1.0


def test_validate_continuity_and_ordering():
    f = PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 2.0, 0.0)])
    assert "continuity" in pwq_validate(f).kinds()
    g = PwqScalar([0.0, 0.0], [Piece(1.0, 0.0, 0.0)])
    assert "ordering" in pwq_validate(g).kinds()
    neg = PwqScalar([0.0, 1.0], [Piece(-1.0, 0.0, 0.0)])
    assert "convexity" in pwq_validate(neg).kinds()


def test_validate_redundancy():
    f = PwqScalar([0.0, 1.0, 2.0], [Piece(0.0, 1.0, 0.0), Piece(0.0, 1.0, 0.0)])
    assert pwq_validate(f).kinds() == {"redundancy"}


def test_validate_tolerance_override():
    f = PwqScalar([0.0, 1.0, 2.0], [Piece(2.0, 0.0, 0.0), Piece(0.0, 2.0, -1.0 + 1e-6)])
    assert "continuity" in pwq_validate(f).kinds()
    assert pwq_validate(f, rel_tol=1e-5).ok


def test_minimize_examples():
    assert pwq_minimize(PwqScalar([-1.0, 2.0], [Piece(2.0, 0.0, 0.0)])) == (0.0, 0.0)
    assert pwq_minimize(PwqScalar([1.0, 3.0], [Piece(0.0, 2.0, -1.0)])) == (1.0, 1.0)
    # clamped-tracking slice: flat middle, smallest minimiser wins
    f = PwqScalar([-1.0, 0.0, 1.0, 2.0],
                  [Piece(2.0, 0.0, 0.0), Piece(0.0, 0.0, 0.0), Piece(2.0, -2.0, 1.0)])
    assert pwq_minimize(f) == (0.0, 0.0)


def test_derivative_sides():
    f = sq_then_line()
    assert pwq_derivative(f, 1.0, "left") == pytest.approx(2.0)
    assert pwq_derivative(f, 1.0, "right") == pytest.approx(2.0)
    assert pwq_derivative(f, 0.5) == pytest.approx(1.0)


def test_json_round_trip_is_bit_exact():
    rng = random.Random(3)
    for _ in range(20):
        f = random_convex(rng)
        g = PwqScalar.from_dict(json.loads(json.dumps(f.to_dict())))
        assert g == f


def test_random_functions_are_valid_and_convex():
    rng = random.Random(11)
    for _ in range(200):
        f = random_convex(rng)
        assert pwq_validate(f).ok
        lo, hi = f.domain
        z1, z2 = sorted(rng.uniform(lo, hi) for _ in range(2))
        t = rng.random()
        lhs = pwq_eval(f, t * z1 + (1 - t) * z2)
        rhs = t * pwq_eval(f, z1) + (1 - t) * pwq_eval(f, z2)
        assert lhs <= rhs + 1e-8 * max(1.0, abs(rhs))


def test_breakpoint_continuity_on_random_functions():
    rng = random.Random(5)
    for _ in range(100):
        f = random_convex(rng)
        for r in range(f.n_pieces - 1):
            z = f.breakpoints[r + 1]
            assert f.pieces[r](z) == pytest.approx(f.pieces[r + 1](z), rel=1e-9, abs=1e-9)


def test_minimize_never_exceeds_samples():
    rng = random.Random(8)
    for _ in range(30):
        f = random_convex(rng)
        zmin, vmin = pwq_minimize(f)
        lo, hi = f.domain
        assert lo <= zmin <= hi
        assert math.isclose(pwq_eval(f, zmin), vmin, rel_tol=1e-12, abs_tol=1e-12)
        for _ in range(1000):
            assert vmin <= pwq_eval(f, rng.uniform(lo, hi)) + 1e-9
