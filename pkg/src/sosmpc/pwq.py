"""Scalar convex piecewise-quadratic functions on closed intervals.

These are the objects a local controller ships to the coordinator: on the
piece ``[I[r-1], I[r]]`` the function equals ``0.5*h*z**2 + f*z + g``.
"""

from dataclasses import dataclass, field
import math

from .errors import DomainError

__all__ = [
    "Piece",
    "PwqScalar",
    "Violation",
    "ValidationReport",
    "pwq_eval",
    "pwq_derivative",
    "pwq_validate",
    "pwq_minimize",
    "cont_tolerance",
    "dom_tolerance",
]


@dataclass(frozen=True)
class Piece:
    h: float
    f: float
    g: float

    def __call__(self, z):
        return 0.5 * self.h * z * z + self.f * z + self.g

    def slope(self, z):
        return self.h * z + self.f


@dataclass(frozen=True)
class PwqScalar:
    """Piecewise quadratic ``z -> 0.5*h_r*z^2 + f_r*z + g_r`` on ``[I_0, I_N]``.

    ``breakpoints`` has one more entry than ``pieces``.  Construction only
    checks shapes; use :func:`pwq_validate` for the mathematical invariants.
    """

    breakpoints: tuple
    pieces: tuple

    def __post_init__(self):
        bps = tuple(float(v) for v in self.breakpoints)
        pcs = tuple(p if isinstance(p, Piece) else Piece(*map(float, p)) for p in self.pieces)
        if len(pcs) < 1 or len(bps) != len(pcs) + 1:
            raise ValueError("need N >= 1 pieces and N + 1 breakpoints")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "pieces", pcs)

    @classmethod
    def from_coefficients(cls, breakpoints, h, f, g):
        return cls(breakpoints, [Piece(float(a), float(b), float(c)) for a, b, c in zip(h, f, g)])

    @property
    def n_pieces(self):
        return len(self.pieces)

    @property
    def domain(self):
        return self.breakpoints[0], self.breakpoints[-1]

    def widths(self):
        b = self.breakpoints
        return [b[r + 1] - b[r] for r in range(len(self.pieces))]

    def __call__(self, z):
        return pwq_eval(self, z)

    def to_dict(self):
        return {
            "breakpoints": list(self.breakpoints),
            "pieces": [{"h": p.h, "f": p.f, "g": p.g} for p in self.pieces],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["breakpoints"], [Piece(float(p["h"]), float(p["f"]), float(p["g"]))
                                         for p in data["pieces"]])


def dom_tolerance(fn):
    lo, hi = fn.domain
    return 1e-9 * max(1.0, abs(hi - lo))


def cont_tolerance(fn):
    """Scale-relative continuity tolerance: 1e-8 * max(1, largest |value| at breakpoints)."""
    scale = 1.0
    bps = fn.breakpoints
    for r, p in enumerate(fn.pieces):
        scale = max(scale, abs(p(bps[r])), abs(p(bps[r + 1])))
    return 1e-8 * scale


def _locate(fn, z):
    """Index of the piece containing z (leftmost at a shared breakpoint)."""
    bps = fn.breakpoints
    lo, hi = 0, len(fn.pieces) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if z <= bps[mid + 1]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _check_domain(fn, z):
    lo, hi = fn.domain
    tol = dom_tolerance(fn)
    if not (lo - tol <= z <= hi + tol):
        raise DomainError(f"z={z!r} outside [{lo!r}, {hi!r}]")


def pwq_eval(fn, z):
    _check_domain(fn, z)
    return fn.pieces[_locate(fn, z)](z)


def pwq_derivative(fn, z, side="right"):
    """One-sided derivative at ``z``; ``side`` is ``"left"`` or ``"right"``."""
    _check_domain(fn, z)
    bps = fn.breakpoints
    r = _locate(fn, z)
    if side == "right" and r + 1 < len(fn.pieces) and z >= bps[r + 1]:
        r += 1
    return fn.pieces[r].slope(z)


@dataclass(frozen=True)
class Violation:
    invariant: str
    location: float
    detail: str

    def to_dict(self):
        return {"invariant": self.invariant, "location": self.location, "detail": self.detail}


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def kinds(self):
        return {v.invariant for v in self.violations}

    def to_dict(self):
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def pwq_validate(fn, rel_tol=1e-8):
    """Check ordering, continuity, convexity and non-redundancy of ``fn``.

    ``rel_tol`` scales the continuity and slope checks; the default gives
    :func:`cont_tolerance`.
    """
    report = ValidationReport()
    bps, pcs = fn.breakpoints, fn.pieces
    tol = cont_tolerance(fn) * (rel_tol / 1e-8)
    if not all(math.isfinite(v) for v in bps) or not all(
            math.isfinite(c) for p in pcs for c in (p.h, p.f, p.g)):
        report.violations.append(Violation("finite", bps[0], "non-finite data"))
        return report
    for r in range(len(pcs)):
        if not bps[r] < bps[r + 1]:
            report.violations.append(
                Violation("ordering", bps[r], f"I[{r}]={bps[r]!r} >= I[{r + 1}]={bps[r + 1]!r}"))
        if pcs[r].h < 0:
            report.violations.append(
                Violation("convexity", bps[r], f"piece {r} has negative curvature {pcs[r].h!r}"))
    for r in range(len(pcs) - 1):
        z = bps[r + 1]
        left, right = pcs[r], pcs[r + 1]
        vl, vr = left(z), right(z)
        if abs(vl - vr) > tol:
            report.violations.append(
                Violation("continuity", z, f"left value {vl!r} != right value {vr!r}"))
        dl, dr = left.slope(z), right.slope(z)
        dtol = rel_tol * max(1.0, abs(dl), abs(dr))
        if dr < dl - dtol:
            report.violations.append(
                Violation("convexity", z, f"slope drops from {dl!r} to {dr!r}"))
        # two adjacent copies of the same affine function must be merged
        if (left.h == 0.0 and right.h == 0.0 and abs(left.f - right.f) <= dtol
                and abs(left.g - right.g) <= tol):
            report.violations.append(
                Violation("redundancy", z, f"pieces {r} and {r + 1} are the same affine function"))
    return report


def pwq_minimize(fn):
    """Global minimiser of ``fn`` over its domain; the smallest one on ties."""
    bps = fn.breakpoints
    tol = cont_tolerance(fn)
    best_z, best_v = None, math.inf
    for r, p in enumerate(fn.pieces):
        lo, hi = bps[r], bps[r + 1]
        if p.h > 0:
            z = min(max(-p.f / p.h, lo), hi)
        else:
            z = lo if p(lo) <= p(hi) else hi
        v = p(z)
        if v < best_v - tol:
            best_z, best_v = z, v
    return best_z, best_v
