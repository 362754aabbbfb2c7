"""Continuous quadratic knapsack (one coupling row) by breakpoint search.

The problem is::

    minimize    sum_i 0.5*d_i*x_i**2 - a_i*x_i
    subject to  b'x = c,  l <= x <= u

with ``d >= 0``.  For a multiplier ``lam`` the relaxed minimiser is
``x_i = median(l_i, (a_i - lam*b_i)/d_i, u_i)`` and ``g(lam) = b'x(lam)``
is non-increasing; the search brackets the root of ``g(lam) = c`` by
repeatedly testing the median of the remaining breakpoints.

Everything here works on plain lists of floats.  The per-element work is
a handful of float operations, so numpy call overhead would dominate.
"""

from dataclasses import dataclass, field
import math

from .errors import DomainError, InfeasibleError
from .select import lower_median

__all__ = [
    "KnapsackInstance",
    "KnapsackSolution",
    "LambdaEval",
    "Preprocessed",
    "preprocess",
    "eval_x_lambda",
    "bps_solve",
    "knapsack_kkt_residuals",
]


@dataclass(frozen=True)
class KnapsackInstance:
    """Separable box-constrained QP with ``m`` coupling equalities ``Bx = c``."""

    d: tuple
    a: tuple
    l: tuple
    u: tuple
    B: tuple
    c: tuple

    def __post_init__(self):
        fl = lambda v: tuple(float(t) for t in v)
        d, a, l, u = fl(self.d), fl(self.a), fl(self.l), fl(self.u)
        B = tuple(fl(row) for row in self.B)
        c = fl(self.c) if not isinstance(self.c, (int, float)) else (float(self.c),)
        n = len(d)
        if not (len(a) == len(l) == len(u) == n) or any(len(row) != n for row in B):
            raise ValueError("inconsistent vector lengths")
        if len(B) != len(c):
            raise ValueError("B and c disagree on the number of coupling rows")
        if len(B) < 1:
            raise ValueError("need at least one coupling row")
        for i in range(n):
            if not all(math.isfinite(v) for v in (d[i], a[i], l[i], u[i])):
                raise DomainError(f"non-finite data for variable {i}")
            if l[i] > u[i]:
                raise InfeasibleError(f"l[{i}] > u[{i}]")
            if d[i] < 0:
                raise DomainError(f"negative curvature d[{i}]")
        for name, val in (("d", d), ("a", a), ("l", l), ("u", u), ("B", B), ("c", c)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return len(self.d)

    @property
    def m(self):
        return len(self.B)

    def objective(self, x):
        return math.fsum(0.5 * di * xi * xi - ai * xi for di, ai, xi in zip(self.d, self.a, x))

    def coupling_residual(self, x):
        """Max-norm of ``Bx - c``."""
        return max(abs(math.fsum(bi * xi for bi, xi in zip(row, x)) - cj)
                   for row, cj in zip(self.B, self.c))

    def to_dict(self):
        return {"d": list(self.d), "a": list(self.a), "l": list(self.l), "u": list(self.u),
                "B": [list(r) for r in self.B], "c": list(self.c)}

    @classmethod
    def from_dict(cls, data):
        c = data["c"]
        if isinstance(c, (int, float)):
            c = [c]
        B = data["B"]
        if B and isinstance(B[0], (int, float)):
            B = [B]
        return cls(data["d"], data["a"], data["l"], data["u"], B, c)


@dataclass
class KnapsackSolution:
    x: list
    lam: object      # float for one row, list of floats otherwise
    value: float
    iterations: int = 0
    stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {"x": list(self.x), "lambda": self.lam, "value": self.value,
                "iterations": self.iterations}


@dataclass
class LambdaEval:
    lam: float
    x: list
    g: float
    ambiguous: list
    fill: tuple        # (L_bar, U_bar, s)
    case: str          # "none", "i", "ii" or "iii"


@dataclass
class Preprocessed:
    core: KnapsackInstance
    eliminated: list   # (original index, fixed value)
    flips: set         # original indices with b_i < 0
    kept: list         # original index of every core variable

    def restore(self, x_core):
        """Map a core solution back to the original variables."""
        n = len(self.kept) + len(self.eliminated)
        x = [0.0] * n
        for j, i in enumerate(self.kept):
            x[i] = -x_core[j] if i in self.flips else x_core[j]
        for i, v in self.eliminated:
            x[i] = v
        return x


def _median3(lo, v, hi):
    return lo if v < lo else hi if v > hi else v


def _single_row(inst):
    if inst.m != 1:
        raise DomainError("breakpoint search handles exactly one coupling row")
    return list(inst.B[0]), inst.c[0]


def preprocess(inst):
    """Fix variables with ``b_i = 0``, flip ``b_i < 0`` and check feasibility."""
    b, c = _single_row(inst)
    d, a, l, u = inst.d, inst.a, inst.l, inst.u
    eliminated, flips, kept = [], set(), []
    cd, ca, cl, cu, cb = [], [], [], [], []
    for i in range(inst.n):
        if b[i] == 0.0:
            if d[i] > 0:
                v = _median3(l[i], a[i] / d[i], u[i])
            else:
                v = u[i] if a[i] > 0 else l[i]
            eliminated.append((i, v))
            continue
        kept.append(i)
        if b[i] < 0:
            flips.add(i)
            cd.append(d[i]); ca.append(-a[i]); cl.append(-u[i]); cu.append(-l[i]); cb.append(-b[i])
        else:
            cd.append(d[i]); ca.append(a[i]); cl.append(l[i]); cu.append(u[i]); cb.append(b[i])
    lo = math.fsum(bi * li for bi, li in zip(cb, cl))
    hi = math.fsum(bi * ui for bi, ui in zip(cb, cu))
    tol = 1e-9 * max(1.0, math.hypot(*cb) * math.hypot(*(x - y for x, y in zip(cu, cl)))) \
        if cb else 1e-9
    if not (lo - tol <= c <= hi + tol):
        raise InfeasibleError(f"coupling target {c!r} outside [{lo!r}, {hi!r}]")
    core = KnapsackInstance(cd, ca, cl, cu, [cb], [c])
    return Preprocessed(core, eliminated, flips, kept)


def _amb_tol(ai, t):
    return 1e-12 * max(1.0, abs(ai), abs(t))


def eval_x_lambda(inst, lam, c=None):
    """Relaxed minimiser ``x(lam)`` with the zero-curvature ties resolved against ``c``.

    Variables with ``d_i = 0`` and ``lam*b_i = a_i`` are ambiguous: any
    value in their box minimises the Lagrangian.  They are filled
    proportionally so that ``g`` hits ``c`` when possible (case "i"), or
    pushed to their upper (case "ii") or lower (case "iii") bounds.
    """
    b, c0 = _single_row(inst)
    c = c0 if c is None else c
    d, a, l, u = inst.d, inst.a, inst.l, inst.u
    x = [0.0] * inst.n
    amb = []
    s = 0.0
    for i in range(inst.n):
        bi = b[i]
        if d[i] > 0:
            xi = _median3(l[i], (a[i] - lam * bi) / d[i], u[i])
        else:
            t = lam * bi - a[i]
            if abs(t) <= _amb_tol(a[i], lam * bi):
                amb.append(i)
                continue
            xi = l[i] if t > 0 else u[i]
        x[i] = xi
        s += bi * xi
    if not amb:
        return LambdaEval(lam, x, s, [], (0.0, 0.0, s), "none")
    Lb = math.fsum(b[i] * l[i] for i in amb)
    Ub = math.fsum(b[i] * u[i] for i in amb)
    r = c - s
    if Lb <= r <= Ub:
        theta = (r - Lb) / (Ub - Lb) if Ub > Lb else 0.0
        for i in amb:
            x[i] = l[i] + theta * (u[i] - l[i])
        case, g = "i", c
    elif r > Ub:
        for i in amb:
            x[i] = u[i]
        case, g = "ii", s + Ub
    else:
        for i in amb:
            x[i] = l[i]
        case, g = "iii", s + Lb
    return LambdaEval(lam, x, g, amb, (Lb, Ub, s), case)


def _bps_core(d, a, l, u, b, c, check_bracket=False, P0=0.0, Q0=0.0):
    """Breakpoint search on a preprocessed core; returns ``(lam, x, iterations)``.

    ``P0 - lam*Q0`` (``Q0 >= 0``) is added to ``g``, which lets the same
    search find the root of a dual derivative carrying a quadratic term.
    """
    n = len(d)
    lam_l = [(a[i] - l[i] * d[i]) / b[i] for i in range(n)]
    lam_u = [(a[i] - u[i] * d[i]) / b[i] for i in range(n)]
    T = lam_l + lam_u
    R = list(range(n))
    S = 0.0
    P, Q = P0, Q0            # sum b*a/d and sum b*b/d over interior variables
    lo, hi = -math.inf, math.inf
    tol = 1e-12 * max(1.0, abs(c))
    it = 0
    while T:
        it += 1
        lam = lower_median(T)
        s = S + P - lam * Q
        Lb = Ub = 0.0
        n_amb = 0
        for i in R:
            bi = b[i]
            if d[i] > 0:
                v = (a[i] - lam * bi) / d[i]
                s += bi * (l[i] if v < l[i] else u[i] if v > u[i] else v)
            else:
                t = lam * bi - a[i]
                if abs(t) <= _amb_tol(a[i], lam * bi):
                    n_amb += 1
                    Lb += bi * l[i]
                    Ub += bi * u[i]
                elif t > 0:
                    s += bi * l[i]
                else:
                    s += bi * u[i]
        if n_amb:
            r = c - s
            if Lb <= r <= Ub:
                return lam, eval_x_lambda(_core_view(d, a, l, u, b, c), lam, c).x, it
            g = s + (Ub if r > Ub else Lb)
        else:
            g = s
        if abs(g - c) <= tol:
            return lam, eval_x_lambda(_core_view(d, a, l, u, b, c), lam, c).x, it
        if g > c:
            lo = lam
            T = [t for t in T if t > lam]
        else:
            hi = lam
            T = [t for t in T if t < lam]
        keep = []
        for i in R:
            if lam_l[i] <= lo:
                S += b[i] * l[i]
            elif lam_u[i] >= hi:
                S += b[i] * u[i]
            elif lam_u[i] <= lo and lam_l[i] >= hi:
                P += b[i] * a[i] / d[i]
                Q += b[i] * b[i] / d[i]
            else:
                keep.append(i)
        R = keep
        if check_bracket:
            core = _core_view(d, a, l, u, b, c)
            assert lo == -math.inf or eval_x_lambda(core, lo, c).g >= c - 1e-9 * max(1.0, abs(c))
            assert hi == math.inf or eval_x_lambda(core, hi, c).g <= c + 1e-9 * max(1.0, abs(c))

    # no breakpoints strictly inside (lo, hi): g is affine there, g = S + P - lam*Q
    core = _core_view(d, a, l, u, b, c)
    const = S + P
    if Q > 0:
        lam = (const - c) / Q
        if lam <= lo:
            lam = lo       # jump at lo from a zero-curvature variable
        elif lam >= hi:
            lam = hi
        return lam, eval_x_lambda(core, lam, c).x, it
    if abs(const - c) <= tol:
        lam = lo if lo > -math.inf else hi if hi < math.inf else 0.0
        # flat segment: every lam in the bracket is optimal, take the left end
        if lo > -math.inf and hi < math.inf:
            probe = 0.5 * (lo + hi)
        elif lo > -math.inf:
            probe = lo + 1.0
        elif hi < math.inf:
            probe = hi - 1.0
        else:
            probe = 0.0
        return lam, eval_x_lambda(core, probe, c).x, it
    lam = hi if const > c else lo
    if not math.isfinite(lam):
        raise InfeasibleError("coupling target cannot be met")
    return lam, eval_x_lambda(core, lam, c).x, it


def _core_view(d, a, l, u, b, c):
    inst = object.__new__(KnapsackInstance)
    for name, val in (("d", d), ("a", a), ("l", l), ("u", u), ("B", (b,)), ("c", (c,))):
        object.__setattr__(inst, name, val)
    return inst


def bps_solve(inst, check_bracket=False):
    """Solve a one-row knapsack instance; returns a :class:`KnapsackSolution`.

    Preprocessing runs first, so raw instances with zero or negative
    coupling coefficients are accepted.  ``check_bracket`` asserts
    ``g(lam_lo) >= c >= g(lam_hi)`` after every halving (slow; for tests).
    """
    pre = preprocess(inst)
    core = pre.core
    b, c = core.B[0], core.c[0]
    if core.n == 0:
        lam, xc, it = 0.0, [], 0
    else:
        lam, xc, it = _bps_core(core.d, core.a, core.l, core.u, b, c, check_bracket)
    x = pre.restore(xc)
    return KnapsackSolution(x=x, lam=lam, value=inst.objective(x), iterations=it)


def knapsack_kkt_residuals(inst, x, lam):
    """Worst stationarity, coupling and box violations of ``(x, lam)``.

    Stationarity of variable i is ``r_i = d_i x_i - a_i + (B'lam)_i``; it
    must vanish for interior variables, be ``>= 0`` at a lower bound and
    ``<= 0`` at an upper bound.
    """
    lams = [lam] if isinstance(lam, (int, float)) else list(lam)
    scale = max([1.0] + [abs(v) for v in inst.a] + [abs(v) for v in inst.c])
    stat = 0.0
    box = 0.0
    for i in range(inst.n):
        r = inst.d[i] * x[i] - inst.a[i] + sum(lj * row[i] for lj, row in zip(lams, inst.B))
        btol = 1e-9 * max(1.0, abs(inst.l[i]), abs(inst.u[i]))
        at_l = x[i] <= inst.l[i] + btol
        at_u = x[i] >= inst.u[i] - btol
        if at_l and at_u:
            v = 0.0
        elif at_l:
            v = max(-r, 0.0)
        elif at_u:
            v = max(r, 0.0)
        else:
            v = abs(r)
        stat = max(stat, v)
        box = max(box, inst.l[i] - x[i], x[i] - inst.u[i], 0.0)
    return {"stationarity": stat / scale, "coupling": inst.coupling_residual(x), "box": box}
