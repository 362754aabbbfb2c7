"""Multiply constrained quadratic knapsack by hyperplane search.

The dual function of ``min sum 0.5*d_i x_i^2 - a_i x_i  s.t. Bx = c, l <= x <= u``
is ``phi(lam) = -c'lam + sum_i phi_i(lam)`` with
``phi_i(lam) = min_{l_i <= x <= u_i} 0.5*d_i x^2 + (B_i'lam - a_i) x``.
Each ``phi_i`` has one of three explicit forms depending on which side of
its two breakpoint hyperplanes ``d_i l_i - a_i + B_i'lam = 0`` and
``d_i u_i - a_i + B_i'lam = 0`` the maximiser lies.  The search learns
those sides in rounds, folding every fully classified ``phi_i`` into an
explicit quadratic ``phi_0(lam) = 0.5 lam'H0 lam + F0'lam + G0``.  Once
nothing is left, the maximiser of ``phi_0`` is the dual optimum.

Signs are learnt through an oracle that maximises ``phi`` restricted to a
query hyperplane and reads off the side of the global maximiser from the
gradient there; the restricted problem has one dimension less and is
solved recursively (a breakpoint search in one dimension).
"""

from dataclasses import dataclass, field
import math
from operator import mul

import numpy as np

from .cqkp import KnapsackInstance, KnapsackSolution, _bps_core
from .errors import DimensionError, InfeasibleError
from .select import lower_median

__all__ = [
    "Hyperplane",
    "DualState",
    "build_hyperplanes",
    "oracle_sign",
    "mds_round",
    "hps_solve",
    "M_MAX_DEFAULT",
]

M_MAX_DEFAULT = 3
LOWER, UPPER = 0, 1


@dataclass
class Hyperplane:
    """``offset + normal'lam = 0``; ``side`` is 0 for the lower and 1 for the upper bound."""

    offset: float
    normal: tuple
    var: int
    side: int
    sign: object = None

    def value(self, lam):
        return self.offset + sum(h * v for h, v in zip(self.normal, lam))


def build_hyperplanes(inst):
    """The ``2n`` breakpoint hyperplanes: lower ones first, then upper ones."""
    cols = list(zip(*inst.B))
    lower = [Hyperplane(inst.d[i] * inst.l[i] - inst.a[i], cols[i], i, LOWER) for i in range(inst.n)]
    upper = [Hyperplane(inst.d[i] * inst.u[i] - inst.a[i], cols[i], i, UPPER) for i in range(inst.n)]
    return lower + upper


def _median3(lo, v, hi):
    return lo if v < lo else hi if v > hi else v


def _dot(p, q):
    return sum(map(mul, p, q))


def _sgn(v):
    v = float(v)
    return (v > 0) - (v < 0)


class DualState:
    """Dual function split into a folded quadratic part and unresolved variables.

    ``H``, ``F``, ``G`` define ``phi_0``; ``signs[i]`` holds the known
    signs of variable ``i``'s lower and upper hyperplane values at the
    dual optimum; ``open`` lists variables not yet folded.
    """

    def __init__(self, d, a, l, u, cols, H, F, G, mmax=M_MAX_DEFAULT, stats=None):
        self.d, self.a, self.l, self.u, self.cols = d, a, l, u, cols
        self.m = len(F)
        self.H = np.array(H, dtype=float).reshape(self.m, self.m)
        self.F = np.array(F, dtype=float)
        self.G = float(G)
        self.open = list(range(len(d)))
        self.signs = [[None, None] for _ in d]
        self.known_lam = None
        self.mmax = mmax
        self.stats = stats if stats is not None else {"queries": 0, "rounds": 0, "trace": []}
        self.scale = max([1.0] + [abs(v) for v in F]
                         + [max(abs(l[i]), abs(u[i])) * max(map(abs, cols[i]), default=0.0)
                            for i in range(len(d))])

    # -- explicit pieces -------------------------------------------------

    def x_at(self, i, lam):
        return _median3(self.l[i], (self.a[i] - _dot(self.cols[i], lam)) / self.d[i], self.u[i])

    def phi_i(self, i, lam):
        x = self.x_at(i, lam)
        return 0.5 * self.d[i] * x * x + (_dot(self.cols[i], lam) - self.a[i]) * x

    def phi0(self, lam):
        lam = np.asarray(lam, dtype=float)
        return float(0.5 * lam @ self.H @ lam + self.F @ lam + self.G)

    def phi(self, lam):
        return self.phi0(lam) + math.fsum(self.phi_i(i, lam) for i in self.open)

    def gradient(self, lam):
        g = self.H @ np.asarray(lam, dtype=float) + self.F
        acc = [0.0] * self.m
        for i in self.open:
            x = self.x_at(i, lam)
            for k, bk in enumerate(self.cols[i]):
                acc[k] += bk * x
        return g + np.array(acc)

    def fold(self, i):
        """Fold variable ``i`` into ``phi_0`` using its recorded signs."""
        lo, hi = self.signs[i]
        d, a, col = self.d[i], self.a[i], np.array(self.cols[i])
        if lo is not None and lo > 0:
            x = self.l[i]
        elif hi is not None and hi < 0:
            x = self.u[i]
        else:
            x = None
        if x is None:
            self.H -= np.outer(col, col) / d
            self.F += a * col / d
            self.G -= a * a / (2.0 * d)
        else:
            self.F += x * col
            self.G += 0.5 * d * x * x - a * x

    def set_sign(self, i, side, s):
        """Record a sign and the one it implies for the sibling hyperplane."""
        sg = self.signs[i]
        sg[side] = s
        if side == LOWER and s > 0:
            sg[UPPER] = 1
        elif side == UPPER and s < 0:
            sg[LOWER] = -1
        # a zero upper with l == u (or similar) still pins the other side
        if self.l[i] == self.u[i] and sg[LOWER] is None:
            sg[LOWER] = s
        if self.l[i] == self.u[i] and sg[UPPER] is None:
            sg[UPPER] = s

    def resolved(self, i):
        lo, hi = self.signs[i]
        return (lo is not None and lo > 0) or (hi is not None and hi < 0) or \
            (lo is not None and hi is not None)

    def fold_resolved(self):
        keep = []
        for i in self.open:
            if self.resolved(i):
                self.fold(i)
            else:
                keep.append(i)
        self.open = keep

    def unknown(self):
        """Hyperplanes (var, side) of open variables whose sign is still unknown."""
        out = []
        for i in self.open:
            lo, hi = self.signs[i]
            if lo is None:
                out.append((i, LOWER))
            if hi is None:
                out.append((i, UPPER))
        return out

    def offset(self, i, side):
        bound = self.l[i] if side == LOWER else self.u[i]
        return self.d[i] * bound - self.a[i]

    def resolve_all_at(self, lam):
        """The optimum is known: classify every open hyperplane by evaluation."""
        self.known_lam = np.array(lam, dtype=float)
        for i, side in self.unknown():
            v = self.offset(i, side) + _dot(self.cols[i], lam)
            tol = 1e-9 * (1.0 + math.hypot(*self.cols[i]) * float(np.linalg.norm(lam)))
            if self.signs[i][side] is None:
                self.set_sign(i, side, 0 if abs(v) <= tol else _sgn(v))


# ----------------------------------------------------------------------------
# dual maximisation
# ----------------------------------------------------------------------------

def _maximize_1d(d, a, l, u, b, alpha, beta):
    """Maximise ``0.5*alpha*s^2 + beta*s + sum phi_i`` over a scalar ``s``.

    The derivative ``alpha*s + beta + sum b_i x_i(s)`` is non-increasing
    and piecewise affine, so its root comes out of the breakpoint search.
    """
    cd, ca, cl, cu, cb = [], [], [], [], []
    for i in range(len(d)):
        bi = b[i]
        if bi > 0:
            cd.append(d[i]); ca.append(a[i]); cl.append(l[i]); cu.append(u[i]); cb.append(bi)
        elif bi < 0:
            cd.append(d[i]); ca.append(-a[i]); cl.append(-u[i]); cu.append(-l[i]); cb.append(-bi)
    if not cb and alpha == 0.0:
        if abs(beta) > 1e-12:
            raise InfeasibleError("dual function unbounded along a restriction")
        return 0.0
    s, _, _ = _bps_core(cd, ca, cl, cu, cb, 0.0, P0=beta, Q0=-alpha)
    return s


def _maximize(state):
    """Dual maximiser of ``state`` (consumes it: variables get folded)."""
    m = state.m
    if m == 1:
        idx = state.open
        return np.array([_maximize_1d([state.d[i] for i in idx], [state.a[i] for i in idx],
                                      [state.l[i] for i in idx], [state.u[i] for i in idx],
                                      [state.cols[i][0] for i in idx],
                                      float(state.H[0, 0]), float(state.F[0]))])
    if m > state.mmax:
        raise DimensionError(f"m={m} exceeds the configured maximum {state.mmax}")
    while state.open and state.known_lam is None:
        state.stats["rounds"] += 1
        before = len(state.unknown())
        q0 = state.stats["queries"]
        mds_round(state)
        state.fold_resolved()
        if state.stats.get("tracing"):
            state.stats["trace"].append({"unknown": before, "resolved": before - len(state.unknown()),
                                         "queries": state.stats["queries"] - q0})
    if state.known_lam is not None:
        state.fold_resolved()
        return state.known_lam
    return _argmax_phi0(state)


def _argmax_phi0(state):
    H, F = state.H, state.F
    try:
        lam = np.linalg.solve(H, -F)
        if np.all(np.isfinite(lam)) and np.linalg.cond(H) < 1e12:
            return lam
    except np.linalg.LinAlgError:
        pass
    lam = -np.linalg.pinv(H) @ F
    if np.linalg.norm(H @ lam + F) > 1e-8 * max(1.0, float(np.linalg.norm(F))):
        raise InfeasibleError("dual function has no maximiser (coupling target unreachable)")
    return lam


def oracle_sign(p0, p, state):
    """Sign of ``p0 + p'lam*`` for the maximiser ``lam*`` of ``state``'s dual.

    Returns ``(sign, lam_P)`` where ``lam_P`` maximises the dual on the
    query hyperplane.  A zero sign means ``lam_P`` is the global maximiser.
    """
    state.stats["queries"] += 1
    m = state.m
    p = np.asarray(p, dtype=float)
    k = int(np.argmax(np.abs(p)))
    others = [j for j in range(m) if j != k]
    lam0 = np.zeros(m)
    lam0[k] = -p0 / p[k]
    V = np.zeros((m, m - 1))
    for c, j in enumerate(others):
        V[j, c] = 1.0
        V[k, c] = -p[j] / p[k]
    Vt = V.T.tolist()
    idx, sub_cols = [], []
    for i in state.open:
        col = state.cols[i]
        sc = tuple(_dot(v, col) for v in Vt)
        # a column parallel to p makes phi_i constant on the hyperplane
        if max(map(abs, sc)) > 1e-13 * max(map(abs, col)):
            idx.append(i)
            sub_cols.append(sc)
    sub_a = [state.a[i] - _dot(state.cols[i], lam0) for i in idx]
    H, F = state.H, state.F
    sub = DualState([state.d[i] for i in idx], sub_a, [state.l[i] for i in idx],
                    [state.u[i] for i in idx], sub_cols, V.T @ H @ V, V.T @ (H @ lam0 + F), 0.0,
                    mmax=state.mmax, stats=state.stats)
    mu = _maximize(sub)
    lam_p = lam0 + V @ mu
    slope = float(p @ state.gradient(lam_p))
    gscale = state.scale * (1.0 + float(np.linalg.norm(lam_p)) * float(np.max(np.abs(H), initial=0.0)))
    tol = 1e-10 * float(np.linalg.norm(p)) * gscale
    return (0 if abs(slope) <= tol else _sgn(slope)), lam_p


# ----------------------------------------------------------------------------
# multidimensional search
# ----------------------------------------------------------------------------

def _query(state, p0, p):
    """Oracle call that short-circuits once the optimum is pinned down."""
    s, lam_p = oracle_sign(p0, p, state)
    if s == 0:
        state.resolve_all_at(lam_p)
    return s


def _round_parallel(state, planes, normal):
    """Query the median offset among hyperplanes sharing ``normal``.

    ``planes`` holds ``(i, side, t)`` where the hyperplane value equals
    ``k*(normal'lam - t)`` with ``k > 0`` folded into the stored sign factor.
    """
    ts = [t for _, _, t, _ in planes]
    tm = lower_median(ts)
    s = _query(state, -tm, normal)
    if s == 0:
        return
    for i, side, t, factor in planes:
        if (s > 0 and t <= tm) or (s < 0 and t >= tm):
            if state.signs[i][side] is None:
                state.set_sign(i, side, factor * s)


def _mds_round_2d(state, unknown):
    """One round for ``m = 2``: resolves at least an eighth of ``unknown``."""
    target = max(1, math.ceil(len(unknown) / 8))
    start = len(unknown)
    while True:
        lines = [(i, side) for i, side in state.unknown()]
        if not lines or state.known_lam is not None or start - len(lines) >= target:
            return
        n = len(lines)
        vert, slanted = [], []
        for i, side in lines:
            h1, h2 = state.cols[i]
            h0 = state.offset(i, side)
            if h2 == 0.0:
                # h0 + h1*l1 = h1*(l1 - t)
                vert.append((i, side, -h0 / h1, _sgn(h1)))
            else:
                # h0 + h1*l1 + h2*l2 = h2*(l2 - sig*l1 - tau)
                slanted.append((i, side, -h1 / h2, -h0 / h2, _sgn(h2)))
        if 4 * len(vert) >= n:
            _round_parallel(state, vert, (1.0, 0.0))
            continue
        sig_m = lower_median([s[2] for s in slanted])
        same = [(i, side, tau, f) for i, side, sig, tau, f in slanted if sig == sig_m]
        if 4 * len(same) >= n:
            _round_parallel(state, same, (-sig_m, 1.0))
            continue
        less = [s for s in slanted if s[2] < sig_m]
        more = [s for s in slanted if s[2] > sig_m]
        pairs = []
        for A, B in zip(less, more):
            # intersection in sheared coordinates y = l2 - sig_m*l1
            ra, rb = A[2] - sig_m, B[2] - sig_m
            x = (B[3] - A[3]) / (ra - rb)
            y = ra * x + A[3]
            pairs.append((x, y, A, B))
        xm = lower_median([pr[0] for pr in pairs])
        s1 = _query(state, -xm, (1.0, 0.0))
        if s1 == 0:
            return
        far = [pr for pr in pairs if (pr[0] <= xm if s1 > 0 else pr[0] >= xm)]
        ym = lower_median([pr[1] for pr in far])
        s2 = _query(state, -ym, (-sig_m, 1.0))
        if s2 == 0:
            return
        for x, y, A, B in far:
            if (s2 > 0 and y <= ym) or (s2 < 0 and y >= ym):
                # the line whose relative slope has sign -s1*s2 is separated from lam*
                line = B if -s1 * s2 > 0 else A
                i, side, _, _, f = line
                if state.signs[i][side] is None:
                    state.set_sign(i, side, f * s2)


def _mds_round_general(state, unknown):
    """Best-effort round for ``m >= 3``: median query within the largest parallel class."""
    classes = {}
    for i, side in unknown:
        col = state.cols[i]
        k = max(range(state.m), key=lambda j: abs(col[j]))
        key = tuple(v / col[k] for v in col)
        # value = col[k] * (key'lam + offset/col[k]); t = -offset/col[k]
        classes.setdefault(key, []).append((i, side, -state.offset(i, side) / col[k], _sgn(col[k])))
    key, planes = max(classes.items(), key=lambda kv: len(kv[1]))
    _round_parallel(state, planes, key)


def mds_round(state):
    """Learn the signs of a fixed share of the open hyperplanes."""
    unknown = state.unknown()
    if not unknown:
        return
    if state.m == 2:
        _mds_round_2d(state, unknown)
    else:
        _mds_round_general(state, unknown)


# ----------------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------------

def hps_solve(inst, mmax=M_MAX_DEFAULT, trace=False):
    """Solve a knapsack instance with ``m >= 1`` coupling rows by hyperplane search.

    Zero curvatures are replaced by ``1e-9*max(1, max d)`` (the search
    needs strictly convex pieces); variables with an all-zero coupling
    column are fixed up front.  ``stats`` in the result counts rounds and
    oracle queries; with ``trace=True`` it also lists every round.
    """
    m, n = inst.m, inst.n
    if m > mmax:
        raise DimensionError(f"m={m} exceeds the configured maximum {mmax}")
    cols = list(zip(*inst.B)) if n else []
    eps = 1e-9 * max([1.0] + list(inst.d))
    d = [di if di > 0 else eps for di in inst.d]
    fixed = {}
    keep = []
    for i in range(n):
        if any(v != 0.0 for v in cols[i]):
            keep.append(i)
        elif inst.d[i] > 0:
            fixed[i] = _median3(inst.l[i], inst.a[i] / inst.d[i], inst.u[i])
        else:
            fixed[i] = inst.u[i] if inst.a[i] > 0 else inst.l[i]
    stats = {"queries": 0, "rounds": 0, "trace": [], "tracing": trace}
    state = DualState([d[i] for i in keep], [inst.a[i] for i in keep], [inst.l[i] for i in keep],
                      [inst.u[i] for i in keep], [cols[i] for i in keep],
                      np.zeros((m, m)), [-cj for cj in inst.c], 0.0, mmax=mmax, stats=stats)
    lam = _maximize(state)
    lam_list = [float(v) for v in lam]
    x = [0.0] * n
    for j, i in enumerate(keep):
        x[i] = _median3(inst.l[i], (inst.a[i] - _dot(cols[i], lam_list)) / d[i], inst.u[i])
    for i, v in fixed.items():
        x[i] = v
    resid = inst.coupling_residual(x) if n else max(abs(cj) for cj in inst.c)
    if resid > 1e-7 * max([1.0] + [abs(cj) for cj in inst.c]):
        raise InfeasibleError(f"coupling residual {resid:.3e} after dual maximisation")
    stats.pop("tracing")
    return KnapsackSolution(x=x, lam=lam_list if m > 1 else lam_list[0], value=inst.objective(x),
                            iterations=stats["rounds"], stats=stats)
