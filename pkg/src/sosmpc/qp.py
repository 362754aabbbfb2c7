"""Small dense convex QP engine.

Problems have the form::

    minimize    0.5 x'Hx + q'x
    subject to  A x <= b,  E x = e,  lb <= x <= ub

Positive definite ``H`` goes through a dual active-set method
(Goldfarb-Idnani), which needs no feasible starting point.  Semidefinite
``H`` (including ``H = 0``, i.e. LPs) goes through a primal active-set
method started from a feasible point found by projecting the origin onto
the feasible set with the dual method.

:func:`kkt_enumerate_solve` is an exhaustive oracle used by the tests.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dgecon, dgetrf, dgetrs
from scipy import sparse

from .errors import InfeasibleError, MaxIterationsError, TooLargeError, UnboundedError

__all__ = ["QPResult", "qp_solve", "kkt_enumerate_solve", "kkt_residuals"]


@dataclass
class QPResult:
    x: np.ndarray
    value: float
    active: list            # rows of A tight at x
    multipliers: np.ndarray  # one per row of A, >= 0
    eq_multipliers: np.ndarray
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray
    iterations: int = 0
    method: str = ""
    working: list = field(default_factory=list)  # rows of A in the final working set

    @property
    def active_set(self):
        return set(self.active)


class _Problem:
    """Normalised problem data (dense arrays, infinite bounds allowed)."""

    def __init__(self, H, q, A=None, b=None, E=None, e=None, lb=None, ub=None):
        q = np.asarray(q, dtype=float).ravel()
        n = q.size
        H = np.asarray(H, dtype=float).reshape(n, n)
        self.H = 0.5 * (H + H.T)
        self.q = q
        self.n = n
        self.A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        self.b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
        self.E = np.zeros((0, n)) if E is None else np.asarray(E, dtype=float).reshape(-1, n)
        self.e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float).ravel().copy()
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).ravel().copy()
        if self.A.shape[0] != self.b.size or self.E.shape[0] != self.e.size:
            raise ValueError("constraint matrix and right-hand side sizes differ")
        if np.any(self.lb > self.ub):
            raise InfeasibleError("a lower bound exceeds its upper bound")
        self.scale = max(1.0, _amax(self.H), _amax(self.q), _amax(self.A), _amax(self.b),
                         _amax(self.E), _amax(self.e))

    def bound_rows(self):
        """Finite bounds rewritten as rows of ``A x <= b``."""
        eye = np.eye(self.n)
        lo = np.flatnonzero(np.isfinite(self.lb))
        hi = np.flatnonzero(np.isfinite(self.ub))
        rows = np.vstack([eye[hi], -eye[lo]])
        rhs = np.concatenate([self.ub[hi], -self.lb[lo]])
        return rows, rhs, hi, lo

    def value(self, x):
        return float(0.5 * x @ self.H @ x + self.q @ x)


def _amax(a):
    a = np.asarray(a)
    finite = a[np.isfinite(a)]
    return float(np.max(np.abs(finite))) if finite.size else 0.0


# ----------------------------------------------------------------------------
# dual active set (Goldfarb-Idnani)
# ----------------------------------------------------------------------------

def _dual_active_set(H, q, A, b, E, e, max_iter, L=None):
    """Goldfarb-Idnani for positive definite H.

    Works on ``N x >= rhs`` internally with ``N = -A``; returns
    ``(x, working_rows, u_rows, u_eq, iterations)`` where the multipliers
    use the sign convention ``Hx + q + A'u_rows + E'u_eq = 0``.
    """
    n = q.size
    if L is None:
        L = np.linalg.cholesky(H)
    x = -sla.cho_solve((L, True), q, check_finite=False)
    mA = A.shape[0]
    scale = max(1.0, _amax(A), _amax(b), _amax(E), _amax(e))
    feas_tol = 1e-11 * scale

    active = []   # entries ("e", i, sign) or ("a", i, 1)
    u = []        # multipliers of active constraints in GI sign convention
    Q = np.eye(n)
    R = np.zeros((n, 0))
    Linv_cols = []

    def normal(entry):
        kind, i, sgn = entry
        return sgn * E[i] if kind == "e" else -A[i]

    def rhs(entry):
        kind, i, sgn = entry
        return sgn * e[i] if kind == "e" else -b[i]

    def add(w):
        nonlocal Q, R
        if R.shape[1] == 0:
            Q, R = sla.qr(w[:, None])
        else:
            Q, R = sla.qr_insert(Q, R, w, R.shape[1], which="col", check_finite=False)

    def drop(k):
        nonlocal Q, R
        Q, R = sla.qr_delete(Q, R, k, which="col", check_finite=False)
        del active[k]
        del u[k]
        del Linv_cols[k]

    def step_data(w):
        qa = R.shape[1]
        if qa:
            d1 = Q[:, :qa].T @ w
            r = sla.solve_triangular(R[:qa, :qa], d1, check_finite=False)
            zw = w - Q[:, :qa] @ d1
        else:
            r = np.zeros(0)
            zw = w
        return r, zw

    iterations = 0

    def add_constraint(entry):
        """Steps 2a-2c of the dual method for one violated constraint."""
        nonlocal x, iterations
        nvec = normal(entry)
        w = sla.solve_triangular(L, nvec, lower=True, check_finite=False)
        up = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise MaxIterationsError("dual active-set iteration limit reached")
            s = float(nvec @ x - rhs(entry))
            r, zw = step_data(w)
            zz = float(zw @ zw)
            t2 = np.inf
            if zz > 1e-24 * max(1.0, float(w @ w)):
                t2 = -s / zz
            t1, k = np.inf, -1
            for j, (ent, rj) in enumerate(zip(active, r)):
                if ent[0] == "a" and rj > 1e-14 * max(1.0, abs(u[j])):
                    ratio = u[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            if np.isinf(t1) and np.isinf(t2):
                if entry[0] == "e" and abs(s) <= feas_tol * max(1.0, np.linalg.norm(nvec)):
                    return False   # dependent but consistent equality
                raise InfeasibleError("constraints are inconsistent")
            if np.isinf(t2):
                for j in range(len(u)):
                    u[j] -= t1 * r[j]
                up += t1
                drop(k)
                continue
            t = min(t1, t2)
            z = sla.solve_triangular(L, zw, lower=True, trans="T", check_finite=False)
            x = x + t * z
            for j in range(len(u)):
                u[j] -= t * r[j]
            up += t
            if t2 <= t1:
                add(w)
                active.append(entry)
                u.append(up)
                Linv_cols.append(w)
                return True
            drop(k)

    for i in range(E.shape[0]):
        s = float(E[i] @ x - e[i])
        add_constraint(("e", i, -1.0 if s > 0 else 1.0))

    if mA:
        norms = np.maximum(np.linalg.norm(A, axis=1), 1e-300)
        tols = feas_tol * np.maximum(1.0, np.abs(b))
        # block-structured problems have mostly zero rows
        Ascan = A
        if A.size > 200_000 and np.count_nonzero(A) < 0.1 * A.size:
            Ascan = sparse.csr_matrix(A)
        while True:
            viol = (Ascan @ x - b)
            score = viol / norms
            in_ws = [ent[1] for ent in active if ent[0] == "a"]
            if in_ws:
                score[in_ws] = -np.inf
            p = int(np.argmax(score))
            if viol[p] <= tols[p]:
                break
            add_constraint(("a", p, 1.0))

    u_rows = np.zeros(mA)
    u_eq = np.zeros(E.shape[0])
    working = []
    for ent, uj in zip(active, u):
        kind, i, sgn = ent
        if kind == "a":
            u_rows[i] = max(uj, 0.0)
            working.append(i)
        else:
            u_eq[i] = -sgn * uj
    return x, working, u_rows, u_eq, iterations


# ----------------------------------------------------------------------------
# primal active set (semidefinite H)
# ----------------------------------------------------------------------------

def _lu_solve_checked(K, rhs):
    """Solve K y = rhs; None when K is numerically singular."""
    lu, piv, info = dgetrf(K)
    if info != 0:
        return None
    anorm = np.abs(K).sum(axis=0).max()
    rcond, info = dgecon(lu, anorm)
    if info != 0 or not rcond > 1e-13:
        return None
    sol, info = dgetrs(lu, piv, rhs)
    return sol


def _primal_active_set(P, x, max_iter):
    H, q, A, b, E, e, lb, ub = P.H, P.q, P.A, P.b, P.E, P.e, P.lb, P.ub
    n, mA = P.n, A.shape[0]
    tol = 1e-10 * P.scale
    bound_tol = 1e-12 * max(1.0, _amax(lb), _amax(ub))
    state = np.zeros(n, dtype=int)   # -1 at lower, +1 at upper, 0 free
    state[np.isfinite(lb) & (x <= lb + bound_tol)] = -1
    state[(state == 0) & np.isfinite(ub) & (x >= ub - bound_tol)] = 1
    x = x.copy()
    x[state == -1] = lb[state == -1]
    x[state == 1] = ub[state == 1]
    W = []

    for it in range(1, max_iter + 1):
        F = np.flatnonzero(state == 0)
        g = H @ x + q
        C = np.vstack([E, A[W]]) if W else E
        CF = C[:, F]
        nf, nc = F.size, C.shape[0]
        ray = False
        p_F = np.zeros(nf)
        mu = np.zeros(nc)
        if nf:
            K = np.zeros((nf + nc, nf + nc))
            K[:nf, :nf] = H[np.ix_(F, F)]
            K[:nf, nf:] = CF.T
            K[nf:, :nf] = CF
            rhs = np.concatenate([-g[F], np.zeros(nc)])
            sol = _lu_solve_checked(K, rhs)
            if sol is None:
                M = np.vstack([H[np.ix_(F, F)], CF])
                _, sv, Vt = np.linalg.svd(M)
                rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0] if sv.size else 0.0)))
                Z0 = Vt[rank:].T
                d = -Z0 @ (Z0.T @ g[F]) if Z0.size else np.zeros(nf)
                if np.linalg.norm(d) > 1e-12 * max(1.0, np.linalg.norm(g[F])):
                    ray = True
                    p_F = d
                else:
                    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if not ray:
                p_F, mu = sol[:nf], sol[nf:]
        else:
            # no free variables: multipliers from least squares on stationarity
            if nc:
                mu = np.zeros(nc)

        p = np.zeros(n)
        p[F] = p_F
        if not ray and np.linalg.norm(p) <= 1e-12 * max(1.0, np.linalg.norm(x)):
            # optimal for the working set: check multiplier signs
            if nc and nf == 0:
                mu = np.zeros(nc)
            if nc and nf:
                # refine multipliers against the fixed variables too
                mu = np.linalg.lstsq(C[:, F].T, -g[F], rcond=None)[0] if nf else mu
            resid = g + C.T @ mu if nc else g.copy()
            mu_W = mu[E.shape[0]:]
            worst, kind, idx = -tol, None, None
            for j, val in enumerate(mu_W):
                if val < worst:
                    worst, kind, idx = val, "row", j
            for i in np.flatnonzero(state != 0):
                nu = resid[i] if state[i] == -1 else -resid[i]
                if nu < worst:
                    worst, kind, idx = nu, "bound", i
            if kind is None:
                return x, W, it
            if kind == "row":
                del W[idx]
            else:
                state[idx] = 0
            continue

        # ratio test
        alpha = np.inf if ray else 1.0
        block = None
        if mA:
            Ap = A @ p
            slack = b - A @ x
            cand = np.ones(mA, dtype=bool)
            if W:
                cand[W] = False
            cand &= Ap > 1e-14 * max(1.0, np.linalg.norm(p))
            for j in np.flatnonzero(cand):
                a_j = max(slack[j], 0.0) / Ap[j]
                if a_j < alpha:
                    alpha, block = a_j, ("row", j)
        for i in F:
            if p[i] < 0 and np.isfinite(lb[i]):
                a_i = max(x[i] - lb[i], 0.0) / -p[i]
                if a_i < alpha:
                    alpha, block = a_i, ("lb", i)
            elif p[i] > 0 and np.isfinite(ub[i]):
                a_i = max(ub[i] - x[i], 0.0) / p[i]
                if a_i < alpha:
                    alpha, block = a_i, ("ub", i)
        if np.isinf(alpha):
            raise UnboundedError("objective unbounded below along a zero-curvature direction")
        x = x + alpha * p
        if block is not None:
            kind, j = block
            if kind == "row":
                W.append(int(j))
            elif kind == "lb":
                state[j], x[j] = -1, lb[j]
            else:
                state[j], x[j] = 1, ub[j]
    raise MaxIterationsError("primal active-set iteration limit reached")


# ----------------------------------------------------------------------------
# public entry points
# ----------------------------------------------------------------------------

def _finish(P, x, iterations, method, working=()):
    """Multipliers, tight sets and objective for a primal solution."""
    H, q, A, b, E, e, lb, ub = P.H, P.q, P.A, P.b, P.E, P.e, P.lb, P.ub
    n = P.n
    tol = 1e-9 * P.scale
    x = np.where(np.isfinite(lb), np.maximum(x, lb), x)
    x = np.where(np.isfinite(ub), np.minimum(x, ub), x)
    slack = b - A @ x if A.shape[0] else np.zeros(0)
    tight_rows = [int(i) for i in np.flatnonzero(slack <= tol * np.maximum(1.0, np.abs(b)))]
    flo, fhi = np.isfinite(lb), np.isfinite(ub)
    lbf, ubf = np.where(flo, lb, 0.0), np.where(fhi, ub, 0.0)
    at_lo = np.flatnonzero(flo & (x <= lbf + tol * np.maximum(1.0, np.abs(lbf))))
    at_hi = np.flatnonzero(fhi & (x >= ubf - tol * np.maximum(1.0, np.abs(ubf))))
    g = H @ x + q
    # multipliers from a nonnegative least-squares fit over the tight sets
    cols = [A[i] for i in tight_rows] + [-np.eye(n)[i] for i in at_lo] + [np.eye(n)[i] for i in at_hi]
    neq = E.shape[0]
    G = np.vstack([E] + ([np.array(cols)] if cols else [])) if (neq or cols) else np.zeros((0, n))
    mult = np.zeros(G.shape[0])
    if G.shape[0]:
        mult = _signed_lstsq(G.T, -g, neq)
    mu = np.zeros(A.shape[0])
    lo_m = np.zeros(n)
    hi_m = np.zeros(n)
    k = neq
    for i in tight_rows:
        mu[i] = mult[k]
        k += 1
    for i in at_lo:
        lo_m[i] += mult[k]
        k += 1
    for i in at_hi:
        hi_m[i] += mult[k]
        k += 1
    return QPResult(x=x, value=P.value(x), active=tight_rows, multipliers=mu,
                    eq_multipliers=mult[:neq], lower_multipliers=lo_m, upper_multipliers=hi_m,
                    iterations=iterations, method=method, working=list(working))


def _signed_lstsq(G, rhs, n_free):
    """Least squares ``G y = rhs`` with ``y[n_free:] >= 0``."""
    y = np.linalg.lstsq(G, rhs, rcond=None)[0]
    if np.all(y[n_free:] >= -1e-12 * max(1.0, _amax(y))) or G.shape[1] == n_free:
        y[n_free:] = np.maximum(y[n_free:], 0.0)
        return y
    # bounded-variable least squares for degenerate (non-unique) multipliers
    from scipy.optimize import lsq_linear
    lo = np.concatenate([np.full(n_free, -np.inf), np.zeros(G.shape[1] - n_free)])
    res = lsq_linear(G, rhs, bounds=(lo, np.full(G.shape[1], np.inf)), method="bvls")
    return res.x


def qp_solve(H, q, A=None, b=None, E=None, e=None, lb=None, ub=None, max_iter=None):
    """Solve a convex QP; raises InfeasibleError, UnboundedError or MaxIterationsError.

    Returns a :class:`QPResult`.  ``active`` lists the rows of ``A`` that
    are tight at the solution.
    """
    P = _Problem(H, q, A, b, E, e, lb, ub)
    n = P.n
    if max_iter is None:
        max_iter = 50 * (n + P.A.shape[0] + P.E.shape[0] + 2 * n) + 100
    L = None
    if n:
        try:
            L = np.linalg.cholesky(P.H)
            dmin = float(np.min(np.diag(L)) ** 2)
            if dmin <= 1e-12 * max(1.0, _amax(P.H)):
                L = None
        except np.linalg.LinAlgError:
            L = None
    if n == 0:
        return _finish(P, np.zeros(0), 0, "trivial")
    Brows, Brhs, _, _ = P.bound_rows()
    A_all = np.vstack([P.A, Brows])
    b_all = np.concatenate([P.b, Brhs])
    if L is not None:
        x, working, _, _, it = _dual_active_set(P.H, P.q, A_all, b_all, P.E, P.e, max_iter, L)
        working = [i for i in working if i < P.A.shape[0]]
        return _finish(P, x, it, "dual", working)
    # phase one: project the origin onto the feasible set
    x0, _, _, _, it0 = _dual_active_set(np.eye(n), np.zeros(n), A_all, b_all, P.E, P.e, max_iter)
    x, W, it = _primal_active_set(P, x0, max_iter)
    return _finish(P, x, it0 + it, "primal", W)


def kkt_residuals(res, H, q, A=None, b=None, E=None, e=None, lb=None, ub=None):
    """Stationarity, primal feasibility and complementarity residuals of ``res``."""
    P = _Problem(H, q, A, b, E, e, lb, ub)
    x = res.x
    grad = P.H @ x + P.q + P.A.T @ res.multipliers + P.E.T @ res.eq_multipliers \
        - res.lower_multipliers + res.upper_multipliers
    prim = 0.0
    if P.A.shape[0]:
        prim = max(prim, float(np.max(np.maximum(P.A @ x - P.b, 0.0))))
    if P.E.shape[0]:
        prim = max(prim, float(np.max(np.abs(P.E @ x - P.e))))
    lo_gap = np.where(np.isfinite(P.lb), P.lb - x, -np.inf)
    hi_gap = np.where(np.isfinite(P.ub), x - P.ub, -np.inf)
    if _any_finite(lo_gap):
        prim = max(prim, float(np.max(np.maximum(lo_gap, 0.0))))
    if _any_finite(hi_gap):
        prim = max(prim, float(np.max(np.maximum(hi_gap, 0.0))))
    comp = 0.0
    if P.A.shape[0]:
        comp = max(comp, float(np.max(np.abs(res.multipliers * (P.b - P.A @ x)))))
    fin_lo = np.isfinite(P.lb)
    fin_hi = np.isfinite(P.ub)
    if fin_lo.any():
        comp = max(comp, float(np.max(np.abs(res.lower_multipliers[fin_lo] * (x - P.lb)[fin_lo]))))
    if fin_hi.any():
        comp = max(comp, float(np.max(np.abs(res.upper_multipliers[fin_hi] * (P.ub - x)[fin_hi]))))
    dual = float(min(0.0, np.min(res.multipliers, initial=0.0),
                     np.min(res.lower_multipliers, initial=0.0),
                     np.min(res.upper_multipliers, initial=0.0)))
    return {"stationarity": float(np.max(np.abs(grad), initial=0.0)),
            "primal": prim, "complementarity": comp, "dual": -dual, "scale": P.scale}


def _any_finite(a):
    return a.size and np.any(np.isfinite(a))


# ----------------------------------------------------------------------------
# exhaustive oracle
# ----------------------------------------------------------------------------

MAX_ENUM_ROWS = 16
MAX_ENUM_CANDIDATES = 3 ** 12 * 16


def kkt_enumerate_solve(H, q, A=None, b=None, E=None, e=None, lb=None, ub=None):
    """Exact QP optimum by enumerating every candidate active set.

    General rows of ``A`` are enumerated as subsets (at most 16 rows);
    each bounded variable is enumerated as free, at its lower or at its
    upper bound.  For a fixed (row subset, free set) pair the KKT matrix is
    the same for every choice of bound values, so it is factored once and
    solved against all bound patterns together.  The first candidate that
    is primal and dual feasible is a KKT point and therefore optimal.
    """
    P = _Problem(H, q, A, b, E, e, lb, ub)
    n, mA, mE = P.n, P.A.shape[0], P.E.shape[0]
    if mA > MAX_ENUM_ROWS:
        raise TooLargeError(f"{mA} general inequality rows exceed the enumeration cap {MAX_ENUM_ROWS}")
    bounded = [i for i in range(n) if np.isfinite(P.lb[i]) or np.isfinite(P.ub[i])]
    n_cand = (2 ** mA) * (3 ** len(bounded))
    if n_cand > MAX_ENUM_CANDIDATES:
        raise TooLargeError(f"{n_cand} candidate active sets exceed the enumeration cap")
    tol = 1e-9 * P.scale
    if mE:
        # keep a linearly independent subset of the equality rows
        _, Rf, perm = sla.qr(P.E.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(Rf))
        rank = int(np.sum(diag > 1e-12 * max(1.0, diag[0] if diag.size else 0.0)))
        keep = np.sort(perm[:rank])
        mE = rank
    else:
        keep = np.zeros(0, dtype=int)
    free_always = [i for i in range(n) if i not in bounded]
    Hm, qv, Am, bv, Em, ev = P.H, P.q, P.A, P.b, P.E[keep], P.e[keep]

    row_subsets = [list(c) for k in range(mA + 1) for c in combinations(range(mA), k)]
    nb = len(bounded)
    bnd = np.array(bounded, dtype=int)
    # each bounded variable has two "fixed" options; one-sided bounds repeat theirs
    opt0 = np.where(np.isfinite(P.lb[bnd]), P.lb[bnd], P.ub[bnd])
    opt1 = np.where(np.isfinite(P.ub[bnd]), P.ub[bnd], P.lb[bnd])
    lo0 = np.isfinite(P.lb[bnd])
    lo1 = ~np.isfinite(P.ub[bnd])
    free_arr = np.array(free_always, dtype=int)
    masks = (np.arange(2 ** nb)[:, None] >> np.arange(nb)) & 1
    pattern_bits = {}
    # many fixed variables first: one factorisation covers many candidates
    mask_order = np.argsort(-masks.sum(axis=1), kind="stable")
    for S in row_subsets:
        AS = Am[S]
        for mask in mask_order:
            sel = masks[mask].astype(bool)
            fixed_pos = np.flatnonzero(sel)
            fixed = bnd[fixed_pos]
            F = np.sort(np.concatenate([free_arr, bnd[~sel]]))
            k = fixed.size
            bits = pattern_bits.get(k)
            if bits is None:
                bits = ((np.arange(2 ** k)[None, :] >> np.arange(k)[:, None]) & 1).astype(bool)
                pattern_bits[k] = bits
            XX = np.where(bits, opt1[fixed_pos][:, None], opt0[fixed_pos][:, None])
            at_lo = np.where(bits, lo1[fixed_pos][:, None], lo0[fixed_pos][:, None])
            n_pat = XX.shape[1]
            nf, ns = F.size, len(S)
            dim = nf + mE + ns
            rhs0 = np.concatenate([-qv[F], ev, bv[S]])
            coupling = np.vstack([Hm[F][:, fixed], Em[:, fixed], AS[:, fixed]]) if k \
                else np.zeros((dim, 0))
            RHS = rhs0[:, None] - coupling @ XX
            if dim:
                K = np.zeros((dim, dim))
                K[:nf, :nf] = Hm[F][:, F]
                K[:nf, nf:nf + mE] = Em[:, F].T
                K[:nf, nf + mE:] = AS[:, F].T
                K[nf:nf + mE, :nf] = Em[:, F]
                K[nf + mE:, :nf] = AS[:, F]
                # rows for multipliers must see a nonsingular system
                if nf == 0:
                    # no free variables: only consistency of fixed values matters
                    if mE + ns:
                        continue
                    SOL = np.zeros((0, n_pat))
                else:
                    SOL = _lu_solve_checked(K, RHS)
                    if SOL is None:
                        continue
            else:
                SOL = np.zeros((0, n_pat))
            Xc = np.zeros((n, n_pat))
            Xc[F] = SOL[:nf]
            Xc[fixed] = XX
            mu_E = SOL[nf:nf + mE]
            mu_S = SOL[nf + mE:]
            ok = np.ones(n_pat, dtype=bool)
            if mA:
                ok &= np.all(Am @ Xc <= (bv + tol * np.maximum(1.0, np.abs(bv)))[:, None], axis=0)
            if P.E.shape[0]:
                ok &= np.all(np.abs(P.E @ Xc - P.e[:, None]) <= tol * max(1.0, _amax(P.e)), axis=0)
            lbt = np.where(np.isfinite(P.lb), P.lb - tol, -np.inf)
            ubt = np.where(np.isfinite(P.ub), P.ub + tol, np.inf)
            ok &= np.all((Xc >= lbt[:, None]) & (Xc <= ubt[:, None]), axis=0)
            if ns:
                ok &= np.all(mu_S >= -tol, axis=0)
            if k and ok.any():
                grad = Hm @ Xc + qv[:, None]
                if mE:
                    grad += Em.T @ mu_E
                if ns:
                    grad += AS.T @ mu_S
                G = grad[fixed]
                nu = np.where(at_lo, G, -G)
                ok &= np.all(nu >= -tol * max(1.0, _amax(G)), axis=0)
            if ok.any():
                k = int(np.flatnonzero(ok)[0])
                x = Xc[:, k]
                res = _finish(P, x, 0, "enumerate")
                return res
    raise InfeasibleError("no primal-dual feasible active set exists")
