"""Local mp-QPs, their 1-D parametric slices and the centralized baseline.

A local problem has parameters ``p = [Phi; Theta]`` with a scalar
``Theta`` (always the last entry), decisions ``U`` and::

    J(U, p) = p'Qpp p + U'Quu U + p'Qpu U
    C_U U <= C_c + C_p p

At fixed ``Phi`` the optimal value and policy are piecewise quadratic and
piecewise affine in ``Theta``; :func:`parametric_slice` computes them
exactly by continuation over ``Theta``.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DegeneracyError, InfeasibleError, UnboundedError
from .pwq import Piece, PwqScalar, _locate
from .qp import qp_solve, _lu_solve_checked

__all__ = [
    "LocalProblem",
    "SliceBundle",
    "condense",
    "parametric_slice",
    "centralized_solve",
    "CentralizedResult",
]


def _arr(x, shape=None):
    a = np.asarray(x, dtype=float)
    return a.reshape(shape) if shape is not None else a


@dataclass
class LocalProblem:
    Qpp: np.ndarray
    Quu: np.ndarray
    Qpu: np.ndarray
    C_U: np.ndarray
    C_c: np.ndarray
    C_p: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.Quu = _arr(self.Quu)
        nU = self.Quu.shape[0]
        self.Qpp = _arr(self.Qpp)
        npar = self.Qpp.shape[0]
        self.Qpu = _arr(self.Qpu, (npar, nU))
        self.C_U = _arr(self.C_U, (-1, nU))
        self.C_c = _arr(self.C_c).ravel()
        self.C_p = _arr(self.C_p, (self.C_U.shape[0], npar))
        if npar < 1:
            raise ValueError("the parameter vector must contain Theta")
        if self.C_c.size != self.C_U.shape[0]:
            raise ValueError("constraint sizes differ")
        if not np.allclose(self.Quu, self.Quu.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(self.Quu).max())):
            raise ValueError("Quu must be symmetric")
        try:
            np.linalg.cholesky(self.Quu)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Quu must be positive definite") from exc

    @property
    def n_u(self):
        return self.Quu.shape[0]

    @property
    def n_phi(self):
        return self.Qpp.shape[0] - 1

    @classmethod
    def from_residuals(cls, Gp, Gu, w, C_U, C_c, C_p, name=""):
        """Build from a weighted least-squares cost ``sum w_k r_k^2`` with ``r = Gp p + Gu U``."""
        Gp, Gu = _arr(Gp), _arr(Gu)
        W = np.diag(_arr(w).ravel())
        return cls(Qpp=Gp.T @ W @ Gp, Quu=Gu.T @ W @ Gu, Qpu=2.0 * Gp.T @ W @ Gu,
                   C_U=C_U, C_c=C_c, C_p=C_p, name=name)

    def at_phi(self, phi):
        """Data of the QP in U at fixed Phi, affine in Theta.

        Returns ``(H, q0, q1, w0, w1, c0, c1, c2)`` so that the cost is
        ``0.5 U'HU + (q0 + q1*T)'U + c0 + c1*T + c2*T^2`` and the
        constraints are ``C_U U <= w0 + w1*T``.
        """
        phi = _arr(phi).ravel()
        k = self.n_phi
        if phi.size != k:
            raise ValueError(f"expected {k} local parameters, got {phi.size}")
        Q = self.Qpp
        H = 2.0 * self.Quu
        q0 = self.Qpu[:k].T @ phi
        q1 = self.Qpu[k].copy()
        w0 = self.C_c + self.C_p[:, :k] @ phi
        w1 = self.C_p[:, k].copy()
        c0 = float(phi @ Q[:k, :k] @ phi)
        c1 = float(phi @ (Q[:k, k] + Q[k, :k]))
        c2 = float(Q[k, k])
        return H, q0, q1, w0, w1, c0, c1, c2

    def cost(self, phi, theta, U):
        p = np.append(_arr(phi).ravel(), theta)
        U = _arr(U).ravel()
        return float(p @ self.Qpp @ p + U @ self.Quu @ U + p @ self.Qpu @ U)

    def solve_at(self, phi, theta):
        """Pointwise optimum at ``(Phi, Theta)``; returns ``(U, J)``."""
        H, q0, q1, w0, w1, c0, c1, c2 = self.at_phi(phi)
        A, b = _u_rows(self.C_U, w0 + w1 * theta)
        res = qp_solve(H, q0 + q1 * theta, A, b)
        return res.x, res.value + c0 + c1 * theta + c2 * theta * theta

    def to_dict(self):
        return {"name": self.name, "Qpp": self.Qpp.tolist(), "Quu": self.Quu.tolist(),
                "Qpu": self.Qpu.tolist(), "C_U": self.C_U.tolist(), "C_c": self.C_c.tolist(),
                "C_p": self.C_p.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["Qpp"], data["Quu"], data["Qpu"], data["C_U"], data["C_c"], data["C_p"],
                   name=data.get("name", ""))


def _u_rows(C_U, rhs, tol=1e-12):
    """Drop rows with no U dependence after checking they hold."""
    nz = np.any(C_U != 0.0, axis=1)
    bad = (~nz) & (rhs < -tol * np.maximum(1.0, np.abs(rhs)))
    if np.any(bad):
        raise InfeasibleError("a parameter-only constraint is violated")
    return C_U[nz], rhs[nz]


def condense(A, B, N):
    """Stack ``x_{k+1} = A x_k + B u_k`` over ``N`` steps.

    Returns ``(Sx, Su)`` with ``[x_1; ...; x_N] = Sx x_0 + Su [u_0; ...; u_{N-1}]``.
    """
    A, B = _arr(A), _arr(B)
    nx, nu = B.shape
    Sx = np.zeros((N * nx, nx))
    Su = np.zeros((N * nx, N * nu))
    Ak = np.eye(nx)
    powers = []
    for k in range(N):
        powers.append(Ak)
        Ak = A @ Ak
        Sx[k * nx:(k + 1) * nx] = Ak
    for k in range(N):
        for j in range(k + 1):
            Su[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = powers[k - j] @ B
    return Sx, Su


@dataclass
class SliceBundle:
    """Value function and policy of a local problem along ``Theta``."""

    value: PwqScalar
    policy: list          # (K, k) per piece: U = K*Theta + k
    phi: np.ndarray = None
    stats: dict = field(default_factory=dict)

    @property
    def interval(self):
        return self.value.domain

    def policy_at(self, theta):
        """Optimal U at ``theta``; the left piece is used on a shared breakpoint."""
        from .pwq import _check_domain
        _check_domain(self.value, theta)
        K, k = self.policy[_locate(self.value, theta)]
        return K * theta + k

    def to_dict(self):
        d = self.value.to_dict()
        d["policy"] = [{"K": K.tolist(), "k": k.tolist()} for K, k in self.policy]
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(PwqScalar.from_dict(data),
                   [(np.array(p["K"], dtype=float), np.array(p["k"], dtype=float))
                    for p in data["policy"]])


# ----------------------------------------------------------------------------
# continuation over Theta
# ----------------------------------------------------------------------------

class _Slicer:
    def __init__(self, H, q0, q1, A, w0, w1):
        self.H, self.q0, self.q1, self.A, self.w0, self.w1 = H, q0, q1, A, w0, w1
        self.n = H.shape[0]
        self.scale = max(1.0, float(np.abs(w0).max(initial=0.0)), float(np.abs(w1).max(initial=0.0)),
                         float(np.abs(q0).max(initial=0.0)), float(np.abs(q1).max(initial=0.0)))
        self.qp_calls = 0

    def region(self, W):
        """Affine policy for working set ``W`` and the Theta interval where it is optimal."""
        H, A, n = self.H, self.A, self.n
        W = list(W)
        AW = A[W]
        nw = len(W)
        M = np.zeros((n + nw, n + nw))
        M[:n, :n] = H
        M[:n, n:] = AW.T
        M[n:, :n] = AW
        rhs = np.zeros((n + nw, 2))
        rhs[:n, 0], rhs[:n, 1] = -self.q0, -self.q1
        rhs[n:, 0], rhs[n:, 1] = self.w0[W], self.w1[W]
        sol = _lu_solve_checked(M, rhs)
        if sol is None:
            return None
        k, K = sol[:n, 0], sol[:n, 1]
        lk, lK = sol[n:, 0], sol[n:, 1]
        lo, hi, event = -math.inf, math.inf, None
        tol = 1e-9 * self.scale
        inactive = np.ones(A.shape[0], dtype=bool)
        inactive[W] = False
        idx = np.flatnonzero(inactive)
        alpha = self.w0[idx] - A[idx] @ k
        beta = self.w1[idx] - A[idx] @ K
        for al, be, j in zip(alpha, beta, idx):
            if abs(be) <= 1e-14 * self.scale:
                if al < -tol:
                    return None
                continue
            t = -al / be
            if be > 0:
                lo = max(lo, t)
            elif t < hi:
                hi, event = t, ("add", int(j))
        for pos, (al, be) in enumerate(zip(lk, lK)):
            if abs(be) <= 1e-14 * max(1.0, abs(al)):
                if al < -tol:
                    return None
                continue
            t = -al / be
            if be > 0:
                lo = max(lo, t)
            elif t < hi:
                hi, event = t, ("drop", W[pos])
        return lo, hi, event, K, k

    def probe(self, theta):
        self.qp_calls += 1
        res = qp_solve(self.H, self.q0 + self.q1 * theta, self.A, self.w0 + self.w1 * theta)
        return sorted(res.working)


def _piece_cost(H, q0, q1, c0, c1, c2, K, k):
    h = float(K @ H @ K + 2.0 * q1 @ K + 2.0 * c2)
    f = float(K @ H @ k + q0 @ K + q1 @ k + c1)
    g = float(0.5 * k @ H @ k + q0 @ k + c0)
    return h, f, g


def parametric_slice(prob, phi, max_retries=5):
    """Exact value function and policy of ``prob`` along Theta at fixed ``phi``.

    The feasible Theta range comes from two LPs.  The sweep then moves
    left to right: each critical region's working set gives an affine
    policy through one KKT solve, the region ends where an inactive row
    becomes tight or a multiplier reaches zero, and that event updates the
    working set.  When the update is ambiguous (degenerate events) the QP
    is re-solved slightly to the right of the region boundary, with the
    probe distance shrunk on each of ``max_retries`` attempts.
    """
    H, q0, q1, w0, w1, c0, c1, c2 = prob.at_phi(phi)
    nU = prob.n_u
    Aaug = np.hstack([prob.C_U, -w1[:, None]])
    cT = np.zeros(nU + 1)
    cT[-1] = 1.0
    Z = np.zeros((nU + 1, nU + 1))
    try:
        t_lo = qp_solve(Z, cT, Aaug, w0).x[-1]
        t_hi = qp_solve(Z, -cT, Aaug, w0).x[-1]
    except InfeasibleError as exc:
        raise InfeasibleError("slice is empty: no Theta admits a feasible U") from exc
    except UnboundedError as exc:
        raise UnboundedError("Theta range is unbounded at these local parameters") from exc
    nz = np.any(prob.C_U != 0.0, axis=1)
    A, w0u, w1u = prob.C_U[nz], w0[nz], w1[nz]
    sl = _Slicer(H, q0, q1, A, w0u, w1u)
    sl.qp_calls = 2
    width = t_hi - t_lo
    if width <= 1e-12 * max(1.0, abs(t_lo)):
        U, J = prob.solve_at(phi, t_lo)
        value = PwqScalar([t_lo, t_lo], [Piece(0.0, 0.0, J)])
        return SliceBundle(value, [(np.zeros(nU), U)], np.asarray(phi, float), {"qp_calls": 3})

    eps_t = 1e-12 * max(1.0, abs(t_lo), abs(t_hi))
    tol_t = 1e-9 * max(1.0, width)
    theta = t_lo
    raw = []          # (lo, hi, K, k)
    W = None
    while theta < t_hi - eps_t:
        reg = sl.region(W) if W is not None else None
        if reg is not None and not (reg[0] <= theta + tol_t and reg[1] > theta + eps_t):
            reg = None
        if reg is None:
            for r in range(max_retries):
                delta = min(width * 10.0 ** (-6 - 2 * r), 0.5 * (t_hi - theta))
                tp = theta + delta
                W = sl.probe(tp)
                reg = sl.region(W)
                if reg is not None and reg[0] <= theta + tol_t and reg[1] >= tp - tol_t:
                    break
                reg = None
            if reg is None:
                raise DegeneracyError(f"could not identify the critical region right of Theta={theta!r}")
        lo, hi, event, K, k = reg
        end = min(hi, t_hi)
        raw.append((theta, end, K, k))
        theta = end
        if event is None or hi >= t_hi:
            break
        kind, j = event
        W = sorted(set(W) | {j}) if kind == "add" else [w for w in W if w != j]

    pieces = _tidy_pieces(raw, t_lo, t_hi, width)
    bps = [pieces[0][0]] + [p[1] for p in pieces]
    bps[-1] = t_hi
    vals, pol = [], []
    for lo, hi, K, k in pieces:
        h, f, g = _piece_cost(H, q0, q1, c0, c1, c2, K, k)
        if h < 0 and h > -1e-9 * max(1.0, abs(f)):
            h = 0.0
        vals.append(Piece(h, f, g))
        pol.append((K, k))
    vals, pol, bps = _merge(vals, pol, bps)
    return SliceBundle(PwqScalar(bps, vals), pol, np.asarray(phi, float),
                       {"qp_calls": sl.qp_calls, "pieces": len(vals)})


def _tidy_pieces(raw, t_lo, t_hi, width):
    """Absorb slivers left by rounding into their neighbours."""
    min_w = 1e-10 * max(1.0, width)
    out = []
    for lo, hi, K, k in raw:
        if out and hi - lo < min_w:
            plo, _, pK, pk = out[-1]
            out[-1] = (plo, hi, pK, pk)
        else:
            out.append((lo, hi, K, k))
    if len(out) > 1 and out[0][1] - out[0][0] < min_w:
        _, _, K1, k1 = out[1]
        out[1] = (out[0][0], out[1][1], K1, k1)
        out.pop(0)
    return out


def _close(x, y, tol=1e-10):
    return abs(x - y) <= tol * max(1.0, abs(x), abs(y))


def _merge(vals, pol, bps):
    """Merge neighbouring pieces whose value and policy coincide."""
    out_v, out_p, out_b = [vals[0]], [pol[0]], [bps[0], bps[1]]
    for r in range(1, len(vals)):
        v, (K, k) = vals[r], pol[r]
        pv, (pK, pk) = out_v[-1], out_p[-1]
        scale = max(1.0, float(np.abs(k).max(initial=0.0)), float(np.abs(K).max(initial=0.0)))
        same = (_close(v.h, pv.h) and _close(v.f, pv.f) and _close(v.g, pv.g)
                and np.allclose(K, pK, rtol=0, atol=1e-10 * scale)
                and np.allclose(k, pk, rtol=0, atol=1e-10 * scale))
        if same:
            out_b[-1] = bps[r + 1]
        else:
            out_v.append(v)
            out_p.append((K, k))
            out_b.append(bps[r + 1])
    return out_v, out_p, out_b


# ----------------------------------------------------------------------------
# centralized baseline
# ----------------------------------------------------------------------------

@dataclass
class CentralizedResult:
    theta: np.ndarray
    U: list
    value: float
    iterations: int = 0


def _coupling_data(couplings, M):
    rows, rhs, rels = [], [], []
    for c in couplings:
        if isinstance(c, dict):
            a, b, rel = c["a"], c["b"], c.get("rel", "eq")
        elif hasattr(c, "a"):
            a, b, rel = c.a, c.b, getattr(c, "rel", "eq")
        else:
            a, b = c[0], c[1]
            rel = c[2] if len(c) > 2 else "eq"
        a = np.asarray(a, dtype=float).ravel()
        if a.size != M:
            raise ValueError("coupling coefficient count differs from the number of subsystems")
        rows.append(a)
        rhs.append(float(b))
        rels.append(rel)
    return rows, rhs, rels


def centralized_solve(problems, phis, couplings):
    """Solve every local problem and the coupling rows as one stacked QP.

    Variables are ``[U_1, Theta_1, U_2, Theta_2, ...]``.  Returns a
    :class:`CentralizedResult` whose value includes every constant term, so
    it is directly comparable with the hierarchical total cost.
    """
    M = len(problems)
    sizes = [p.n_u + 1 for p in problems]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n = int(offs[-1])
    H = np.zeros((n, n))
    q = np.zeros(n)
    const = 0.0
    A_blocks, b_blocks = [], []
    for i, (p, phi) in enumerate(zip(problems, phis)):
        Hi, q0, q1, w0, w1, c0, c1, c2 = p.at_phi(phi)
        o, nu = offs[i], p.n_u
        H[o:o + nu, o:o + nu] = Hi
        H[o:o + nu, o + nu] = q1
        H[o + nu, o:o + nu] = q1
        H[o + nu, o + nu] = 2.0 * c2
        q[o:o + nu] = q0
        q[o + nu] = c1
        const += c0
        Ai = np.zeros((p.C_U.shape[0], n))
        Ai[:, o:o + nu] = p.C_U
        Ai[:, o + nu] = -w1
        A_blocks.append(Ai)
        b_blocks.append(w0)
    rows, rhs, rels = _coupling_data(couplings, M)
    E, e = [], []
    for a, b, rel in zip(rows, rhs, rels):
        r = np.zeros(n)
        r[offs[1:] - 1] = a
        if rel == "eq":
            E.append(r)
            e.append(b)
        else:
            A_blocks.append(r[None, :])
            b_blocks.append(np.array([b]))
    A = np.vstack(A_blocks) if A_blocks else None
    b = np.concatenate(b_blocks) if b_blocks else None
    res = qp_solve(H, q, A, b, np.array(E) if E else None, np.array(e) if e else None)
    x = res.x
    theta = x[offs[1:] - 1].copy()
    U = [x[offs[i]:offs[i] + problems[i].n_u].copy() for i in range(M)]
    return CentralizedResult(theta, U, res.value + const, res.iterations)
