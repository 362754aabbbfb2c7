"""Coordination of value-function slices through a separable knapsack.

Each subsystem ships a convex piecewise-quadratic slice ``J_i(Theta_i)``
on an interval.  The coordinator minimises ``sum_i J_i(Theta_i)`` subject
to a few linear coupling rows.  Writing ``Theta_i = I_{i,0} + sum_r
theta_{i,r}`` with one box-bounded variable per piece turns this into a
separable QP; convexity of each slice guarantees the pieces fill left to
right, so the relaxation is exact.
"""

from dataclasses import dataclass, field
import math
import time


from .cqkp import KnapsackInstance, bps_solve
from .errors import DomainError, InfeasibleError, PipelineError, SolverError
from .mcqkp import M_MAX_DEFAULT, hps_solve
from .parametric import parametric_slice
from .pwq import Piece, PwqScalar, pwq_eval, pwq_validate

__all__ = [
    "Coupling",
    "CoordinationInstance",
    "RecoveryMap",
    "CoordinationResult",
    "HierarchicalResult",
    "add_slacks",
    "slice_to_separable",
    "recover_theta",
    "coordinate",
    "hierarchical_step",
]


@dataclass(frozen=True)
class Coupling:
    """``sum_i a[i]*Theta_i  (= or <=)  b``."""

    a: tuple
    b: float
    rel: str = "eq"

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", float(self.b))
        if self.rel not in ("eq", "le"):
            raise ValueError(f"unknown relation {self.rel!r}")

    def to_dict(self):
        return {"a": list(self.a), "b": self.b, "rel": self.rel}


@dataclass
class CoordinationInstance:
    slices: list
    couplings: list
    n_slack: int = 0      # trailing slices that are slack variables

    def __post_init__(self):
        self.slices = [s if isinstance(s, PwqScalar) else PwqScalar.from_dict(s) for s in self.slices]
        self.couplings = [c if isinstance(c, Coupling) else
                          Coupling(c["a"], c["b"], c.get("rel", "eq")) if isinstance(c, dict) else
                          Coupling(*c) for c in self.couplings]
        M = len(self.slices)
        for c in self.couplings:
            if len(c.a) != M:
                raise ValueError("coupling coefficient count differs from the number of slices")

    @property
    def M(self):
        return len(self.slices) - self.n_slack

    @property
    def m(self):
        return len(self.couplings)

    def validate(self):
        for i, s in enumerate(self.slices):
            lo, hi = s.domain
            if lo == hi and s.n_pieces == 1:
                continue
            rep = pwq_validate(s)
            if not rep.ok:
                raise DomainError(f"slice {i} is invalid: {sorted(rep.kinds())}")

    def residuals(self, theta):
        """Per-row violation of the coupling relations at ``theta``."""
        out = []
        for c in self.couplings:
            lhs = math.fsum(ai * ti for ai, ti in zip(c.a, theta))
            r = lhs - c.b
            out.append(abs(r) if c.rel == "eq" else max(r, 0.0))
        return out

    def to_dict(self):
        return {"slices": [s.to_dict() for s in self.slices],
                "couplings": [c.to_dict() for c in self.couplings]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["slices"], data["couplings"])


@dataclass
class RecoveryMap:
    base: list        # I_{i,0} per slice
    indices: list     # knapsack variable indices per slice
    widths: list      # piece widths per slice


def add_slacks(inst):
    """Turn every ``<=`` row into an equality with a zero-cost bounded slack.

    The slack range is ``[0, b_j - min LHS]`` where the minimum comes from
    interval arithmetic over the slice domains.  A row whose minimum
    equals ``b_j`` becomes an equality without slack.
    """
    if all(c.rel == "eq" for c in inst.couplings):
        return inst
    slices = list(inst.slices)
    rows = [list(c.a) for c in inst.couplings]
    new_couplings, extra = [], 0
    for j, c in enumerate(inst.couplings):
        if c.rel == "eq":
            continue
        lo = 0.0
        terms = []
        for ai, s in zip(c.a, inst.slices):
            if ai == 0.0:
                continue
            d0, d1 = s.domain
            terms.append(min(ai * d0, ai * d1))
        lo = math.fsum(terms)
        if not math.isfinite(lo):
            raise DomainError(f"row {j} admits no finite slack bound")
        smax = c.b - lo
        tol = 1e-12 * max(1.0, abs(c.b), abs(lo))
        if smax < -tol:
            raise InfeasibleError(f"row {j} cannot be satisfied: minimum left-hand side {lo!r} > {c.b!r}")
        if smax <= tol:
            continue
        slices.append(PwqScalar([0.0, smax], [Piece(0.0, 0.0, 0.0)]))
        for k, r in enumerate(rows):
            r.append(1.0 if k == j else 0.0)
        extra += 1
    for k, r in enumerate(rows):
        new_couplings.append(Coupling(r, inst.couplings[k].b, "eq"))
    return CoordinationInstance(slices, new_couplings, inst.n_slack + extra)


def slice_to_separable(inst):
    """Knapsack form of an all-equality instance.

    Returns ``(knapsack, recovery_map, const_offset, fixed)`` where
    ``fixed`` maps single-point slices to their only feasible value; those
    are removed and their contribution moved into the targets.
    """
    if any(c.rel != "eq" for c in inst.couplings):
        raise ValueError("add slacks before transforming")
    d, a, l, u = [], [], [], []
    cols = []
    base, indices, widths = [], [], []
    consts = []
    target_terms = [[c.b] for c in inst.couplings]
    fixed = {}
    for i, s in enumerate(inst.slices):
        lo, hi = s.domain
        base.append(lo)
        consts.append(pwq_eval(s, lo))
        coef = [c.a[i] for c in inst.couplings]
        for j, cj in enumerate(coef):
            target_terms[j].append(-cj * lo)
        if hi <= lo:
            fixed[i] = lo
            indices.append([])
            widths.append([])
            continue
        idx, wid = [], []
        bps = s.breakpoints
        for r, p in enumerate(s.pieces):
            w = bps[r + 1] - bps[r]
            idx.append(len(d))
            wid.append(w)
            d.append(p.h)
            a.append(-(p.h * bps[r] + p.f))
            l.append(0.0)
            u.append(w)
            cols.append(coef)
        indices.append(idx)
        widths.append(wid)
    target = [math.fsum(t) for t in target_terms]
    B = [[col[j] for col in cols] for j in range(len(target))]
    knap = KnapsackInstance(d, a, l, u, B, target)
    return knap, RecoveryMap(base, indices, widths), math.fsum(consts), fixed


def recover_theta(theta, rmap):
    """``Theta_i = I_{i,0} + sum_r theta_{i,r}``."""
    return [rmap.base[i] + math.fsum(theta[k] for k in rmap.indices[i])
            for i in range(len(rmap.base))]


@dataclass
class CoordinationResult:
    theta: list               # one value per non-slack slice
    value: float              # sum of slice values at theta (slacks cost nothing)
    knapsack_value: float
    const_offset: float
    lam: object
    theta_parts: list         # knapsack solution
    slack: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {"theta": list(self.theta), "value": self.value, "lambda": self.lam,
                "slack": list(self.slack), "residuals": list(self.residuals)}


def coordinate(inst, mmax=M_MAX_DEFAULT):
    """Minimise the sum of slices subject to the couplings.

    One coupling row goes to the breakpoint search, more rows to the
    hyperplane search.  ``value`` is the knapsack optimum plus the
    constant dropped by the transformation.
    """
    inst.validate()
    eq = add_slacks(inst)
    knap, rmap, offset, _ = slice_to_separable(eq)
    if knap.n == 0:
        theta_all = list(rmap.base)
        res = eq.residuals(theta_all)
        if any(r > 1e-9 * max(1.0, abs(c.b)) for r, c in zip(res, eq.couplings)):
            raise InfeasibleError("all slices are fixed and the couplings do not hold")
        sol_x, lam, kval, stats = [], [0.0] * eq.m, 0.0, {}
    else:
        sol = bps_solve(knap) if knap.m == 1 else hps_solve(knap, mmax=mmax)
        sol_x, lam, kval, stats = sol.x, sol.lam, sol.value, sol.stats
        theta_all = recover_theta(sol_x, rmap)
    # clamp rounding spill outside the slice domains
    theta_all = [min(max(t, s.domain[0]), s.domain[1]) for t, s in zip(theta_all, eq.slices)]
    M = inst.M
    theta = theta_all[:M]
    value = math.fsum(pwq_eval(s, t) for s, t in zip(inst.slices[:M], theta))
    return CoordinationResult(theta=theta, value=value, knapsack_value=kval + offset,
                              const_offset=offset, lam=lam, theta_parts=list(sol_x),
                              slack=theta_all[M:], residuals=inst.residuals(theta),
                              stats=dict(stats, rmap=rmap))


@dataclass
class HierarchicalResult:
    theta: list
    U: list
    u0: list
    value: float
    timings: dict
    slices: list
    coordination: CoordinationResult


def hierarchical_step(problems, phis, couplings, mmax=M_MAX_DEFAULT):
    """One on-line step: slice every subsystem, coordinate, evaluate the policies.

    Failures are re-raised as :class:`PipelineError` naming the phase
    (``"slice"``, ``"coordinate"`` or ``"evaluate"``) and, where it
    applies, the subsystem index.
    """
    timings = {}
    t0 = time.perf_counter()
    slices = []
    for i, (p, phi) in enumerate(zip(problems, phis)):
        try:
            slices.append(parametric_slice(p, phi))
        except SolverError as exc:
            raise PipelineError("slice", exc, subsystem=i) from exc
    t1 = time.perf_counter()
    timings["slice"] = t1 - t0
    try:
        inst = CoordinationInstance([s.value for s in slices], couplings)
        co = coordinate(inst, mmax=mmax)
    except (SolverError, DomainError) as exc:
        raise PipelineError("coordinate", exc) from exc
    t2 = time.perf_counter()
    timings["coordinate"] = t2 - t1
    U, u0 = [], []
    for i, (s, th) in enumerate(zip(slices, co.theta)):
        try:
            Ui = s.policy_at(th)
        except DomainError as exc:
            raise PipelineError("evaluate", exc, subsystem=i) from exc
        U.append(Ui)
        u0.append(float(Ui[0]))
    timings["evaluate"] = time.perf_counter() - t2
    return HierarchicalResult(theta=co.theta, U=U, u0=u0, value=co.value, timings=timings,
                              slices=slices, coordination=co)
