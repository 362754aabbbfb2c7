"""Microgrid case study: micro-CHP units plus electrical and heat storage.

Every subsystem tracks a scalar power reference ``Theta_i`` handed out by
the coordinator.  The coordinator balances electrical demand (case 1) or
electrical and heat demand (case 2) over the fleet.

Random draws use numpy's PCG64 generator seeded with the run seed.  The
fleet is built in the order CHPs, electrical storages, heat storages;
each subsystem draws ``zeta ~ U[0, 1]`` and each CHP then draws
``eta_e ~ U[0.5, 0.7]``.
"""

from dataclasses import dataclass, field
import math
import statistics
import time

import numpy as np

from .coordination import Coupling, hierarchical_step
from .errors import InfeasibleError, PipelineError, SolverError
from .parametric import LocalProblem, centralized_solve, condense
from .qp import qp_solve

__all__ = [
    "ChpParams",
    "StorageParams",
    "Subsystem",
    "Fleet",
    "build_fleet",
    "chp_problem",
    "storage_problem",
    "demand_profile",
    "DEMAND_E",
    "DEMAND_H",
    "couplings_at",
    "check_capacity",
    "simulate",
    "SimulationLog",
    "benchmark",
]

HORIZON = 10
DEMAND_LEVEL = 0.6

# Representative daily profiles in p.u.: electricity peaks around 08:00 and
# 19:00, heat is elevated 06:00-09:00 and 17:00-22:00.
DEMAND_E = (0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.62, 0.82, 0.90, 0.80, 0.72, 0.70,
            0.72, 0.68, 0.65, 0.66, 0.72, 0.85, 0.96, 1.00, 0.92, 0.80, 0.65, 0.52)
DEMAND_H = (0.55, 0.50, 0.48, 0.48, 0.52, 0.65, 0.88, 0.98, 0.95, 0.80, 0.62, 0.55,
            0.50, 0.48, 0.48, 0.52, 0.62, 0.82, 0.94, 1.00, 0.97, 0.90, 0.82, 0.66)


@dataclass(frozen=True)
class ChpParams:
    zeta: float
    eta_e: float

    @property
    def A(self):
        z = self.zeta
        return np.array([[0.6 + 0.2 * z, -0.1 - 0.1 * z], [1.0, 0.0]])

    @property
    def B(self):
        return np.array([[self.eta_e], [0.0]])

    @property
    def C(self):
        return np.array([[1.0, 0.0]])

    @property
    def Q(self):
        return 10.0 * (1.0 + 4.0 * self.zeta)

    @property
    def R(self):
        return 0.1 * (1.0 + self.zeta)

    @property
    def x_max(self):
        return (1.0 + 4.0 * self.zeta) * np.array([20.0, 20.0])

    @property
    def u_max(self):
        return self.x_max[0] / self.eta_e

    @property
    def heat_ratio(self):
        """Heat produced per unit of electrical output."""
        return (1.0 - self.eta_e) / self.eta_e


@dataclass(frozen=True)
class StorageParams:
    zeta: float
    carrier: str = "e"    # "e" electrical, "h" heat

    @property
    def A(self):
        return np.array([[1.0]])

    @property
    def B(self):
        return np.array([[-1.0 / (20.0 * (1.0 + 4.0 * self.zeta))]])

    @property
    def C(self):
        return np.array([[1.0]])

    @property
    def Q(self):
        return 1.0 + self.zeta

    @property
    def R(self):
        return 10.0 * (1.0 + self.zeta)

    @property
    def u_max(self):
        return 1.0 / (5.0 * abs(self.B[0, 0]))


def chp_problem(par, N=HORIZON):
    """Local mp-QP of a CHP: parameters ``[x0 (2); Theta]``, decisions ``u_0..u_{N-1}``."""
    Sx, Su = condense(par.A, par.B, N)
    C = par.C
    rows_p, rows_u, w = [], [], []
    # tracking residuals C x_k - Theta, k = 0..N-1
    rows_p.append(np.append(C[0], -1.0))
    rows_u.append(np.zeros(N))
    w.append(par.Q)
    for k in range(1, N):
        rows_p.append(np.append(C @ Sx[2 * (k - 1):2 * k], -1.0))
        rows_u.append((C @ Su[2 * (k - 1):2 * k])[0])
        w.append(par.Q)
    for k in range(N):
        rows_p.append(np.zeros(3))
        rows_u.append(np.eye(N)[k])
        w.append(par.R)
    xmax = np.tile(par.x_max, N)
    C_U = np.vstack([Su, -Su, np.eye(N), -np.eye(N), np.zeros((2, N))])
    C_c = np.concatenate([xmax, np.zeros(2 * N), np.full(N, par.u_max), np.zeros(N),
                          [par.x_max[0], 0.0]])
    C_p = np.vstack([np.hstack([-Sx, np.zeros((2 * N, 1))]), np.hstack([Sx, np.zeros((2 * N, 1))]),
                     np.zeros((2 * N, 3)), [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]])
    return LocalProblem.from_residuals(np.array(rows_p), np.array(rows_u), w, C_U, C_c, C_p, name="chp")


def storage_problem(par, N=HORIZON):
    """Local mp-QP of a storage: parameters ``[x0, x_ref, Theta]``, decisions ``u_0..u_{N-1}``."""
    Sx, Su = condense(par.A, par.B, N)
    rows_p, rows_u, w = [], [], []
    rows_p.append([1.0, -1.0, 0.0])
    rows_u.append(np.zeros(N))
    w.append(par.Q)
    for k in range(1, N):
        rows_p.append([Sx[k - 1, 0], -1.0, 0.0])
        rows_u.append(Su[k - 1])
        w.append(par.Q)
    for k in range(N):
        rows_p.append([0.0, 0.0, -1.0])
        rows_u.append(np.eye(N)[k])
        w.append(par.R)
    um = par.u_max
    C_U = np.vstack([Su, -Su, np.eye(N), -np.eye(N), np.zeros((2, N))])
    C_c = np.concatenate([np.ones(N), np.zeros(N), np.full(2 * N, um), [um, um]])
    C_p = np.vstack([np.hstack([-Sx, np.zeros((N, 2))]), np.hstack([Sx, np.zeros((N, 2))]),
                     np.zeros((2 * N, 3)), [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]])
    return LocalProblem.from_residuals(np.array(rows_p, dtype=float), np.array(rows_u), w,
                                       C_U, C_c, C_p, name="storage-" + par.carrier)


@dataclass
class Subsystem:
    """One plant with its local problem and current measured state."""

    kind: str                 # "chp", "storage-e" or "storage-h"
    params: object
    problem: LocalProblem
    x: np.ndarray
    x_ref: float = 0.5        # storage state-of-charge reference

    @property
    def phi(self):
        if self.kind == "chp":
            return self.x.copy()
        return np.array([self.x[0], self.x_ref])

    @property
    def theta_bounds(self):
        if self.kind == "chp":
            return 0.0, float(self.params.x_max[0])
        um = float(self.params.u_max)
        return -um, um

    def advance(self, u0):
        """Exact LTI update ``x <- A x + B u``."""
        p = self.params
        self.x = p.A @ self.x + p.B[:, 0] * u0
        return self.x



@dataclass
class Fleet:
    subsystems: list
    N: int = HORIZON

    @property
    def M(self):
        return len(self.subsystems)

    @property
    def problems(self):
        return [s.problem for s in self.subsystems]

    def phis(self):
        return [s.phi for s in self.subsystems]

    @property
    def e_coef(self):
        return [0.0 if s.kind == "storage-h" else 1.0 for s in self.subsystems]

    @property
    def h_coef(self):
        out = []
        for s in self.subsystems:
            if s.kind == "chp":
                out.append(s.params.heat_ratio)
            else:
                out.append(1.0 if s.kind == "storage-h" else 0.0)
        return out

    def capacity(self):
        """Steady capacities ``(electrical, heat)`` used to scale the p.u. demand."""
        ce = ch = 0.0
        for s in self.subsystems:
            if s.kind == "chp":
                ce += s.params.x_max[0]
                ch += s.params.heat_ratio * s.params.x_max[0]
            elif s.kind == "storage-e":
                ce += s.params.u_max
            else:
                ch += s.params.u_max
        return float(ce), float(ch)


def build_fleet(M, seed, N=HORIZON, soc_ref=0.5, soc0=0.5):
    """``M/3`` CHPs, ``M/3`` electrical storages and ``M/3`` heat storages."""
    if not isinstance(M, (int, np.integer)) or M < 3 or M % 3:
        raise ValueError(f"fleet size must be a positive multiple of 3, got {M!r}")
    rng = np.random.default_rng(seed)
    k = M // 3
    subs = []
    for _ in range(k):
        zeta = float(rng.uniform(0.0, 1.0))
        eta = float(rng.uniform(0.5, 0.7))
        par = ChpParams(zeta, eta)
        subs.append(Subsystem("chp", par, chp_problem(par, N), np.zeros(2)))
    for carrier in ("e", "h"):
        for _ in range(k):
            par = StorageParams(float(rng.uniform(0.0, 1.0)), carrier)
            subs.append(Subsystem("storage-" + carrier, par, storage_problem(par, N),
                                  np.array([float(soc0)]), x_ref=float(soc_ref)))
    return Fleet(subs, N)


def demand_profile(t, fleet=None, level=DEMAND_LEVEL):
    """Demand at hour ``t``.

    Without a fleet the raw p.u. values are returned.  With a fleet they
    are scaled to ``level`` times its steady capacity.
    """
    if t < 0:
        raise ValueError("hour index must be non-negative")
    h = int(t) % 24
    pe, ph = DEMAND_E[h], DEMAND_H[h]
    if fleet is None:
        return pe, ph
    ce, ch = fleet.capacity()
    return level * pe * ce, level * ph * ch


def couplings_at(fleet, t, case, level=DEMAND_LEVEL, demand=None):
    """Balance rows for hour ``t``: electrical only (case 1) or electrical and heat (case 2)."""
    if case not in (1, 2):
        raise ValueError(f"case must be 1 or 2, got {case!r}")
    pe, ph = demand if demand is not None else demand_profile(t, fleet, level)
    rows = [Coupling(fleet.e_coef, pe)]
    if case == 2:
        rows.append(Coupling(fleet.h_coef, ph))
    return rows


def check_capacity(fleet, case, level=DEMAND_LEVEL):
    """Raise :class:`InfeasibleError` if some hour's demand cannot be met inside the Theta boxes.

    Case 1 is settled by interval arithmetic; case 2 couples the carriers
    through the CHPs and is checked with a feasibility LP per hour.
    """
    lb = np.array([s.theta_bounds[0] for s in fleet.subsystems])
    ub = np.array([s.theta_bounds[1] for s in fleet.subsystems])
    E = np.array([fleet.e_coef, fleet.h_coef])
    for t in range(24):
        pe, ph = demand_profile(t, fleet, level)
        lo, hi = E[0] @ lb, E[0] @ ub
        if not lo <= pe <= hi:
            raise InfeasibleError(f"hour {t}: electrical demand {pe:.6g} outside [{lo:.6g}, {hi:.6g}]")
        if case == 2:
            n = fleet.M
            try:
                qp_solve(np.zeros((n, n)), np.zeros(n), E=E, e=np.array([pe, ph]), lb=lb, ub=ub)
            except InfeasibleError as exc:
                raise InfeasibleError(f"hour {t}: demand cannot be met by the fleet") from exc


# ----------------------------------------------------------------------------
# closed loop
# ----------------------------------------------------------------------------

LOG_COLUMNS = ["t", "i", "kind", "x0", "x1", "u0", "theta", "p_e", "p_h", "pieces",
               "demand_e", "demand_h", "residual_e", "residual_h",
               "t_slice", "t_coordinate", "t_evaluate", "step_cost", "cumulative_cost"]


@dataclass
class StepRecord:
    t: int
    states: list              # measured state of every subsystem before the step
    u0: list
    theta: list
    demand: tuple
    residuals: list
    timings: dict
    cost: float
    pieces: list
    centralized_cost: float = None


@dataclass
class SimulationLog:
    M: int
    case: int
    seed: int
    kinds: list
    heat_ratio: list          # (1-eta_e)/eta_e for CHPs, None otherwise
    steps: list = field(default_factory=list)
    final_states: list = field(default_factory=list)

    @property
    def cumulative_cost(self):
        return math.fsum(s.cost for s in self.steps)

    def mean_pieces(self):
        counts = [c for s in self.steps for c in s.pieces]
        return sum(counts) / len(counts) if counts else 0.0

    def max_residual(self, scaled=True):
        """Largest coupling residual, optionally divided by ``max(1, |b_j|)``."""
        worst = 0.0
        for s in self.steps:
            targets = [s.demand[0], s.demand[1]][:len(s.residuals)]
            for r, b in zip(s.residuals, targets):
                worst = max(worst, r / max(1.0, abs(b)) if scaled else r)
        return worst

    def power(self, step, i):
        """``(p_e, p_h)`` delivered by subsystem ``i`` at ``step``."""
        s = self.steps[step]
        kind = self.kinds[i]
        if kind == "chp":
            pe = float(s.states[i][0])
            return pe, pe * self.heat_ratio[i]
        if kind == "storage-e":
            return s.u0[i], 0.0
        return 0.0, s.u0[i]

    def rows(self):
        cum = 0.0
        for k, s in enumerate(self.steps):
            cum += s.cost
            res = list(s.residuals) + [None] * (2 - len(s.residuals))
            for i, kind in enumerate(self.kinds):
                x = s.states[i]
                pe, ph = self.power(k, i)
                yield [s.t, i, kind, x[0], x[1] if len(x) > 1 else None, s.u0[i], s.theta[i],
                       pe, ph, s.pieces[i], s.demand[0], s.demand[1], res[0], res[1],
                       s.timings.get("slice"), s.timings.get("coordinate"), s.timings.get("evaluate"),
                       s.cost, cum]

    def write_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows():
                w.writerow(["" if v is None else v for v in row])


def simulate(M, seed, case, steps=168, level=DEMAND_LEVEL, soc_ref=0.5, soc0=0.5,
             compare_steps=(), demand=None, progress=None):
    """Receding-horizon closed loop with the hierarchical controller.

    ``demand`` optionally replaces the profile with a callable
    ``t -> (p_e, p_h)`` in absolute units.  At every step listed in
    ``compare_steps`` the centralized QP is solved as well and its cost
    stored in the step record.  A failing step raises the pipeline error
    with its ``step`` attribute set.
    """
    fleet = build_fleet(M, seed, soc_ref=soc_ref, soc0=soc0)
    if demand is None:
        check_capacity(fleet, case, level)
    log = SimulationLog(M, case, seed, [s.kind for s in fleet.subsystems],
                        [s.params.heat_ratio if s.kind == "chp" else None for s in fleet.subsystems])
    compare_steps = set(compare_steps)
    for t in range(steps):
        dem = demand(t) if demand is not None else demand_profile(t, fleet, level)
        cp = couplings_at(fleet, t, case, demand=dem)
        phis = fleet.phis()
        try:
            res = hierarchical_step(fleet.problems, phis, cp)
        except PipelineError as exc:
            exc.step = t
            raise
        central = None
        if t in compare_steps:
            central = centralized_solve(fleet.problems, phis, cp).value
        states = [s.x.copy() for s in fleet.subsystems]
        log.steps.append(StepRecord(t, states, list(res.u0), list(res.theta), tuple(dem),
                                    list(res.coordination.residuals), dict(res.timings), res.value,
                                    [s.value.n_pieces for s in res.slices], central))
        for sub, u in zip(fleet.subsystems, res.u0):
            sub.advance(u)
        if progress is not None:
            progress(t)
    log.final_states = [s.x.copy() for s in fleet.subsystems]
    return log


# ----------------------------------------------------------------------------
# benchmark
# ----------------------------------------------------------------------------

BENCH_COLUMNS = ["M", "method", "phase", "median_s", "min_s", "max_s", "repetitions"]


@dataclass
class BenchmarkReport:
    case: int
    seed: int
    rows: list = field(default_factory=list)   # dicts keyed by BENCH_COLUMNS

    def time(self, M, method, phase="total", stat="median_s"):
        for r in self.rows:
            if r["M"] == M and r["method"] == method and r["phase"] == phase:
                return r[stat]
        raise KeyError((M, method, phase))

    def ratio(self, M):
        """Centralized over hierarchical median per-step time."""
        return self.time(M, "centralized") / self.time(M, "hierarchical")

    def write_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
            w.writeheader()
            w.writerows(self.rows)


def _timed(fn):
    t0 = time.process_time()
    out = fn()
    return out, time.process_time() - t0


def benchmark(M_list, seed, case, repetitions=3, hour=8, centralized=True):
    """Time the hierarchical phases and the centralized QP on identical instances.

    Every fleet is measured at its initial state for the given hour.
    Sizes are interleaved inside each repetition and CPU time is taken
    with garbage collection paused so that one size does not pay for
    another's allocations.
    """
    import gc

    instances = {}
    for M in M_list:
        fleet = build_fleet(M, seed)
        instances[M] = (fleet.problems, fleet.phis(), couplings_at(fleet, hour, case))
    samples = {M: {"slice": [], "coordinate": [], "evaluate": [], "total": [], "centralized": []}
               for M in M_list}
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            for M in M_list:
                probs, phis, cp = instances[M]
                t0 = time.process_time()
                res = hierarchical_step(probs, phis, cp)
                total = time.process_time() - t0
                s = samples[M]
                for ph in ("slice", "coordinate", "evaluate"):
                    s[ph].append(res.timings[ph])
                s["total"].append(total)
                if centralized:
                    _, dt = _timed(lambda: centralized_solve(probs, phis, cp))
                    s["centralized"].append(dt)
                gc.collect()
    finally:
        if enabled:
            gc.enable()
    report = BenchmarkReport(case, seed)
    for M in M_list:
        s = samples[M]
        for method, phase, key in [("hierarchical", "slice", "slice"),
                                   ("hierarchical", "coordinate", "coordinate"),
                                   ("hierarchical", "evaluate", "evaluate"),
                                   ("hierarchical", "total", "total"),
                                   ("centralized", "total", "centralized")]:
            vals = s[key]
            if not vals:
                continue
            report.rows.append({"M": M, "method": method, "phase": phase,
                                "median_s": statistics.median(vals), "min_s": min(vals),
                                "max_s": max(vals), "repetitions": len(vals)})
    return report
