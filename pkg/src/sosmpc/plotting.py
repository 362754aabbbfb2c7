"""Optional figures for simulation logs and benchmark reports.

matplotlib is imported lazily with the non-interactive Agg backend, so the
solvers never depend on it.
"""

import os

__all__ = ["plot_simulation", "plot_benchmark"]


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_simulation(log, outdir):
    """Demand against allocated references, and delivered power per subsystem class."""
    plt = _pyplot()
    os.makedirs(outdir, exist_ok=True)
    t = [s.t for s in log.steps]
    carriers = [("e", 0, "electrical")] + ([("h", 1, "heat")] if log.case == 2 else [])
    paths = []
    fig, axes = plt.subplots(len(carriers), 1, figsize=(8, 3 * len(carriers)), squeeze=False)
    for ax, (_, j, label) in zip(axes[:, 0], carriers):
        ax.plot(t, [s.demand[j] for s in log.steps], "k-", label="demand")
        delivered = [sum(log.power(k, i)[j] for i in range(log.M)) for k in range(len(log.steps))]
        ax.plot(t, delivered, "C0--", label="delivered")
        ax.set_ylabel(f"{label} power")
        ax.legend(loc="upper right")
    axes[-1, 0].set_xlabel("step [h]")
    fig.tight_layout()
    paths.append(os.path.join(outdir, "demand.png"))
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3))
    for kind in ("chp", "storage-e", "storage-h"):
        idx = [i for i, k in enumerate(log.kinds) if k == kind]
        if idx:
            ax.plot(t, [sum(s.theta[i] for i in idx) for s in log.steps], label=kind)
    ax.set_xlabel("step [h]")
    ax.set_ylabel("sum of references")
    ax.legend(loc="upper right")
    fig.tight_layout()
    paths.append(os.path.join(outdir, "references.png"))
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths


def plot_benchmark(report, outdir):
    """Median per-step time against fleet size, log-log."""
    plt = _pyplot()
    os.makedirs(outdir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, phase, style in (("hierarchical", "total", "o-"), ("hierarchical", "coordinate", "s:"),
                                 ("centralized", "total", "^--")):
        pts = sorted((r["M"], r["median_s"]) for r in report.rows
                     if r["method"] == method and r["phase"] == phase)
        if pts:
            ax.loglog(*zip(*pts), style, label=f"{method} {phase}")
    ax.set_xlabel("number of subsystems M")
    ax.set_ylabel("median time per step [s]")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(outdir, "benchmark.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
