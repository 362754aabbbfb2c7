"""Exception hierarchy shared by the solvers and the pipeline."""


class SolverError(Exception):
    """Base class for every numerical failure raised by this package."""

    kind = "solver-error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class InfeasibleError(SolverError):
    kind = "infeasible"


class UnboundedError(SolverError):
    kind = "unbounded"


class MaxIterationsError(SolverError):
    kind = "max-iterations"


class DegeneracyError(SolverError):
    kind = "degeneracy-unresolved"


class TooLargeError(SolverError):
    kind = "too-large"


class DimensionError(SolverError):
    kind = "dimension-unsupported"


class DomainError(ValueError):
    """Evaluation point outside the domain of a piecewise function."""

    kind = "domain"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class PipelineError(SolverError):
    """A failure inside one phase of the hierarchical on-line step."""

    kind = "pipeline"

    def __init__(self, phase, cause, subsystem=None):
        self.phase = phase
        self.subsystem = subsystem
        self.cause = cause
        where = phase if subsystem is None else f"{phase} (subsystem {subsystem})"
        super().__init__(f"{where}: {cause}")

    def to_dict(self):
        out = {"error": getattr(self.cause, "kind", self.kind),
               "phase": self.phase, "message": str(self)}
        if self.subsystem is not None:
            out["subsystem"] = self.subsystem
        return out
