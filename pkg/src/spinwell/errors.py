"""Exception types shared across engines and the CLI."""


class SimulationError(Exception):
    """Base class for simulator failures."""


class ConfigError(SimulationError):
    """Invalid run configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class KrylovConvergenceError(SimulationError):
    """Krylov propagation could not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual estimate {residual:.3e})")


class TruncationBudgetError(SimulationError):
    """Accumulated TEBD truncation error exceeded the configured budget."""

    def __init__(self, cumulative: float, budget: float, t: float):
        self.cumulative = cumulative
        self.budget = budget
        self.t = t
        super().__init__(
            f"truncation error {cumulative:.3e} exceeded budget {budget:.3e} at t={t:.4f}"
        )


class UnsupportedRepresentationError(SimulationError):
    """State/lattice combination the requested engine cannot represent."""
