"""Exception types raised by the solvers and input validation."""


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class PicardDivergenceError(RuntimeError):
    """The mild fixed-point iteration failed to reach tolerance.

    ``residuals`` holds the relative update of every completed iteration, which
    is usually enough to tell slow convergence from blow-up past the local
    existence horizon.
    """

    def __init__(self, message: str, residuals):
        self.residuals = list(residuals)
        super().__init__(f"{message} (residual history: {[f'{r:.3e}' for r in self.residuals]})")


class MaxPrincipleViolation(AssertionError):
    def __init__(self, time: float, component: int, lhs: float, rhs: float, kind: str):
        self.time, self.component, self.lhs, self.rhs, self.kind = time, component, lhs, rhs, kind
        super().__init__(f"{kind} maximum principle violated at t={time:.6g}, component {component}: {lhs:.12g} > {rhs:.12g}")
