"""scikit-learn style wrappers around the solvers.

Inputs are raw arrays: a vector field is ``(dim, n, ..., n)`` and a batch
``(n_samples, dim, n, ..., n)``.  Transformers are stateless apart from the
grid recorded at ``fit``; the solvers store their solution at ``fit`` and
``predict`` samples it at requested times.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .burgers import BurgersProblem, solve_burgers
from .fields import VectorField
from .heat import heat_convolve
from .leray import TruncationSpec, leray_project, pressure_gradient_exact, pressure_gradient_mc, pressure_gradient_truncated_exact
from .navier_stokes import PROJECTION_MODES, NsProblem, solve_ns
from .stochastic import RngStream, log_quadrature
from .validation import check_batch, check_choice, check_field_array, check_int, check_nonnegative, check_positive

__all__ = ["LerayProjector", "PressureGradient", "HeatSmoother", "BurgersSolver", "NavierStokesSolver"]


class _GridTransformer(TransformerMixin, BaseEstimator):
    """Records the grid of the training batch and checks later batches against it."""

    def __init__(self, period: float = 2.0 * np.pi):
        self.period = period

    def _validate_params(self):
        check_positive("period", self.period)

    def fit(self, X, y=None):
        self._validate_params()
        X, grid = check_batch(X, self.period)
        self.grid_ = grid
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "grid_")
        X, grid = check_batch(X, self.period)
        if grid != self.grid_:
            raise ValueError(f"fitted on {self.grid_}, got {grid}")
        return X

    def transform(self, X):
        X = self._check(X)
        return np.stack([self._one(VectorField(self.grid_, x)).components for x in X])

    def _one(self, u: VectorField) -> VectorField:
        raise NotImplementedError


class LerayProjector(_GridTransformer):
    """Divergence-free part of each field (``complement=True`` gives the gradient part)."""

    def __init__(self, complement: bool = False, period: float = 2.0 * np.pi):
        super().__init__(period)
        self.complement = complement

    def _one(self, u):
        pu = leray_project(u)
        return u - pu if self.complement else pu


class PressureGradient(_GridTransformer):
    """Nonlocal pressure operator applied to ``u x u``.

    ``mode`` is ``"exact"``, ``"truncated"`` (multiplier for ``N``) or
    ``"monte_carlo"`` (``M`` samples, ``K`` log-quadrature nodes, ``seed``).
    """

    def __init__(self, mode: str = "exact", N: float = 16.0, M: int = 2000, K: int = 32, seed: int = 0, period: float = 2.0 * np.pi):
        super().__init__(period)
        self.mode = mode
        self.N = N
        self.M = M
        self.K = K
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        check_choice("mode", self.mode, ("exact", "truncated", "monte_carlo"))
        if self.mode != "exact" and not check_positive("N", self.N) > 1:
            raise ValueError(f"N must exceed 1, got {self.N}")
        check_int("M", self.M, 2)
        check_int("K", self.K, 2)
        check_int("seed", self.seed, 0)

    def _one(self, u):
        if self.mode == "exact":
            return pressure_gradient_exact(u, u)
        spec = TruncationSpec(N=self.N)
        if self.mode == "truncated":
            return pressure_gradient_truncated_exact(u, u, spec)
        quad = log_quadrature(*spec.interval, K=self.K)
        return pressure_gradient_mc(u, u, spec, quad, self.M, RngStream(self.seed)).mean


class HeatSmoother(_GridTransformer):
    """Heat semigroup ``exp(t nu Lap / 2)`` applied to each field."""

    def __init__(self, t: float = 0.1, nu: float = 1.0, period: float = 2.0 * np.pi):
        super().__init__(period)
        self.t = t
        self.nu = nu

    def _validate_params(self):
        super()._validate_params()
        check_nonnegative("t", self.t)
        check_positive("nu", self.nu)

    def _one(self, u):
        return heat_convolve(u, self.t, self.nu)


class _BackwardSolver(BaseEstimator):
    """``fit(G)`` solves backward from the terminal field; ``predict(times)`` samples the solution."""

    def fit(self, X, y=None):
        self._validate_params()
        G, grid = check_field_array(X, self.period)
        self.grid_ = grid
        self.n_features_in_ = G.size
        self.solution_ = self._solve(VectorField(grid, G))
        self.n_iter_ = self.solution_.iterations
        self.residuals_ = np.asarray(self.solution_.residuals)
        return self

    def predict(self, X=None):
        """Fields at the requested times, ``(len(times), dim, n, ..., n)``; ``None`` means the start time."""
        check_is_fitted(self, "solution_")
        sol = self.solution_
        times = np.atleast_1d(sol.times[0] if X is None else np.asarray(X, dtype=float)).ravel()
        lo, hi = sol.times[0], sol.T
        if np.any(times < lo - 1e-12) or np.any(times > hi + 1e-12):
            raise ValueError(f"times must lie in [{lo}, {hi}]")
        return np.stack([sol.at(float(t)).components for t in times])

    def score(self, X, y):
        """Negative relative L2 error of ``predict(X)`` against reference fields ``y``."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=float).reshape(pred.shape)
        return -float(np.linalg.norm(pred - y) / np.linalg.norm(y))

    def _solve(self, G):
        raise NotImplementedError


class BurgersSolver(_BackwardSolver):
    """Backward viscous Burgers system ``u(T) = psi`` on a uniform time grid."""

    def __init__(self, nu: float = 0.2, T: float = 1.0, steps: int = 100, alpha: float = 0.0, tol: float = 1e-10, max_iter: int = 200, period: float = 2.0 * np.pi):
        self.nu = nu
        self.T = T
        self.steps = steps
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.period = period

    def _validate_params(self):
        check_positive("nu", self.nu)
        check_positive("T", self.T)
        check_int("steps", self.steps)
        check_nonnegative("alpha", self.alpha)
        check_positive("tol", self.tol)
        check_int("max_iter", self.max_iter)
        check_positive("period", self.period)

    def _solve(self, G):
        problem = BurgersProblem.uniform(G, self.nu, self.T, self.steps, alpha=self.alpha)
        return solve_burgers(problem, tol=self.tol, max_iter=self.max_iter)


class NavierStokesSolver(_BackwardSolver):
    """Backward Navier-Stokes with the exact, truncated or Monte Carlo pressure operator."""

    def __init__(self, nu: float = 0.1, T: float = 1.0, steps: int = 100, mode: str = "exact", N: float | None = None, M: int = 2000, K: int = 32, seed: int = 0, tol: float = 1e-10, max_iter: int = 200, period: float = 2.0 * np.pi):
        self.nu = nu
        self.T = T
        self.steps = steps
        self.mode = mode
        self.N = N
        self.M = M
        self.K = K
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter
        self.period = period

    def _validate_params(self):
        check_positive("nu", self.nu)
        check_positive("T", self.T)
        check_int("steps", self.steps)
        check_choice("mode", self.mode, PROJECTION_MODES)
        if self.mode != "exact" and (self.N is None or not check_positive("N", self.N) > 1):
            raise ValueError(f"mode {self.mode!r} needs N > 1, got {self.N}")
        check_int("M", self.M, 2)
        check_int("K", self.K, 2)
        check_int("seed", self.seed, 0)
        check_positive("tol", self.tol)
        check_int("max_iter", self.max_iter)
        check_positive("period", self.period)

    def _solve(self, G):
        spec = None if self.mode == "exact" else TruncationSpec(N=self.N)
        problem = NsProblem.uniform(G, self.nu, self.T, self.steps, truncation=spec)
        kw = {}
        if self.mode == "monte_carlo":
            kw = dict(M=self.M, quad=log_quadrature(*spec.interval, K=self.K), stream=RngStream(self.seed))
        return solve_ns(problem, projection_mode=self.mode, tol=self.tol, max_iter=self.max_iter, **kw)
