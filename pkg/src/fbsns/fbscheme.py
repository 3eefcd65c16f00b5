"""Explicit backward grid scheme for the truncated Navier-Stokes system.

    u(T, x)   = G(x)
    J(t_k, x) = u(t_{k+1}, x) h + sqrt(nu) dW_k
    u(t_k, x) = E u(t_{k+1}, x + J(t_k, x)) + h (f(t_k, x) + P_N(t_k, x))

``P_N`` is evaluated on the next-step field.  Off-grid values come from
periodic interpolation (multilinear, or cubic B-spline via
``scipy.ndimage.map_coordinates``) and the Gaussian expectation from a tensor
Gauss-Hermite rule or common-random-number Monte Carlo.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fields import Grid, VectorField, interpolate, l2_norm
from .leray import TruncationSpec, pressure_gradient_mc_triple, pressure_gradient_truncated_exact
from .navier_stokes import NsProblem
from .spacetime import SpaceTimeField, resolve
from .stochastic import RngStream, TimeQuadrature, log_quadrature

__all__ = ["SchemeConfig", "gauss_hermite_expectation", "run_grid_scheme", "scheme_distance", "INTERPOLATIONS"]

INTERPOLATIONS = ("linear", "cubic")


@dataclass(frozen=True)
class SchemeConfig:
    """Step ``h``, truncation ``N`` and the expectation and interpolation rules.

    ``expectation_rule`` is ``"gauss_hermite"`` (``Q`` nodes per axis) or
    ``"monte_carlo"`` (``M`` draws per step shared by all nodes).  ``pressure``
    is ``"multiplier"`` (deterministic ``P_N``), ``"mc_triple"`` (three-Brownian
    estimator with ``pressure_M`` samples) or ``"off"``.  ``nonlinear=False``
    drops the drift in ``J`` and is only meant for heat-limit checks.
    """

    h: float
    N: float
    expectation_rule: str = "gauss_hermite"
    Q: int = 8
    M: int = 64
    interpolation: str = "linear"
    pressure: str = "multiplier"
    pressure_M: int = 2000
    pressure_K: int = 32
    nonlinear: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.N > 1:
            raise ValueError("N must exceed 1")
        if self.expectation_rule not in ("gauss_hermite", "monte_carlo"):
            raise ValueError(f"unknown expectation rule {self.expectation_rule!r}")
        if self.expectation_rule == "gauss_hermite" and self.Q < 2:
            raise ValueError("Gauss-Hermite needs Q >= 2")
        if self.expectation_rule == "monte_carlo" and self.M < 2:
            raise ValueError("Monte Carlo needs M >= 2")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.pressure not in ("multiplier", "mc_triple", "off"):
            raise ValueError(f"unknown pressure rule {self.pressure!r}")


class _Interpolator:
    """Evaluates a component array at arbitrary points with periodic wrap."""

    def __init__(self, values: np.ndarray, grid: Grid, kind: str):
        self.grid = grid
        self.kind = kind
        self.values = values
        if kind == "cubic":
            self.coef = np.stack([ndimage.spline_filter(v, order=3, mode="grid-wrap") for v in values])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return interpolate(self.values, self.grid, points)
        coords = (points / self.grid.spacing).T
        return np.stack([ndimage.map_coordinates(c, coords, order=3, mode="grid-wrap", prefilter=False) for c in self.coef])


def _gh_rule(Q: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor probabilists' Gauss-Hermite nodes ``(Q^dim, dim)`` and normalized weights."""
    x, w = np.polynomial.hermite_e.hermegauss(Q)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wg = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([gi.ravel() for gi in grids], axis=-1)
    weights = np.prod(np.stack([wi.ravel() for wi in wg]), axis=0)
    return nodes, weights


def _expect(interp: _Interpolator, grid: Grid, shift: np.ndarray, sigma: float, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    pts = grid.points()
    out = np.zeros((interp.values.shape[0], grid.size))
    for z, w in zip(nodes, weights):
        out += w * interp(pts + shift + sigma * z)
    return out.reshape((-1,) + grid.shape)


def gauss_hermite_expectation(field_next: VectorField, shift_mean: VectorField | None, variance: float, Q: int = 8, interpolation: str = "linear") -> VectorField:
    """``E field_next(x + shift_mean(x) + sqrt(variance) Z)`` by tensor Gauss-Hermite quadrature."""
    if Q < 2:
        raise ValueError("Q must be at least 2")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    g = field_next.grid
    shift = np.zeros((g.size, g.dim)) if shift_mean is None else np.array(shift_mean.components).reshape(g.dim, -1).T
    nodes, weights = _gh_rule(Q, g.dim)
    interp = _Interpolator(np.array(field_next.components), g, interpolation)
    return VectorField(g, _expect(interp, g, shift, np.sqrt(variance), nodes, weights))


def run_grid_scheme(problem: NsProblem, config: SchemeConfig, n_jobs: int = 1) -> SpaceTimeField:
    """Backward recursion from ``G`` on the uniform grid ``t0, t0 + h, ..., T``."""
    g = problem.grid
    t0 = float(problem.time_grid[0])
    T = problem.T
    steps = int(round((T - t0) / config.h))
    if steps < 1 or not np.isclose(steps * config.h, T - t0, rtol=1e-9, atol=1e-12):
        raise ValueError(f"h={config.h} does not divide [{t0}, {T}]")
    h = (T - t0) / steps
    times = np.linspace(t0, T, steps + 1)
    spec = TruncationSpec(N=config.N)
    sigma = np.sqrt(problem.nu * h)
    stream = RngStream(config.seed)
    if config.expectation_rule == "gauss_hermite":
        nodes, weights = _gh_rule(config.Q, g.dim)
    quad: TimeQuadrature | None = None
    if config.pressure == "mc_triple":
        quad = log_quadrature(*spec.triple_interval, K=config.pressure_K)

    out = np.empty((steps + 1, g.dim) + g.shape)
    out[steps] = problem.G.components
    warned = False
    for k in range(steps - 1, -1, -1):
        nxt = VectorField(g, out[k + 1])
        vmax = float(np.max(np.sqrt(np.sum(out[k + 1] ** 2, axis=0))))
        if config.nonlinear and vmax * h > g.spacing and not warned:
            warnings.warn(f"CFL-style condition violated: sup|u| h = {vmax * h:.3g} > spacing {g.spacing:.3g}", RuntimeWarning, stacklevel=2)
            warned = True
        shift = out[k + 1].reshape(g.dim, -1).T * h if config.nonlinear else np.zeros((g.size, g.dim))
        interp = _Interpolator(out[k + 1], g, config.interpolation)
        if config.expectation_rule == "gauss_hermite":
            val = _expect(interp, g, shift, sigma, nodes, weights)
        else:
            z = stream.split(k).normal((config.M, g.dim))
            val = _expect(interp, g, shift, sigma, z, np.full(config.M, 1.0 / config.M))
        f = resolve(problem.f, float(times[k]))
        if f is not None:
            val = val + h * f.components
        if config.nonlinear and config.pressure == "multiplier":
            val = val + h * pressure_gradient_truncated_exact(nxt, nxt, spec).components
        elif config.nonlinear and config.pressure == "mc_triple":
            est = pressure_gradient_mc_triple(nxt, nxt, spec, quad, config.pressure_M, stream.split(10**9 + k), n_jobs=n_jobs)
            val = val + h * est.mean.components
        out[k] = val
    return SpaceTimeField.from_array(g, times, out)


def scheme_distance(a: SpaceTimeField, b: SpaceTimeField) -> float:
    """Sup over shared instants of the L2 distance."""
    if len(a) != len(b) or not np.allclose(a.times, b.times):
        raise ValueError("time grids differ")
    return max(l2_norm(x - y) for x, y in zip(a.fields, b.fields))
