"""Backward incompressible Navier-Stokes by the mild fixed point.

    d_t u + (nu/2) Lap u + (u . grad) u + grad p + f = 0,   div u = 0,   u(T) = G

The Duhamel integrand is ``f + (u . grad) u + Pi(u x u)`` where ``Pi`` is the
exact operator ``grad (-Laplacian)^{-1} div div``, its truncation ``P_N``, or a
Monte Carlo estimate of ``P_N`` with frozen draws.  Products are dealiased by
the two-thirds rule, which keeps exact-mode iterates divergence free to
round-off.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import PicardDivergenceError
from .fields import Grid, ScalarField, VectorField, divergence, l2_norm, sobolev_norm
from .leray import TruncationSpec, _gap_weight, frozen_truncated_operator, pressure_scalar
from .spacetime import SpaceTimeField, mild_picard, resolve, validate_time_grid
from .stochastic import RngStream, TimeQuadrature

__all__ = [
    "NsProblem",
    "PROJECTION_MODES",
    "ns_rhs_factory",
    "solve_ns",
    "ConvergenceReport",
    "convergence_study",
    "ReynoldsReport",
    "reynolds_monitor",
    "divergence_report",
    "pressure_history",
    "pde_residual",
    "taylor_green_exact",
]

PROJECTION_MODES = ("exact", "truncated_multiplier", "monte_carlo")


def _div_ratio(u: VectorField) -> float:
    n = l2_norm(u)
    return l2_norm(divergence(u)) / n if n > 0 else 0.0


@dataclass(frozen=True)
class NsProblem:
    """Terminal velocity ``G``, forcing ``f`` (``None``, constant or callable), truncation or ``None`` for exact."""

    G: VectorField
    nu: float
    T: float
    time_grid: np.ndarray
    f: object = None
    truncation: TruncationSpec | None = None
    div_tol: float = 1e-10

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        t = validate_time_grid(self.time_grid)
        if not np.isclose(t[-1], self.T):
            raise ValueError(f"time grid ends at {t[-1]}, expected T={self.T}")
        object.__setattr__(self, "time_grid", t)
        if _div_ratio(self.G) > self.div_tol:
            raise ValueError(f"terminal field is not divergence free (ratio {_div_ratio(self.G):.2e})")
        for s in t:
            f = resolve(self.f, float(s))
            if f is None:
                break
            self.G.grid.check_same(f.grid)
            if _div_ratio(f) > self.div_tol:
                raise ValueError(f"forcing at t={s} is not divergence free")
            if not callable(self.f):
                break

    @property
    def grid(self) -> Grid:
        return self.G.grid

    @classmethod
    def uniform(cls, G: VectorField, nu: float, T: float, steps: int, t0: float = 0.0, **kw) -> "NsProblem":
        return cls(G, nu, T, np.linspace(t0, T, steps + 1), **kw)

    def with_truncation(self, truncation: TruncationSpec | None) -> "NsProblem":
        return NsProblem(self.G, self.nu, self.T, self.time_grid, self.f, truncation, self.div_tol)


def ns_rhs_factory(
    problem: NsProblem,
    mode: str,
    M: int | None = None,
    quad: TimeQuadrature | None = None,
    stream: RngStream | None = None,
    dealias: bool = True,
    triple: bool = False,
):
    """Return ``rhs(t, u_array) -> array`` for the Duhamel integrand in the given mode."""
    if mode not in PROJECTION_MODES:
        raise ValueError(f"projection mode must be one of {PROJECTION_MODES}, got {mode!r}")
    g = problem.grid
    d = g.dim
    mask = g.dealias_mask if dealias else 1.0
    if mode == "exact":
        weight = 1.0
    else:
        spec = problem.truncation
        if spec is None or spec.N is None:
            raise ValueError(f"mode {mode!r} needs a TruncationSpec with finite N")
        weight = _gap_weight(g, *spec.interval)
    mc_op = None
    if mode == "monte_carlo":
        if M is None or quad is None or stream is None:
            raise ValueError("monte_carlo mode requires M, quad and stream")
        lo, hi = spec.triple_interval if triple else spec.interval
        if not quad.matches(lo, hi):
            raise ValueError(f"quadrature interval [{quad.r_min}, {quad.r_max}] does not match [{lo}, {hi}]")
        mc_op = frozen_truncated_operator(g, quad, M, stream, triple=triple)

    def rhs(t: float, u: np.ndarray) -> np.ndarray:
        uh = g.fft(u)
        grad = [[g.ifft(1j * g.xi_d[j] * uh[i]) for j in range(d)] for i in range(d)]
        conv = np.stack([g.fft(sum(u[j] * grad[i][j] for j in range(d))) for i in range(d)]) * mask
        if mc_op is None:
            uh_prod = g.fft(u[:, None] * u[None, :]) * mask
            s = sum(g.xi_d[i] * g.xi_d[j] * uh_prod[i, j] for i in range(d) for j in range(d)) * g.inv_xi2_d * weight
            press = np.stack([-1j * g.xi_d[k] * s for k in range(d)])
            out = g.ifft(conv + press)
        else:
            v = VectorField(g, u)
            out = g.ifft(conv) + mc_op(v, v).components
        f = resolve(problem.f, t)
        if f is not None:
            out = out + f.components
        return out

    return rhs


def solve_ns(
    problem: NsProblem,
    projection_mode: str = "exact",
    tol: float = 1e-10,
    max_iter: int = 200,
    M: int | None = None,
    quad: TimeQuadrature | None = None,
    stream: RngStream | None = None,
    dealias: bool = True,
    triple: bool = False,
) -> SpaceTimeField:
    """Picard fixed point of the truncated (or exact) mild formula.

    In ``monte_carlo`` mode the Brownian draws are frozen once and reused in
    every iteration, so the fixed point is well defined for a fixed seed.
    """
    rhs = ns_rhs_factory(problem, projection_mode, M, quad, stream, dealias, triple)
    times = problem.time_grid
    return mild_picard(problem.grid, times, problem.nu, np.array(problem.G.components), lambda j, u: rhs(float(times[j]), u), tol, max_iter)


def taylor_green_exact(G: VectorField, nu: float, times) -> SpaceTimeField:
    """``u(t) = exp(-nu (T - t)) G`` for a unit-wavenumber Taylor-Green ``G`` on a ``2 pi`` box."""
    times = validate_time_grid(times)
    k2 = 2.0 * (2.0 * np.pi / G.grid.L) ** 2
    fac = np.exp(-0.5 * nu * k2 * (times[-1] - times))
    return SpaceTimeField.from_array(G.grid, times, fac[:, None, None, None] * np.array(G.components)[None] if G.grid.dim == 2 else np.multiply.outer(fac, G.components))


def _sup_l2(a: SpaceTimeField, b: SpaceTimeField) -> float:
    return max(l2_norm(x - y) for x, y in zip(a.fields, b.fields))


@dataclass(frozen=True)
class ConvergenceReport:
    N_values: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float | None
    failed: tuple[float, ...] = ()
    reference_norm: float = 0.0
    stderr: tuple[float, ...] = ()

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    @property
    def strictly_decreasing(self) -> bool:
        e = np.asarray(self.errors)
        return bool(len(e) >= 2 and np.all(np.diff(e) < 0))

    def rows(self) -> list[dict]:
        out = []
        for i, (N, e) in enumerate(zip(self.N_values, self.errors)):
            row = {"N": N, "error": e}
            if self.stderr:
                row["stderr"] = self.stderr[i]
            out.append(row)
        return out


def fit_slope(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; ``None`` below two points."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def convergence_study(problem: NsProblem, N_list, tol: float = 1e-10, max_iter: int = 200, dealias: bool = True) -> ConvergenceReport:
    """Errors ``sup_t ||u^N(t) - u(t)||_L2`` against the exact-mode solve on the same grids.

    A failing member solve is recorded in ``failed`` and left out of the fit.
    """
    N_list = [float(N) for N in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N values must be strictly increasing")
    ref = solve_ns(problem.with_truncation(None), "exact", tol, max_iter, dealias=dealias)
    Ns, errs, failed = [], [], []
    for N in N_list:
        try:
            sol = solve_ns(problem.with_truncation(TruncationSpec(N=N)), "truncated_multiplier", tol, max_iter, dealias=dealias)
        except PicardDivergenceError:
            failed.append(N)
            continue
        Ns.append(N)
        errs.append(_sup_l2(sol, ref))
    return ConvergenceReport(tuple(Ns), tuple(errs), fit_slope(Ns, errs), tuple(failed), max(l2_norm(f) for f in ref.fields))


@dataclass(frozen=True)
class ReynoldsReport:
    R: float
    R0: float
    m: int
    norms: np.ndarray
    G_norm: float
    in_hypothesis: bool
    bound_holds: bool

    @property
    def status(self) -> str:
        if not self.in_hypothesis:
            return "bound not guaranteed"
        return "bound holds" if self.bound_holds else "bound violated"


def reynolds_monitor(problem: NsProblem, u: SpaceTimeField, m: int = 1, R0: float = 1.0, rtol: float = 1e-6) -> ReynoldsReport:
    """``R = L ||G||_m / nu`` and the monotone bound ``||u(t)||_m <= ||G||_m``.

    The bound is asserted only inside the small-Reynolds hypothesis (``R < R0``,
    ``f = 0``, mean-zero ``G``); otherwise it is reported without asserting.
    """
    g = problem.grid
    Gn = sobolev_norm(problem.G, m)
    R = g.L * Gn / problem.nu
    norms = np.array([sobolev_norm(f, m) for f in u.fields])
    mean_zero = np.max(np.abs(np.array(problem.G.components).mean(axis=g.axes))) <= 1e-12 * max(1.0, Gn)
    in_hyp = bool(R < R0 and problem.f is None and mean_zero)
    holds = bool(np.all(norms <= Gn * (1.0 + rtol)))
    if in_hyp and not holds:
        k = int(np.argmax(norms))
        raise AssertionError(f"small-Reynolds bound violated at t={u.times[k]}: {norms[k]} > {Gn}")
    if not in_hyp:
        warnings.warn(f"Reynolds number {R:.3g} outside the small-data hypothesis (R0={R0}); bound not guaranteed", RuntimeWarning, stacklevel=2)
    return ReynoldsReport(float(R), float(R0), m, norms, float(Gn), in_hyp, holds)


def divergence_report(u: SpaceTimeField) -> np.ndarray:
    """Per-instant ``||div u||_0 / ||u||_0`` (zero for a vanishing field)."""
    return np.array([_div_ratio(f) for f in u.fields])


def pressure_history(u: SpaceTimeField) -> list[ScalarField]:
    """Zero-mean pressure ``p`` at each instant for an exact-mode solution."""
    return [pressure_scalar(f) for f in u.fields]


def pde_residual(problem: NsProblem, u: SpaceTimeField) -> np.ndarray:
    """Relative L2 residual of the strong form at interior instants (central differences in time)."""
    g = problem.grid
    d = g.dim
    vals = u.values()
    t = u.times
    out = []
    for k in range(1, len(t) - 1):
        dudt = (vals[k + 1] - vals[k - 1]) / (t[k + 1] - t[k - 1])
        uk = vals[k]
        uh = g.fft(uk)
        lap = g.ifft(-g.xi2 * uh)
        grad = np.stack([np.stack([g.ifft(1j * g.xi_d[j] * uh[i]) for j in range(d)]) for i in range(d)])
        adv = np.einsum("ij...,j...->i...", grad, uk)
        ph = g.fft(uk[:, None] * uk[None, :])
        s = sum(g.xi_d[i] * g.xi_d[j] * ph[i, j] for i in range(d) for j in range(d)) * g.inv_xi2_d
        press = np.stack([g.ifft(-1j * g.xi_d[a] * s) for a in range(d)])
        r = dudt + 0.5 * problem.nu * lap + adv + press
        f = resolve(problem.f, float(t[k]))
        if f is not None:
            r = r + f.components
        scale = np.sqrt(np.sum(dudt**2)) + np.sqrt(np.sum((0.5 * problem.nu * lap) ** 2)) + 1e-300
        out.append(np.sqrt(np.sum(r**2)) / scale)
    return np.array(out)
