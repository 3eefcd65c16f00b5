"""Backward PDE of Burgers type and its stochastic representation.

    d_t u + (nu/2) Lap u + ((b + alpha u) . grad) u + c u + phi = 0,   u(T) = psi

The production solver iterates the mild formula.  The forward-backward
representation is checked separately by path simulation, and the 1D viscous
Burgers case has an exact Cole-Hopf reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MaxPrincipleViolation
from .fields import Grid, ScalarField, VectorField, interpolate, sobolev_inner, upsample
from .spacetime import SpaceTimeField, mild_picard, resolve, validate_time_grid
from .stochastic import RngStream

__all__ = [
    "BurgersProblem",
    "SpaceTimeField",
    "advect",
    "solve_burgers",
    "cole_hopf_oracle",
    "FbsdeReport",
    "fbsde_check",
    "MaxPrincipleReport",
    "max_principle_check",
    "EnergyReport",
    "energy_identity_check",
]


@dataclass(frozen=True)
class BurgersProblem:
    """Data of the backward problem.

    ``b`` and ``phi`` are vector fields, ``c`` a matrix field; each may be
    ``None`` (zero), a constant field, or a callable of time.
    """

    psi: VectorField
    nu: float
    T: float
    time_grid: np.ndarray
    b: object = None
    c: object = None
    phi: object = None
    alpha: float = 0.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        t = validate_time_grid(self.time_grid)
        if not np.isclose(t[-1], self.T):
            raise ValueError(f"time grid ends at {t[-1]}, expected T={self.T}")
        object.__setattr__(self, "time_grid", t)
        for name in ("b", "phi", "c"):
            v = resolve(getattr(self, name), float(t[-1]))
            if v is not None:
                self.psi.grid.check_same(v.grid)

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    @classmethod
    def uniform(cls, psi: VectorField, nu: float, T: float, steps: int, t0: float = 0.0, **kw) -> "BurgersProblem":
        return cls(psi, nu, T, np.linspace(t0, T, steps + 1), **kw)

    def drift(self, t: float, u: np.ndarray) -> np.ndarray | None:
        """``b + alpha u`` as an array, or ``None`` when identically zero."""
        b = resolve(self.b, t)
        out = None if b is None else np.array(b.components)
        if self.alpha != 0:
            out = self.alpha * u if out is None else out + self.alpha * u
        return out

    def zeroth_order(self, t: float, u: np.ndarray) -> np.ndarray | None:
        """``c u + phi`` as an array, or ``None`` when identically zero."""
        c = resolve(self.c, t)
        phi = resolve(self.phi, t)
        out = None
        if c is not None:
            out = np.einsum("ij...,j...->i...", c.entries, u)
        if phi is not None:
            out = phi.components if out is None else out + phi.components
        return out


def _grad_components(grid: Grid, u: np.ndarray) -> np.ndarray:
    """``J[i, j] = d_j u^i`` for a component array."""
    uh = grid.fft(u)
    return np.stack([np.stack([grid.ifft(1j * grid.xi_d[j] * uh[i]) for j in range(grid.dim)]) for i in range(u.shape[0])])


def advect(grid: Grid, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``(w . grad) u`` for component arrays."""
    J = _grad_components(grid, u)
    return np.einsum("ij...,j...->i...", J, w)


def burgers_rhs(problem: BurgersProblem, t: float, u: np.ndarray) -> np.ndarray | None:
    """Duhamel integrand ``((b + alpha u) . grad) u + c u + phi`` at time ``t``."""
    g = problem.grid
    w = problem.drift(t, u)
    out = None if w is None else advect(g, w, u)
    z = problem.zeroth_order(t, u)
    if z is not None:
        out = z if out is None else out + z
    return out


def solve_burgers(problem: BurgersProblem, tol: float = 1e-10, max_iter: int = 200) -> SpaceTimeField:
    """Mild Picard solve on the problem's time grid.

    Raises ``PicardDivergenceError`` with the residual history when the
    iteration fails, e.g. past the local existence horizon.
    """
    times = problem.time_grid
    return mild_picard(
        problem.grid,
        times,
        problem.nu,
        np.array(problem.psi.components),
        lambda j, u: burgers_rhs(problem, float(times[j]), u),
        tol,
        max_iter,
    )


def _periodic_antiderivative(psi: np.ndarray, grid: Grid) -> np.ndarray:
    h = np.fft.fft(psi)
    k = grid.xi_d[0]
    out = np.zeros_like(h)
    nz = k != 0
    out[nz] = h[nz] / (1j * k[nz])
    return np.fft.ifft(out).real


def cole_hopf_oracle(psi_1d: ScalarField | VectorField, nu: float, T: float, time_grid, refine: int = 4, band_tol: float = 1e-10) -> SpaceTimeField:
    """Exact solution of ``d_t v + (nu/2) v_xx + v v_x = 0``, ``v(T) = psi``, in 1D.

    With ``tau = T - t`` and ``Psi`` the periodic antiderivative of ``psi``,
    ``v = nu d_x log w`` where ``w_tau = (nu/2) w_xx`` and ``w(0) = exp(Psi/nu)``.
    ``w`` is evolved spectrally on a grid ``refine`` times finer and sampled
    back.  ``psi`` must be band-limited (no content above one third of the
    Nyquist index) and have zero mean so that ``Psi`` is periodic.
    """
    grid = psi_1d.grid
    if grid.dim != 1:
        raise ValueError("the Cole-Hopf oracle is one-dimensional")
    vals = psi_1d.values if isinstance(psi_1d, ScalarField) else psi_1d.components[0]
    if not nu > 0:
        raise ValueError("nu must be positive")
    h = np.abs(np.fft.fft(vals)) / grid.n
    kabs = np.abs(np.fft.fftfreq(grid.n, d=1.0 / grid.n))
    scale = max(np.max(np.abs(vals)), 1e-300)
    if np.max(h[kabs >= grid.n / 3.0], initial=0.0) > band_tol * scale:
        raise ValueError("terminal data is not resolved (energy above n/3); refine the grid or smooth the data")
    if abs(vals.mean()) > 1e-12 * scale:
        raise ValueError("terminal data must have zero mean for a periodic antiderivative")
    times = validate_time_grid(time_grid)
    fine, fv = upsample(vals[None], grid, refine)
    Psi = _periodic_antiderivative(fv[0], fine)
    shift = Psi.max()
    w0h = np.fft.fft(np.exp((Psi - shift) / nu))
    k = fine.xi[0]
    kd = fine.xi_d[0]
    out = []
    for t in times:
        tau = T - t
        wh = w0h * np.exp(-0.5 * nu * tau * k * k)
        w = np.fft.ifft(wh).real
        wx = np.fft.ifft(1j * kd * wh).real
        v = nu * wx / w
        out.append(v[::refine][None])
    return SpaceTimeField.from_array(grid, times, np.array(out))


@dataclass(frozen=True)
class FbsdeReport:
    """Path-simulation check of ``u(t, x) = E[psi(X_T) + int (phi + c Y) ds]``."""

    points: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    reference: np.ndarray
    allowance: float
    pathwise_mae: float
    pathwise_stderr: float
    n_paths: int
    n_steps: int

    @property
    def z(self) -> np.ndarray:
        return (self.mean - self.reference) / np.maximum(self.stderr, 1e-300)

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.mean - self.reference) <= 3.0 * self.stderr + self.allowance))

    @property
    def pathwise_passed(self) -> bool:
        return self.pathwise_mae <= 3.0 * self.pathwise_stderr + self.allowance


def _sampler(sol: SpaceTimeField, factor: int):
    """Space-time evaluator: spectral upsampling, multilinear in space, linear in time."""
    g = sol.grid
    d = g.dim
    tables = {"value": [], "jac": [], "hess": []}
    for f in sol.fields:
        fg, v = upsample(f.components, g, factor)
        tables["value"].append(v)
        J = _grad_components(g, f.components)
        tables["jac"].append(upsample(J.reshape((d * d,) + g.shape), g, factor)[1])
        H = np.stack([_grad_components(g, J[:, j]) for j in range(d)], axis=1)  # H[i, j, l] = d_j d_l u^i
        tables["hess"].append(upsample(H.reshape((d**3,) + g.shape), g, factor)[1])
    times = sol.times

    def value(t: float, x: np.ndarray, kind: str = "value") -> np.ndarray:
        k = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        w = float(np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0))
        src = tables[kind]
        a = interpolate(src[k], fg, x)
        if w == 0.0:
            return a
        return (1 - w) * a + w * interpolate(src[k + 1], fg, x)

    return value


def fbsde_check(
    problem: BurgersProblem,
    u: SpaceTimeField,
    n_paths: int,
    stream: RngStream,
    points: np.ndarray | None = None,
    t: float | None = None,
    n_steps: int | None = None,
    allowance: float | None = None,
    upsample_factor: int = 4,
) -> FbsdeReport:
    """Euler-Maruyama check of the forward-backward representation.

    Paths ``dX = (b + alpha u)(s, X) ds + sqrt(nu) dW`` start from ``points``
    at time ``t`` (default: eight grid nodes, initial instant).  The estimate
    ``psi(X_T) + sum (phi + c Y) ds`` must match ``u(t, x)`` within three
    standard errors plus ``allowance`` (default ``|u|_inf * dt``).  The
    pathwise check subtracts the martingale ``sum grad u(s, X) sqrt(nu) dW``
    together with its second-order term ``(1/2) D^2 u : (dW dW^T - nu dt I)``,
    so the remainder is a pathwise identity up to ``O(dt)``.
    """
    g = problem.grid
    t0 = float(problem.time_grid[0] if t is None else t)
    T = problem.T
    if n_steps is None:
        n_steps = len(problem.time_grid) - 1
    dt = (T - t0) / n_steps
    if points is None:
        rng = np.random.default_rng(stream.seed)
        idx = rng.choice(g.size, size=min(8, g.size), replace=False)
        points = g.points()[idx]
    points = np.atleast_2d(np.asarray(points, float))
    P, d = points.shape
    ev = _sampler(u, upsample_factor)
    sq = np.sqrt(problem.nu * dt)
    X = np.repeat(points, n_paths, axis=0)  # (P*M, d)
    acc = np.zeros((d, X.shape[0]))
    mart = np.zeros((d, X.shape[0]))
    s = t0
    for step in range(n_steps):
        Y = ev(s, X)
        J = ev(s, X, "jac").reshape(d, d, -1)
        H = ev(s, X, "hess").reshape(d, d, d, -1)
        drift = Y * problem.alpha
        b = resolve(problem.b, s)
        if b is not None:
            drift = drift + interpolate(b.components, g, X)
        src = np.zeros_like(Y)
        phi = resolve(problem.phi, s)
        if phi is not None:
            src += interpolate(phi.components, g, X)
        c = resolve(problem.c, s)
        if c is not None:
            C = interpolate(c.entries.reshape((d * d,) + g.shape), g, X).reshape(d, d, -1)
            src += np.einsum("ijp,jp->ip", C, Y)
        dW = stream.normal((X.shape[0], d)) * sq
        acc += src * dt
        mart += np.einsum("ijp,pj->ip", J, dW)
        mart += 0.5 * (np.einsum("ijlp,pj,pl->ip", H, dW, dW) - problem.nu * dt * np.einsum("ijjp->ip", H))
        X = X + drift.T * dt + dW
        s = t0 + (step + 1) * dt
    terminal = interpolate(np.array(problem.psi.components), g, X) if upsample_factor == 1 else ev(T, X)
    est = (terminal + acc).reshape(d, P, n_paths)
    ref = ev(t0, points)
    mean = est.mean(axis=2)
    se = est.std(axis=2, ddof=1) / np.sqrt(n_paths)
    pathwise = np.abs(est - mart.reshape(d, P, n_paths) - ref[:, :, None])
    if allowance is None:
        allowance = float(np.max(np.abs(u.values()))) * dt
    return FbsdeReport(
        points,
        mean,
        se,
        ref,
        float(allowance),
        float(pathwise.mean()),
        float(pathwise.std(ddof=1) / np.sqrt(pathwise.size)),
        n_paths,
        n_steps,
    )


def _fine_extremes(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-component sup and sup-abs of the trigonometric interpolant, sampled finely."""
    target = {1: 8192, 2: 512, 3: 64}[grid.dim]
    factor = max(1, target // grid.n)
    _, v = upsample(values, grid, factor)
    flat = v.reshape(v.shape[0], -1)
    return flat.max(axis=1), np.abs(flat).max(axis=1)


@dataclass(frozen=True)
class MaxPrincipleReport:
    times: np.ndarray
    sup: np.ndarray  # (n_times, dim)
    sup_bound: np.ndarray
    abs_sup: np.ndarray
    abs_bound: np.ndarray

    @property
    def min_slack(self) -> float:
        return float(min(np.min(self.sup_bound - self.sup), np.min(self.abs_bound - self.abs_sup)))


def max_principle_check(problem: BurgersProblem, u: SpaceTimeField, rtol: float = 1e-8) -> MaxPrincipleReport:
    """Assert ``sup u^j(t) <= sup psi^j + int_t^T sup phi^j`` and its absolute-value form.

    Node values of ``u`` are compared against sups of the data taken on a fine
    spectral resampling, and the forcing integral uses the right-endpoint rule
    of the solver.  Raises ``MaxPrincipleViolation`` at the first failure.
    """
    if problem.c is not None:
        raise ValueError("the maximum principle check requires c = 0")
    g = problem.grid
    times = u.times
    psi_sup, psi_abs = _fine_extremes(np.array(problem.psi.components), g)
    K = len(times) - 1
    phi_sup = np.zeros((K + 1, g.dim))
    phi_abs = np.zeros((K + 1, g.dim))
    for k in range(1, K + 1):
        phi = resolve(problem.phi, float(times[k]))
        if phi is not None:
            phi_sup[k], phi_abs[k] = _fine_extremes(np.array(phi.components), g)
    dts = np.diff(times)
    # tail[k] = sum_{j > k} dt_{j-1} * sup phi(t_j)
    tail_sup = np.concatenate([np.cumsum((dts[:, None] * phi_sup[1:])[::-1], axis=0)[::-1], np.zeros((1, g.dim))])
    tail_abs = np.concatenate([np.cumsum((dts[:, None] * phi_abs[1:])[::-1], axis=0)[::-1], np.zeros((1, g.dim))])
    vals = u.values().reshape(K + 1, g.dim, -1)
    sup = vals.max(axis=2)
    abs_sup = np.abs(vals).max(axis=2)
    sup_bound = psi_sup[None] + tail_sup
    abs_bound = psi_abs[None] + tail_abs
    scale = max(float(np.max(psi_abs)) + float(np.max(tail_abs)), 1e-300)
    tol = rtol * scale
    for k in range(K + 1):
        for j in range(g.dim):
            if sup[k, j] > sup_bound[k, j] + tol:
                raise MaxPrincipleViolation(float(times[k]), j, float(sup[k, j]), float(sup_bound[k, j]), "one-sided")
            if abs_sup[k, j] > abs_bound[k, j] + tol:
                raise MaxPrincipleViolation(float(times[k]), j, float(abs_sup[k, j]), float(abs_bound[k, j]), "absolute")
    return MaxPrincipleReport(times, sup, sup_bound, abs_sup, abs_bound)


@dataclass(frozen=True)
class EnergyReport:
    m: int
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def residual(self) -> float:
        """Max over time of ``|lhs - rhs|``, relative to the largest energy present."""
        scale = max(float(np.max(np.abs(self.lhs))), float(np.max(np.abs(self.rhs))), 1e-300)
        return float(np.max(np.abs(self.lhs - self.rhs)) / scale) if scale > 1e-300 else 0.0


def _cumulative_trapezoid_from_end(times: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``int_{t_k}^T f`` for every k, trapezoid rule."""
    seg = 0.5 * np.diff(times) * (f[1:] + f[:-1])
    return np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])


def energy_identity_check(problem: BurgersProblem, u: SpaceTimeField, m: int = 0) -> EnergyReport:
    """Both sides of the ``H^m`` energy identity at every stored instant.

    lhs ``||u(t)||_m^2``; rhs ``||psi||_m^2 + 2 int <(b + alpha u).grad u, u>_m
    + 2 int <c u + phi, u>_m - nu int ||grad u||_m^2``, pairings realized as the
    spectral ``(1 + |xi|^2)^m`` inner product and time integrals by trapezoid.
    """
    g = problem.grid
    times = u.times
    dens = np.zeros(len(times))
    lhs = np.zeros(len(times))
    for k, (t, f) in enumerate(zip(times, u.fields)):
        uc = np.array(f.components)
        lhs[k] = sobolev_inner(f, f, m)
        J = _grad_components(g, uc)
        grad_sq = sum(sobolev_inner(ScalarField(g, J[i, j]), ScalarField(g, J[i, j]), m) for i in range(g.dim) for j in range(g.dim))
        val = -problem.nu * grad_sq
        w = problem.drift(float(t), uc)
        if w is not None:
            val += 2.0 * sobolev_inner(VectorField(g, np.einsum("ij...,j...->i...", J, w)), f, m)
        z = problem.zeroth_order(float(t), uc)
        if z is not None:
            val += 2.0 * sobolev_inner(VectorField(g, z), f, m)
        dens[k] = val
    rhs = sobolev_inner(problem.psi, problem.psi, m) + _cumulative_trapezoid_from_end(times, dens)
    return EnergyReport(m, times, lhs, rhs)
