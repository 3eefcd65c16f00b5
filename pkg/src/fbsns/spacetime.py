"""Time-indexed fields and the shared mild (Duhamel) Picard solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import PicardDivergenceError
from .fields import Grid, VectorField

__all__ = ["SpaceTimeField", "validate_time_grid", "resolve", "mild_picard"]


@dataclass(frozen=True)
class SpaceTimeField:
    """One ``VectorField`` per instant of a strictly increasing time grid."""

    times: np.ndarray
    fields: tuple[VectorField, ...]
    iterations: int = 0
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        times = validate_time_grid(self.times)
        fields = tuple(self.fields)
        if len(fields) != len(times):
            raise ValueError(f"{len(fields)} fields for {len(times)} instants")
        for f in fields[1:]:
            fields[0].grid.check_same(f.grid)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", fields)

    @classmethod
    def from_array(cls, grid: Grid, times, values: np.ndarray, iterations: int = 0, residuals=()) -> "SpaceTimeField":
        return cls(np.asarray(times, float), tuple(VectorField(grid, v) for v in values), iterations, tuple(residuals))

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0

    def values(self) -> np.ndarray:
        """Stacked components, shape ``(n_times, dim) + grid.shape``."""
        return np.stack([f.components for f in self.fields])

    def __len__(self):
        return len(self.times)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            raise KeyError(f"time {t} is not a stored instant")
        return k

    def at(self, t: float) -> VectorField:
        """Linear interpolation in time between stored instants."""
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        k = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        return VectorField(self.grid, (1 - w) * self.fields[k].components + w * self.fields[k + 1].components)


def validate_time_grid(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).ravel()
    if t.size < 2:
        raise ValueError("time grid needs at least two instants")
    if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be finite and strictly increasing")
    return t


def resolve(coef, t: float):
    """Evaluate a time-indexed coefficient: ``None``, a constant, or a callable of ``t``."""
    if coef is None:
        return None
    if callable(coef):
        return coef(t)
    return coef


def mild_picard(
    grid: Grid,
    times: np.ndarray,
    nu: float,
    terminal: np.ndarray,
    rhs: Callable[[int, np.ndarray], np.ndarray | None],
    tol: float,
    max_iter: int,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    blowup: float = 1e6,
) -> SpaceTimeField:
    """Fixed point of the right-endpoint Duhamel formula.

    Solves ``u(t_k) = H(T - t_k) terminal + sum_{j > k} dt_j H(t_j - t_k) F_j``
    with ``F_j = rhs(j, u(t_j))`` taken from the previous iterate, which is the
    sweep ``u_k = H(dt) [u_{k+1} + dt F_{k+1}]``.  The first iterate is the
    free heat evolution of ``terminal``.  Stops when the sup over time of the
    relative L2 update drops below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    times = validate_time_grid(times)
    K = len(times) - 1
    dts = np.diff(times)
    mults = {}
    for dt in dts:
        key = float(dt)
        if key not in mults:
            mults[key] = np.exp(-0.5 * nu * dt * grid.xi2)

    def sweep(forcing):
        out = np.empty((K + 1,) + terminal.shape)
        out[K] = terminal
        cur = grid.fft(terminal)
        for k in range(K - 1, -1, -1):
            if forcing is not None and forcing[k + 1] is not None:
                cur = cur + dts[k] * grid.fft(forcing[k + 1])
            cur = mults[float(dts[k])] * cur
            out[k] = grid.ifft(cur)
            if project is not None:
                out[k] = project(out[k])
        return out

    u = sweep(None)
    residuals: list[float] = []
    for it in range(1, max_iter + 1):
        forcing = [None] + [rhs(j, u[j]) for j in range(1, K + 1)]
        new = sweep(forcing)
        diff = np.sqrt(np.sum((new - u) ** 2, axis=tuple(range(1, new.ndim))))
        size = np.sqrt(np.sum(new**2, axis=tuple(range(1, new.ndim))))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(size > 0, diff / np.where(size > 0, size, 1.0), np.where(diff > 0, np.inf, 0.0))
        res = float(np.max(rel))
        residuals.append(res)
        u = new
        if not np.isfinite(res) or not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blowup * (1.0 + np.max(np.abs(terminal))):
            raise PicardDivergenceError(f"Picard iteration diverged at iteration {it}", residuals)
        if res < tol:
            return SpaceTimeField.from_array(grid, times, u, it, residuals)
    raise PicardDivergenceError(f"no convergence within {max_iter} iterations (last residual {residuals[-1]:.3e})", residuals)
