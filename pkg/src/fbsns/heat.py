"""Heat semigroup ``H^nu(t) * g`` with kernel variance ``nu t`` per axis.

The deterministic path is the Fourier multiplier ``exp(-nu t |xi|^2 / 2)``;
the Monte Carlo path averages ``g(x + sqrt(nu t) Z)`` with one Gaussian shift
shared by every node, interpolated multilinearly as in module ``leray``.
"""

from __future__ import annotations

import numpy as np

from .fields import ScalarField, VectorField
from .stochastic import McEstimate, RngStream, correlate_deposits, run_batches

__all__ = ["heat_multiplier", "heat_convolve", "heat_mc"]


def heat_multiplier(grid, t: float, nu: float) -> np.ndarray:
    return np.exp(-0.5 * nu * t * grid.xi2)


def _check(t: float, nu: float) -> None:
    if not t >= 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")


def heat_convolve(g: VectorField | ScalarField, t: float, nu: float):
    """Exact heat flow on the torus; ``t = 0`` returns ``g`` itself."""
    _check(t, nu)
    if t == 0:
        return g
    grid = g.grid
    if isinstance(g, ScalarField):
        return ScalarField(grid, grid.ifft(heat_multiplier(grid, t, nu) * grid.fft(g.values)))
    return VectorField(grid, grid.ifft(heat_multiplier(grid, t, nu) * grid.fft(g.components)))


def heat_mc(
    g: VectorField,
    t: float,
    nu: float,
    M: int,
    stream: RngStream,
    antithetic: bool = True,
    batch_size: int = 256,
    n_jobs: int = 1,
) -> McEstimate:
    """Feynman-Kac estimate ``E[g(x + sqrt(nu t) Z)]`` at every node.

    With ``antithetic`` each unit averages the shifts ``+Z`` and ``-Z`` and
    ``samples`` counts pairs.
    """
    _check(t, nu)
    if not t > 0:
        raise ValueError("heat_mc needs t > 0")
    if M < 2:
        raise ValueError("need M >= 2")
    grid = g.grid
    d = grid.dim
    units = M // 2 if antithetic else M
    if antithetic and M % 2:
        raise ValueError("antithetic sampling needs an even M")
    spectra = grid.fft(g.components)[None]  # (C=1, O=d, ...)
    sigma = np.sqrt(nu * t)

    def batch(count, child):
        z = sigma * child.normal((count, 1, d))
        if antithetic:
            pos = np.concatenate([z, -z], axis=1)
            coefs = np.full((count, 2, 1, d), 0.5)
        else:
            pos = z
            coefs = np.ones((count, 1, 1, d))
        return correlate_deposits(grid, pos, coefs, spectra)

    return run_batches(grid, units, batch_size, stream, batch, n_jobs=n_jobs)
