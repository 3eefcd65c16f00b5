"""Standard test fields: Taylor-Green vortex and random band-limited data."""

from __future__ import annotations

import numpy as np

from .fields import Grid, ScalarField, VectorField


def taylor_green(grid: Grid, amplitude: float = 1.0) -> VectorField:
    """``u = A (-cos x sin y, sin x cos y)`` scaled to the box period.

    Divergence free, and an eigenfield of the Laplacian with eigenvalue
    ``-2 (2 pi / L)^2``.  Extra axes in 3D get a zero component.
    """
    if grid.dim < 2:
        raise ValueError("Taylor-Green needs dim >= 2")
    k = 2.0 * np.pi / grid.L
    c = grid.coords()
    x, y = k * c[0], k * c[1]
    comps = [-np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)] + [np.zeros(grid.shape)] * (grid.dim - 2)
    return VectorField(grid, amplitude * np.stack(comps))


def _random_spectrum(grid: Grid, rng: np.random.Generator, kmax: int, ncomp: int, decay: float) -> np.ndarray:
    kint = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    K = np.meshgrid(*([kint] * grid.dim), indexing="ij")
    kabs = np.sqrt(sum(k * k for k in K))
    band = (np.max(np.abs(np.stack(K)), axis=0) <= kmax) & (kabs > 0)
    coef = rng.standard_normal((ncomp,) + grid.shape) + 1j * rng.standard_normal((ncomp,) + grid.shape)
    coef *= band / (1.0 + kabs) ** decay
    return coef


def random_bandlimited(grid: Grid, seed: int = 0, kmax: int = 4, amplitude: float = 1.0, decay: float = 1.0) -> VectorField:
    """Smooth random vector field with integer wavenumbers ``|k_a| <= kmax``."""
    if kmax >= grid.n // 2:
        raise ValueError("kmax must stay below the Nyquist index")
    rng = np.random.default_rng(seed)
    coef = _random_spectrum(grid, rng, kmax, grid.dim, decay)
    vals = grid.ifft(coef)
    vals *= amplitude / max(np.max(np.abs(vals)), 1e-300)
    return VectorField(grid, vals)


def random_scalar(grid: Grid, seed: int = 0, kmax: int = 4, amplitude: float = 1.0) -> ScalarField:
    rng = np.random.default_rng(seed)
    vals = grid.ifft(_random_spectrum(grid, rng, kmax, 1, 1.0))[0]
    vals *= amplitude / max(np.max(np.abs(vals)), 1e-300)
    return ScalarField(grid, vals)


def random_solenoidal(grid: Grid, seed: int = 0, kmax: int = 4, amplitude: float = 1.0) -> VectorField:
    """Random band-limited divergence-free, mean-zero field."""
    from .leray import leray_project

    u = leray_project(random_bandlimited(grid, seed, kmax, 1.0))
    c = u.components - u.components.mean(axis=grid.axes, keepdims=True)
    c *= amplitude / max(np.max(np.abs(c)), 1e-300)
    return VectorField(grid, c)


def single_mode(grid: Grid, mode: int = 1, amplitude: float = 1.0) -> VectorField:
    """``A sin(2 pi mode x_0 / L)`` in the first component, zeros elsewhere."""
    x = grid.coords()[0]
    comps = np.zeros((grid.dim,) + grid.shape)
    comps[0] = amplitude * np.sin(2.0 * np.pi * mode * x / grid.L)
    return VectorField(grid, comps)
