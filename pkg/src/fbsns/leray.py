"""Nonlocal pressure operator and Leray-Hodge projection on the torus.

Deterministic paths are Fourier multipliers.  The stochastic paths estimate

    E int_a^b (27 / 2r^3) sum_ij (phi^i psi^j)(x + B_r)
          (B^i_{2r/3} - B^i_{r/3}) (B^j_r - B^j_{2r/3}) B_{r/3} dr

whose mean, by Gaussian integration by parts, carries the multiplier

    -i xi_k xi_i xi_j / |xi|^2 * (exp(-a|xi|^2/2) - exp(-b|xi|^2/2))

on the transform of ``phi^i psi^j``.  With ``a -> 0`` and ``b -> inf`` this is
``grad (-Laplacian)^{-1} div div (phi x psi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid, VectorField, l2_norm, divergence
from .stochastic import McEstimate, RngStream, TimeQuadrature, run_batches

__all__ = [
    "TruncationSpec",
    "leray_project",
    "leray_complement",
    "pressure_gradient_exact",
    "pressure_gradient_truncated_exact",
    "pressure_gradient_eps",
    "pressure_scalar",
    "pressure_gradient_mc",
    "pressure_gradient_mc_triple",
    "PEpsReport",
    "p_eps_bound_check",
    "frozen_truncated_operator",
]


@dataclass(frozen=True)
class TruncationSpec:
    """Restrict the time integral to ``[1/N, N]`` (or ``[eps, inf)`` when ``eps`` is set)."""

    N: float | None = None
    eps: float | None = None

    def __post_init__(self):
        if (self.N is None) == (self.eps is None):
            raise ValueError("give exactly one of N or eps")
        if self.N is not None and not self.N > 1:
            raise ValueError(f"N must exceed 1, got {self.N}")
        if self.eps is not None and not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")

    @property
    def interval(self) -> tuple[float, float]:
        if self.N is not None:
            return 1.0 / self.N, float(self.N)
        return float(self.eps), np.inf

    @property
    def triple_interval(self) -> tuple[float, float]:
        lo, hi = self.interval
        return lo / 3.0, hi / 3.0


def leray_project(u: VectorField) -> VectorField:
    """``u_hat - xi (xi . u_hat) / |xi|^2``; the mean mode passes through."""
    g = u.grid
    uh = g.fft(u.components)
    dot = sum(g.xi_d[a] * uh[a] for a in range(g.dim)) * g.inv_xi2_d
    out = np.stack([uh[a] - g.xi_d[a] * dot for a in range(g.dim)])
    return VectorField(g, g.ifft(out))


def leray_complement(u: VectorField) -> VectorField:
    """``P_perp u = u - P u``, the gradient part."""
    return u - leray_project(u)


def _product_spectra(phi: VectorField, psi: VectorField, real: bool = False) -> np.ndarray:
    phi.grid.check_same(psi.grid)
    g = phi.grid
    prod = phi.components[:, None] * psi.components[None, :]
    if real:
        return np.fft.rfftn(prod, axes=g.axes)
    return g.fft(prod)


def _apply_kernel(g: Grid, ph: np.ndarray, weight) -> VectorField:
    """``-i xi_k * sum_ij xi_i xi_j ph_ij / |xi|^2 * weight`` for every k."""
    s = sum(g.xi_d[i] * g.xi_d[j] * ph[i, j] for i in range(g.dim) for j in range(g.dim))
    s = s * g.inv_xi2_d * weight
    return VectorField(g, np.stack([g.ifft(-1j * g.xi_d[k] * s) for k in range(g.dim)]))


def pressure_gradient_exact(phi: VectorField, psi: VectorField) -> VectorField:
    """``grad (-Laplacian)^{-1} d_i d_j (phi^i psi^j)`` by Fourier multiplier."""
    return _apply_kernel(phi.grid, _product_spectra(phi, psi), 1.0)


def _gap_weight(g: Grid, a: float, b: float) -> np.ndarray:
    x2 = g.xi2_d
    hi = 0.0 if np.isinf(b) else np.exp(-b * x2 / 2.0)
    return np.exp(-a * x2 / 2.0) - hi


def pressure_gradient_truncated_exact(phi: VectorField, psi: VectorField, spec: TruncationSpec) -> VectorField:
    a, b = spec.interval
    return _apply_kernel(phi.grid, _product_spectra(phi, psi), _gap_weight(phi.grid, a, b))


def pressure_gradient_eps(phi: VectorField, psi: VectorField, eps: float) -> VectorField:
    """One-sided regularization, time integral over ``[eps, inf)``."""
    return pressure_gradient_truncated_exact(phi, psi, TruncationSpec(eps=eps))


def pressure_scalar(u: VectorField):
    """Zero-mean scalar ``p = (-Laplacian)^{-1} div div (u x u)`` whose gradient is the exact operator."""
    from .fields import ScalarField

    g = u.grid
    ph = _product_spectra(u, u)
    s = -sum(g.xi_d[i] * g.xi_d[j] * ph[i, j] for i in range(g.dim) for j in range(g.dim))
    return ScalarField(g, g.ifft(s * g.inv_xi2_d))


def frozen_truncated_operator(grid: Grid, quad: TimeQuadrature, M: int, stream: RngStream, triple: bool = False, antithetic: bool = True, batch_size: int = 64):
    """Monte Carlo operator with its Brownian draws frozen.

    The estimator mean is linear in the product fields, so averaging the
    per-sample deposit spectra once yields a fixed multiplier table.  The
    returned callable maps ``(phi, psi)`` to the Monte Carlo mean at the
    cost of one FFT pass; repeated calls reuse identical draws.
    """
    d = grid.dim
    acc = None
    units = _units(M, antithetic)
    counts = [batch_size] * (units // batch_size) + ([units % batch_size] if units % batch_size else [])
    for b, cnt in enumerate(counts):
        pos, coef = _draw(quad, cnt, d, stream.split(b), triple, antithetic)
        part = _deposit_spectra(grid, pos, coef).sum(axis=0)
        acc = part if acc is None else acc + part
    table = np.conj(acc / units)

    def apply(phi: VectorField, psi: VectorField) -> VectorField:
        ph = _product_spectra(phi, psi, real=True)
        out = np.einsum("ijk...,ij...->k...", table, ph)
        return VectorField(grid, np.fft.irfftn(out, s=grid.shape, axes=grid.axes))

    return apply


def _units(M: int, antithetic: bool) -> int:
    if M < 2:
        raise ValueError("need at least M = 2 samples")
    if antithetic:
        if M % 2:
            raise ValueError("antithetic sampling needs an even M")
        return M // 2
    return M


def _draw(quad: TimeQuadrature, count: int, d: int, stream: RngStream, triple: bool, antithetic: bool):
    """Shifts ``(count, Q', d)`` and kernel coefficients ``(count, Q', d*d, d)``."""
    r = quad.nodes
    Q = len(r)
    z = stream.normal((count, Q, 3, d))
    if triple:
        scale = np.sqrt(r)
        const = quad.weights * 1.5 / r**3
    else:
        scale = np.sqrt(r / 3.0)
        const = quad.weights * 13.5 / r**3
    z = z * scale[None, :, None, None]
    a, b, c = z[:, :, 0], z[:, :, 1], z[:, :, 2]
    pos = a + b + c
    coef = const[None, :, None, None, None] * b[:, :, :, None, None] * c[:, :, None, :, None] * a[:, :, None, None, :]
    coef = coef.reshape(count, Q, d * d, d)
    if antithetic:
        # the kernel is odd in the Gaussians: negate everything, average the pair
        pos = np.concatenate([pos, -pos], axis=1)
        coef = 0.5 * np.concatenate([coef, -coef], axis=1)
    return pos, coef


def _deposit_spectra(grid: Grid, pos, coef) -> np.ndarray:
    """Real FFT of the per-sample deposit, shape ``(M, d, d, d) + half spectrum``."""
    d = grid.dim
    M, Q = pos.shape[:2]
    s = pos / grid.spacing
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64) % grid.n
    nn = grid.size
    strides = grid.n ** np.arange(d - 1, -1, -1)
    CO = d * d * d
    A = np.zeros(M * CO * nn)
    offs = (np.arange(M)[:, None, None] * CO + np.arange(CO)[None, None, :]) * nn
    cf = coef.reshape(M, Q, CO)
    for corner in range(1 << d):
        w = np.ones((M, Q))
        flat = np.zeros((M, Q), dtype=np.int64)
        for ax in range(d):
            bit = (corner >> ax) & 1
            w = w * (frac[..., ax] if bit else 1.0 - frac[..., ax])
            flat += ((base[..., ax] + bit) % grid.n) * strides[ax]
        key = offs + flat[..., None]
        A += np.bincount(key.ravel(), weights=(w[..., None] * cf).ravel(), minlength=A.size)
    A = A.reshape((M, d, d, d) + grid.shape)
    return np.fft.rfftn(A, axes=grid.axes)


def _mc(phi, psi, quad, M, stream, triple, antithetic, batch_size, n_jobs) -> McEstimate:
    phi.grid.check_same(psi.grid)
    g = phi.grid
    d = g.dim
    ph = _product_spectra(phi, psi, real=True)
    units = _units(M, antithetic)

    def batch(count, child):
        pos, coef = _draw(quad, count, d, child, triple, antithetic)
        Ah = _deposit_spectra(g, pos, coef)
        out = np.einsum("mijk...,ij...->mk...", np.conj(Ah), ph)
        return np.fft.irfftn(out, s=g.shape, axes=g.axes)

    return run_batches(g, units, batch_size, stream, batch, n_jobs=n_jobs)


def pressure_gradient_mc(
    phi: VectorField,
    psi: VectorField,
    spec: TruncationSpec,
    quad: TimeQuadrature,
    M: int,
    stream: RngStream,
    antithetic: bool = True,
    batch_size: int = 64,
    n_jobs: int = 1,
) -> McEstimate:
    """Single-Brownian-motion Monte Carlo estimate of the truncated operator.

    One three-increment draw per (sample, quadrature node) is shared by every
    grid node.  With ``antithetic`` the M draws form M/2 negated pairs and the
    reported sample count is the number of pairs.
    """
    if spec.N is None:
        raise ValueError("Monte Carlo estimation needs a finite horizon N")
    lo, hi = spec.interval
    if not quad.matches(lo, hi):
        raise ValueError(f"quadrature interval [{quad.r_min}, {quad.r_max}] does not match [{lo}, {hi}]")
    return _mc(phi, psi, quad, M, stream, False, antithetic, batch_size, n_jobs)


def pressure_gradient_mc_triple(
    phi: VectorField,
    psi: VectorField,
    spec: TruncationSpec,
    quad: TimeQuadrature,
    M: int,
    stream: RngStream,
    antithetic: bool = True,
    batch_size: int = 64,
    n_jobs: int = 1,
) -> McEstimate:
    """Three-Brownian-motion form: ``(3 / 2r^3) g(x + B1 + B2 + B3) B1^i B2^j B3`` on ``[1/3N, N/3]``."""
    if spec.N is None:
        raise ValueError("Monte Carlo estimation needs a finite horizon N")
    lo, hi = spec.triple_interval
    if not quad.matches(lo, hi):
        raise ValueError(f"quadrature interval [{quad.r_min}, {quad.r_max}] does not match [{lo}, {hi}]")
    return _mc(phi, psi, quad, M, stream, True, antithetic, batch_size, n_jobs)


@dataclass(frozen=True)
class PEpsReport:
    eps: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def slack(self) -> float:
        return self.rhs / self.lhs if self.lhs > 0 else np.inf


def p_eps_bound_check(phi: VectorField, psi: VectorField, eps: float, strict: bool = True) -> PEpsReport:
    """Compare ``||P^eps(phi x psi)||_0`` against ``(27 / sqrt(eps)) sum_ij ||phi^i psi^j||_0``.

    With ``strict`` a violation raises ``AssertionError``; otherwise it is only reported.
    """
    lhs = l2_norm(pressure_gradient_eps(phi, psi, eps))
    g = phi.grid
    rhs = 0.0
    for i in range(g.dim):
        for j in range(g.dim):
            rhs += np.sqrt(g.cell_volume * np.sum((phi.components[i] * psi.components[j]) ** 2))
    rhs *= 27.0 / np.sqrt(eps)
    report = PEpsReport(eps, lhs, float(rhs))
    if strict and not report.holds:
        raise AssertionError(f"P^eps bound violated: {lhs} > {rhs}")
    return report


def divergence_leakage(u: VectorField) -> float:
    n = l2_norm(u)
    return l2_norm(divergence(u)) / n if n > 0 else 0.0
