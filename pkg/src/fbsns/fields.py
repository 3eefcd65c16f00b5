"""Periodic grids, sampled fields and spectral differential operators.

Fields live in physical space as immutable numpy arrays.  Vector fields keep
their components on the leading axis, so a 2D velocity on an ``n x n`` grid has
shape ``(2, n, n)``.  Every spectral operator builds its transform on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import GridMismatchError

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "TensorField",
    "tensor_product",
    "spectral_derivative",
    "gradient",
    "divergence",
    "laplacian",
    "jacobian",
    "curl",
    "sobolev_norm",
    "sobolev_inner",
    "l2_norm",
    "sup_norm",
    "fourier_l2_norm",
    "interpolate",
    "upsample",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the torus ``[0, L)^dim`` with ``n`` points per axis."""

    dim: int
    n: int
    L: float = 2.0 * np.pi

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"points_per_axis must be an integer >= 4, got {self.n}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"period must be positive, got {self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def spacing(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        """Spatial axes of a component array (components sit on axis 0)."""
        return tuple(range(-self.dim, 0))

    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def points(self) -> np.ndarray:
        """Grid nodes as an ``(n**dim, dim)`` array in row-major order."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    def wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers ``2 pi k / L`` for ``k = -n/2 .. n/2-1`` (FFT order)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.L

    # Spectral tables for the full complex FFT layout.  The ``_d`` variants zero
    # the Nyquist wavenumber so odd multipliers stay real-symmetric.
    @cached_property
    def xi(self) -> tuple[np.ndarray, ...]:
        k = self.wavenumbers()
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def xi_d(self) -> tuple[np.ndarray, ...]:
        k = self.wavenumbers().copy()
        k[self.n // 2] = 0.0
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def xi2(self) -> np.ndarray:
        return sum(k * k for k in self.xi)

    @cached_property
    def xi2_d(self) -> np.ndarray:
        return sum(k * k for k in self.xi_d)

    @cached_property
    def inv_xi2_d(self) -> np.ndarray:
        """``1/|xi|^2`` with the zero (and pure-Nyquist) mode mapped to 0."""
        out = np.zeros(self.shape)
        nz = self.xi2_d > 0
        out[nz] = 1.0 / self.xi2_d[nz]
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask: keep ``|k| < n/3`` on every axis."""
        k = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n))
        keep = k < self.n / 3.0
        mask = keep
        for _ in range(self.dim - 1):
            mask = np.multiply.outer(mask, keep)
        return mask

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.fftn(a, axes=self.axes)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(a, axes=self.axes).real

    def check_same(self, other: "Grid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _frozen(a, shape, what) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.shape != shape:
        if arr.size == int(np.prod(shape)):
            arr = arr.reshape(shape)
        else:
            raise ValueError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.shape, "scalar values"))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.coords()))

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (self.grid.dim,) + self.grid.shape
        object.__setattr__(self, "components", _frozen(self.components, shape, "vector components"))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value) -> "VectorField":
        value = np.asarray(value, dtype=float).reshape((grid.dim,) + (1,) * grid.dim)
        return cls(grid, np.broadcast_to(value, (grid.dim,) + grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        comps = fn(*grid.coords())
        return cls(grid, np.stack([np.broadcast_to(c, grid.shape) for c in comps]))

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.components[i])

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return VectorField(self.grid, self.components + other.components)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return VectorField(self.grid, self.components - other.components)

    def __neg__(self):
        return VectorField(self.grid, -self.components)

    def __mul__(self, c):
        return VectorField(self.grid, self.components * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TensorField:
    """Matrix-valued field; ``entries[i, j]`` is the (i, j) entry."""

    grid: Grid
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = self.grid.dim
        object.__setattr__(self, "entries", _frozen(self.entries, (d, d) + self.grid.shape, "tensor entries"))

    def apply(self, u: VectorField) -> VectorField:
        """Pointwise matrix-vector product ``(T u)^i = sum_j T_ij u^j``."""
        self.grid.check_same(u.grid)
        return VectorField(self.grid, np.einsum("ij...,j...->i...", self.entries, u.components))

    def transpose(self) -> "TensorField":
        return TensorField(self.grid, np.swapaxes(self.entries, 0, 1))


def tensor_product(u: VectorField, v: VectorField) -> TensorField:
    """Pointwise outer product, entry ``(i, j) = u^i v^j``."""
    u.grid.check_same(v.grid)
    return TensorField(u.grid, u.components[:, None] * v.components[None, :])


def _deriv_array(grid: Grid, a: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
    mult = (1j * grid.xi_d[axis]) ** order
    return grid.ifft(mult * grid.fft(a))


def spectral_derivative(f: ScalarField, axis: int) -> ScalarField:
    """Exact derivative of the trigonometric interpolant along ``axis``."""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    return ScalarField(f.grid, _deriv_array(f.grid, f.values, axis))


def gradient(s: ScalarField) -> VectorField:
    g = s.grid
    sh = g.fft(s.values)
    return VectorField(g, np.stack([g.ifft(1j * k * sh) for k in g.xi_d]))


def divergence(u: VectorField) -> ScalarField:
    g = u.grid
    uh = g.fft(u.components)
    return ScalarField(g, g.ifft(sum(1j * g.xi_d[a] * uh[a] for a in range(g.dim))))


def laplacian(s: ScalarField | VectorField):
    g = s.grid
    if isinstance(s, ScalarField):
        return ScalarField(g, g.ifft(-g.xi2_d * g.fft(s.values)))
    return VectorField(g, g.ifft(-g.xi2_d * g.fft(s.components)))


def jacobian(u: VectorField) -> TensorField:
    """Jacobi matrix ``(grad u)_{ij} = d_j u^i`` (rows are components)."""
    g = u.grid
    uh = g.fft(u.components)
    return TensorField(g, np.stack([np.stack([g.ifft(1j * g.xi_d[j] * uh[i]) for j in range(g.dim)]) for i in range(g.dim)]))


def curl(u: VectorField) -> np.ndarray:
    """Curl as an array: scalar for dim 2, vector for dim 3, zeros for dim 1."""
    g = u.grid
    if g.dim == 1:
        return np.zeros(g.shape)
    J = jacobian(u).entries
    if g.dim == 2:
        return J[1, 0] - J[0, 1]
    return np.stack([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


def _components(u) -> tuple[Grid, np.ndarray]:
    if isinstance(u, ScalarField):
        return u.grid, u.values[None]
    return u.grid, u.components


def l2_norm(u) -> float:
    """Discrete L2 norm with node quadrature weight ``spacing**dim``."""
    g, c = _components(u)
    return float(np.sqrt(g.cell_volume * np.sum(c**2)))


def fourier_l2_norm(u) -> float:
    g, c = _components(u)
    ch = g.fft(c)
    return float(np.sqrt(g.cell_volume * np.sum(np.abs(ch) ** 2) / g.size))


def sobolev_inner(u, v, m: float) -> float:
    """Spectral ``H^m`` inner product with weight ``(1 + |xi|^2)^m``."""
    g, a = _components(u)
    g2, b = _components(v)
    g.check_same(g2)
    w = (1.0 + g.xi2) ** m
    return float(g.cell_volume * np.sum(w * (g.fft(a) * np.conj(g.fft(b))).real) / g.size)


def sobolev_norm(u, m: float = 0) -> float:
    """``||(1 - Laplacian)^{m/2} u||_{L2}`` on the torus."""
    if m < 0:
        raise ValueError("Sobolev index must be nonnegative")
    if m == 0:
        return l2_norm(u)
    return float(np.sqrt(max(sobolev_inner(u, u, m), 0.0)))


def sup_norm(u) -> float:
    """Max over nodes of the Euclidean magnitude."""
    _, c = _components(u)
    return float(np.sqrt(np.max(np.sum(c**2, axis=0))))


def interpolate(values: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation.

    ``values`` has shape ``(C,) + grid.shape`` and ``points`` shape ``(P, dim)``;
    returns ``(C, P)``.
    """
    points = np.atleast_2d(points)
    d = grid.dim
    s = points / grid.spacing
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64) % grid.n
    out = np.zeros((values.shape[0], points.shape[0]))
    for corner in range(1 << d):
        w = np.ones(points.shape[0])
        idx = []
        for a in range(d):
            bit = (corner >> a) & 1
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            idx.append((base[:, a] + bit) % grid.n)
        out += w * values[(slice(None),) + tuple(idx)]
    return out


def upsample(values: np.ndarray, grid: Grid, factor: int) -> tuple[Grid, np.ndarray]:
    """Spectral zero-padding onto a grid ``factor`` times finer (exact for band-limited data)."""
    if factor == 1:
        return grid, np.asarray(values)
    fine = Grid(grid.dim, grid.n * factor, grid.L)
    lead = values.shape[: values.ndim - grid.dim]
    vh = np.fft.fftshift(grid.fft(values), axes=grid.axes)
    pad = [(0, 0)] * len(lead) + [((fine.n - grid.n) // 2, (fine.n - grid.n) // 2)] * grid.dim
    # split the Nyquist coefficient symmetrically so the result stays real
    for a in grid.axes:
        sl = [slice(None)] * vh.ndim
        sl[a] = 0
        vh[tuple(sl)] *= 0.5
    big = np.pad(vh, pad)
    for a in fine.axes:
        src = [slice(None)] * big.ndim
        dst = [slice(None)] * big.ndim
        src[a] = (fine.n - grid.n) // 2
        dst[a] = (fine.n + grid.n) // 2
        big[tuple(dst)] = big[tuple(src)]
    big = np.fft.ifftshift(big, axes=fine.axes)
    return fine, fine.ifft(big) * (fine.size / grid.size)
