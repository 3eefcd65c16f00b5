"""Random streams, Gaussian sampling, Monte Carlo reduction and time quadrature.

Streams are keyed Philox generators: a ``(seed, stream_id)`` pair is the
128-bit key, and ``split`` derives child keys by hashing.  Every Monte Carlo
estimator cuts its work into fixed-size batches, gives batch ``b`` the stream
``stream.split(b)`` and folds batch statistics together in a fixed binary tree,
so results never depend on how many worker threads ran the batches.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import Grid, VectorField

_MASK64 = (1 << 64) - 1


class RngStream:
    """Seeded, splittable, replayable Gaussian source."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64)))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def split(self, index: int) -> "RngStream":
        """Independent child stream; same ``index`` always gives the same child."""
        ss = np.random.SeedSequence([self.seed, self.stream_id, int(index) & _MASK64])
        return RngStream(self.seed, int(ss.generate_state(1, np.uint64)[0]))

    def fresh(self) -> "RngStream":
        """A rewound copy of this stream."""
        return RngStream(self.seed, self.stream_id)

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)


def sample_gaussian(stream: RngStream, dim: int, variance: float) -> np.ndarray:
    """One iid ``N(0, variance I)`` draw in ``R^dim``."""
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return np.sqrt(variance) * stream.normal(dim)


@dataclass(frozen=True)
class TripleIncrement:
    """Increments of ``B`` over ``[0, s/3]``, ``[s/3, 2s/3]``, ``[2s/3, s]``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.a + self.b + self.c


def sample_triple(stream: RngStream, s: float, dim: int) -> TripleIncrement:
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    z = np.sqrt(s / 3.0) * stream.normal((3, dim))
    return TripleIncrement(z[0], z[1], z[2])


@dataclass(frozen=True)
class TimeQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    r_min: float
    r_max: float

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.weights * fn(self.nodes)))

    def __len__(self):
        return len(self.nodes)

    def matches(self, r_min: float, r_max: float, rtol: float = 1e-12) -> bool:
        return bool(np.isclose(self.r_min, r_min, rtol=rtol) and np.isclose(self.r_max, r_max, rtol=rtol))


def log_quadrature(r_min: float, r_max: float, K: int = 32, order: int = 4) -> TimeQuadrature:
    """Gauss-Legendre panels uniform in ``log r``.

    ``K`` panels with ``order`` points each; ``int g(r) dr`` is computed as
    ``int g(e^t) e^t dt`` so integrands decaying like powers of ``r`` become smooth.
    """
    if not (0 < r_min < r_max) or not np.isfinite(r_max):
        raise ValueError(f"need 0 < r_min < r_max, got [{r_min}, {r_max}]")
    if K < 2 or order < 1:
        raise ValueError("need K >= 2 panels and order >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(np.log(r_min), np.log(r_max), K + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    r = np.exp(t)
    return TimeQuadrature(r, wt * r, float(r_min), float(r_max))


@dataclass(frozen=True)
class McEstimate:
    """Pointwise Monte Carlo mean, its standard error and the sample count."""

    mean: VectorField
    stderr: VectorField
    samples: int
    _m2: np.ndarray | None = field(default=None, repr=False, compare=False)

    def z_scores(self, reference: VectorField) -> np.ndarray:
        diff = self.mean.components - reference.components
        se = self.stderr.components
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))
        return z

    def combine(self, other: "McEstimate") -> "McEstimate":
        """Merge two independent estimates of the same quantity."""
        a = _Partial.from_estimate(self)
        b = _Partial.from_estimate(other)
        return a.merge(b).to_estimate(self.mean.grid)


@dataclass
class _Partial:
    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_estimate(cls, e: McEstimate) -> "_Partial":
        if e._m2 is not None:
            m2 = e._m2
        else:
            m2 = e.stderr.components**2 * e.samples * (e.samples - 1)
        return cls(e.samples, np.array(e.mean.components), np.array(m2))

    def merge(self, other: "_Partial") -> "_Partial":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return _Partial(n, mean, m2)

    def to_estimate(self, grid: Grid) -> McEstimate:
        if self.n < 2:
            raise ValueError("at least two samples are needed for a standard error")
        var = np.maximum(self.m2, 0.0) / (self.n - 1)
        se = np.sqrt(var / self.n)
        return McEstimate(VectorField(grid, self.mean), VectorField(grid, se), self.n, self.m2)


def _tree(parts: list[_Partial]) -> _Partial:
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return _tree(parts[:mid]).merge(_tree(parts[mid:]))


def _reduce_array(samples: np.ndarray) -> _Partial:
    """Tree reduction over axis 0 of a stacked sample array."""
    m = samples.shape[0]
    if m == 1:
        return _Partial(1, samples[0].copy(), np.zeros_like(samples[0]))
    mid = m // 2
    return _reduce_array(samples[:mid]).merge(_reduce_array(samples[mid:]))


def mc_reduce(sample_fields: Sequence[VectorField]) -> McEstimate:
    """Mean and standard error of sample fields by fixed-order pairwise combination."""
    if len(sample_fields) == 0:
        raise ValueError("mc_reduce needs at least one sample")
    if len(sample_fields) < 2:
        raise ValueError("mc_reduce needs at least two samples for a standard error")
    grid = sample_fields[0].grid
    for f in sample_fields[1:]:
        grid.check_same(f.grid)
    stack = np.stack([f.components for f in sample_fields])
    return _reduce_array(stack).to_estimate(grid)


def run_batches(
    grid: Grid,
    total: int,
    batch_size: int,
    stream: RngStream,
    batch_fn: Callable[[int, RngStream], np.ndarray],
    n_jobs: int = 1,
) -> McEstimate:
    """Evaluate ``batch_fn(count, child_stream)`` over fixed batches and tree-reduce.

    ``batch_fn`` returns per-sample arrays stacked on axis 0.  Batch layout and
    streams depend only on ``total`` and ``batch_size``.
    """
    if total < 2:
        raise ValueError("need at least two samples")
    counts = [batch_size] * (total // batch_size)
    if total % batch_size:
        counts.append(total % batch_size)

    def work(b):
        return _reduce_array(batch_fn(counts[b], stream.split(b)))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(work, range(len(counts))))
    else:
        parts = [work(b) for b in range(len(counts))]
    return _tree(parts).to_estimate(grid)


def correlate_deposits(
    grid: Grid,
    positions: np.ndarray,
    coefs: np.ndarray,
    spectra: np.ndarray,
) -> np.ndarray:
    """Per-sample sums ``sum_q sum_c coefs[m,q,c] * F_c(x + positions[m,q])`` at every node.

    ``F_c`` is the field whose FFT is ``spectra[c]`` and off-grid values come
    from periodic multilinear interpolation.  Because each shift is shared by
    all nodes, the interpolation weights deposit onto a periodic stencil and
    the node sum becomes a cross-correlation evaluated with FFTs.  Shapes:
    positions ``(M, Q, dim)``, coefs ``(M, Q, C, O)``, spectra ``(C, O) +
    grid.shape`` (complex).  Returns ``(M, O) + grid.shape``.
    """
    M, Q, d = positions.shape
    C, O = coefs.shape[2], coefs.shape[3]
    s = positions / grid.spacing
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64) % grid.n
    nn = grid.size
    strides = grid.n ** np.arange(d - 1, -1, -1)
    dep_index = []
    dep_weight = []
    for corner in range(1 << d):
        w = np.ones((M, Q))
        flat = np.zeros((M, Q), dtype=np.int64)
        for a in range(d):
            bit = (corner >> a) & 1
            w = w * (frac[..., a] if bit else 1.0 - frac[..., a])
            flat += ((base[..., a] + bit) % grid.n) * strides[a]
        dep_index.append(flat)
        dep_weight.append(w)
    dep_index = np.stack(dep_index, axis=-1)  # (M, Q, 2^d)
    dep_weight = np.stack(dep_weight, axis=-1)
    CO = C * O
    # bincount key: ((m * CO + co) * nn + node)
    key = (np.arange(M)[:, None, None, None] * CO + np.arange(CO)[None, None, None, :]) * nn + dep_index[..., None]
    val = dep_weight[..., None] * coefs.reshape(M, Q, 1, CO)
    A = np.bincount(key.ravel(), weights=val.ravel(), minlength=M * CO * nn)
    A = A.reshape((M, C, O) + grid.shape)
    Ah = np.fft.fftn(A, axes=grid.axes)
    out_h = np.einsum("mco...,co...->mo...", np.conj(Ah), spectra)
    return np.fft.ifftn(out_h, axes=grid.axes).real
