"""Stochastic Lagrangian flow, Jacobian transport and the Weber-type velocity formula.

Paths follow ``dX = u(s, X) ds + sqrt(nu) dW`` from ``X_t = x`` and carry
``J = grad^T X`` (``J_ij = d_i X^j``) through ``dJ = J grad^T u(s, X) ds``.
The velocity is recovered as ``u(t) = P E[J_T G(X_T) + int J_s f(s, X_s) ds]``.

Velocity, its gradient, forcing and the gauge integrand are spectrally
upsampled once, then read by periodic multilinear interpolation in space and
linear interpolation in time inside a compiled path loop.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .fields import Grid, ScalarField, VectorField, l2_norm, upsample
from .leray import leray_project, pressure_scalar
from .spacetime import SpaceTimeField, resolve
from .stochastic import McEstimate, RngStream, _reduce_array, _tree

__all__ = [
    "FlowSample",
    "simulate_flow",
    "webber_velocity",
    "WebberResult",
    "gauge_scalar",
    "GaugeEstimate",
    "MeasureReport",
    "measure_preservation_check",
]


@numba.njit(cache=True, inline="always", error_model="numpy", fastmath=True)
def _interp(tab, k, w, x, n, h, d, base, frac, out):
    """Multilinear in space at ``x``, linear in time between slices ``k`` and ``k+1``.

    ``tab`` is ``(times, nodes, channels)``.
    """
    C = tab.shape[2]
    for c in range(C):
        out[c] = 0.0
    for a in range(d):
        s = x[a] / h
        f = np.floor(s)
        frac[a] = s - f
        base[a] = int(f) % n
    for corner in range(1 << d):
        wt = 1.0
        flat = 0
        for a in range(d):
            bit = (corner >> a) & 1
            wt *= frac[a] if bit else 1.0 - frac[a]
            b = base[a] + bit
            if b == n:
                b = 0
            flat = flat * n + b
        if w == 0.0:
            for c in range(C):
                out[c] += wt * tab[k, flat, c]
        else:
            w0 = wt * (1.0 - w)
            w1 = wt * w
            for c in range(C):
                out[c] += w0 * tab[k, flat, c] + w1 * tab[k + 1, flat, c]


@numba.njit(cache=True, error_model="numpy", fastmath=True)
def _flow_kernel(X0, incr, diag, times, t0, dt, tab, Gtab, n, L, d, has_f, has_q, transport):
    """Euler-Maruyama for ``X`` and explicit Euler for ``J``.

    ``incr[m, k]`` is the noise increment of sample ``m`` at step ``k``, shared
    by every start point, or with ``diag`` driving only start point ``m``.
    Channels: ``u`` (d), ``d_k u^j`` at ``d + k*d + j`` (d*d), then optionally
    ``f`` (d) and the gauge integrand (1).  Steps run in the outer loop so
    each step reads one time slice of the table.
    """
    M, S = incr.shape[0], incr.shape[1]
    P = 1 if diag else X0.shape[0]
    C = tab.shape[2]
    Nt = times.shape[0]
    h = L / n
    npath = M * P
    X = np.empty((npath, d))
    J = np.zeros((npath, d, d))
    acc = np.zeros((npath, d))
    vint = np.zeros(npath)
    for i in range(npath):
        src = i // P if diag else i % P
        for a in range(d):
            X[i, a] = X0[src, a]
            J[i, a, a] = 1.0
    val = np.empty(C)
    Jn = np.empty((d, d))
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    j = 0
    for k in range(S):
        s = t0 + k * dt
        while j < Nt - 2 and times[j + 1] <= s:
            j += 1
        w = min(max((s - times[j]) / (times[j + 1] - times[j]), 0.0), 1.0)
        kk = j
        if w > 1.0 - 1e-12:
            kk, w = j + 1, 0.0
        elif w < 1e-12:
            w = 0.0
        for i in range(npath):
            m = i // P
            _interp(tab, kk, w, X[i], n, h, d, base, frac, val)
            if has_f:
                for r in range(d):
                    s_ = 0.0
                    for c in range(d):
                        s_ += J[i, r, c] * val[d + d * d + c]
                    acc[i, r] += s_ * dt
            if has_q:
                vint[i] += val[C - 1] * dt
            if transport:
                # J <- J (I + grad^T u dt), grad^T u[q, c] = d_q u^c
                for r in range(d):
                    for c in range(d):
                        s_ = J[i, r, c]
                        for q in range(d):
                            s_ += J[i, r, q] * val[d + q * d + c] * dt
                        Jn[r, c] = s_
                for r in range(d):
                    for c in range(d):
                        J[i, r, c] = Jn[r, c]
            for a in range(d):
                X[i, a] += val[a] * dt + incr[m, k, a]
    payload = np.empty((M, P, d))
    XT = np.empty((M, P, d))
    det = np.empty((M, P))
    gv = np.empty(d)
    for i in range(npath):
        m, p = i // P, i % P
        _interp(Gtab, 0, 0.0, X[i], n, h, d, base, frac, gv)
        for r in range(d):
            s_ = acc[i, r]
            for c in range(d):
                s_ += J[i, r, c] * gv[c]
            payload[m, p, r] = s_
            XT[m, p, r] = X[i, r]
        if d == 1:
            det[m, p] = J[i, 0, 0]
        elif d == 2:
            det[m, p] = J[i, 0, 0] * J[i, 1, 1] - J[i, 0, 1] * J[i, 1, 0]
        else:
            det[m, p] = (
                J[i, 0, 0] * (J[i, 1, 1] * J[i, 2, 2] - J[i, 1, 2] * J[i, 2, 1])
                - J[i, 0, 1] * (J[i, 1, 0] * J[i, 2, 2] - J[i, 1, 2] * J[i, 2, 0])
                + J[i, 0, 2] * (J[i, 1, 0] * J[i, 2, 1] - J[i, 1, 1] * J[i, 2, 0])
            )
    return payload, XT, det, vint.reshape(M, P)


@dataclass(frozen=True)
class FlowSample:
    """Terminal state of ``M`` paths from each of ``P`` start points.

    ``payload`` is ``J_T G(X_T) + int J f ds``, ``gauge`` the path integral of
    the gauge integrand and ``det`` the Jacobian determinant at ``T``.
    """

    X: np.ndarray  # (M, P, d)
    det: np.ndarray  # (M, P)
    payload: np.ndarray  # (M, P, d)
    gauge: np.ndarray  # (M, P)
    t_start: float
    n_steps: int


def _gauge_integrand(t: float, u: VectorField) -> np.ndarray:
    """``p - |u|^2 / 2`` with ``p`` the zero-mean pressure of ``u``."""
    return pressure_scalar(u).values - 0.5 * np.sum(np.asarray(u.components) ** 2, axis=0)


class _Flow:
    """Upsampled channel tables shared by every batch of one simulation."""

    def __init__(self, u: SpaceTimeField, t_start: float, n_steps: int, nu: float, G=None, f=None, gauge: bool = False, upsample_factor: int = 2):
        g = u.grid
        if not u.times[0] - 1e-12 <= t_start <= u.T:
            raise ValueError(f"u covers [{u.times[0]}, {u.T}], not t = {t_start}")
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if nu < 0:
            raise ValueError("nu must be nonnegative")
        if upsample_factor < 1:
            raise ValueError("upsample_factor must be at least 1")
        if G is not None:
            g.check_same(G.grid)
        self.u, self.d, self.nu = u, g.dim, float(nu)
        self.t_start, self.n_steps = float(t_start), int(n_steps)
        self.dt = (u.T - t_start) / n_steps
        self.has_f, self.has_q = f is not None, gauge
        self.fine, self.chans = self._channels(u, upsample_factor, f, gauge)
        Gc = np.zeros((self.d,) + g.shape) if G is None else np.asarray(G.components)
        _, Gf = upsample(Gc, g, upsample_factor)
        self.Gf = np.ascontiguousarray(Gf.reshape(self.d, -1).T[None])
        speed = np.sqrt(np.sum(self.chans[:, :, : self.d] ** 2, axis=2)).max()
        if speed * self.dt > self.fine.spacing:
            warnings.warn(f"CFL-style condition violated: sup|u| dt = {speed * self.dt:.3g} > spacing {self.fine.spacing:.3g}", RuntimeWarning, stacklevel=3)

    @staticmethod
    def _channels(u: SpaceTimeField, factor: int, f, gauge: bool) -> tuple[Grid, np.ndarray]:
        g = u.grid
        d = g.dim
        rows = []
        fine = g
        for t, fld in zip(u.times, u.fields):
            comps = np.asarray(fld.components)
            uh = g.fft(comps)
            ch = [comps[a] for a in range(d)]
            ch += [g.ifft(1j * g.xi_d[k] * uh[j]) for k in range(d) for j in range(d)]
            if f is not None:
                fv = resolve(f, float(t))
                ch += [np.asarray(fv.components[a]) for a in range(d)] if fv is not None else [np.zeros(g.shape)] * d
            if gauge:
                ch.append(_gauge_integrand(float(t), fld))
            fine, up = upsample(np.stack(ch), g, factor)
            rows.append(up.reshape(up.shape[0], -1))
        # (times, channels, nodes) -> (times, nodes, channels)
        return fine, np.ascontiguousarray(np.stack(rows).transpose(0, 2, 1))

    def noise(self, stream: RngStream, count: int, noise_steps: int | None = None) -> np.ndarray:
        """Increments ``sqrt(nu) dW`` of shape ``(count, n_steps, d)``.

        With ``noise_steps`` a multiple of ``n_steps`` the increments are drawn
        on the finer partition and summed, so runs at different step counts
        driven by the same stream see the same Brownian path.
        """
        fine = self.n_steps if noise_steps is None else int(noise_steps)
        if fine % self.n_steps:
            raise ValueError("noise_steps must be a multiple of n_steps")
        r = fine // self.n_steps
        z = stream.normal((count, fine, self.d)) * np.sqrt(self.nu * self.dt / r)
        return z.reshape(count, self.n_steps, r, self.d).sum(axis=2)

    def run(self, points: np.ndarray, incr: np.ndarray, diag: bool = False, transport: bool = True):
        points = np.ascontiguousarray(points, dtype=float)
        if diag and points.shape[0] != incr.shape[0]:
            raise ValueError("independent noise needs one increment row per start point")
        return _flow_kernel(
            points, np.ascontiguousarray(incr), diag, np.asarray(self.u.times, dtype=float), self.t_start, self.dt,
            self.chans, self.Gf, self.fine.n, self.fine.L, self.d, self.has_f, self.has_q, transport,
        )


def _points(points, d: int) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] != d:
        raise ValueError(f"points must have shape (P, {d})")
    return p


def simulate_flow(
    u: SpaceTimeField,
    t_start: float,
    points: np.ndarray,
    n_steps: int,
    M: int,
    stream: RngStream,
    nu: float,
    G: VectorField | None = None,
    f=None,
    gauge: bool = False,
    upsample_factor: int = 2,
    common_noise: bool = True,
    transport: bool = True,
    noise_steps: int | None = None,
) -> FlowSample:
    """Simulate ``M`` paths per start point over ``[t_start, T]``.

    ``common_noise`` shares one Brownian path per sample across all start
    points; otherwise every (sample, point) pair gets its own path.  ``nu = 0``
    gives the deterministic flow and ``transport=False`` skips the Jacobian.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    flow = _Flow(u, t_start, n_steps, nu, G, f, gauge, upsample_factor)
    pts = _points(points, flow.d)
    P = pts.shape[0]
    if common_noise:
        pay, XT, det, q = flow.run(pts, flow.noise(stream, M, noise_steps), transport=transport)
    else:
        rep = np.repeat(pts, M, axis=0)
        pay, XT, det, q = flow.run(rep, flow.noise(stream, M * P, noise_steps), diag=True, transport=transport)
        pay, XT = (a.reshape(P, M, flow.d).transpose(1, 0, 2) for a in (pay, XT))
        det, q = (a.reshape(P, M).T for a in (det, q))
    if transport and np.any(det <= 0):
        warnings.warn("Jacobian determinant became nonpositive on some paths; the flow is under-resolved", RuntimeWarning, stacklevel=2)
    return FlowSample(XT, det, pay, q, float(t_start), int(n_steps))


@dataclass(frozen=True)
class GaugeEstimate:
    """Monte Carlo mean and standard error of the gauge scalar."""

    mean: ScalarField
    stderr: ScalarField
    samples: int


@dataclass(frozen=True)
class WebberResult:
    """Velocity recovered from the Lagrangian representation.

    ``estimate.mean`` is the Leray projection of the sample mean; its
    ``stderr`` is the pointwise standard error of the unprojected payload,
    which bounds the projected error since the projection is an L2
    contraction.  ``raw`` is the unprojected estimate of ``Ybar`` and
    ``gauge`` the optional gauge scalar ``v`` from the same paths;
    ``decomposition`` estimates ``Ybar + grad v`` sample by sample, whose
    mean should reproduce ``u`` without any projection.
    """

    estimate: McEstimate
    raw: McEstimate
    gauge: GaugeEstimate | None
    decomposition: McEstimate | None
    n_steps: int
    det_min: float

    def relative_gap(self, reference: VectorField) -> float:
        return l2_norm(self.estimate.mean - reference) / l2_norm(reference)

    def relative_stderr(self, reference: VectorField) -> float:
        """L2 norm of the pointwise standard error relative to ``reference``."""
        return l2_norm(self.estimate.stderr) / l2_norm(reference)


def webber_velocity(
    G: VectorField,
    u: SpaceTimeField,
    nu: float,
    t: float,
    M: int,
    n_steps: int,
    stream: RngStream,
    f=None,
    eval_grid: Grid | None = None,
    upsample_factor: int = 2,
    batch_size: int = 1000,
    noise_steps: int | None = None,
    with_gauge: bool = False,
) -> WebberResult:
    """``P E[J_T G(X_T) + int J f ds]`` on ``eval_grid`` (default: the grid of ``u``).

    Every sample drives all evaluation points with one Brownian path; batch
    ``b`` uses ``stream.split(b)`` and batches are combined by tree reduction,
    so results depend only on ``M``, ``batch_size`` and the stream.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    g = u.grid
    eg = g if eval_grid is None else eval_grid
    if eg.dim != g.dim or not np.isclose(eg.L, g.L):
        raise ValueError("eval_grid must share dimension and period with u")
    flow = _Flow(u, t, n_steps, nu, G, f, with_gauge, upsample_factor)
    pts = eg.points()
    counts = [batch_size] * (M // batch_size) + ([M % batch_size] if M % batch_size else [])
    parts, gparts, dparts = [], [], []
    det_min = np.inf
    for b, cnt in enumerate(counts):
        pay, _, det, q = flow.run(pts, flow.noise(stream.split(b), cnt, noise_steps))
        det_min = min(det_min, float(det.min()))
        parts.append(_reduce_array(pay.transpose(0, 2, 1).reshape((cnt, eg.dim) + eg.shape)))
        if with_gauge:
            qf = q.reshape((cnt,) + eg.shape)
            gparts.append(_reduce_array(qf[:, None]))
            qh = np.fft.fftn(qf, axes=tuple(range(1, eg.dim + 1)))
            grad = np.stack([np.fft.ifftn(1j * xi * qh, axes=tuple(range(1, eg.dim + 1))).real for xi in eg.xi_d], axis=1)
            dparts.append(_reduce_array(pay.transpose(0, 2, 1).reshape((cnt, eg.dim) + eg.shape) + grad))
    if det_min <= 0:
        warnings.warn("Jacobian determinant became nonpositive on some paths; the flow is under-resolved", RuntimeWarning, stacklevel=2)
    raw = _tree(parts).to_estimate(eg)
    proj = McEstimate(leray_project(raw.mean), raw.stderr, raw.samples)
    gauge = decomposition = None
    if with_gauge:
        decomposition = _tree(dparts).to_estimate(eg)
        gp = _tree(gparts)
        se = np.sqrt(np.maximum(gp.m2, 0.0) / (gp.n - 1) / gp.n)
        gauge = GaugeEstimate(ScalarField(eg, gp.mean[0]), ScalarField(eg, se[0]), gp.n)
    return WebberResult(proj, raw, gauge, decomposition, int(n_steps), det_min)


def gauge_scalar(
    u: SpaceTimeField,
    nu: float,
    t: float,
    M: int,
    n_steps: int,
    stream: RngStream,
    eval_grid: Grid | None = None,
    upsample_factor: int = 2,
    batch_size: int = 1000,
) -> GaugeEstimate:
    """``v(t, x) = E int_t^T (p - |u|^2/2)(s, X_s) ds`` with ``u = Ybar + grad v``."""
    zero = VectorField.zeros(u.grid)
    res = webber_velocity(zero, u, nu, t, M, n_steps, stream, eval_grid=eval_grid, upsample_factor=upsample_factor, batch_size=batch_size, with_gauge=True)
    return res.gauge


@dataclass(frozen=True)
class MeasureReport:
    """Cell occupation of pushed-forward seed points against the uniform law."""

    counts: np.ndarray
    n_points: int
    cells: int
    z: np.ndarray
    sigma: float
    det_mean: float

    @property
    def z_max(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def passed(self) -> bool:
        return self.z_max <= self.sigma


def measure_preservation_check(
    u: SpaceTimeField,
    nu: float,
    t: float,
    n_points: int,
    n_steps: int,
    stream: RngStream,
    cells: int = 8,
    sigma: float = 5.0,
    upsample_factor: int = 2,
) -> MeasureReport:
    """Push a uniform seed lattice of at least ``n_points`` points to ``T`` and histogram it.

    Seeds carry independent noise.  Each cell count is compared with the
    binomial law of ``n_points`` uniform draws; a lattice is less variable
    than iid draws, so the binomial band is conservative.  For compressible
    velocities the report is informational.
    """
    g = u.grid
    d = g.dim
    side = max(1, int(np.ceil(n_points ** (1.0 / d) - 1e-9)))
    axis = (np.arange(side) + 0.5) * g.L / side
    seeds = np.stack([c.ravel() for c in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
    flow = _Flow(u, t, n_steps, nu, None, None, False, upsample_factor)
    P = seeds.shape[0]
    _, XT, det, _ = flow.run(seeds, flow.noise(stream, P), diag=True)
    idx = np.floor(np.mod(XT[:, 0, :], g.L) / g.L * cells).astype(np.int64) % cells
    counts = np.zeros((cells,) * d, dtype=np.int64)
    np.add.at(counts, tuple(idx.T), 1)
    p = 1.0 / cells**d
    z = (counts - P * p) / np.sqrt(P * p * (1 - p))
    return MeasureReport(counts, P, cells, z, float(sigma), float(det.mean()))
