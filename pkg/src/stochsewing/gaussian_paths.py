"""
Gaussian driving noise on a uniform time grid.

Brownian motion, fractional Brownian motion (exact Cholesky sampler and a
Volterra sampler that keeps the underlying Wiener increments), and Poisson
jump times. The Volterra route exposes conditional means E[B_t | F_s], which
the averaged-drift germs need.

Conventions
-----------
* ``fbm_values`` has shape ``(n_paths, n_steps + 1, dim)``.
* ``w_increments`` has shape ``(n_paths, n_steps, dim)``.
* Random streams are drawn per block of ``BLOCK_PATHS`` paths, keyed by
  ``(seed, block index)``, so outputs do not depend on the worker count.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, linalg
from scipy.interpolate import CubicSpline
from scipy.special import beta as beta_fn
from scipy.special import betaincc, gamma, roots_legendre

BLOCK_PATHS = 256

# near-diagonal and near-origin cells that get the singular basis function
NEAR_DIAG = 8
NEAR_ORIGIN = 8


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a formula."""


# ---------------------------------------------------------------------------
# grids and random streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t1 > self.t0 or self.t0 < 0:
            raise ValueError("need 0 <= t0 < t1")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @cached_property
    def points(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t, tol: float = 1e-9) -> np.ndarray | int:
        """Grid index of time(s) ``t``; raises if a time is off the grid."""
        x = (np.asarray(t, dtype=float) - self.t0) / self.dt
        idx = np.rint(x).astype(np.int64)
        if np.any(np.abs(x - idx) > tol * max(1.0, self.n_steps)) or np.any(idx < 0) \
                or np.any(idx > self.n_steps):
            raise ValueError(f"time(s) {t!r} not on the grid")
        return int(idx) if idx.ndim == 0 else idx


def block_rngs(seed: int, n_paths: int, tag: int = 0):
    """Yield ``(start, stop, Generator)`` for consecutive path blocks."""
    for b, start in enumerate(range(0, n_paths, BLOCK_PATHS)):
        stop = min(start + BLOCK_PATHS, n_paths)
        yield start, stop, np.random.default_rng([int(seed), int(tag), b])


def _fill_blocks(out: np.ndarray, seed: int, tag: int, draw, workers: int = 1):
    """Fill ``out[start:stop]`` with ``draw(rng, stop - start)`` per block."""
    jobs = list(block_rngs(seed, out.shape[0], tag))

    def run(job):
        start, stop, rng = job
        out[start:stop] = draw(rng, stop - start)

    if workers <= 1:
        for job in jobs:
            run(job)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, jobs))
    return out


# ---------------------------------------------------------------------------
# fBm kernel quantities
# ---------------------------------------------------------------------------

def _check_hurst(H, upper=1.0):
    if not (0.0 < H < upper or (upper == 0.5 and H == 0.5)):
        raise DomainError(f"Hurst parameter {H} outside its domain")


def fbm_covariance(H: float, s: float, t: float) -> float:
    """Scalar covariance factor E[B_s B_t] of a standard fBm."""
    _check_hurst(H)
    if s < 0 or t < 0:
        raise DomainError("times must be nonnegative")
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


def c_hurst(H: float) -> float:
    return math.sqrt(2 * H * gamma(1.5 - H) / (gamma(H + 0.5) * gamma(2 - 2 * H)))


def _inner_integral_quad(H: float, t: float, s: float) -> float:
    # int_s^t u^{H-3/2} (u-s)^{H-1/2} du with u = s + v^2
    def g(v):
        u = s + v * v
        return 2.0 * v ** (2 * H) * u ** (H - 1.5)

    val, _ = integrate.quad(g, 0.0, math.sqrt(t - s), epsabs=0.0, epsrel=1e-10, limit=200)
    return val


def kernel_KH(H: float, t: float, s: float) -> float:
    """Volterra kernel K_H(t, s) of fBm, evaluated by adaptive quadrature.

    Valid for 0 < s < t and H in (0, 1/2]; equals 1 at H = 1/2.
    """
    _check_hurst(H, 0.5)
    if not 0 < s < t:
        raise DomainError("kernel needs 0 < s < t")
    if H == 0.5:
        return 1.0
    a = H - 0.5
    first = (t / s) ** a * (t - s) ** a
    second = a * s ** (-a) * _inner_integral_quad(H, t, s)
    return c_hurst(H) * (first - second)


@lru_cache(maxsize=32)
def _tail_spline(H: float) -> CubicSpline:
    # betaincc(1-2H, H+1/2, rho) tabulated in u with rho = sin^2(pi u / 2)
    u = np.linspace(0.0, 1.0, 2 ** 15 + 1)
    return CubicSpline(u, betaincc(1 - 2 * H, H + 0.5, np.sin(0.5 * np.pi * u) ** 2))


def kernel_closed(H: float, t, r, t_minus_r=None, fast: bool = False) -> np.ndarray:
    """Vectorised K_H(t, r) through the regularised incomplete beta function.

    ``t_minus_r`` may be passed to avoid cancellation when r is close to t.
    ``fast`` reads the incomplete beta from a cached spline (relative error
    ~1e-13 away from the endpoints r = 0 and r = t).
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if H == 0.5:
        return np.ones(np.broadcast(t, r).shape)
    a = H - 0.5
    tmr = t - r if t_minus_r is None else np.asarray(t_minus_r, dtype=float)
    p, q = 1 - 2 * H, H + 0.5
    rho = np.clip(r / t, 0.0, 1.0)
    if fast:
        tail = _tail_spline(H)(np.arcsin(np.sqrt(rho)) * (2 / np.pi))
    else:
        tail = betaincc(p, q, rho)
    return c_hurst(H) * ((t / r) ** a * tmr ** a - a * beta_fn(p, q) * r ** a * tail)


def sigma_H(H: float, s: float, t: float) -> float:
    """Conditional standard deviation sqrt(int_s^t K_H(t, r)^2 dr)."""
    _check_hurst(H, 0.5)
    if not 0 <= s <= t:
        raise DomainError("need 0 <= s <= t")
    if s == t:
        return 0.0
    if H == 0.5:
        return math.sqrt(t - s)
    a = H - 0.5
    # divide out the algebraic endpoint singularities and let QAWS handle them
    left = 2 * a if s == 0 else 0.0

    def g(r):
        # QAWS may probe the endpoints themselves
        r = min(max(r, 1e-300), t * (1 - 1e-15))
        k = kernel_closed(H, t, r, t - r)
        w = (t - r) ** (2 * a) * (r ** left if left else 1.0)
        return float(k * k / w)

    val, _ = integrate.quad(g, s, t, weight="alg", wvar=(left, 2 * a),
                            epsabs=0.0, epsrel=1e-10, limit=200)
    return math.sqrt(val)


# ---------------------------------------------------------------------------
# path bundles
# ---------------------------------------------------------------------------

@dataclass
class PathBundle:
    grid: TimeGrid
    dim: int
    n_paths: int
    w_increments: Optional[np.ndarray] = None
    fbm_values: Optional[np.ndarray] = None
    hurst: Optional[float] = None
    intensity: Optional[float] = None
    jump_times: Optional[np.ndarray] = None       # flat, sorted within each path
    jump_offsets: Optional[np.ndarray] = None     # (n_paths + 1,) CSR offsets
    aux_noise: Optional[np.ndarray] = None        # (n_paths, n_steps, dim)
    aux_origin: Optional[np.ndarray] = None       # (n_paths, dim)
    model: Optional["VolterraFbm"] = field(default=None, repr=False)

    def brownian_values(self) -> np.ndarray:
        if self.w_increments is None:
            raise ValueError("bundle has no Brownian increments")
        out = np.zeros((self.n_paths, self.grid.n_steps + 1, self.dim))
        np.cumsum(self.w_increments, axis=1, out=out[:, 1:])
        return out

    def path_jumps(self, p: int) -> np.ndarray:
        return self.jump_times[self.jump_offsets[p]:self.jump_offsets[p + 1]]

    def poisson_counts(self) -> np.ndarray:
        """N(t_i) for every path and grid point, shape (n_paths, n_steps + 1)."""
        if self.jump_offsets is None:
            raise ValueError("bundle has no Poisson jumps")
        g = self.grid
        counts = np.zeros((self.n_paths, g.n_steps + 1), dtype=np.int64)
        owner = np.repeat(np.arange(self.n_paths), np.diff(self.jump_offsets))
        # a jump at time tau is counted at every grid point t_i >= tau
        cell = np.ceil((self.jump_times - g.t0) / g.dt - 1e-12).astype(np.int64)
        np.add.at(counts, (owner, np.clip(cell, 0, g.n_steps)), 1)
        return np.cumsum(counts, axis=1)

    # -- binary layout: little-endian, fixed header then arrays ------------
    _MAGIC = b"PBND"

    def to_bytes(self) -> bytes:
        flags = (self.w_increments is not None) | (self.fbm_values is not None) << 1 \
            | (self.jump_offsets is not None) << 2 | (self.aux_noise is not None) << 3
        hdr = struct.pack("<4sIIIIdddd", self._MAGIC, 1, self.dim, self.grid.n_steps,
                          self.n_paths, np.nan if self.hurst is None else self.hurst,
                          self.grid.t0, self.grid.t1,
                          np.nan if self.intensity is None else self.intensity)
        buf = io.BytesIO()
        buf.write(hdr)
        buf.write(struct.pack("<I", flags))
        for arr in (self.w_increments, self.fbm_values):
            if arr is not None:
                buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if self.jump_offsets is not None:
            buf.write(np.ascontiguousarray(self.jump_offsets, dtype="<i8").tobytes())
            buf.write(np.ascontiguousarray(self.jump_times, dtype="<f8").tobytes())
        if self.aux_noise is not None:
            buf.write(np.ascontiguousarray(self.aux_noise, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(self.aux_origin, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PathBundle":
        hsize = struct.calcsize("<4sIIIIdddd")
        magic, _ver, dim, n, npaths, H, t0, t1, lam = struct.unpack_from("<4sIIIIdddd", data)
        if magic != cls._MAGIC:
            raise ValueError("not a path bundle")
        (flags,) = struct.unpack_from("<I", data, hsize)
        pos = hsize + 4

        def take(count, dtype="<f8"):
            nonlocal pos
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).copy()
            pos += arr.nbytes
            return arr

        grid = TimeGrid(t0, t1, n)
        b = cls(grid, dim, npaths, hurst=None if np.isnan(H) else H,
                intensity=None if np.isnan(lam) else lam)
        if flags & 1:
            b.w_increments = take(npaths * n * dim).reshape(npaths, n, dim)
        if flags & 2:
            b.fbm_values = take(npaths * (n + 1) * dim).reshape(npaths, n + 1, dim)
        if flags & 4:
            b.jump_offsets = take(npaths + 1, "<i8")
            b.jump_times = take(int(b.jump_offsets[-1]))
        if flags & 8:
            b.aux_noise = take(npaths * n * dim).reshape(npaths, n, dim)
            b.aux_origin = take(npaths * dim).reshape(npaths, dim)
        if b.hurst is not None and b.aux_noise is not None:
            b.model = VolterraFbm(b.hurst, grid)
        return b


def sample_brownian(grid: TimeGrid, dim: int, n_paths: int, seed: int,
                    workers: int = 1) -> PathBundle:
    shape = (grid.n_steps, dim)
    sd = math.sqrt(grid.dt)
    w = np.empty((n_paths,) + shape)
    _fill_blocks(w, seed, 0, lambda rng, k: sd * rng.standard_normal((k,) + shape), workers)
    return PathBundle(grid, dim, n_paths, w_increments=w)


def sample_poisson(intensity: float, grid: TimeGrid, n_paths: int, seed: int) -> PathBundle:
    """Jump times of a rate-``intensity`` Poisson process on [t0, t1]."""
    if intensity < 0:
        raise DomainError("intensity must be >= 0")
    horizon = grid.t1 - grid.t0
    chunks, counts = [], np.zeros(n_paths, dtype=np.int64)
    for start, stop, rng in block_rngs(seed, n_paths, tag=7):
        for p in range(start, stop):
            if intensity == 0:
                times = np.empty(0)
            else:
                # exponential spacings; draw until the horizon is passed
                gaps = rng.exponential(1.0 / intensity, size=int(intensity * horizon * 2) + 8)
                cum = np.cumsum(gaps)
                while cum[-1] <= horizon:
                    more = np.cumsum(rng.exponential(1.0 / intensity, size=gaps.size))
                    cum = np.concatenate([cum, cum[-1] + more])
                times = grid.t0 + cum[cum <= horizon]
            chunks.append(times)
            counts[p] = times.size
    offsets = np.concatenate([[0], np.cumsum(counts)])
    flat = np.concatenate(chunks) if chunks else np.empty(0)
    return PathBundle(grid, 1, n_paths, intensity=intensity,
                      jump_times=flat, jump_offsets=offsets)


# ---------------------------------------------------------------------------
# fBm: exact Cholesky sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FbmModel:
    """Covariance data of fBm on a grid starting at zero."""
    hurst: float
    grid: TimeGrid

    def __post_init__(self):
        _check_hurst(self.hurst)
        if self.grid.t0 != 0:
            raise ValueError("fBm grids start at t0 = 0")

    @cached_property
    def cov(self) -> np.ndarray:
        t = self.grid.points
        H2 = 2 * self.hurst
        return 0.5 * (t[:, None] ** H2 + t[None, :] ** H2 - np.abs(t[:, None] - t[None, :]) ** H2)

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower factor of the covariance; row/column 0 (B_0 = 0) is zero."""
        c = self.cov[1:, 1:]
        try:
            low = linalg.cholesky(c, lower=True)
        except linalg.LinAlgError:
            jitter = 1e-12 * np.max(np.diag(c))
            low = linalg.cholesky(c + jitter * np.eye(c.shape[0]), lower=True)
        out = np.zeros_like(self.cov)
        out[1:, 1:] = low
        return out

    @cached_property
    def kh_table(self) -> np.ndarray:
        """K_H(t_i, t_j) for 0 < j < i, NaN elsewhere (H <= 1/2)."""
        t = self.grid.points
        n = t.size
        out = np.full((n, n), np.nan)
        i, j = np.tril_indices(n, -1)
        keep = j > 0
        i, j = i[keep], j[keep]
        out[i, j] = kernel_closed(self.hurst, t[i], t[j], t[i] - t[j])
        return out

    @cached_property
    def sigma_table(self) -> np.ndarray:
        """sigma_H(t_j, t_i) for j <= i (zero on the diagonal)."""
        t = self.grid.points
        n = t.size
        out = np.zeros((n, n))
        H = self.hurst
        # self-similarity: sigma(s, t) = t^H sigma(s / t, 1)
        for i in range(1, n):
            for j in range(i):
                out[i, j] = t[i] ** H * sigma_H(H, t[j] / t[i], 1.0)
        return out


def sample_fbm_cholesky(H: float, grid: TimeGrid, dim: int, n_paths: int, seed: int,
                        workers: int = 1) -> PathBundle:
    model = FbmModel(H, grid)
    low = model.chol
    n1 = grid.n_steps + 1
    vals = np.empty((n_paths, n1, dim))

    def draw(rng, k):
        z = rng.standard_normal((k, n1, dim))
        return np.einsum("ij,pjd->pid", low, z)

    _fill_blocks(vals, seed, 1, draw, workers)
    vals[:, 0] = 0.0
    return PathBundle(grid, dim, n_paths, fbm_values=vals, hurst=H)


# ---------------------------------------------------------------------------
# fBm: Volterra sampler with cell-wise singular basis
# ---------------------------------------------------------------------------

def _tanh_sinh(n_half: int = 24, h: float = 0.14):
    """Nodes x, 1-x and weights of a tanh-sinh rule on [0, 1]."""
    u = h * np.arange(-n_half, n_half + 1)
    z = math.pi * np.sinh(u)
    x = 1.0 / (1.0 + np.exp(-z))
    xc = 1.0 / (1.0 + np.exp(z))
    w = h * math.pi * np.cosh(u) * x * xc
    return x, xc, w


class VolterraFbm:
    """Discretised Volterra representation B_t = int_0^t K_H(t, r) dW_r.

    On each cell the Wiener integral of K_H(t_i, .) is projected onto the
    span of {1, (t_{j+1} - r)^{H-1/2}} (plus r^{H-1/2} on the first cell).
    The constant mode is the Wiener increment itself; the other modes are
    extra independent Gaussians, used only for the ``NEAR_DIAG`` cells below
    each target time and the ``NEAR_ORIGIN`` first cells, where the kernel
    is singular. Elsewhere the cell average of the kernel is used.

    All coefficients scale as dt^{H - 1/2} * sqrt(dt) times a table that only
    depends on (H, n_steps), which is cached.
    """

    def __init__(self, hurst: float, grid: TimeGrid):
        _check_hurst(hurst, 0.5)
        if grid.t0 != 0:
            raise ValueError("fBm grids start at t0 = 0")
        self.hurst = hurst
        self.grid = grid
        scale = grid.dt ** (hurst - 0.5) * math.sqrt(grid.dt)
        c0, c1, c2 = _unit_volterra_tables(hurst, grid.n_steps)
        self.coef_w = c0 * scale          # (n+1, n): multiplies xi_j (unit normal)
        self.coef_aux = c1 * scale        # (n+1, n): multiplies aux_j
        self.coef_origin = c2 * scale     # (n+1,): multiplies the origin mode

    # variance of the discrete model -------------------------------------
    def variance(self, i: int) -> float:
        return float(np.sum(self.coef_w[i] ** 2) + np.sum(self.coef_aux[i] ** 2)
                     + self.coef_origin[i] ** 2)

    def cond_variance(self, k: int, i: int) -> float:
        """Var(B_{t_i} - E[B_{t_i} | F_{t_k}]) for the discrete model."""
        if k >= i:
            return 0.0
        v = np.sum(self.coef_w[i, k:i] ** 2) + np.sum(self.coef_aux[i, k:i] ** 2)
        if k == 0:
            v += self.coef_origin[i] ** 2
        return float(v)

    @cached_property
    def cond_variance_table(self) -> np.ndarray:
        """table[k, i] = cond_variance(k, i) for k <= i."""
        sq = self.coef_w ** 2 + self.coef_aux ** 2
        # reverse cumulative sums over cells j >= k
        rc = np.cumsum(sq[:, ::-1], axis=1)[:, ::-1]          # rc[i, k] = sum_{j>=k} sq[i, j]
        n1 = self.grid.n_steps + 1
        tab = np.zeros((n1, n1))
        for k in range(n1 - 1):
            tab[k, k + 1:] = rc[k + 1:, k]
        tab[0, :] += self.coef_origin ** 2
        tab[0, 0] = 0.0
        return tab

    # sampling ------------------------------------------------------------
    def draw_noise(self, n_paths: int, dim: int, seed: int, workers: int = 1):
        n = self.grid.n_steps
        xi = np.empty((n_paths, n, dim))
        aux = np.empty((n_paths, n, dim))
        org = np.empty((n_paths, dim))

        def draw(rng, k):
            return rng.standard_normal((k, 2 * n + 1, dim))

        buf = np.empty((n_paths, 2 * n + 1, dim))
        _fill_blocks(buf, seed, 2, draw, workers)
        xi[:] = buf[:, :n]
        aux[:] = buf[:, n:2 * n]
        org[:] = buf[:, 2 * n]
        return xi, aux, org

    def values(self, xi, aux, org, rows=None) -> np.ndarray:
        """B at grid rows (default all) from unit noises, shape (paths, rows, dim)."""
        rows = np.arange(self.grid.n_steps + 1) if rows is None else np.asarray(rows)
        out = np.einsum("ij,pjd->pid", self.coef_w[rows], xi)
        out += np.einsum("ij,pjd->pid", self.coef_aux[rows], aux)
        out += self.coef_origin[rows][None, :, None] * org[:, None, :]
        return out

    def cond_mean(self, bundle: PathBundle, k: int, rows) -> np.ndarray:
        """E[B_{t_i} | F_{t_k}] for i in ``rows`` (each >= k), shape (paths, len, dim)."""
        rows = np.atleast_1d(rows)
        if k == 0:
            return np.zeros((bundle.n_paths, rows.size, bundle.dim))
        xi = bundle.w_increments[:, :k] / math.sqrt(self.grid.dt)
        out = np.einsum("ij,pjd->pid", self.coef_w[rows, :k], xi)
        out += np.einsum("ij,pjd->pid", self.coef_aux[rows, :k], bundle.aux_noise[:, :k])
        out += self.coef_origin[rows][None, :, None] * bundle.aux_origin[:, None, :]
        return out


@lru_cache(maxsize=16)
def _unit_volterra_tables(H: float, n: int):
    """Coefficient tables on the unit-spacing grid t_i = i."""
    c0 = np.zeros((n + 1, n))
    c1 = np.zeros((n + 1, n))
    c2 = np.zeros(n + 1)
    if H == 0.5:
        for i in range(1, n + 1):
            c0[i, :i] = 1.0
        return c0, c1, c2
    a = H - 0.5
    # orthonormal modes on [0,1]: e0 = 1, e1 = ((1-x)^a - m1) / s1
    m1 = 1.0 / (1.0 + a)
    s1 = math.sqrt(1.0 / (1.0 + 2 * a) - m1 * m1)
    # origin mode: x^a orthogonalised against e0, e1
    m2 = 1.0 / (1.0 + a)
    p21 = (beta_fn(1 + a, 1 + a) - m1 * m2) / s1
    s2 = math.sqrt(1.0 / (1.0 + 2 * a) - m2 * m2 - p21 * p21)

    x, xc, w = _tanh_sinh()
    sing = xc ** a
    e1 = (sing - m1) / s1
    e2 = (x ** a - m2 - p21 * e1) / s2

    gx, gw = roots_legendre(3)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    for i in range(1, n + 1):
        j = np.arange(i)
        far = j[(j < i - NEAR_DIAG) & (j >= NEAR_ORIGIN)]
        near = j[(j >= i - NEAR_DIAG) | (j < NEAR_ORIGIN)]
        if far.size:
            r = far[:, None] + gx[None, :]
            c0[i, far] = kernel_closed(H, float(i), r, i - r, fast=True) @ gw
        k = kernel_closed(H, float(i), near[:, None] + x, (i - near - 1)[:, None] + xc)
        c0[i, near] = k @ w
        c1[i, near] = (k * e1) @ w
        c2[i] = (k[0] * e2) @ w
    return c0, c1, c2


def sample_fbm_volterra(H: float, grid: TimeGrid, dim: int, n_paths: int, seed: int,
                        workers: int = 1) -> PathBundle:
    """fBm through the Volterra representation; keeps the Wiener increments."""
    if H > 0.5:
        raise DomainError("Volterra sampler needs H <= 1/2")
    model = VolterraFbm(H, grid)
    xi, aux, org = model.draw_noise(n_paths, dim, seed, workers)
    vals = model.values(xi, aux, org)
    return PathBundle(grid, dim, n_paths, w_increments=xi * math.sqrt(grid.dt),
                      fbm_values=vals, hurst=H, aux_noise=aux, aux_origin=org, model=model)


def conditional_mean_fbm(bundle: PathBundle, s: float, t: float) -> np.ndarray:
    """E[B^H_t | F_s] per path, shape (n_paths, dim)."""
    if bundle.model is None or bundle.w_increments is None:
        raise ValueError("conditional means need a Volterra bundle")
    k = bundle.grid.index_of(s)
    i = bundle.grid.index_of(t)
    if k > i:
        raise ValueError("need s <= t")
    if k == i:
        return bundle.fbm_values[:, i].copy()
    return bundle.model.cond_mean(bundle, k, [i])[:, 0]
