"""
Heat semigroup on a periodic box [-L, L)^d (d = 1, 2), Besov-Hölder norm
estimates with a fixed probe dictionary, and Schauder-type exponent fits.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import BSpline

from .sewing import RateReport


@dataclass
class GridField:
    """Values on the periodic grid x_j = -L + j h, h = 2L / n_cells, per axis."""
    dim: int
    half_width: float
    n_cells: int
    values: np.ndarray
    time_slices: Optional[list] = None          # [(r, values), ...] sorted by r
    declared_class: dict = field(default_factory=lambda: {"kind": "bounded-continuous"})

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("fields live in dimension 1 or 2")
        if self.n_cells < 2 or self.n_cells & (self.n_cells - 1):
            raise ValueError("n_cells must be a power of two")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n_cells,) * self.dim:
            raise ValueError(f"values must have shape {(self.n_cells,) * self.dim}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n_cells)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    @classmethod
    def from_function(cls, func, dim: int, half_width: float, n_cells: int, **kw) -> "GridField":
        tmp = cls(dim, half_width, n_cells, np.zeros((n_cells,) * dim))
        return cls(dim, half_width, n_cells, func(*tmp.mesh()), **kw)

    def like(self, values) -> "GridField":
        return replace(self, values=np.asarray(values, dtype=float), time_slices=None)

    def same_grid(self, other: "GridField") -> bool:
        return (self.dim, self.half_width, self.n_cells) == (other.dim, other.half_width, other.n_cells)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lp_norm(self, p: float) -> float:
        if np.isinf(p):
            return self.sup()
        return float((np.sum(np.abs(self.values) ** p) * self.h ** self.dim) ** (1.0 / p))

    def mean(self) -> float:
        return float(self.values.mean())

    def interpolate(self, points: np.ndarray, order: int = 1) -> np.ndarray:
        """Periodic interpolation at points of shape (..., d) (or (...) if d = 1).

        ``order=1`` is multilinear; ``order=3`` uses cubic splines, which keeps
        finite differences in x consistent with the field's derivative.
        """
        pts = np.asarray(points, dtype=float)
        if self.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        u = (pts + self.half_width) / self.h
        if order == 3:
            coords = np.moveaxis(u, -1, 0).reshape(self.dim, -1)
            out = ndimage.map_coordinates(self._spline_coefs, coords, order=3,
                                          mode="grid-wrap", prefilter=False)
            return out.reshape(u.shape[:-1])
        if order != 1:
            raise ValueError("interpolation order must be 1 or 3")
        base = np.floor(u)
        frac = u - base
        base = base.astype(np.int64) % self.n_cells
        n = self.n_cells
        if self.dim == 1:
            i0 = base[..., 0]
            w = frac[..., 0]
            v = self.values
            return (1 - w) * v[i0] + w * v[(i0 + 1) % n]
        i0, j0 = base[..., 0], base[..., 1]
        a, b = frac[..., 0], frac[..., 1]
        v = self.values
        i1, j1 = (i0 + 1) % n, (j0 + 1) % n
        return ((1 - a) * (1 - b) * v[i0, j0] + a * (1 - b) * v[i1, j0]
                + (1 - a) * b * v[i0, j1] + a * b * v[i1, j1])

    @cached_property
    def _spline_coefs(self) -> np.ndarray:
        return ndimage.spline_filter(self.values, order=3, mode="grid-wrap")

    # -- serialisation ------------------------------------------------------
    _MAGIC = b"GFLD"

    def to_bytes(self) -> bytes:
        hdr = struct.pack("<4sIIId", self._MAGIC, 1, self.dim, self.n_cells, self.half_width)
        return hdr + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        magic, _ver, dim, n, L = struct.unpack_from("<4sIIId", data)
        if magic != cls._MAGIC:
            raise ValueError("not a grid field")
        off = struct.calcsize("<4sIIId")
        vals = np.frombuffer(data, dtype="<f8", count=n ** dim, offset=off).reshape((n,) * dim)
        return cls(dim, L, n, vals.copy())

    def to_csv(self) -> str:
        if self.dim != 1:
            raise ValueError("CSV export is for 1-d fields")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "value"])
        for x, v in zip(self.axis, self.values):
            w.writerow([repr(float(x)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **kw) -> "GridField":
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0] and rows[0][0].strip().lower() == "x":
            rows = rows[1:]
        xs = np.array([float(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
        n = xs.size
        h = xs[1] - xs[0]
        if not np.allclose(np.diff(xs), h, rtol=1e-9, atol=1e-12):
            raise ValueError("CSV abscissae must be uniform")
        half = n * h / 2.0
        if abs(xs[0] + half) > 1e-9 * max(1.0, half):
            raise ValueError("CSV grid must start at -L")
        return cls(1, half, n, vals, **kw)


@dataclass(frozen=True)
class HeatOp:
    """Convolution with the centred Gaussian of covariance sigma * I."""
    sigma: float
    dim: int
    half_width: float
    n_cells: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @classmethod
    def for_field(cls, sigma: float, f: GridField) -> "HeatOp":
        return cls(sigma, f.dim, f.half_width, f.n_cells)

    @cached_property
    def multiplier(self) -> np.ndarray:
        return np.exp(-0.5 * self.sigma * _ksq(self.dim, self.half_width, self.n_cells))


def _wavenumbers(half_width: float, n: int, real_last: bool = False) -> np.ndarray:
    h = 2.0 * half_width / n
    if real_last:
        return 2 * np.pi * np.fft.rfftfreq(n, d=h)
    return 2 * np.pi * np.fft.fftfreq(n, d=h)


def _ksq(dim, half_width, n):
    kr = _wavenumbers(half_width, n, True)
    if dim == 1:
        return kr ** 2
    k = _wavenumbers(half_width, n)
    return k[:, None] ** 2 + kr[None, :] ** 2


def heat_apply(op: HeatOp, f: GridField) -> GridField:
    if (op.dim, op.half_width, op.n_cells) != (f.dim, f.half_width, f.n_cells):
        raise ValueError("heat operator and field live on different grids")
    if op.sigma == 0:
        return f.like(f.values.copy())
    spec = np.fft.rfftn(f.values) * op.multiplier
    return f.like(np.fft.irfftn(spec, s=f.values.shape, axes=range(f.dim)))


def heat(sigma: float, f: GridField) -> GridField:
    return heat_apply(HeatOp.for_field(sigma, f), f)


def spectral_gradient(f: GridField, sigma: float = 0.0) -> list[GridField]:
    """Components of grad P_sigma f, computed in Fourier space.

    The Nyquist mode is dropped from derivatives so that real fields stay real.
    """
    n = f.n_cells
    spec = np.fft.rfftn(f.values)
    if sigma:
        spec = spec * HeatOp.for_field(sigma, f).multiplier
    kr = _wavenumbers(f.half_width, n, True).copy()
    kr[-1] = 0.0 if n % 2 == 0 else kr[-1]
    if f.dim == 1:
        return [f.like(np.fft.irfft(1j * kr * spec, n=n))]
    k = _wavenumbers(f.half_width, n).copy()
    k[n // 2] = 0.0
    gx = np.fft.irfftn(1j * k[:, None] * spec, s=(n, n), axes=(0, 1))
    gy = np.fft.irfftn(1j * kr[None, :] * spec, s=(n, n), axes=(0, 1))
    return [f.like(gx), f.like(gy)]


# ---------------------------------------------------------------------------
# Besov-Hölder norms with a finite probe dictionary
# ---------------------------------------------------------------------------

def _probe_profiles(r: int):
    """Compactly supported 1-d profiles on [-1, 1]: a B-spline of degree
    2r + 1 and its first r derivatives, each scaled to unit C^r norm."""
    deg = 2 * r + 1
    knots = np.linspace(-1.0, 1.0, deg + 2)
    base = BSpline.basis_element(knots, extrapolate=False)
    xs = np.linspace(-1, 1, 4001)
    profiles = []
    for k in range(r + 1):
        dk = base.derivative(k) if k else base
        norm = max(float(np.nanmax(np.abs((dk.derivative(j) if j else dk)(xs))))
                   for j in range(r + 1))
        profiles.append((dk, norm))
    return profiles


def besov_norm(f: GridField, gamma: float, r: int, lambdas: Sequence[float],
               center_stride: int = 8) -> float:
    """Lower estimate of sup_lambda sup_x sup_phi lambda^{-gamma} |<f, phi^lambda_x>|.

    The sup over test functions runs over a fixed dictionary (tensor
    products of the profiles from ``_probe_profiles`` in d = 2), the sup over
    x over every ``center_stride``-th grid point, and lambda over ``lambdas``.
    """
    if gamma > 0:
        raise ValueError("the probe estimator targets gamma <= 0")
    if r <= abs(gamma):
        raise ValueError("need r > |gamma|")
    h = f.h
    lams = sorted({float(l) for l in lambdas}, reverse=True)
    if any(l < 4 * h for l in lams):
        raise ValueError("lambda below the grid resolution (4 cells)")
    if any(l > f.half_width for l in lams):
        raise ValueError("lambda exceeds the box")
    profiles = _probe_profiles(r)
    spec_f = np.fft.rfftn(f.values)
    best = 0.0
    for lam in lams:
        # samples of each profile at offsets y - x on the periodic grid
        offs = f.axis + f.half_width
        offs = np.where(offs >= f.half_width, offs - 2 * f.half_width, offs)
        samples = []
        for prof, norm in profiles:
            v = np.nan_to_num(prof(offs / lam)) / norm / lam
            samples.append(v)
        if f.dim == 1:
            kernels = samples
        else:
            kernels = [np.outer(a, b) for a in samples for b in samples]
        for ker in kernels:
            # pairing(x) = sum_y f(y) phi((y - x)/lam) lam^-d h^d : correlation
            corr = np.fft.irfftn(spec_f * np.conj(np.fft.rfftn(ker)), s=f.values.shape,
                                axes=range(f.dim))
            corr *= h ** f.dim
            sl = (slice(None, None, center_stride),) * f.dim
            best = max(best, lam ** (-gamma) * float(np.max(np.abs(corr[sl]))))
    return best


def probe_pairing(f: GridField, r: int, which: int, lam: float, center: float) -> float:
    """Direct-summation pairing of a 1-d field with one dictionary element."""
    if f.dim != 1:
        raise ValueError("direct pairing is implemented for d = 1")
    prof, norm = _probe_profiles(r)[which]
    y = f.axis - center
    y = (y + f.half_width) % (2 * f.half_width) - f.half_width
    return float(np.sum(f.values * np.nan_to_num(prof(y / lam)) / norm / lam) * f.h)


# ---------------------------------------------------------------------------
# Schauder exponent fits
# ---------------------------------------------------------------------------

@dataclass
class SchauderResult:
    report: RateReport
    predicted: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.report.fitted_exponent - self.predicted) <= self.tolerance


def schauder_check(fields: Sequence[GridField], sigmas: Sequence[float], predicted: float,
                   gradient: bool = False, tolerance: float = 0.15,
                   label: str = "schauder") -> SchauderResult:
    """Fit sup-norms of P_sigma f (or of grad P_sigma f) against sigma.

    The sup-norm is averaged over ``fields`` before the fit.
    """
    sig = sorted({float(s) for s in sigmas}, reverse=True)
    if len(sig) < 4:
        raise ValueError("need at least 4 sigma levels")
    vals = []
    for s in sig:
        norms = []
        for f in fields:
            if gradient:
                comps = spectral_gradient(f, s)
                norms.append(float(np.max(np.sqrt(sum(c.values ** 2 for c in comps)))))
            else:
                norms.append(heat(s, f).sup())
        vals.append(float(np.mean(norms)))
    if min(vals) <= 0:
        raise ValueError("degenerate fit: zero sup-norm")
    rep = RateReport.from_values(sig, vals, np.inf, label=label,
                                 config={"gradient": gradient, "n_fields": len(fields)})
    return SchauderResult(rep, predicted, tolerance)


def gaussian_bump(dim: int, half_width: float, n_cells: int, width: float,
                  center: float = 0.0) -> GridField:
    """Unit-mass Gaussian bump of standard deviation ``width``."""
    def g(*xs):
        r2 = sum((x - center) ** 2 for x in xs)
        return np.exp(-0.5 * r2 / width ** 2) / (2 * np.pi * width ** 2) ** (dim / 2)
    return GridField.from_function(g, dim, half_width, n_cells,
                                   declared_class={"kind": "Lp", "p": 1.0})


def white_noise(dim: int, half_width: float, n_cells: int, seed: int) -> GridField:
    """Grid white noise: independent N(0, h^-d) cell values."""
    rng = np.random.default_rng([seed, 21])
    h = 2.0 * half_width / n_cells
    vals = rng.standard_normal((n_cells,) * dim) / h ** (dim / 2)
    return GridField(dim, half_width, n_cells, vals,
                     declared_class={"kind": "Besov", "nu": -dim / 2})
