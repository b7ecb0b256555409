"""
Averaging of irregular functions along fractional Brownian paths and SDEs
with singular drifts: exponent bookkeeping, the averaged germ built from
heat-smoothed fields and conditional means, a mollified Euler solver,
Girsanov weights and moment bounds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import signal, special
from scipy.integrate import quad

from .gaussian_paths import PathBundle, TimeGrid, VolterraFbm, sample_fbm_volterra
from .heat import GridField, heat, spectral_gradient
from .sewing import Germ, RateReport, estimate_lm, increment_exponent


class NumericalAbort(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------

class Exponents(NamedTuple):
    tau: float
    gamma: float
    weak: bool        # Hd/p + 1/q < 1/2
    strong: bool      # Hd/p + 1/q < 1/2 - H
    averaging: bool   # gamma > 1/2


def _inv(x) -> Fraction:
    if x == math.inf:
        return Fraction(0)
    if x < 1:
        raise ValueError("integrability exponents must be >= 1")
    return 1 / Fraction(x)


def exponents(H: float, d: int, p: float = math.inf, q: float = math.inf,
              nu: float = 0.0) -> Exponents:
    """tau = 1 - Hd/p - 1/q and gamma = 1 + H nu - 1/q with their condition flags.

    Rational inputs are combined with exact fractions before rounding.
    """
    Hf, nuf = Fraction(H).limit_denominator(10 ** 9), Fraction(nu).limit_denominator(10 ** 9)
    tau = 1 - Hf * d * _inv(p) - _inv(q)
    gamma = 1 + Hf * nuf - _inv(q)
    half = Fraction(1, 2)
    return Exponents(float(tau), float(gamma), tau > half, tau > half + Hf, gamma > half)


# ---------------------------------------------------------------------------
# averaged germ
# ---------------------------------------------------------------------------

def _as_fields(f) -> list[GridField]:
    return [f] if isinstance(f, GridField) else list(f)


class AveragedGerm:
    """A_{s,t} = int_s^t [P_{v(s,r)} f_r](E[B_r | F_s] + x) dr along a Volterra fBm.

    v(s, r) is the conditional variance of the discrete fBm model, so that
    the germ has E[delta A | F_s] = 0 up to interpolation error. The time
    integral is the composite trapezoid rule on the grid nodes of [s, t] at
    every scale. ``fields`` may be one GridField or a list (components);
    ``offsets`` has shape (n_x, d). Values have shape (n_x, n_components).
    """

    def __init__(self, fields, bundle: PathBundle, offsets=None, order: int = 3):
        self.fields = _as_fields(fields)
        d = self.fields[0].dim
        if bundle.model is None or bundle.aux_noise is None:
            raise ValueError("the averaged germ needs a Volterra bundle")
        if bundle.dim != d:
            raise ValueError("field and path dimensions differ")
        self.bundle = bundle
        self.model: VolterraFbm = bundle.model
        self.grid = bundle.grid
        self.offsets = np.zeros((1, d)) if offsets is None else np.asarray(offsets, float).reshape(-1, d)
        self.order = order
        self.var = self.model.cond_variance_table
        n = self.grid.n_steps
        dt = self.grid.dt
        # noise laid out as (cells, paths * d) for matrix products
        self._xi = np.ascontiguousarray(
            np.moveaxis(bundle.w_increments / math.sqrt(dt), 1, 0).reshape(n, -1))
        self._aux = np.ascontiguousarray(np.moveaxis(bundle.aux_noise, 1, 0).reshape(n, -1))
        self._cache: dict = {}
        for f in self.fields:
            if f.time_slices:
                raise NotImplementedError("time-dependent fields: pass one germ per slice")

    @property
    def value_shape(self):
        return (self.offsets.shape[0], len(self.fields))

    def cond_means(self, k: int, rows: np.ndarray) -> np.ndarray:
        """E[B_{t_i} | F_{t_k}] for i in rows, shape (paths, len(rows), d)."""
        P, d = self.bundle.n_paths, self.bundle.dim
        if k == 0:
            return np.zeros((P, rows.size, d))
        m = self.model
        out = m.coef_w[rows, :k] @ self._xi[:k] + m.coef_aux[rows, :k] @ self._aux[:k]
        out = out.reshape(rows.size, P, d).transpose(1, 0, 2)
        return out + m.coef_origin[rows][None, :, None] * self.bundle.aux_origin[:, None, :]

    def _smoothed(self, c: int, sigma: float) -> GridField:
        key = (c, sigma)
        got = self._cache.get(key)
        if got is None:
            got = heat(sigma, self.fields[c]) if sigma > 0 else self.fields[c]
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = got
        return got

    def _node_values(self, k: int, rows: np.ndarray, means: np.ndarray) -> np.ndarray:
        """[P_{v(k,i)} f](mean_i + x) for nodes i in rows: (paths, rows, n_x, n_comp)."""
        P = means.shape[0]
        out = np.empty((P, rows.size) + self.value_shape)
        for a, i in enumerate(rows):
            pts = means[:, a, None, :] + self.offsets[None, :, :]
            for c in range(len(self.fields)):
                fld = self._smoothed(c, float(self.var[k, i]))
                out[:, a, :, c] = fld.interpolate(pts, self.order)
        return out

    def integral(self, k: int, a: int, b: int) -> np.ndarray:
        """Trapezoid over nodes a..b of [P_{v(k,r)} f](E[B_r | F_k] + x), k <= a."""
        if b == a:
            return np.zeros((self.bundle.n_paths,) + self.value_shape)
        rows = np.arange(a, b + 1)
        vals = self._node_values(k, rows, self.cond_means(k, rows))
        w = np.full(rows.size, self.grid.dt)
        w[[0, -1]] *= 0.5
        return np.einsum("r,pr...->p...", w, vals)

    def finest(self, si: Optional[np.ndarray] = None) -> np.ndarray:
        """A_{t_i, t_{i+1}} for all cells (or cells ``si``) in one pass."""
        g = self.grid
        si = np.arange(g.n_steps) if si is None else np.asarray(si)
        B = self.bundle.fbm_values
        m = self.model
        P = self.bundle.n_paths
        out = np.empty((P, si.size) + self.value_shape)
        for a, i in enumerate(si):
            # E[B_{i+1} | F_i] drops the newest cell's contribution
            mean = B[:, i + 1] - m.coef_w[i + 1, i] * self.bundle.w_increments[:, i] / math.sqrt(g.dt) \
                - m.coef_aux[i + 1, i] * self.bundle.aux_noise[:, i]
            if i == 0:
                mean = mean - m.coef_origin[1] * self.bundle.aux_origin
            left = self._node_values(i, np.array([i]), B[:, i, None])
            right = self._node_values(i, np.array([i + 1]), mean[:, None])
            out[:, a] = 0.5 * g.dt * (left[:, 0] + right[:, 0])
        return out

    def germ(self, name: str = "averaged") -> Germ:
        P = self.bundle.n_paths

        def rule(si, ti):
            si, ti = np.atleast_1d(si), np.atleast_1d(ti)
            if np.all(ti - si == 1):
                return self.finest(si)
            return np.stack([self.integral(int(s), int(s), int(t)) for s, t in zip(si, ti)], axis=1)

        def lag(si, ui, ti):
            return np.stack([self.integral(int(s), int(u), int(t))
                             for s, u, t in zip(np.atleast_1d(si), np.atleast_1d(ui),
                                                np.atleast_1d(ti))], axis=1)

        return Germ(self.grid, P, self.value_shape, rule, rule, name, lag_rule=lag)

    def sewing_path(self) -> np.ndarray:
        """Finest-level running sums: the averaged integral at every grid time."""
        A = self.finest()
        out = np.zeros((A.shape[0], A.shape[1] + 1) + A.shape[2:])
        np.cumsum(A, axis=1, out=out[:, 1:])
        return out


def pathwise_integral(fields, bundle: PathBundle, offsets=None, order: int = 3) -> np.ndarray:
    """Running trapezoid integral of f(B_r + x) along the sampled fBm path."""
    flds = _as_fields(fields)
    d = flds[0].dim
    offs = np.zeros((1, d)) if offsets is None else np.asarray(offsets, float).reshape(-1, d)
    B = bundle.fbm_values
    vals = np.stack([f.interpolate(B[:, :, None, :] + offs[None, None], order) for f in flds], -1)
    dt = bundle.grid.dt
    out = np.zeros_like(vals)
    np.cumsum(0.5 * dt * (vals[:, 1:] + vals[:, :-1]), axis=1, out=out[:, 1:])
    return out


@dataclass
class AveragedFieldResult:
    path: np.ndarray                 # (paths, n+1, n_x, n_comp) sewing limits
    time_report: RateReport
    space_report: RateReport
    space_time_report: RateReport
    predicted_time: float
    predicted_space: float
    predicted_space_time: float


def averaged_field(f: GridField, bundle: PathBundle, nu: float, q: float, alpha: float,
                   gap_steps: Sequence[int], space_steps: Sequence[float], fixed_space: float,
                   m: float = 2, x0: float = 0.0) -> AveragedFieldResult:
    """Sewing limits of the averaged germ and their joint Hölder exponents.

    Time exponent: increments of the limit over gap g at a fixed x against g.
    Space exponent: differences between x0 and x0 + e over the whole horizon
    against e. Space-time exponent: differences at fixed e = ``fixed_space``
    against g, predicted gamma - H alpha.
    """
    H = bundle.hurst
    ex = exponents(H, f.dim, q=q, nu=nu)
    if not ex.averaging:
        raise ValueError(f"gamma = {ex.gamma:.3f} <= 1/2: averaged field is not defined by sewing")
    if ex.gamma <= 0.5 + H * alpha:
        raise ValueError("alpha too large for the joint estimate")
    es = sorted({float(e) for e in space_steps}, reverse=True)
    offs = [x0] + [x0 + e for e in es] + [x0 + fixed_space]
    offsets = np.zeros((len(offs), f.dim))
    offsets[:, 0] = offs
    germ = AveragedGerm(f, bundle, offsets)
    path = germ.sewing_path()[..., 0]                     # (paths, n+1, n_x)
    g = bundle.grid
    trep = increment_exponent(path[:, :, 0], g, gap_steps, m, label="averaged-time")
    T = path[:, -1]
    svals = [estimate_lm((T[:, 1 + j] - T[:, 0])[:, None], m) for j in range(len(es))]
    srep = RateReport.from_values(es, svals, m, label="averaged-space")
    diff = path[:, :, -1] - path[:, :, 0]
    strep = increment_exponent(diff, g, gap_steps, m, label="averaged-space-time")
    return AveragedFieldResult(path, trep, srep, strep, ex.gamma, alpha, ex.gamma - H * alpha)


@dataclass
class GradientExchange:
    steps: list
    residuals: list
    report: RateReport


def gradient_exchange_check(f: GridField, bundle: PathBundle, x: float,
                            steps: Sequence[float], m: float = 2) -> GradientExchange:
    """Central difference in x of the averaged field against the averaged gradient.

    Works on the first coordinate direction; residuals are L_m norms of the
    difference of the two sewing limits at the final time.
    """
    d = f.dim
    steps = sorted({float(h) for h in steps}, reverse=True)
    offs = np.zeros((1 + 2 * len(steps), d))
    offs[:, 0] = x
    for j, h in enumerate(steps):
        offs[1 + 2 * j, 0] = x + h
        offs[2 + 2 * j, 0] = x - h
    vals = AveragedGerm(f, bundle, offs).sewing_path()[:, -1, :, 0]
    grad = spectral_gradient(f)[0]
    gvals = AveragedGerm(grad, bundle, offs[:1]).sewing_path()[:, -1, 0, 0]
    res = []
    for j, h in enumerate(steps):
        fd = (vals[:, 1 + 2 * j] - vals[:, 2 + 2 * j]) / (2 * h)
        res.append(estimate_lm((fd - gvals)[:, None], m))
    rep = RateReport.from_values(steps, [max(r, 1e-300) for r in res], m, label="gradient-exchange")
    return GradientExchange(steps, res, rep)


# ---------------------------------------------------------------------------
# drifts
# ---------------------------------------------------------------------------

TABLE_RADIUS = 16.0
TABLE_STEP = 1e-3


def _mollified_table(raw: Callable[[np.ndarray], np.ndarray], delta: float):
    """P_delta raw on a uniform grid of [-TABLE_RADIUS, TABLE_RADIUS].

    Discrete Gaussian convolution on a grid that contains 0, so a jump at the
    origin is split evenly; Gauss-Hermite rules lose accuracy at jumps.
    """
    sd = math.sqrt(delta)
    k = max(1, int(math.ceil(10 * sd / TABLE_STEP)))
    ker = np.exp(-0.5 * (TABLE_STEP * np.arange(-k, k + 1) / sd) ** 2)
    ker /= ker.sum()
    m = int(round(TABLE_RADIUS / TABLE_STEP))
    ext = TABLE_STEP * np.arange(-m - k, m + k + 1)
    vals = signal.fftconvolve(raw(ext), ker, mode="valid")
    return ext[k:-k], vals


@dataclass
class Drift:
    """Drift b: R^d -> R^d with its heat-mollified version and Jacobian.

    ``smooth(x, delta)`` evaluates P_delta b at points of shape (paths, d);
    ``jacobian(x, delta)`` returns d(P_delta b)^j / dx_k as (paths, d, d)
    with index order [k, j], or None when not available.
    """
    kind: str
    dim: int
    smooth: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    p: float = math.inf
    q: float = math.inf
    bound: Optional[float] = None
    lipschitz: Optional[float] = None
    params: dict = field(default_factory=dict)


def _erf_smooth(scale):
    def b(x, delta):
        return -special.erf(x / math.sqrt(2 * (scale ** 2 + delta))) * np.ones_like(x)
    return b


def make_drift(kind: str, dim: int = 1, **params) -> Drift:
    """Closed-form drifts.

    zero, constant(value), linear(matrix, shift), sign(strength: b = -strength
    sign(x) per coordinate), clipped_power(exponent, level, strength: b =
    -strength sign(x) min(|x|^-exponent, level)), bump(amplitude, width,
    center), mixed_erf(scale, strength; d = 2 only).
    """
    if kind == "zero":
        return Drift(kind, dim, lambda x, dl: np.zeros_like(x),
                     lambda x, dl: np.zeros(x.shape + (dim,)), bound=0.0, lipschitz=0.0)
    if kind == "constant":
        c = np.broadcast_to(np.asarray(params.get("value", 1.0), float), (dim,)).copy()
        return Drift(kind, dim, lambda x, dl: np.broadcast_to(c, x.shape).copy(),
                     lambda x, dl: np.zeros(x.shape + (dim,)), bound=float(np.abs(c).max()),
                     lipschitz=0.0, params={"value": c.tolist()})
    if kind == "linear":
        A = np.asarray(params.get("matrix", -np.eye(dim)), float).reshape(dim, dim)
        c = np.asarray(params.get("shift", np.zeros(dim)), float).reshape(dim)
        return Drift(kind, dim, lambda x, dl: x @ A.T + c,
                     lambda x, dl: np.broadcast_to(A.T, x.shape[:-1] + (dim, dim)).copy(),
                     lipschitz=float(np.linalg.norm(A, 2)),
                     params={"matrix": A.tolist(), "shift": c.tolist()})
    if kind == "sign":
        k = float(params.get("strength", 1.0))

        def b(x, dl):
            if dl == 0:
                return -k * np.sign(x)
            return -k * special.erf(x / math.sqrt(2 * dl))

        def jac(x, dl):
            if dl == 0:
                raise ValueError("sign drift has no Jacobian without mollification")
            g = -k * np.sqrt(2 / (math.pi * dl)) * np.exp(-x ** 2 / (2 * dl))
            return g[..., :, None] * np.eye(dim)

        return Drift(kind, dim, b, jac, bound=k, params={"strength": k})
    if kind == "clipped_power":
        beta = float(params.get("exponent", 0.25))
        level = float(params.get("level", 16.0))
        k = float(params.get("strength", 1.0))

        def raw(x):
            ax = np.abs(x)
            with np.errstate(divide="ignore"):
                mag = np.minimum(np.where(ax > 0, ax ** -beta, np.inf), level)
            return -k * np.sign(x) * mag

        tables: dict = {}

        def b(x, dl):
            if dl == 0:
                return raw(x)
            if dl not in tables:
                # P_dl b is smooth: tabulate once per mollification level
                tables.clear()
                tables[dl] = _mollified_table(raw, dl)
            gx, gv = tables[dl]
            inside = np.abs(x) < TABLE_RADIUS
            return np.where(inside, np.interp(x, gx, gv), raw(x))

        # |x|^-beta lies in L^p_loc for p < 1/beta; report the surrogate p = 1/beta
        return Drift(kind, dim, b, None, p=params.get("p", 1.0 / beta), bound=k * level,
                     params={"exponent": beta, "level": level, "strength": k})
    if kind == "bump":
        amp = float(params.get("amplitude", 1.0))
        w = float(params.get("width", 0.5))
        ctr = float(params.get("center", 0.0))

        def b(x, dl):
            s2 = w * w + dl
            return amp * math.sqrt(w * w / s2) * np.exp(-(x - ctr) ** 2 / (2 * s2))

        def jac(x, dl):
            s2 = w * w + dl
            g = -amp * math.sqrt(w * w / s2) * (x - ctr) / s2 * np.exp(-(x - ctr) ** 2 / (2 * s2))
            return g[..., :, None] * np.eye(dim)

        return Drift(kind, dim, b, jac, bound=amp, lipschitz=amp / (w * math.sqrt(math.e)),
                     params={"amplitude": amp, "width": w, "center": ctr})
    if kind == "mixed_erf":
        if dim != 2:
            raise ValueError("mixed_erf is a planar drift")
        scale = float(params.get("scale", 0.3))
        k = float(params.get("strength", 1.0))
        # b^1 = -k erf(<a1, x>/s), b^2 = -k erf(<a2, x>/s)
        Amat = np.array([[1.0, 0.5], [-0.5, 1.0]])

        def widths(dl):
            return np.sqrt(2 * (scale ** 2 + dl * np.sum(Amat ** 2, axis=1)))

        def b(x, dl):
            return -k * special.erf((x @ Amat.T) / widths(dl))

        def jac(x, dl):
            wv = widths(dl)
            z = (x @ Amat.T) / wv
            g = -k * 2 / math.sqrt(math.pi) * np.exp(-z ** 2) / wv     # (..., 2) per component j
            # d b^j / d x_k = g_j * A[j, k]; layout [k, j]
            return np.einsum("...j,jk->...kj", g, Amat)

        return Drift(kind, dim, b, jac, bound=k,
                     lipschitz=k * 2 / math.sqrt(math.pi) * float(np.linalg.norm(Amat, 2)) / (math.sqrt(2) * scale),
                     params={"scale": scale, "strength": k})
    raise ValueError(f"unknown drift kind {kind!r}")


def grid_drift(fields, p: float = math.inf, q: float = math.inf) -> Drift:
    """Drift given by grid fields (one component per coordinate)."""
    flds = _as_fields(fields)
    d = flds[0].dim
    if len(flds) != d:
        raise ValueError("need one field per coordinate")
    cache: dict = {}

    def smoothed(dl):
        if dl not in cache:
            cache.clear()
            cache[dl] = [heat(dl, f) if dl > 0 else f for f in flds]
        return cache[dl]

    def b(x, dl):
        return np.stack([f.interpolate(x, 3) for f in smoothed(dl)], axis=-1)

    def jac(x, dl):
        cols = []
        for f in smoothed(dl):
            grads = spectral_gradient(f)
            cols.append(np.stack([g.interpolate(x, 3) for g in grads], axis=-1))
        return np.stack(cols, axis=-1)

    return Drift("grid", d, b, jac, p=p, q=q, bound=max(f.sup() for f in flds))


# ---------------------------------------------------------------------------
# mollified Euler scheme
# ---------------------------------------------------------------------------

@dataclass
class SdeConfig:
    hurst: float
    drift: Drift
    x0: np.ndarray
    grid: TimeGrid
    mollify: Optional[float] = None      # default: dt^{2H}

    def __post_init__(self):
        self.x0 = np.broadcast_to(np.asarray(self.x0, float), (self.drift.dim,)).copy()

    @property
    def delta(self) -> float:
        return self.grid.dt ** (2 * self.hurst) if self.mollify is None else self.mollify

    @property
    def exponents(self) -> Exponents:
        return exponents(self.hurst, self.drift.dim, self.drift.p, self.drift.q)


@dataclass
class SdeSolution:
    X: np.ndarray        # (paths, n+1, d)
    psi: np.ndarray      # X - B^H
    bundle: PathBundle
    config: SdeConfig


def solve_singular_sde(cfg: SdeConfig, n_paths: int = 0, seed: int = 0,
                       bundle: Optional[PathBundle] = None, workers: int = 1) -> SdeSolution:
    """Euler scheme X_{i+1} = X_i + P_delta b(X_i) dt + B_{i+1} - B_i.

    Pass ``bundle`` to couple several solves through the same noise.
    """
    if not cfg.exponents.weak:
        warnings.warn("drift class outside Hd/p + 1/q < 1/2; no well-posedness claim")
    if bundle is None:
        bundle = sample_fbm_volterra(cfg.hurst, cfg.grid, cfg.drift.dim, n_paths, seed, workers)
    B = bundle.fbm_values
    P, n1, d = B.shape
    dt, delta = cfg.grid.dt, cfg.delta
    X = np.empty_like(B)
    X[:, 0] = cfg.x0
    dB = np.diff(B, axis=1)
    for i in range(n1 - 1):
        X[:, i + 1] = X[:, i] + cfg.drift.smooth(X[:, i], delta) * dt + dB[:, i]
        if not np.all(np.isfinite(X[:, i + 1])):
            bad = int(np.flatnonzero(~np.all(np.isfinite(X[:, i + 1]), axis=1))[0])
            raise NumericalAbort(f"non-finite state at step {i + 1}, path {bad}")
    return SdeSolution(X, X - B, bundle, cfg)


def psi_holder(sol: SdeSolution, gap_steps: Sequence[int], m: float = 2) -> RateReport:
    return increment_exponent(sol.psi, sol.config.grid, gap_steps, m, label="psi-holder")


@dataclass
class UniquenessProbe:
    offsets: list
    mean_sup: list
    max_sup: list
    monotone: bool
    lipschitz_bound: Optional[list]


def pathwise_uniqueness_probe(cfg: SdeConfig, offsets: Sequence[float], n_paths: int,
                              seed: int) -> UniquenessProbe:
    """sup_t |X - X'| for coupled solves started at x0 and x0 + offset."""
    base = solve_singular_sde(cfg, n_paths, seed)
    offs = sorted({float(o) for o in offsets}, reverse=True)
    means, maxes = [], []
    for o in offs:
        c2 = SdeConfig(cfg.hurst, cfg.drift, cfg.x0 + o, cfg.grid, cfg.mollify)
        other = solve_singular_sde(c2, bundle=base.bundle)
        dist = np.max(np.linalg.norm(other.X - base.X, axis=2), axis=1)
        means.append(float(dist.mean()))
        maxes.append(float(dist.max()))
    mono = all(a >= b for a, b in zip(means, means[1:]))
    lip = None
    if cfg.drift.lipschitz is not None:
        T = cfg.grid.t1 - cfg.grid.t0
        lip = [math.exp(cfg.drift.lipschitz * T) * o * math.sqrt(cfg.drift.dim) for o in offs]
    return UniquenessProbe(offs, means, maxes, mono, lip)


# ---------------------------------------------------------------------------
# Girsanov weights
# ---------------------------------------------------------------------------

@dataclass
class GirsanovResult:
    v: np.ndarray            # (paths, n+1, d), v at grid times
    stoch_integral: np.ndarray
    xi: np.ndarray           # xi_T per path
    mean: float
    stderr: float
    energy_ratio: float      # max over paths of int |v|^2 / int |b|^2


def girsanov_kernel(H: float, grid: TimeGrid) -> np.ndarray:
    """W[i, j] = s_i^{H-1/2} / Gamma(1/2-H) * r_j^{1/2-H} * int_cell_j (s_i - r)^{-1/2-H} dr,
    with r_j the midpoint of cell j < i."""
    if not 0 < H < 0.5:
        raise ValueError("Girsanov weights need H in (0, 1/2)")
    t = grid.points
    e = 0.5 - H
    s = t[:, None]
    lo = np.clip(s - t[None, :-1], 0, None)
    hi = np.clip(s - t[None, 1:], 0, None)
    cell = (lo ** e - hi ** e) / e                      # exact, zero for j >= i
    mid = 0.5 * (t[:-1] + t[1:])
    with np.errstate(divide="ignore"):
        pref = np.where(t > 0, t ** (H - 0.5), 0.0) / special.gamma(e)
    W = pref[:, None] * cell * mid[None, :] ** e
    if not np.all(np.isfinite(W)):
        raise NumericalAbort("Girsanov quadrature is not finite")
    return W


def girsanov_weights(drift: Drift, X: np.ndarray, w_increments: np.ndarray, H: float,
                     grid: TimeGrid, delta: float = 0.0) -> GirsanovResult:
    """v from the fractional transform of b(X) and xi_T from a left-point Itô sum.

    The drift on cell j is the average of its endpoint values; v at t_i only
    uses cells before t_i, so xi_T is an exact discrete martingale.
    """
    P, n1, d = X.shape
    bX = drift.smooth(X.reshape(-1, d), delta).reshape(P, n1, d)
    bbar = 0.5 * (bX[:, 1:] + bX[:, :-1])
    W = girsanov_kernel(H, grid)
    v = np.einsum("ij,pjd->pid", W, bbar)
    dt = grid.dt
    stoch = np.einsum("pid,pid->p", v[:, :-1], w_increments)
    energy = np.sum(v[:, :-1] ** 2, axis=(1, 2)) * dt
    log_xi = -stoch - 0.5 * energy
    if not np.all(np.isfinite(log_xi)):
        raise NumericalAbort("non-finite Girsanov exponent")
    xi = np.exp(log_xi)
    benergy = np.sum(bX[:, :-1] ** 2, axis=(1, 2)) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(benergy > 0, energy / benergy, 0.0)
    return GirsanovResult(v, stoch, xi, float(xi.mean()),
                          float(xi.std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0,
                          float(np.max(ratio)))


# ---------------------------------------------------------------------------
# moments of additive functionals
# ---------------------------------------------------------------------------

@dataclass
class MomentTable:
    orders: list
    moments: list
    stderrs: list
    constants: list          # C_n = (E I^n Gamma(n tau + 1) / n!)^{1/n} / T^tau
    ratios: list             # C_{n+1} / C_n
    tau: float
    first_moment_oracle: Optional[float] = None

    def shape_ok(self, tolerance: float = 0.2) -> bool:
        return all(r <= 1 + tolerance for r in self.ratios)


def additive_functional(h: GridField, bundle: PathBundle) -> np.ndarray:
    """Trapezoid integral of h(B_r) over the whole grid, per path."""
    return pathwise_integral(h, bundle)[:, -1, 0, 0]


def expected_functional(h: GridField, H: float, T: float) -> float:
    """int_0^T [P_{t^{2H}} h](0) dt by adaptive quadrature."""
    origin = np.zeros((1, h.dim))

    def g(t):
        return float(heat(t ** (2 * H), h).interpolate(origin, 3)[0]) if t > 0 else \
            float(h.interpolate(origin, 3)[0])

    val, _ = quad(g, 0.0, T, epsrel=1e-8, limit=200)
    return val


def moment_bound_check(h: GridField, bundle: PathBundle, orders: Sequence[int], p: float,
                       q: float = math.inf) -> MomentTable:
    """Monte Carlo moments of int h(B_r) dr against the Gamma-ratio shape."""
    H = bundle.hurst
    T = bundle.grid.t1 - bundle.grid.t0
    ex = exponents(H, h.dim, p, q)
    if ex.tau <= 0:
        raise ValueError("need Hd/p + 1/q < 1")
    if np.min(h.values) < 0:
        raise ValueError("moment bounds are stated for nonnegative h")
    I = additive_functional(h, bundle)
    orders = sorted(int(n) for n in orders)
    if orders and orders[-1] > 6:
        raise ValueError("orders above 6 are not supported")
    if 6 in orders and I.size < 10 ** 4:
        warnings.warn("sixth moment with fewer than 1e4 paths is heavy-tailed")
    moms, ses, consts = [], [], []
    for n in orders:
        x = I ** n
        moms.append(float(x.mean()))
        ses.append(float(x.std(ddof=1) / math.sqrt(x.size)))
        c = (x.mean() * math.gamma(n * ex.tau + 1) / math.factorial(n)) ** (1.0 / n) / T ** ex.tau
        consts.append(float(c))
    ratios = [b / a for a, b in zip(consts, consts[1:]) if a > 0]
    oracle = expected_functional(h, H, T) if 1 in orders else None
    return MomentTable(orders, moms, ses, consts, ratios, ex.tau, oracle)
