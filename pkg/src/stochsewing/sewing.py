"""
Sewing machinery for two-parameter processes ("germs").

A germ A_{s,t} is evaluated on grid indices and vectorised over paths:
``germ.at(si, ti)`` takes integer arrays of equal length k and returns an
array of shape ``(n_paths, k, *value_shape)``. Everything downstream
(Riemann sums, dyadic refinement, Doob split, dyadic allocation, rate fits)
is built on that one call.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from .gaussian_paths import TimeGrid

# cap on n_paths * n_intervals per germ call
CHUNK_ELEMS = 2 ** 22
MIN_FIT_SCALES = 4


class NonConvergenceWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# partitions and germs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a partition needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("partition points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, S: float, T: float, n: int) -> "Partition":
        return cls(np.linspace(S, T, n + 1))

    @classmethod
    def dyadic(cls, S: float, T: float, level: int) -> "Partition":
        return cls.uniform(S, T, 2 ** level)

    @property
    def S(self) -> float:
        return float(self.points[0])

    @property
    def T(self) -> float:
        return float(self.points[-1])

    def mesh(self) -> float:
        return float(np.max(np.diff(self.points)))


IndexRule = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Germ:
    """Two-parameter process on a time grid.

    ``rule(si, ti)`` returns A_{t_si, t_ti} for all paths. ``cond_rule``, if
    given, returns E[A_{s,t} | F_s] exactly. ``lag_rule(si, ui, ti)``, if
    given, returns E[A_{u,t} | F_s] for s <= u, which is what the conditional
    delta needs. Rules may only read path data up to index ``ti``
    (respectively ``si`` for the conditional rules).
    """
    grid: TimeGrid
    n_paths: int
    value_shape: tuple
    rule: IndexRule
    cond_rule: Optional[IndexRule] = None
    name: str = "germ"
    lag_rule: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None

    def cond_delta(self, si, ui, ti) -> np.ndarray:
        """E[delta A_{s,u,t} | F_s] over index triples, shape (n_paths, k, ...)."""
        if self.cond_rule is None or self.lag_rule is None:
            raise ValueError(f"germ {self.name!r} has no exact conditional delta")
        si, ui, ti = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (si, ui, ti))
        return self.cond_rule(si, ti) - self.cond_rule(si, ui) - self.lag_rule(si, ui, ti)

    def at(self, si, ti) -> np.ndarray:
        si = np.atleast_1d(np.asarray(si, dtype=np.int64))
        ti = np.atleast_1d(np.asarray(ti, dtype=np.int64))
        if np.any(si > ti):
            raise ValueError("germ needs s <= t")
        return _chunked(self.rule, si, ti, self.n_paths)

    def cond_at(self, si, ti) -> np.ndarray:
        if self.cond_rule is None:
            raise ValueError(f"germ {self.name!r} has no exact conditional rule")
        si = np.atleast_1d(np.asarray(si, dtype=np.int64))
        ti = np.atleast_1d(np.asarray(ti, dtype=np.int64))
        return _chunked(self.cond_rule, si, ti, self.n_paths)

    def __call__(self, s: float, t: float) -> np.ndarray:
        si, ti = self.grid.index_of(s), self.grid.index_of(t)
        return self.at([si], [ti])[:, 0]

    def summed(self, si, ti, cond: bool = False) -> np.ndarray:
        """Sum of A over the given intervals, shape (n_paths, *value_shape)."""
        si = np.asarray(si, dtype=np.int64)
        ti = np.asarray(ti, dtype=np.int64)
        rule = self.cond_rule if cond else self.rule
        if rule is None:
            raise ValueError(f"germ {self.name!r} has no exact conditional rule")
        out = np.zeros((self.n_paths,) + tuple(self.value_shape))
        step = max(1, CHUNK_ELEMS // max(1, self.n_paths * int(np.prod(self.value_shape))))
        for a in range(0, si.size, step):
            out += rule(si[a:a + step], ti[a:a + step]).sum(axis=1)
        return out


def _chunked(rule, si, ti, n_paths):
    step = max(1, CHUNK_ELEMS // max(1, n_paths))
    if si.size <= step:
        return rule(si, ti)
    return np.concatenate([rule(si[a:a + step], ti[a:a + step])
                           for a in range(0, si.size, step)], axis=1)


def additive_germ(grid: TimeGrid, values: np.ndarray, name="additive") -> Germ:
    """A_{s,t} = g(t) - g(s) for per-path values of shape (n_paths, n+1, ...)."""
    values = np.asarray(values, dtype=float)

    def rule(si, ti):
        return values[:, ti] - values[:, si]

    return Germ(grid, values.shape[0], values.shape[2:], rule, rule, name,
                lag_rule=lambda si, ui, ti: rule(ui, ti))


def deterministic_cond(cond: IndexRule) -> Callable:
    """Lag rule for germs whose conditional expectation is non-random."""
    return lambda si, ui, ti: cond(ui, ti)


# ---------------------------------------------------------------------------
# basic operations
# ---------------------------------------------------------------------------

def delta(germ: Germ, s: float, u: float, t: float) -> np.ndarray:
    """delta A_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}."""
    if not s <= u <= t:
        raise ValueError("delta needs s <= u <= t")
    g = germ.grid
    si, ui, ti = g.index_of(s), g.index_of(u), g.index_of(t)
    vals = germ.at([si, si, ui], [ti, ui, ti])
    return vals[:, 0] - vals[:, 1] - vals[:, 2]


def _partition_indices(germ: Germ, partition: Partition) -> np.ndarray:
    try:
        return germ.grid.index_of(partition.points)
    except ValueError as exc:
        raise ValueError("partition points must lie on the germ's grid") from exc


def riemann_sum(germ: Germ, partition: Partition, path: Optional[int] = None) -> np.ndarray:
    """Sum of A_{t_i, t_{i+1}} over a partition."""
    idx = _partition_indices(germ, partition)
    out = germ.summed(idx[:-1], idx[1:])
    return out if path is None else out[path]


def dyadic_indices(grid: TimeGrid, si: int, ti: int, level: int) -> np.ndarray:
    span = ti - si
    if span % (2 ** level):
        raise ValueError(f"level {level} exceeds the grid resolution of [s, t]")
    return si + (span // 2 ** level) * np.arange(2 ** level + 1)


def dyadic_refine(germ: Germ, s: float, t: float, level: int,
                  path: Optional[int] = None) -> np.ndarray:
    """Riemann sum over the level-``level`` dyadic partition of [s, t]."""
    g = germ.grid
    idx = dyadic_indices(g, g.index_of(s), g.index_of(t), level)
    out = germ.summed(idx[:-1], idx[1:])
    return out if path is None else out[path]


@dataclass
class DoobSums:
    A: np.ndarray
    M: np.ndarray
    J: np.ndarray

    def check(self, rtol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.A))))
        return bool(np.max(np.abs(self.A - self.M - self.J)) <= rtol * scale)


def doob_split(germ: Germ, partition: Partition) -> DoobSums:
    """Split the Riemann sum into martingale part M and predictable part J."""
    if germ.cond_rule is None:
        raise ValueError(f"germ {germ.name!r} has no exact conditional rule")
    idx = _partition_indices(germ, partition)
    A = germ.summed(idx[:-1], idx[1:])
    J = germ.summed(idx[:-1], idx[1:], cond=True)
    return DoobSums(A, A - J, J)


# ---------------------------------------------------------------------------
# dyadic allocation
# ---------------------------------------------------------------------------

class AllocationLevel(NamedTuple):
    level: int
    cells: np.ndarray     # dyadic cell index i of each quadruple
    quads: np.ndarray     # (k, 4) points s1 <= s2 <= s3 <= s4


def dyadic_allocate(points: Sequence[float], s: Optional[float] = None,
                    t: Optional[float] = None) -> list[AllocationLevel]:
    """Allocate a finite point set of [s, t] into dyadic cells.

    Returns, per level n, the quadruples (min/max of the left child, min/max
    of the right child) of every level-n cell whose two children are both
    nonempty. For any germ with A_{r,r} = 0,

        sum_i A_{t_i,t_{i+1}} - A_{t_0,t_N} = sum_n sum_i R^n_i,
        R = A_{s1,s2} + A_{s2,s3} + A_{s3,s4} - A_{s1,s4},

    and cells with an empty child contribute R = 0. Levels past the first at
    which every cell holds at most one point are empty and not returned.
    """
    pts = np.unique(np.asarray(points, dtype=float))
    if pts.size == 0:
        return []
    s = float(pts[0]) if s is None else float(s)
    t = float(pts[-1]) if t is None else float(t)
    if pts[0] < s or pts[-1] > t or not t > s:
        raise ValueError("points must lie in [s, t]")
    x = (pts - s) / (t - s)
    levels = []
    n = 0
    while True:
        # child index at level n + 1; the last cell is closed on the right.
        # x * 2^(n+1) = 2 * (x * 2^n) exactly, so parents and children agree.
        child = np.minimum(np.floor(x * 2.0 ** (n + 1)).astype(np.int64), 2 ** (n + 1) - 1)
        parent = child // 2
        if np.all(np.diff(parent) > 0):
            break
        cells, quads = [], []
        for i in np.unique(parent):
            sel = parent == i
            left = pts[sel & (child == 2 * i)]
            right = pts[sel & (child == 2 * i + 1)]
            if left.size and right.size:
                cells.append(i)
                quads.append((left[0], left[-1], right[0], right[-1]))
        levels.append(AllocationLevel(n, np.array(cells, dtype=np.int64),
                                      np.array(quads, dtype=float).reshape(-1, 4)))
        n += 1
    return levels


def allocation_residuals(germ: Germ, levels: list[AllocationLevel]) -> np.ndarray:
    """Sum over all levels and cells of R^n_i, per path."""
    g = germ.grid
    out = np.zeros((germ.n_paths,) + tuple(germ.value_shape))
    for lev in levels:
        if not lev.quads.size:
            continue
        q = g.index_of(lev.quads.ravel()).reshape(-1, 4)
        out += germ.summed(q[:, 0], q[:, 1]) + germ.summed(q[:, 1], q[:, 2]) \
            + germ.summed(q[:, 2], q[:, 3]) - germ.summed(q[:, 0], q[:, 3])
    return out


# ---------------------------------------------------------------------------
# moments and rate reports
# ---------------------------------------------------------------------------

def estimate_lm(samples, m: float) -> float:
    """(mean |v|^m)^{1/m} over the leading axis; |.| is the Euclidean norm."""
    v = np.asarray(samples, dtype=float)
    if v.size == 0 or v.shape[0] == 0:
        raise ValueError("empty sample")
    if m < 1:
        raise ValueError("moment order must be >= 1")
    norms = np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))
    return float(np.mean(norms ** m) ** (1.0 / m))


def lm_stderr(samples, m: float) -> float:
    """Delta-method standard error of ``estimate_lm``."""
    v = np.asarray(samples, dtype=float)
    norms = np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1)) ** m
    mu = norms.mean()
    if mu == 0:
        return 0.0
    se_mu = norms.std(ddof=1) / math.sqrt(norms.size)
    return float(mu ** (1.0 / m - 1.0) * se_mu / m)


class PowerFit(NamedTuple):
    exponent: float
    intercept: float        # log of the prefactor
    stderr: float


def fit_power_law(scales, values) -> PowerFit:
    """Least squares slope of log(values) against log(scales)."""
    x = np.log(np.asarray(scales, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two scales")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return PowerFit(float(slope), float(y[0] - slope * x[0]), float("nan"))
    res = stats.linregress(x, y)
    return PowerFit(float(res.slope), float(res.intercept), float(res.stderr))


@dataclass
class RateReport:
    scales: list
    lm_values: list
    m: float
    fitted_exponent: float = float("nan")
    stderr: float = float("nan")
    prefactor: float = float("nan")
    label: str = ""
    config: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, scales, values, m, label="", config=None, fit_mask=None) -> "RateReport":
        """Build a report; the exponent is fitted only when at least MIN_FIT_SCALES
        positive values survive the mask, and is nan otherwise."""
        scales = [float(s) for s in scales]
        values = [float(v) for v in values]
        if any(v < 0 for v in values):
            raise ValueError("L_m values are nonnegative")
        if any(b >= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly decreasing")
        rep = cls(scales, values, m, label=label, config=dict(config or {}))
        mask = np.ones(len(scales), bool) if fit_mask is None else np.asarray(fit_mask, bool)
        xs = np.asarray(scales)[mask]
        ys = np.asarray(values)[mask]
        pos = ys > 0
        if pos.sum() >= MIN_FIT_SCALES:
            fit = fit_power_law(xs[pos], ys[pos])
            rep.fitted_exponent, rep.stderr = fit.exponent, fit.stderr
            rep.prefactor = math.exp(fit.intercept)
        return rep

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "lm_value", "m"])
        for s, v in zip(self.scales, self.lm_values):
            w.writerow([repr(s), repr(v), repr(self.m)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(json_safe(self.as_dict()), sort_keys=True, indent=2)

    def as_dict(self) -> dict:
        return {"label": self.label, "scales": self.scales, "lm_values": self.lm_values,
                "m": self.m, "fitted_exponent": self.fitted_exponent,
                "stderr": self.stderr, "prefactor": self.prefactor,
                "config": self.config}


def json_safe(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return json_safe(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# sewing limits and condition fits
# ---------------------------------------------------------------------------

def dyadic_sums(germ: Germ, si: int, ti: int, levels: Sequence[int]) -> dict:
    out = {}
    for n in levels:
        idx = dyadic_indices(germ.grid, si, ti, n)
        out[n] = germ.summed(idx[:-1], idx[1:])
    return out


def sewing_limit(germ: Germ, t: float, max_level: int, m: float = 2, s: Optional[float] = None,
                 min_level: int = 0, reference: str = "finest", allow_small_m: bool = False):
    """Finest dyadic Riemann sum on [s, t] and its convergence report.

    ``reference="finest"`` reports ||A^n - A^max||_{L_m}; ``"successive"``
    reports ||A^n - A^{n+1}||_{L_m}. Scales are the meshes 2^-n (t - s).
    The level closest to the reference is left out of the regression.
    """
    if m < 2 and not allow_small_m:
        raise ValueError("sewing limits are only claimed for m >= 2")
    g = germ.grid
    si = g.t0 if s is None else s
    si, ti = g.index_of(si), g.index_of(t)
    levels = list(range(min_level, max_level + 1))
    sums = dyadic_sums(germ, si, ti, levels)
    limit = sums[max_level]
    span = g.points[ti] - g.points[si]
    scales, vals = [], []
    for n in levels[:-1]:
        other = limit if reference == "finest" else sums[n + 1]
        scales.append(span * 2.0 ** -n)
        vals.append(estimate_lm(sums[n] - other, m))
    mask = np.ones(len(scales), bool)
    if reference == "finest" and len(scales) > 2:
        mask[-1] = False
    rep = RateReport.from_values(scales, vals, m, label=germ.name, fit_mask=mask,
                                 config={"t": float(t), "max_level": max_level,
                                         "min_level": min_level, "reference": reference})
    tail = vals[-3:]
    if len(tail) == 3 and not (tail[0] >= tail[1] >= tail[2]):
        warnings.warn(f"{germ.name}: L_m errors not decreasing over the last levels",
                      NonConvergenceWarning)
        rep.config["non_convergence"] = True
    return limit, rep


class ConditionFit(NamedTuple):
    eps1: float
    eps2: float
    gamma1: float
    gamma2: float
    cond_report: Optional[RateReport]
    delta_report: RateReport


def fit_conditions(germ: Germ, m: float, gap_steps: Sequence[int], start: int = 0,
                   n_starts: int = 1, split: float = 0.5) -> ConditionFit:
    """Fit ||delta A||_{L_m} ~ G2 |t-s|^{1/2+e2} and ||E^{F_s} delta A|| ~ G1 |t-s|^{1+e1}.

    ``gap_steps`` are gap lengths in grid steps and u sits at the fraction
    ``split`` of each gap (midpoint by default). Samples from ``n_starts``
    consecutive disjoint intervals are pooled. The e1 fit needs the germ's
    conditional delta and is skipped (nan) otherwise; a numerator that is
    zero to rounding is reported as an infinite exponent with zero constant.
    """
    gaps = sorted({int(k) for k in gap_steps}, reverse=True)
    if len(gaps) < 4:
        raise ValueError("need at least 4 gap scales")
    g = germ.grid
    has_cond = germ.cond_rule is not None and germ.lag_rule is not None
    d_vals, c_vals, scales = [], [], []
    size = 0.0
    for k in gaps:
        h = int(round(split * k))
        if not 0 < h < k:
            raise ValueError(f"gap of {k} steps cannot be split at {split}")
        starts = start + k * np.arange(n_starts)
        if starts[-1] + k > g.n_steps:
            raise ValueError("gap does not fit on the grid")
        si, ui, ti = starts, starts + h, starts + k
        A = germ.at(si, ti)
        size = max(size, estimate_lm(_pool(A), m))
        dA = A - germ.at(si, ui) - germ.at(ui, ti)
        d_vals.append(estimate_lm(_pool(dA), m))
        if has_cond:
            c_vals.append(estimate_lm(_pool(germ.cond_delta(si, ui, ti)), m))
        scales.append(k * g.dt)
    drep = RateReport.from_values(scales, d_vals, m, label=f"{germ.name}:delta")
    # numerators at rounding level count as exactly zero
    tiny = 1e-12 * max(size, 1e-300)
    if max(d_vals) > tiny:
        eps2, gamma2 = drep.fitted_exponent - 0.5, drep.prefactor
    else:
        eps2, gamma2 = math.inf, 0.0
    crep = None
    eps1, gamma1 = float("nan"), float("nan")
    if has_cond:
        crep = RateReport.from_values(scales, c_vals, m, label=f"{germ.name}:cond_delta")
        if max(c_vals) > tiny:
            eps1, gamma1 = crep.fitted_exponent - 1.0, crep.prefactor
        else:
            eps1, gamma1 = math.inf, 0.0
    return ConditionFit(eps1, eps2, gamma1, gamma2, crep, drep)


def _pool(vals: np.ndarray) -> np.ndarray:
    # (n_paths, k, ...) -> (n_paths * k, ...)
    return np.moveaxis(vals, 1, 0).reshape((-1,) + vals.shape[2:])


def increment_exponent(values: np.ndarray, grid: TimeGrid, gap_steps: Sequence[int], m: float = 2,
                       label: str = "increments") -> RateReport:
    """Fit ||X_{t+g} - X_t||_{L_m} against g, pooling every window start.

    ``values`` has shape (n_paths, n_steps + 1, ...).
    """
    gaps = sorted({int(k) for k in gap_steps}, reverse=True)
    if len(gaps) < 4:
        raise ValueError("need at least 4 gap scales")
    vals = []
    for k in gaps:
        inc = values[:, k:] - values[:, :-k]
        vals.append(estimate_lm(inc.reshape((-1,) + inc.shape[2:]), m))
    return RateReport.from_values([k * grid.dt for k in gaps], vals, m, label=label)
