"""
Germs built from Brownian motion and Poisson processes: Itô integrals,
quadratic variation, the Poisson L_m counterexample and the term-by-term
Itô formula.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import poisson

from .gaussian_paths import PathBundle, TimeGrid
from .sewing import (DoobSums, Germ, Partition, RateReport, deterministic_cond, doob_split,
                     dyadic_indices, estimate_lm, lm_stderr, sewing_limit)


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def clipped_power(tau: float, radius: float) -> Callable[[np.ndarray], np.ndarray]:
    """x -> min(|x|, radius)^tau, tau-Hölder with constant 1 on the whole line."""
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")

    def f(x):
        return np.minimum(np.abs(x), radius) ** tau

    f.tau = tau
    return f


def holder_constant(f: Callable, tau: float, lo: float, hi: float, n: int = 2001) -> float:
    """Empirical sup |f(x)-f(y)|/|x-y|^tau over a uniform sample of [lo, hi]."""
    x = np.linspace(lo, hi, n)
    fx = np.asarray(f(x), dtype=float)
    best = 0.0
    k = 1
    while k < n:
        ratio = np.abs(fx[k:] - fx[:-k]) / (x[k:] - x[:-k]) ** tau
        best = max(best, float(ratio.max()))
        k *= 2
    return best


# ---------------------------------------------------------------------------
# germs
# ---------------------------------------------------------------------------

def _zero_cond(n_paths, shape):
    def rule(si, ti):
        return np.zeros((n_paths, np.size(si)) + tuple(shape))
    return rule


def ito_germ(f: Callable[[np.ndarray], np.ndarray], bundle: PathBundle) -> Germ:
    """A_{s,t} = f(B_s) (x) (B_t - B_s); f maps (..., d) arrays to (..., *shape)."""
    B = bundle.brownian_values()
    fB = np.asarray(f(B), dtype=float)
    if fB.ndim == B.ndim - 1:          # scalar-valued f
        fB = fB[..., None]
    fshape = fB.shape[2:]
    d = bundle.dim
    shape = fshape + (d,)
    P = bundle.n_paths

    def rule(si, ti):
        dB = B[:, ti] - B[:, si]
        fs = fB[:, si]
        return fs[..., None] * dB.reshape(dB.shape[:2] + (1,) * len(fshape) + (d,))

    cond = _zero_cond(P, shape)
    return Germ(bundle.grid, P, shape, rule, cond, "ito", lag_rule=deterministic_cond(cond))


def qv_germ(grid: TimeGrid, values: np.ndarray, cond: Optional[Callable] = None,
            name: str = "qv") -> Germ:
    """A_{s,t} = M_{s,t} (x) M_{s,t} for martingale values of shape (paths, n+1, d)."""
    M = np.asarray(values, dtype=float)
    P, _, d = M.shape

    def rule(si, ti):
        dM = M[:, ti] - M[:, si]
        return dM[..., :, None] * dM[..., None, :]

    lag = deterministic_cond(cond) if cond is not None else None
    return Germ(grid, P, (d, d), rule, cond, name, lag_rule=lag)


def brownian_qv_germ(bundle: PathBundle) -> Germ:
    grid, P, d = bundle.grid, bundle.n_paths, bundle.dim
    eye = np.eye(d)

    def cond(si, ti):
        gap = (np.asarray(ti) - np.asarray(si)) * grid.dt
        return np.broadcast_to(gap[None, :, None, None] * eye, (P, np.size(si), d, d)).copy()

    return qv_germ(grid, bundle.brownian_values(), cond, "qv-brownian")


def compensated_poisson_values(bundle: PathBundle) -> np.ndarray:
    """N(t_i) - lambda t_i, shape (paths, n+1, 1)."""
    g = bundle.grid
    N = bundle.poisson_counts().astype(float)
    return (N - bundle.intensity * (g.points - g.t0))[..., None]


def poisson_qv_germ(bundle: PathBundle) -> Germ:
    grid, P, lam = bundle.grid, bundle.n_paths, bundle.intensity

    def cond(si, ti):
        gap = (np.asarray(ti) - np.asarray(si)) * grid.dt
        return np.broadcast_to((lam * gap)[None, :, None, None], (P, np.size(si), 1, 1)).copy()

    return qv_germ(grid, compensated_poisson_values(bundle), cond, "qv-poisson")


def poisson_germ(bundle: PathBundle) -> Germ:
    """A_{s,t} = N_t - N_s - lambda (t - s); additive with zero conditional mean."""
    vals = compensated_poisson_values(bundle)
    P = bundle.n_paths

    def rule(si, ti):
        return vals[:, ti] - vals[:, si]

    cond = _zero_cond(P, (1,))
    return Germ(bundle.grid, P, (1,), rule, cond, "poisson", lag_rule=deterministic_cond(cond))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def ito_integral(f: Callable, bundle: PathBundle, t: float, max_level: int, m: float = 2,
                 min_level: int = 0):
    """Sewing limit of the Itô germ on [t0, t] with its convergence report."""
    return sewing_limit(ito_germ(f, bundle), t, max_level, m, min_level=min_level)


@dataclass
class QvResult:
    limit: np.ndarray
    report: RateReport
    doob: DoobSums


def quadratic_variation(bundle: PathBundle, source: str, t: float, max_level: int,
                        m: float = 2, min_level: int = 0) -> QvResult:
    """Quadratic variation by sewing, for ``source`` 'brownian' or 'poisson'."""
    if source == "brownian":
        germ = brownian_qv_germ(bundle)
    elif source == "poisson":
        germ = poisson_qv_germ(bundle)
    else:
        raise ValueError(f"unknown source {source!r}")
    limit, rep = sewing_limit(germ, t, max_level, m, min_level=min_level)
    g = bundle.grid
    part = Partition(g.points[dyadic_indices(g, 0, g.index_of(t), max_level)])
    return QvResult(limit, rep, doob_split(germ, part))


def qv_martingale_defect(bundle: PathBundle, s: float, t: float, cut: float = 0.5):
    """Mean of (B_t (x) B_t - t I) - (B_s (x) B_s - s I), overall and on three
    F_s-cells {B_s < -cut}, {|B_s| <= cut}, {B_s > cut} (first coordinate).

    Returns a list of (label, mean, stderr) with entrywise arrays.
    """
    g = bundle.grid
    B = bundle.brownian_values()
    si, ti = g.index_of(s), g.index_of(t)
    eye = np.eye(bundle.dim)
    Z = (np.einsum("pi,pj->pij", B[:, ti], B[:, ti]) - t * eye) \
        - (np.einsum("pi,pj->pij", B[:, si], B[:, si]) - s * eye)
    x = B[:, si, 0]
    cells = [("all", np.ones_like(x, bool)), ("low", x < -cut),
             ("mid", np.abs(x) <= cut), ("high", x > cut)]
    out = []
    for label, mask in cells:
        z = Z[mask]
        se = z.std(axis=0, ddof=1) / math.sqrt(max(1, z.shape[0]))
        out.append((label, z.mean(axis=0), se))
    return out


@dataclass
class CounterexampleRow:
    gap: float
    m: float
    lm_value: float
    stderr: float
    exact: float


def poisson_lm_exact(intensity: float, gap: float, m: float) -> float:
    """||N - mu||_{L_m} for N ~ Poisson(mu), mu = intensity * gap, by series."""
    mu = intensity * gap
    if mu == 0:
        return 0.0
    kmax = int(mu + 40 * math.sqrt(mu) + 40)
    k = np.arange(kmax + 1)
    pmf = poisson.pmf(k, mu)
    return float(np.sum(pmf * np.abs(k - mu) ** m) ** (1.0 / m))


def poisson_counterexample(intensity: float, m_list: Sequence[float], gaps: Sequence[float],
                           n_paths: int, seed: int):
    """Monte Carlo ||N_{s,t} - lambda (t-s)||_{L_m} across gaps for each m.

    Increments of a Poisson process over a gap h are Poisson(lambda h), so
    each gap is sampled directly. Returns (rows, reports) with one
    RateReport per m.
    """
    gaps = sorted((float(h) for h in gaps), reverse=True)
    samples = []
    for idx, h in enumerate(gaps):
        rng = np.random.default_rng([seed, 11, idx])
        samples.append(rng.poisson(intensity * h, size=n_paths) - intensity * h)
    rows, reports = [], {}
    for m in m_list:
        if not 1 <= m <= 2:
            raise ValueError("counterexample moments lie in [1, 2]")
        vals = []
        for h, a in zip(gaps, samples):
            v = estimate_lm(a[:, None], m)
            vals.append(v)
            rows.append(CounterexampleRow(h, m, v, lm_stderr(a[:, None], m),
                                          poisson_lm_exact(intensity, h, m)))
        reports[m] = RateReport.from_values(gaps, vals, m, label=f"poisson-lm-{m:g}",
                                            config={"intensity": intensity})
    return rows, reports


# ---------------------------------------------------------------------------
# Itô formula bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class ItoFormulaTerms:
    """Per-path Riemann sums of the five Taylor pieces and f(M_T) - f(M_0)."""
    total: np.ndarray
    first: np.ndarray      # <grad f(M_s), M_{s,t}>
    second: np.ndarray     # 1/2 <hess f(M_s), M_{s,t} (x) M_{s,t}>
    remainder: np.ndarray  # total - first - second
    bracket: np.ndarray    # 1/2 <hess f(M_s), [M]_{s,t}>
    fluctuation: np.ndarray  # second - bracket


def _taylor_pieces(fv, gv, hv, M, si, ti, dt):
    dM = M[:, ti] - M[:, si]
    a1 = np.einsum("pkd,pkd->pk", gv[:, si], dM)
    a2 = 0.5 * np.einsum("pkd,pkde,pke->pk", dM, hv[:, si], dM)
    a3 = fv[:, ti] - fv[:, si] - a1 - a2
    gap = (ti - si) * dt
    a4 = 0.5 * np.trace(hv[:, si], axis1=2, axis2=3) * gap[None, :]
    return a1, a2, a3, a4, a2 - a4


def ito_formula_terms(f, grad, hess, bundle: PathBundle, level: int,
                      t: Optional[float] = None) -> ItoFormulaTerms:
    g = bundle.grid
    M = bundle.brownian_values()
    ti_end = g.n_steps if t is None else g.index_of(t)
    idx = dyadic_indices(g, 0, ti_end, level)
    fv = np.asarray(f(M), dtype=float)
    gv = np.asarray(grad(M), dtype=float)
    hv = np.asarray(hess(M), dtype=float)
    pieces = _taylor_pieces(fv, gv, hv, M, idx[:-1], idx[1:], g.dt)
    a1, a2, a3, a4, a5 = (p.sum(axis=1) for p in pieces)
    return ItoFormulaTerms(fv[:, ti_end] - fv[:, 0], a1, a2, a3, a4, a5)


@dataclass
class ItoFormulaReport:
    residual_l2: float
    residual_stderr: float
    remainder_report: RateReport
    fluctuation_report: RateReport
    terms: ItoFormulaTerms


def ito_formula_check(f, grad, hess, bundle: PathBundle, max_level: int, m: float = 2,
                      min_level: int = 2, third: Optional[Callable] = None,
                      third_bound: Optional[float] = None) -> ItoFormulaReport:
    """Compare f(M_T) - f(M_0) with the sums of the first-order and bracket terms.

    M is the bundle's Brownian motion. The residual is the sum of the
    remainder and fluctuation pieces; both are tracked across dyadic levels.
    """
    if third is not None and third_bound is not None:
        B = bundle.brownian_values()
        worst = float(np.max(np.abs(third(np.linspace(B.min(), B.max(), 4001)))))
        if worst > third_bound:
            warnings.warn(f"sampled third derivative {worst:.3g} exceeds bound {third_bound:.3g}")
    levels = list(range(min_level, max_level + 1))
    terms = {n: ito_formula_terms(f, grad, hess, bundle, n) for n in levels}
    fin = terms[max_level]
    resid = fin.total - fin.first - fin.bracket
    scales = [(bundle.grid.t1 - bundle.grid.t0) * 2.0 ** -n for n in levels]
    rem = RateReport.from_values(scales, [estimate_lm(terms[n].remainder[:, None], m) for n in levels],
                                 m, label="ito-remainder")
    flu = RateReport.from_values(scales, [estimate_lm(terms[n].fluctuation[:, None], m) for n in levels],
                                 m, label="ito-fluctuation")
    return ItoFormulaReport(estimate_lm(resid[:, None], 2), lm_stderr(resid[:, None], 2),
                            rem, flu, fin)
