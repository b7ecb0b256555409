"""
Young integration, the linear Young flow Y = I + int Y dV, the V-process
built from averaged gradients and the division identity for coupled
solutions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
import numpy as np

from .averaging import Drift, SdeConfig, SdeSolution, solve_singular_sde
from .gaussian_paths import TimeGrid
from .heat import GridField, spectral_gradient
from .sewing import RateReport, dyadic_indices, estimate_lm, increment_exponent


class BlowUp(RuntimeError):
    pass


@dataclass
class HolderPath:
    """Batched path values of shape (n_paths, n_steps + 1, *shape)."""
    grid: TimeGrid
    values: np.ndarray
    exponent: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim < 2 or self.values.shape[1] != self.grid.n_steps + 1:
            raise ValueError("values must have shape (paths, n_steps + 1, ...)")
        if not 0 < self.exponent <= 1:
            raise ValueError("Hölder exponent must lie in (0, 1]")

    def dyadic_gaps(self) -> list[int]:
        n = self.grid.n_steps
        return [2 ** j for j in range(int(math.log2(n)) + 1) if 2 ** j <= n]

    def seminorm(self) -> np.ndarray:
        """Per-path max over dyadic gaps k of |v_{i+k} - v_i| / (k dt)^exponent."""
        v = self.values.reshape(self.values.shape[0], self.values.shape[1], -1)
        best = np.zeros(v.shape[0])
        for k in self.dyadic_gaps():
            inc = np.linalg.norm(v[:, k:] - v[:, :-k], axis=2).max(axis=1)
            best = np.maximum(best, inc / (k * self.grid.dt) ** self.exponent)
        return best

    def empirical_exponent(self) -> float:
        gaps = [k for k in self.dyadic_gaps() if k <= self.grid.n_steps // 4]
        return increment_exponent(self.values, self.grid, gaps, 2).fitted_exponent

    def check_exponent(self, tolerance: float = 0.1) -> float:
        e = self.empirical_exponent()
        if e < self.exponent - tolerance:
            warnings.warn(f"empirical exponent {e:.3f} below declared {self.exponent:.3f}")
        return e


@dataclass
class YoungResult:
    value: np.ndarray        # (paths, *shape_y, *shape_v) finest left-point sum
    error: np.ndarray        # per-path |finest - previous level|
    report: RateReport


def _left_sum(y, v, idx):
    ys = y[:, idx[:-1]]
    dv = v[:, idx[1:]] - v[:, idx[:-1]]
    return np.einsum("pka,pkb->pab", ys.reshape(ys.shape[:2] + (-1,)),
                     dv.reshape(dv.shape[:2] + (-1,)))


def young_integral(y: HolderPath, v: HolderPath, s: float, t: float,
                   min_level: int = 0) -> YoungResult:
    """Left-point Riemann-Stieltjes sums of y dv over dyadic partitions of [s, t].

    Values are outer products: shape (paths, y-size, v-size) flattened over
    the trailing dimensions of each path.
    """
    if y.exponent + v.exponent <= 1:
        raise ValueError("Young integration needs exponents summing above 1")
    if y.grid != v.grid:
        raise ValueError("paths live on different grids")
    g = y.grid
    si, ti = g.index_of(s), g.index_of(t)
    span = ti - si
    if span <= 0 or span & (span - 1):
        raise ValueError("[s, t] must span a power-of-two number of steps")
    max_level = int(math.log2(span))
    sums = {}
    for n in range(min_level, max_level + 1):
        sums[n] = _left_sum(y.values, v.values, dyadic_indices(g, si, ti, n))
    fin = sums[max_level]
    err = np.abs(fin - sums[max_level - 1]) if max_level > min_level else np.zeros_like(fin)
    levels = list(range(min_level, max_level))
    rep = RateReport.from_values([(t - s) * 2.0 ** -n for n in levels],
                                 [estimate_lm((sums[n] - sums[n + 1]).reshape(fin.shape[0], -1), 2)
                                  for n in levels], 2, label="young-successive")
    return YoungResult(fin, err, rep)


def solve_linear_young(V: HolderPath, start: int = 0, blowup: float = 1e12) -> np.ndarray:
    """Y_{i+1} = Y_i + Y_i (V_{i+1} - V_i), Y_start = I; returns (paths, n+1-start, d, d).

    Index convention: Y^{ij} is the derivative of the j-th coordinate in the
    i-th initial direction, and V^{kj} = int d_k b^j.
    """
    if V.exponent <= 0.5:
        raise ValueError("the linear Young flow needs V Hölder above 1/2")
    vals = V.values
    P, n1, d, d2 = vals.shape
    if d != d2:
        raise ValueError("V must be square")
    Y = np.empty((P, n1 - start, d, d))
    Y[:, 0] = np.eye(d)
    dV = np.diff(vals[:, start:], axis=1)
    for i in range(n1 - start - 1):
        Y[:, i + 1] = Y[:, i] + Y[:, i] @ dV[:, i]
        if np.max(np.abs(Y[:, i + 1])) > blowup:
            raise BlowUp(f"flow exceeded {blowup:g} at step {start + i + 1}")
    return Y


def build_V(drift: Drift, X: np.ndarray, grid: TimeGrid, delta: float = 0.0,
            exponent: float = 1.0) -> HolderPath:
    """V^{kj}_t as the sewing limit of int_s^t [P_{r-s} d_k b^j](X_s) dr.

    The heat semigroup stands in for the propagator of X. At the finest
    level the trapezoid gives dt/2 (Db(X_s) + P_dt Db(X_s)); for the closed
    form drifts P_dt acts by widening the mollification.
    """
    if drift.jacobian is None:
        raise ValueError("drift has no Jacobian")
    P, n1, d = X.shape
    dt = grid.dt
    flat = X[:, :-1].reshape(-1, d)
    J0 = drift.jacobian(flat, delta)
    J1 = drift.jacobian(flat, delta + dt)
    incr = (0.5 * dt * (J0 + J1)).reshape(P, n1 - 1, d, d)
    V = np.zeros((P, n1, d, d))
    np.cumsum(incr, axis=1, out=V[:, 1:])
    return HolderPath(grid, V, exponent)


@dataclass
class JacobianCheck:
    flow: np.ndarray         # (paths, d, d) at the final time
    finite_diff: np.ndarray
    relative_error: float


def jacobian_check(cfg: SdeConfig, n_paths: int, seed: int, h: float = 1e-4,
                   workers: int = 1) -> JacobianCheck:
    """Young flow from V against the finite-difference Jacobian of coupled solves."""
    base = solve_singular_sde(cfg, n_paths, seed, workers=workers)
    d = cfg.drift.dim
    V = build_V(cfg.drift, base.X, cfg.grid, cfg.delta)
    Y = solve_linear_young(V)[:, -1]
    fd = np.empty_like(Y)
    for i in range(d):
        x0 = cfg.x0.copy()
        x0[i] += h
        other = solve_singular_sde(SdeConfig(cfg.hurst, cfg.drift, x0, cfg.grid, cfg.mollify),
                                   bundle=base.bundle)
        fd[:, i, :] = (other.X[:, -1] - base.X[:, -1]) / h
    rel = float(np.mean(np.linalg.norm(Y - fd, axis=(1, 2)) / np.linalg.norm(fd, axis=(1, 2))))
    return JacobianCheck(Y, fd, rel)


@dataclass
class DivisionCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    relative_residual: float


def division_identity_check(f: GridField, sol: SdeSolution, other: SdeSolution,
                            nodes: int = 8) -> DivisionCheck:
    """int f(X) - int f(X') against the Young integral int (psi - psi') dV.

    V_t = int_0^t int_0^1 grad f(B_r + theta psi_r + (1 - theta) psi'_r) dtheta dr,
    the theta integral by Gauss-Legendre. The left side is a trapezoid sum,
    the right side a left-point Young sum.
    """
    if sol.bundle is not other.bundle:
        raise ValueError("solutions must share their noise")
    grid = sol.config.grid
    dt = grid.dt
    B = sol.bundle.fbm_values
    psi, psib = sol.psi, other.psi
    P, n1, d = B.shape
    th, tw = np.polynomial.legendre.leggauss(nodes)
    th, tw = 0.5 * (th + 1), 0.5 * tw
    grads = spectral_gradient(f)
    gV = np.zeros((P, n1 - 1, d))
    for a, w in zip(th, tw):
        pts = B[:, :-1] + a * psi[:, :-1] + (1 - a) * psib[:, :-1]
        gV += w * np.stack([g.interpolate(pts, 3) for g in grads], axis=-1)
    V = np.zeros((P, n1, d))
    np.cumsum(gV * dt, axis=1, out=V[:, 1:])
    fx = f.interpolate(sol.X, 3)
    fxb = f.interpolate(other.X, 3)
    diff = fx - fxb
    lhs = (np.sum(diff, axis=1) - 0.5 * (diff[:, 0] + diff[:, -1])) * dt
    span = grid.n_steps
    if span & (span - 1):
        raise ValueError("grid must have a power-of-two number of steps")
    y = HolderPath(grid, psi - psib, 1.0)
    v = HolderPath(grid, V, 1.0)
    rhs = young_integral(y, v, grid.t0, grid.t1, min_level=max(0, int(math.log2(span)) - 2))
    rhs_val = np.einsum("pdd->p", rhs.value) if d > 1 else rhs.value[:, 0, 0]
    denom = math.sqrt(np.mean(lhs ** 2))
    rel = math.sqrt(np.mean((lhs - rhs_val) ** 2)) / denom if denom > 0 else 0.0
    return DivisionCheck(lhs, rhs_val, rel)
