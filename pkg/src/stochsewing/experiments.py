"""
Registry of named experiments. Each one checks a single acceptance claim
and returns metrics, pass/fail checks and CSV tables; the CLI writes them.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import averaging as avg
from . import gaussian_paths as gp
from . import heat as ht
from . import ito_examples as ito
from . import sewing as sw
from . import young as yg


@dataclass
class Outcome:
    metrics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, value, threshold) -> None:
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        self.checks[name] = {"passed": bool(passed), "value": value, "threshold": threshold}

    def table(self, name: str, header: list, rows: list) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self.tables[name] = buf.getvalue()

    def report(self, name: str, rep: sw.RateReport) -> None:
        self.tables[name] = rep.to_csv()
        self.metrics[name] = {"fitted_exponent": rep.fitted_exponent, "stderr": rep.stderr,
                              "prefactor": rep.prefactor}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


@dataclass
class Context:
    seed: int
    n_paths: int
    m_orders: list
    params: dict
    thresholds: dict
    workers: int = 1


@dataclass
class Experiment:
    name: str
    description: str
    claim: str
    n_paths: int
    params: dict
    thresholds: dict
    run: Callable[[Context], Outcome]


REGISTRY: dict[str, Experiment] = {}


def register(name, description, claim, n_paths, params, thresholds):
    def deco(fn):
        REGISTRY[name] = Experiment(name, description, claim, n_paths, params, thresholds, fn)
        return fn
    return deco


def _slope_ok(rep: sw.RateReport, target: float, tol: float) -> bool:
    return abs(rep.fitted_exponent - target) <= tol


# ---------------------------------------------------------------------------
# sewing and Itô examples
# ---------------------------------------------------------------------------

@register("qv-brownian", "quadratic variation of planar Brownian motion by sewing",
          "sums of squared Brownian increments over dyadic partitions converge to t times "
          "the identity, with L_2 errors decaying like the square root of the mesh",
          4000, {"dim": 2, "t": 1.0, "level": 10, "min_level": 2},
          {"mean_tol": 0.02, "slope": 0.5, "slope_tol": 0.15})
def _qv_brownian(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = gp.TimeGrid(0.0, p["t"], 2 ** p["level"])
    b = gp.sample_brownian(grid, p["dim"], c.n_paths, c.seed, c.workers)
    res = ito.quadratic_variation(b, "brownian", p["t"], p["level"], min_level=p["min_level"])
    out = Outcome()
    mean = res.limit.mean(axis=0)
    err = float(np.max(np.abs(mean - p["t"] * np.eye(p["dim"]))))
    out.metrics["mean_matrix"] = mean.tolist()
    out.check("mean_entrywise", err <= th["mean_tol"], err, th["mean_tol"])
    out.report("qv_rate", res.report)
    out.check("rate_slope", _slope_ok(res.report, th["slope"], th["slope_tol"]),
              res.report.fitted_exponent, [th["slope"], th["slope_tol"]])
    jerr = float(np.max(np.abs(res.doob.J - p["t"] * np.eye(p["dim"]))))
    out.check("predictable_part_exact", jerr <= 1e-12, jerr, 1e-12)
    return out


@register("qv-poisson", "quadratic variation of the compensated Poisson process",
          "the sewing limit of squared compensated Poisson increments is the jump counting process",
          2000, {"intensity": 1.0, "t": 1.0, "level": 12},
          {"agree_fraction": 0.99})
def _qv_poisson(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = gp.TimeGrid(0.0, p["t"], 2 ** p["level"])
    b = gp.sample_poisson(p["intensity"], grid, c.n_paths, c.seed)
    res = ito.quadratic_variation(b, "poisson", p["t"], p["level"], min_level=p["level"] - 6)
    N = b.poisson_counts()[:, grid.index_of(p["t"])]
    lim = res.limit[:, 0, 0]
    agree = float(np.mean(np.round(lim) == N))
    out = Outcome()
    out.metrics["max_abs_gap"] = float(np.max(np.abs(lim - N)))
    out.metrics["mean_jumps"] = float(N.mean())
    out.check("agreement", agree >= th["agree_fraction"], agree, th["agree_fraction"])
    jerr = float(np.max(np.abs(res.doob.J[:, 0, 0] - p["intensity"] * p["t"])))
    out.check("predictable_part_exact", jerr <= 1e-12, jerr, 1e-12)
    out.report("poisson_qv_rate", res.report)
    return out


@register("poisson-counterexample", "L_m norms of compensated Poisson increments across gaps",
          "for moments below two the compensated Poisson germ decays faster than the square "
          "root of the gap, so the square-root threshold is only meaningful for m >= 2",
          200000, {"intensity": 1.0, "m_list": [1.0, 1.5, 2.0], "gap_exponents": [4, 12]},
          {"m2_slope": 0.5, "m2_tol": 0.1, "m1_min": 0.8})
def _poisson_counter(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    lo, hi = p["gap_exponents"]
    gaps = [2.0 ** -k for k in range(lo, hi + 1)]
    rows, reps = ito.poisson_counterexample(p["intensity"], p["m_list"], gaps, c.n_paths, c.seed)
    out = Outcome()
    out.table("lm_table", ["gap", "m", "lm_value", "stderr", "exact"],
              [[r.gap, r.m, r.lm_value, r.stderr, r.exact] for r in rows])
    for m, rep in reps.items():
        out.report(f"lm_rate_m{m:g}", rep)
    if 2.0 in reps:
        s2 = reps[2.0].fitted_exponent
        out.check("m2_slope", abs(s2 - th["m2_slope"]) <= th["m2_tol"], s2,
                  [th["m2_slope"], th["m2_tol"]])
    if 1.0 in reps:
        s1 = reps[1.0].fitted_exponent
        out.check("m1_slope", s1 >= th["m1_min"], s1, th["m1_min"])
    return out


@register("ito-integral", "Itô integrals as sewing limits",
          "left-point sums of f(B) dB converge in L_2; for f(x) = x the limit is (B_1^2 - 1)/2 "
          "and for a tau-Hölder f the dyadic differences decay like mesh^(tau/2)",
          4000, {"level": 10, "min_level": 2, "tau": 0.5, "radius": 6.0},
          {"stderr_mult": 3.0, "slope_tol": 0.15})
def _ito_integral(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = gp.TimeGrid(0.0, 1.0, 2 ** p["level"])
    b = gp.sample_brownian(grid, 1, c.n_paths, c.seed, c.workers)
    lim, rep = ito.ito_integral(lambda x: x, b, 1.0, p["level"], min_level=p["min_level"])
    B1 = b.brownian_values()[:, -1, 0]
    diff = lim[:, 0, 0] - (B1 ** 2 - 1) / 2
    l2 = sw.estimate_lm(diff[:, None], 2)
    se = float(lim[:, 0, 0].std(ddof=1) / math.sqrt(c.n_paths))
    out = Outcome()
    out.metrics.update({"l2_discrepancy": l2, "mc_stderr": se,
                        "mean_discrepancy": float(diff.mean())})
    out.check("linear_limit", l2 < th["stderr_mult"] * se, l2, th["stderr_mult"] * se)
    out.report("linear_rate", rep)
    f = ito.clipped_power(p["tau"], p["radius"])
    _, rep2 = ito.ito_integral(f, b, 1.0, p["level"], min_level=p["min_level"])
    out.report("holder_rate", rep2)
    target = p["tau"] / 2
    out.check("holder_slope", _slope_ok(rep2, target, th["slope_tol"]), rep2.fitted_exponent,
              [target, th["slope_tol"]])
    return out


@register("ito-formula", "term-by-term Itô formula for f = sin",
          "f(B_1) - f(B_0) equals the sewing limits of the gradient and bracket terms; the "
          "Taylor remainder and the bracket fluctuation sums vanish with the mesh",
          10000, {"level": 10, "min_level": 2},
          {"residual": 0.02})
def _ito_formula(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = gp.TimeGrid(0.0, 1.0, 2 ** p["level"])
    b = gp.sample_brownian(grid, 1, c.n_paths, c.seed, c.workers)
    rep = ito.ito_formula_check(lambda x: np.sin(x[..., 0]), np.cos,
                                lambda x: -np.sin(x)[..., None], b, p["level"],
                                min_level=p["min_level"], third=lambda x: -np.cos(x),
                                third_bound=1.0)
    out = Outcome()
    out.metrics["residual_stderr"] = rep.residual_stderr
    out.check("residual", rep.residual_l2 < th["residual"], rep.residual_l2, th["residual"])
    out.report("remainder_rate", rep.remainder_report)
    out.report("fluctuation_rate", rep.fluctuation_report)
    out.check("remainder_decays", rep.remainder_report.fitted_exponent > 0,
              rep.remainder_report.fitted_exponent, 0.0)
    out.check("fluctuation_decays", rep.fluctuation_report.fitted_exponent > 0,
              rep.fluctuation_report.fitted_exponent, 0.0)
    return out


@register("dyadic-allocation", "allocation of arbitrary partitions into dyadic residuals",
          "the Riemann sum over any finite partition minus the one-step germ equals the sum "
          "of the dyadic residuals R = A(s1,s2) + A(s2,s3) + A(s3,s4) - A(s1,s4)",
          100, {"n_partitions": 20, "max_points": 40, "n_steps": 256, "hurst": 0.3},
          {"rtol": 1e-10})
def _allocation(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    n = p["n_steps"]
    grid = gp.TimeGrid(0.0, 1.0, n)
    bb = gp.sample_brownian(grid, 1, c.n_paths, c.seed, c.workers)
    fb = gp.sample_fbm_volterra(p["hurst"], grid, 1, c.n_paths, c.seed + 1, c.workers)
    sign = ht.GridField.from_function(np.sign, 1, 8.0, 1024)
    germs = [ito.brownian_qv_germ(bb), ito.ito_germ(np.sin, bb),
             avg.AveragedGerm(sign, fb).germ()]
    rng = np.random.default_rng([c.seed, 31])
    worst, rows = 0.0, []
    for k in range(p["n_partitions"]):
        size = int(rng.integers(2, p["max_points"] + 1))
        idx = np.unique(rng.choice(n + 1, size=size, replace=False))
        pts = grid.points[idx]
        levels = sw.dyadic_allocate(pts)
        for germ in germs:
            terms = germ.at(idx[:-1], idx[1:])
            lhs = terms.sum(axis=1) - germ.at([idx[0]], [idx[-1]])[:, 0]
            rhs = sw.allocation_residuals(germ, levels)
            scale = max(float(np.max(np.abs(terms).sum(axis=1))), 1e-300)
            err = float(np.max(np.abs(lhs - rhs))) / scale
            worst = max(worst, err)
            rows.append([k, germ.name, idx.size, err])
    out = Outcome()
    out.table("allocation", ["partition", "germ", "n_points", "relative_error"], rows)
    out.check("identity", worst <= th["rtol"], worst, th["rtol"])
    return out


# ---------------------------------------------------------------------------
# fractional Brownian motion
# ---------------------------------------------------------------------------

@register("fbm-sampler", "Volterra and Cholesky fBm samplers and local nondeterminism",
          "the Volterra discretisation has unit variance at t = 1, matches the fBm covariance, "
          "and the conditional standard deviation is bounded below by a multiple of |t-s|^H",
          4000, {"hursts": [0.1, 0.3], "variance_steps": 4096, "cov_steps": 256, "n_pairs": 10,
                 "ndp_grid": 50},
          {"variance_tol": 0.03, "cov_tol": 0.05, "mc_sigmas": 4.0})
def _fbm_sampler(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    out = Outcome()
    rows, ndp_rows = [], []
    rng = np.random.default_rng([c.seed, 41])
    for H in p["hursts"]:
        big = gp.VolterraFbm(H, gp.TimeGrid(0.0, 1.0, p["variance_steps"]))
        var1 = big.variance(p["variance_steps"])
        out.check(f"variance_H{H:g}", abs(var1 - 1) <= th["variance_tol"], var1,
                  [1.0, th["variance_tol"]])
        grid = gp.TimeGrid(0.0, 1.0, p["cov_steps"])
        vm = gp.VolterraFbm(H, grid)
        cov_model = vm.coef_w @ vm.coef_w.T + vm.coef_aux @ vm.coef_aux.T \
            + np.outer(vm.coef_origin, vm.coef_origin)
        vb = gp.sample_fbm_volterra(H, grid, 1, c.n_paths, c.seed, c.workers)
        cb = gp.sample_fbm_cholesky(H, grid, 1, c.n_paths, c.seed + 7, c.workers)
        worst_model, worst_mc = 0.0, 0.0
        for _ in range(p["n_pairs"]):
            i, j = sorted(rng.integers(1, p["cov_steps"] + 1, size=2))
            exact = gp.fbm_covariance(H, grid.points[i], grid.points[j])
            scale = math.sqrt(grid.points[i] ** (2 * H) * grid.points[j] ** (2 * H))
            rel = abs(cov_model[i, j] - exact) / scale
            worst_model = max(worst_model, rel)
            zv = vb.fbm_values[:, i, 0] * vb.fbm_values[:, j, 0]
            zc = cb.fbm_values[:, i, 0] * cb.fbm_values[:, j, 0]
            se = math.sqrt(zv.var(ddof=1) / zv.size + zc.var(ddof=1) / zc.size)
            z = abs(zv.mean() - zc.mean()) / se
            worst_mc = max(worst_mc, z)
            rows.append([H, int(i), int(j), exact, float(cov_model[i, j]), float(zv.mean()),
                         float(zc.mean()), z])
        out.check(f"covariance_H{H:g}", worst_model <= th["cov_tol"], worst_model, th["cov_tol"])
        out.check(f"samplers_agree_H{H:g}", worst_mc <= th["mc_sigmas"], worst_mc, th["mc_sigmas"])
        k = p["ndp_grid"]
        ts = np.linspace(0.0, 1.0, k + 1)[1:]
        ss = np.linspace(0.0, 1.0, k + 1)[:-1]
        ratio = math.inf
        for t in ts:
            # self-similarity: sigma(s, t) = t^H sigma(s/t, 1)
            for s in ss[ss < t]:
                r = gp.sigma_H(H, s / t, 1.0) * t ** H / (t - s) ** H
                ratio = min(ratio, r)
        ndp_rows.append([H, ratio])
        out.check(f"nondeterminism_H{H:g}", ratio > 0, ratio, 0.0)
        out.metrics[f"ndp_constant_H{H:g}"] = ratio
    out.table("covariances", ["hurst", "i", "j", "exact", "model", "volterra_mc",
                              "cholesky_mc", "z"], rows)
    out.table("nondeterminism", ["hurst", "min_ratio"], ndp_rows)
    return out


@register("fbm-conditional", "conditional variance of fBm given the past",
          "Var(B_t - E[B_t | F_s]) equals the square of the conditional standard deviation "
          "sigma_H(s, t) computed from the Volterra kernel",
          40000, {"hursts": [0.1, 0.3], "n_steps": 1024,
                  "pairs": [[0.25, 0.5], [0.5, 1.0], [0.125, 0.875], [0.875, 0.9375]]},
          {"rel_tol": 0.05})
def _fbm_conditional(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = gp.TimeGrid(0.0, 1.0, p["n_steps"])
    out = Outcome()
    rows = []
    for H in p["hursts"]:
        model = gp.VolterraFbm(H, grid)
        xi, aux, org = model.draw_noise(c.n_paths, 1, c.seed, c.workers)
        bundle = gp.PathBundle(grid, 1, c.n_paths, w_increments=xi * math.sqrt(grid.dt),
                               hurst=H, aux_noise=aux, aux_origin=org, model=model)
        for s, t in p["pairs"]:
            k, i = grid.index_of(s), grid.index_of(t)
            Bt = model.values(xi, aux, org, rows=[i])[:, 0, 0]
            cm = model.cond_mean(bundle, k, [i])[:, 0, 0]
            var = float(np.var(Bt - cm, ddof=1))
            exact = gp.sigma_H(H, s, t) ** 2
            rel = abs(var - exact) / exact
            rows.append([H, s, t, var, exact, model.cond_variance(k, i), rel])
            out.check(f"H{H:g}_s{s:g}_t{t:g}", rel <= th["rel_tol"], rel, th["rel_tol"])
    out.table("conditional_variance", ["hurst", "s", "t", "mc_variance", "sigma_sq",
                                       "model_variance", "relative_error"], rows)
    return out


# ---------------------------------------------------------------------------
# singular drifts
# ---------------------------------------------------------------------------

def _sde_grid(p):
    return gp.TimeGrid(0.0, p.get("T", 1.0), p["n_steps"])


@register("girsanov", "Girsanov weights for a bounded drift along fBm",
          "the exponential weight built from the fractional transform of a bounded drift has "
          "expectation one",
          10000, {"hurst": 0.3, "n_steps": 1024, "T": 1.0, "strength": 1.0},
          {"stderr_mult": 4.0})
def _girsanov(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    cfg = avg.SdeConfig(p["hurst"], avg.make_drift("sign", strength=p["strength"]), 0.0, grid)
    sol = avg.solve_singular_sde(cfg, c.n_paths, c.seed, workers=c.workers)
    res = avg.girsanov_weights(cfg.drift, sol.X, sol.bundle.w_increments, p["hurst"], grid,
                               cfg.delta)
    out = Outcome()
    z = abs(res.mean - 1) / res.stderr
    out.metrics.update({"mean_xi": res.mean, "stderr": res.stderr,
                        "energy_ratio": res.energy_ratio})
    out.check("martingale", z <= th["stderr_mult"], z, th["stderr_mult"])
    zero = avg.make_drift("zero")
    res0 = avg.girsanov_weights(zero, sol.X, sol.bundle.w_increments, p["hurst"], grid)
    out.check("zero_drift_exact", bool(np.all(res0.xi == 1.0)), float(np.max(np.abs(res0.xi - 1))),
              0.0)
    return out


@register("psi-regularity", "Hölder regularity of psi = X - B^H for singular drifts",
          "the drift part of the solution is Hölder of order 1 - Hd/p - 1/q in L_2",
          10000, {"hurst": 0.3, "n_steps": 1024, "gaps": [256, 128, 64, 32, 16, 8, 4, 2],
                  "power": 0.25, "level": 16.0},
          {"sign_tol": 0.1, "power_tol": 0.1})
def _psi_regularity(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    H = p["hurst"]
    cfg = avg.SdeConfig(H, avg.make_drift("sign"), 0.0, grid)
    sol = avg.solve_singular_sde(cfg, c.n_paths, c.seed, workers=c.workers)
    rep = avg.psi_holder(sol, p["gaps"])
    out = Outcome()
    out.report("psi_sign", rep)
    tau = cfg.exponents.tau
    out.check("sign_exponent", abs(rep.fitted_exponent - tau) <= th["sign_tol"],
              rep.fitted_exponent, [tau, th["sign_tol"]])
    drift = avg.make_drift("clipped_power", exponent=p["power"], level=p["level"], p=4.0)
    cfg2 = avg.SdeConfig(H, drift, 0.0, grid)
    sol2 = avg.solve_singular_sde(cfg2, bundle=sol.bundle)
    rep2 = avg.psi_holder(sol2, p["gaps"])
    out.report("psi_power", rep2)
    tau2 = cfg2.exponents.tau
    out.metrics["tau_power"] = tau2
    out.check("power_exponent", rep2.fitted_exponent >= tau2 - th["power_tol"],
              rep2.fitted_exponent, tau2 - th["power_tol"])
    return out


@register("averaging-exponents", "time and space exponents of averaged mollified noise",
          "averaging a C^nu field along fBm gains regularity: time increments scale like "
          "|t-s|^(1 + H nu), spatial differences like |x-y|^alpha at the cost of H alpha in time",
          2000, {"hurst": 0.3, "n_steps": 1024, "half_width": 8.0, "n_cells": 2048,
                 "mollify_sd": 0.02, "nu": -0.5, "alpha": 1.0,
                 "gaps": [256, 128, 64, 32, 16, 8, 4],
                 "separations": [0.02, 0.01, 0.005, 0.0025, 0.00125], "fixed_separation": 0.02},
          {"time_tol": 0.15, "space_tol": 0.15})
def _averaging_exponents(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    b = gp.sample_fbm_volterra(p["hurst"], grid, 1, c.n_paths, c.seed, c.workers)
    noise = ht.white_noise(1, p["half_width"], p["n_cells"], c.seed)
    f = ht.heat(p["mollify_sd"] ** 2, noise)
    res = avg.averaged_field(f, b, p["nu"], math.inf, p["alpha"], p["gaps"], p["separations"],
                             p["fixed_separation"])
    out = Outcome()
    for name, rep, pred, tol in [("time", res.time_report, res.predicted_time, th["time_tol"]),
                                 ("space", res.space_report, res.predicted_space, th["space_tol"]),
                                 ("space_time", res.space_time_report, res.predicted_space_time,
                                  th["time_tol"])]:
        out.report(f"{name}_rate", rep)
        out.check(f"{name}_exponent", abs(rep.fitted_exponent - pred) <= tol,
                  rep.fitted_exponent, [pred, tol])
    return out


@register("averaging-pathwise", "averaged germ against the pathwise integral for f = sign",
          "for bounded f the sewing limit of the averaged germ is the pathwise integral of f(B^H)",
          2000, {"hurst": 0.3, "n_steps": 1024, "half_width": 8.0, "n_cells": 2048},
          {"stderr_mult": 3.0})
def _averaging_pathwise(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    b = gp.sample_fbm_volterra(p["hurst"], grid, 1, c.n_paths, c.seed, c.workers)
    f = ht.GridField.from_function(np.sign, 1, p["half_width"], p["n_cells"])
    lim = avg.AveragedGerm(f, b).sewing_path()[:, -1, 0, 0]
    pw = avg.pathwise_integral(f, b)[:, -1, 0, 0]
    d = lim - pw
    se = float(d.std(ddof=1) / math.sqrt(d.size))
    out = Outcome()
    out.metrics.update({"mean_difference": float(d.mean()), "stderr": se,
                        "l2_difference": sw.estimate_lm(d[:, None], 2),
                        "l2_integral": sw.estimate_lm(pw[:, None], 2)})
    out.check("agreement", abs(d.mean()) <= th["stderr_mult"] * se, abs(float(d.mean())),
              th["stderr_mult"] * se)
    return out


@register("young-jacobian", "linear Young flow against finite-difference Jacobians",
          "the derivative of the flow in the initial point solves the linear equation driven "
          "by V = integral of the drift gradient along the solution",
          1000, {"n_steps": 1024, "h": 1e-4, "scale": 0.3, "x0": [0.1, -0.2], "hurst": 0.5},
          {"rel_tol": 0.05})
def _young_jacobian(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    cfg = avg.SdeConfig(p["hurst"], avg.make_drift("mixed_erf", 2, scale=p["scale"]),
                        p["x0"], grid)
    res = yg.jacobian_check(cfg, c.n_paths, c.seed, p["h"], c.workers)
    out = Outcome()
    out.metrics["mean_flow"] = res.flow.mean(axis=0).tolist()
    out.check("relative_error", res.relative_error < th["rel_tol"], res.relative_error,
              th["rel_tol"])
    return out


@register("division-identity", "difference of additive functionals as a Young integral",
          "the difference of time integrals of f along two coupled solutions equals the Young "
          "integral of psi - psi' against the averaged gradient along their segment",
          1000, {"hurst": 0.3, "n_steps": 1024, "width": 0.3, "offset": 0.3,
                 "half_width": 8.0, "n_cells": 2048},
          {"rel_tol": 0.02})
def _division(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    grid = _sde_grid(p)
    f = ht.gaussian_bump(1, p["half_width"], p["n_cells"], p["width"])
    drift = avg.make_drift("sign")
    s1 = avg.solve_singular_sde(avg.SdeConfig(p["hurst"], drift, 0.0, grid), c.n_paths, c.seed,
                                workers=c.workers)
    s2 = avg.solve_singular_sde(avg.SdeConfig(p["hurst"], drift, p["offset"], grid),
                                bundle=s1.bundle)
    res = yg.division_identity_check(f, s1, s2)
    out = Outcome()
    out.check("relative_residual", res.relative_residual < th["rel_tol"], res.relative_residual,
              th["rel_tol"])
    return out


# ---------------------------------------------------------------------------
# heat semigroup
# ---------------------------------------------------------------------------

@register("heat-schauder", "heat semigroup law and Schauder exponent fits",
          "P_s P_t = P_(s+t); sup norms of P_sigma f decay like sigma^(-d/2p) for f in L^p, "
          "like sigma^(nu/2) for f in C^nu, and gradients lose a further sigma^(1/2)",
          20, {"half_width": 8.0, "n_cells": 4096, "bump_width": 0.02,
               "sigmas": [0.64, 0.32, 0.16, 0.08, 0.04, 0.02, 0.01],
               "noise_sigmas": [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125]},
          {"semigroup_rtol": 1e-10, "fit_tol": 0.15})
def _heat(c: Context) -> Outcome:
    p, th = c.params, c.thresholds
    L, n = p["half_width"], p["n_cells"]
    out = Outcome()
    rng = np.random.default_rng([c.seed, 51])
    worst = 0.0
    for _ in range(c.n_paths):
        f = ht.GridField(1, L, n, rng.standard_normal(n))
        s1, s2 = rng.uniform(0.001, 0.1, size=2)
        a = ht.heat(s1, ht.heat(s2, f)).values
        b = ht.heat(s1 + s2, f).values
        worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    out.check("semigroup", worst <= th["semigroup_rtol"], worst, th["semigroup_rtol"])
    bump = ht.gaussian_bump(1, L, n, p["bump_width"])
    noise = [ht.white_noise(1, L, n, c.seed + k) for k in range(c.n_paths)]
    step = ht.GridField.from_function(lambda x: np.clip(x, -1, 1), 1, L, n // 4)
    cases = [("bump_sup", [bump], p["sigmas"], -0.5, False),
             ("bump_gradient", [bump], p["sigmas"], -1.0, True),
             ("noise_sup", noise, p["noise_sigmas"], -0.25, False),
             ("bounded_sup", [step], p["sigmas"][:4], 0.0, False)]
    for name, fields, sig, pred, grad in cases:
        res = ht.schauder_check(fields, sig, pred, gradient=grad, tolerance=th["fit_tol"],
                                label=name)
        out.report(name, res.report)
        out.check(name, res.passed, res.report.fitted_exponent, [pred, th["fit_tol"]])
    return out


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

@register("determinism", "byte-identical outputs across repeats and worker counts",
          "every experiment is a pure function of its configuration and seed",
          16, {"targets": [], "workers": [1, 3]},
          {})
def _determinism(c: Context) -> Outcome:
    p = c.params
    targets = p["targets"] or [n for n in REGISTRY if n != "determinism"]
    out = Outcome()
    rows = []
    for name in targets:
        exp = REGISTRY[name]
        blobs = []
        for w in p["workers"]:
            ctx = Context(c.seed, min(c.n_paths, exp.n_paths), [2], dict(exp.params),
                          dict(exp.thresholds), w)
            blobs.append(serialise(exp.run(ctx)))
        same = all(b == blobs[0] for b in blobs[1:])
        rows.append([name, int(same)])
        out.check(name, same, int(same), 1)
    out.table("determinism", ["experiment", "identical"], rows)
    return out


def serialise(outcome: Outcome) -> bytes:
    """Canonical bytes of an outcome (metrics, checks and tables)."""
    import json
    body = {"metrics": outcome.metrics, "checks": outcome.checks, "tables": outcome.tables}
    return json.dumps(sw.json_safe(body), sort_keys=True).encode()
