"""
Least-squares fitting: a bounded Levenberg-Marquardt driver and the three
linewidth fits (single-exponential echo decays, the Gamma_eff(B, T)
surface, and 3PPE log spectral diffusion).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .echo import THREE_PULSE, EchoTrace, ThreePulseConfig, population_term, reference_time
from .model import DEFAULT_BOUNDS, PARAM_NAMES, Environment, ModelParams, effective_linewidth

ILL_CONDITIONED = 1e12
LAMBDA0 = 1e-3
# smallest/largest singular value below this flags a degenerate parameter set;
# central differences leave a noise floor near 1e-10
SINGULAR_RTOL = 1e-8


class FitError(RuntimeError):
    """A fit that cannot be carried out or whose result is meaningless."""


class SingularJacobianError(FitError):
    def __init__(self, msg, combination):
        super().__init__(msg)
        self.combination = combination


@dataclass
class FitResult:
    names: list
    values: dict
    uncertainties: dict
    fixed: dict = field(default_factory=dict)
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    residual_rms: float = float("nan")
    cost: float = float("nan")
    n_iterations: int = 0
    converged: bool = False
    active_bounds: list = field(default_factory=list)
    method: str = "lm"
    message: str = ""
    derived: dict = field(default_factory=dict)

    @property
    def params(self) -> dict:
        """name -> (value, 1-sigma); fixed parameters report sigma 0."""
        out = {n: (self.values[n], self.uncertainties[n]) for n in self.names}
        out.update({n: (v, 0.0) for n, v in self.fixed.items()})
        return out

    @property
    def bound_saturated(self) -> bool:
        return bool(self.active_bounds)

    def __getitem__(self, name):
        if name in self.values:
            return self.values[name]
        if name in self.fixed:
            return self.fixed[name]
        return self.derived[name][0]

    def to_dict(self) -> dict:
        return {
            "parameters": {
                n: {"value": v, "uncertainty": s, "fixed": n in self.fixed}
                for n, (v, s) in self.params.items()
            },
            "derived": {n: {"value": v, "uncertainty": s} for n, (v, s) in self.derived.items()},
            "free": list(self.names),
            "covariance": self.covariance.tolist(),
            "residual_rms": self.residual_rms,
            "cost": self.cost,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "active_bounds": list(self.active_bounds),
            "method": self.method,
            "message": self.message,
        }


def _numeric_jacobian(fun, u, r0, lo, hi, scale):
    m, k = r0.size, u.size
    J = np.empty((m, k))
    for j in range(k):
        # scaled coordinates are O(1); relative step with a unit floor
        h = 1e-6 * max(abs(u[j]), 1.0)
        up, dn = u.copy(), u.copy()
        up[j] += h
        dn[j] -= h
        if up[j] > hi[j]:
            up[j] = u[j]
        if dn[j] < lo[j]:
            dn[j] = u[j]
        width = up[j] - dn[j]
        J[:, j] = (fun(up * scale) - fun(dn * scale)) / width
    return J


def _grad_ok(J, r, u, lo, hi, gtol, cost, cost0):
    # MINPACK-style cosine test on the projected gradient
    if cost <= 1e-24 * max(cost0, 1e-300):
        return True
    g = J.T @ r
    free = ~(((u <= lo) & (g > 0)) | ((u >= hi) & (g < 0)))
    rn = np.linalg.norm(r)
    if rn == 0:
        return True
    cn = np.linalg.norm(J, axis=0)
    cos = np.where(cn > 0, np.abs(g) / np.where(cn > 0, cn, 1.0) / rn, 0.0)
    return bool(np.all(cos[free] <= gtol))


def minimize(fun: Callable, p0, bounds=None, *, names=None, x_scale=None, jac=None,
             max_iter: int = 500, xtol: float = 1e-10, ftol: float = 1e-12,
             gtol: float = 1e-8, scale_covariance: bool = True) -> FitResult:
    """
    Bounded Levenberg-Marquardt on a residual vector.

    fun(p) -> residuals (already weighted); optional jac(p) -> d residuals / d p,
    otherwise central differences are used. Steps are projected onto the
    bounds. Falls back to Nelder-Mead when the scaled Jacobian condition
    number exceeds 1e12. Hitting `max_iter` returns converged=False rather
    than raising.
    """
    p0 = np.asarray(p0, dtype=float)
    k = p0.size
    names = list(names) if names is not None else [f"p{i}" for i in range(k)]
    if bounds is None:
        bounds = [(-np.inf, np.inf)] * k
    lo_p = np.array([b[0] for b in bounds], dtype=float)
    hi_p = np.array([b[1] for b in bounds], dtype=float)
    if np.any(p0 < lo_p) or np.any(p0 > hi_p):
        raise ValueError("p0 outside bounds")
    if x_scale is None:
        scale = np.where(p0 != 0, np.abs(p0), 1.0)
    else:
        scale = np.asarray(x_scale, dtype=float)
    lo, hi = lo_p / scale, hi_p / scale

    r = np.asarray(fun(p0), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("objective is not finite at p0")
    u = p0 / scale
    cost = cost0 = 0.5 * float(r @ r)
    # undamped Gauss-Newton first; damping starts at LAMBDA0 after a rejected step
    lam = 0.0
    converged = False
    method = "lm"
    message = "iteration cap reached"
    it = 0
    if jac is None:
        jacobian = lambda u, r: _numeric_jacobian(fun, u, r, lo, hi, scale)
    else:
        jacobian = lambda u, r: np.asarray(jac(u * scale), dtype=float).reshape(r.size, k) * scale
    J = jacobian(u, r)
    while it < max_iter:
        it += 1
        sv = np.linalg.svd(J, compute_uv=False)
        if sv.size and (sv[-1] == 0 or sv[0] / sv[-1] > ILL_CONDITIONED):
            if cost > 1e-24 * max(cost0, 1e-300):
                method = "nelder-mead"
                break
        g = J.T @ r
        A = J.T @ J
        D = np.diag(np.maximum(np.diag(A), 1e-30))
        try:
            step = np.linalg.solve(A + lam * D, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A + lam * D, -g, rcond=None)[0]
        u_new = np.clip(u + step, lo, hi)
        r_new = np.asarray(fun(u_new * scale), dtype=float)
        cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        if cost_new < cost:
            du = np.linalg.norm(u_new - u)
            dcost = (cost - cost_new) / max(cost, 1e-300)
            u, r, cost = u_new, r_new, cost_new
            lam = lam / 3.0 if lam > 1e-12 else 0.0
            J = jacobian(u, r)
            if cost <= 1e-24 * max(cost0, 1e-300):
                converged = True
                message = "residual at roundoff level"
                break
            small_step = du < xtol * (np.linalg.norm(u) + xtol)
            if (small_step or dcost < ftol) and _grad_ok(J, r, u, lo, hi, gtol, cost, cost0):
                converged = True
                message = "relative step below xtol" if small_step else "relative cost change below ftol"
                break
        else:
            lam = max(4.0 * lam, LAMBDA0)
            if lam > 1e16:
                converged = _grad_ok(J, r, u, lo, hi, gtol, cost, cost0)
                message = "no further decrease" + ("" if converged else " (gradient test failed)")
                break

    if method == "nelder-mead":
        from scipy.optimize import minimize as _nm

        obj = lambda v: 0.5 * float(np.sum(np.asarray(fun(np.clip(v, lo, hi) * scale)) ** 2))
        bnds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
        res = _nm(obj, u, method="Nelder-Mead", bounds=bnds,
                  options={"maxiter": max(max_iter * 20, 2000), "xatol": xtol, "fatol": ftol * max(cost, 1e-300),
                           "adaptive": True})
        u = np.clip(res.x, lo, hi)
        r = np.asarray(fun(u * scale), dtype=float)
        cost = 0.5 * float(r @ r)
        it += int(res.nit)
        converged = bool(res.success)
        message = "Nelder-Mead fallback (ill-conditioned Jacobian): " + str(res.message)
        J = jacobian(u, r)

    p = u * scale
    m = r.size
    dof = m - k
    # invert in scaled coordinates, where J^T J is well conditioned, then map to p
    cov_u = np.linalg.pinv(J.T @ J, rcond=1e-15, hermitian=True)
    cov = cov_u * np.outer(scale, scale)
    if scale_covariance and dof > 0:
        cov = cov * (2.0 * cost / dof)
    cov = 0.5 * (cov + cov.T)
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    active = [n for n, ui, l, h in zip(names, u, lo, hi) if ui <= l or ui >= h]
    return FitResult(
        names=names,
        values=dict(zip(names, map(float, p))),
        uncertainties=dict(zip(names, map(float, sig))),
        covariance=cov,
        residual_rms=math.sqrt(2.0 * cost / m) if m else float("nan"),
        cost=cost,
        n_iterations=it,
        converged=converged,
        active_bounds=active,
        method=method,
        message=message,
    )


# --------------------------------------------------------------------------
# echo decays


def fit_exponential_decay(trace: EchoTrace, first_decade_only: bool = True) -> FitResult:
    """
    Fit I = I0 exp(-4 pi Gamma t) in log space.

    Intensities are normalized by their maximum first, so scaling a trace by
    a power of two leaves gamma_eff bit-identical. Stderr, when present,
    weights points by I/sigma (the log-space error). Derived: t2 = 1/(pi Gamma).
    """
    t = trace.delays
    y = trace.intensities
    if len(t) < 4:
        raise FitError("need at least 4 points")
    if np.any(y <= 0):
        raise FitError("intensities must be positive for a log-space fit")
    imax = float(np.max(y))
    keep = y >= imax / 10.0 if first_decade_only else np.ones(len(y), bool)
    t, y = t[keep], y[keep]
    if len(t) < 3:
        raise FitError(f"only {len(t)} points in the first decade; need 3")
    logy = np.log(y / imax)
    if trace.stderr is not None:
        se = trace.stderr[keep]
        w = np.where(se > 0, y / np.where(se > 0, se, 1.0), 0.0)
    else:
        w = np.ones_like(t)
    if np.count_nonzero(w) < 3:
        raise FitError("fewer than 3 points with positive weight")
    # weighted linear regression logy = a + b t
    W = w * w
    sw = W.sum()
    tm = (W * t).sum() / sw
    ym = (W * logy).sum() / sw
    dt = t - tm
    stt = (W * dt * dt).sum()
    if stt == 0:
        raise FitError("all delays identical")
    slope = (W * dt * (logy - ym)).sum() / stt
    icpt = ym - slope * tm
    gamma = -slope / (4.0 * np.pi)
    if not gamma > 0:
        raise FitError(f"trace does not decay (fitted slope {slope:.3g} /s)")
    resid = w * (logy - (icpt + slope * t))
    dof = len(t) - 2
    # covariance scaled by reduced chi-square
    s2 = float(resid @ resid) / dof if dof > 0 else 1.0
    var_b = s2 / stt
    var_a = s2 * (1.0 / sw + tm * tm / stt)
    cov_ab = -s2 * tm / stt
    i0 = imax * math.exp(icpt)
    # map (a, b) -> (gamma, i0)
    jac = np.array([[0.0, -1.0 / (4.0 * np.pi)], [i0, 0.0]])
    cov = jac @ np.array([[var_a, cov_ab], [cov_ab, var_b]]) @ jac.T
    sg, si = math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(cov[1, 1], 0.0))
    t2 = 1.0 / (np.pi * gamma)
    return FitResult(
        names=["gamma_eff", "i0"],
        values={"gamma_eff": float(gamma), "i0": float(i0)},
        uncertainties={"gamma_eff": sg, "i0": si},
        covariance=cov,
        residual_rms=math.sqrt(float(resid @ resid) / len(t)),
        cost=0.5 * float(resid @ resid),
        n_iterations=1,
        converged=True,
        method="linear-log",
        message=f"{len(t)} points fitted" + (" (first decade)" if first_decade_only else ""),
        derived={"t2": (float(t2), float(t2 * sg / gamma))},
    )


# --------------------------------------------------------------------------
# Gamma_eff(B, T) surface

# typical magnitudes used when a starting value is zero
_TYPICAL = {"gamma0": 1e6, "alpha0": 1e6, "n": 1.0, "g_env": 10.0, "c1": 1e21,
            "c2": 1e14, "gammaS0": 1e9, "gammaS_slope": 1e11}


def _null_combination(J, names):
    _, s, vt = np.linalg.svd(J, full_matrices=False)
    v = vt[-1]
    idx = np.argsort(-np.abs(v))
    parts = [names[i] for i in idx if abs(v[i]) > 0.1 * np.abs(v).max()]
    return parts, s


def fit_linewidth_surface(data: Sequence, p0: ModelParams,
                          fixed: Iterable[str] = ("gammaS0", "gammaS_slope"),
                          bounds: Optional[Mapping[str, tuple]] = None,
                          **options) -> FitResult:
    """
    Weighted least squares of effective_linewidth(env, p) to (env, Gamma, sigma) data.

    gammaS0 and gammaS_slope are held at their p0 values by default. Raises
    FitError for data that cannot separate the parameters and
    SingularJacobianError (naming the degenerate combination) when the
    Jacobian at the solution is rank deficient.
    """
    data = [(env, float(g), float(s)) for env, g, s in data]
    fixed = set(fixed)
    unknown = fixed - set(PARAM_NAMES)
    if unknown:
        raise KeyError(f"unknown parameters in fixed: {sorted(unknown)}")
    free = [n for n in PARAM_NAMES if n not in fixed]
    fields = {e.field_B for e, _, _ in data}
    temps = {e.temperature_T for e, _, _ in data}
    if len(temps) < 2 and {"n", "alpha0"} <= set(free):
        raise FitError("data at a single temperature: n and alpha0 not separable")
    if len(fields) < 2 and set(free) & {"g_env", "c1", "c2"}:
        raise FitError("data at a single field: g_env, c1 and c2 not separable")
    if any(s <= 0 for _, _, s in data):
        raise FitError("sigma must be positive")
    b = dict(DEFAULT_BOUNDS)
    if bounds:
        b.update(bounds)
    base = p0.as_dict()
    x0 = np.array([base[n] for n in free])
    blist = [b[n] for n in free]
    for n, v, (l, h) in zip(free, x0, blist):
        if not l <= v <= h:
            raise FitError(f"p0.{n} = {v} outside bounds [{l}, {h}]")
    envs = [e for e, _, _ in data]
    y = np.array([g for _, g, _ in data])
    sig = np.array([s for _, _, s in data])

    def model(x):
        d = dict(base)
        d.update(zip(free, x))
        p = ModelParams(**d)
        return np.array([effective_linewidth(e, p) for e in envs])

    def resid(x):
        return (model(x) - y) / sig

    scale = np.array([abs(v) if v != 0 else _TYPICAL[n] for n, v in zip(free, x0)])
    res = minimize(resid, x0, blist, names=free, x_scale=scale, **options)
    res.fixed = {n: base[n] for n in fixed}
    J = _numeric_jacobian(resid, np.array([res.values[n] for n in free]) / scale,
                          resid(np.array([res.values[n] for n in free])),
                          np.array([l for l, _ in blist]) / scale,
                          np.array([h for _, h in blist]) / scale, scale)
    combo, s = _null_combination(J, free)
    if s[-1] <= SINGULAR_RTOL * s[0]:
        raise SingularJacobianError(
            "singular Jacobian: degenerate combination of " + ", ".join(combo), combo)
    if res.active_bounds:
        res.message += "; bound-saturated: " + ", ".join(res.active_bounds)
    return res


def surface_params(res: FitResult, template: ModelParams = ModelParams()) -> ModelParams:
    d = template.as_dict()
    d.update({n: v for n, (v, _) in res.params.items() if n in d})
    return ModelParams(**d)


# --------------------------------------------------------------------------
# 3PPE log spectral diffusion

THREE_PULSE_FREE = ("i0", "beta_branch", "tz_zeeman", "gamma_log")


def fit_3ppe_diffusion(traces: Sequence[EchoTrace], cfg0: ThreePulseConfig,
                       fixed: Iterable[str] = (), i0: Optional[Sequence[float]] = None,
                       **options) -> FitResult:
    """
    Joint log-space fit of 3PPE traces sharing beta, T_Z and gamma.

    Each trace gets its own amplitude i0_k. t1_excited, gamma_t0 and t0_ref
    always come from cfg0; `fixed` may add any of THREE_PULSE_FREE.
    """
    traces = list(traces)
    if not traces:
        raise FitError("no traces")
    for tr in traces:
        if tr.kind != THREE_PULSE:
            raise FitError("fit_3ppe_diffusion needs three-pulse traces")
        if np.any(tr.intensities <= 0):
            raise FitError("intensities must be positive for a log-space fit")
    fixed = set(fixed)
    bad = fixed - set(THREE_PULSE_FREE)
    if bad:
        raise KeyError(f"cannot fix {sorted(bad)}; choose from {THREE_PULSE_FREE}")
    span = max(math.log10(tr.delays[-1] / tr.delays[0]) for tr in traces if tr.delays[0] > 0)
    if "gamma_log" not in fixed:
        if span < 1.0:
            raise FitError(f"t23 spans {span:.2f} decades: gamma_log unidentifiable")
        if span < 2.0:
            warnings.warn(f"t23 spans only {span:.2f} decades; gamma_log poorly constrained")
    if i0 is None:
        i0 = [float(tr.intensities[0]) for tr in traces]

    shared = [n for n in ("beta_branch", "tz_zeeman", "gamma_log") if n not in fixed]
    amp = [f"i0_{k}" for k in range(len(traces))] if "i0" not in fixed else []
    names = amp + shared
    x0 = np.array(list(i0)[: len(amp)] + [getattr(cfg0, n) for n in shared], dtype=float)
    bnd = {"beta_branch": (0.0, 1.0), "tz_zeeman": (1e-12, np.inf), "gamma_log": (0.0, np.inf)}
    blist = [(0.0, np.inf)] * len(amp) + [bnd[n] for n in shared]

    logs = [np.log(tr.intensities) for tr in traces]
    wts = [np.ones(len(tr)) if tr.stderr is None else tr.intensities / tr.stderr for tr in traces]
    t0s = [reference_time(tr.delays, tr.t12_fixed, cfg0) for tr in traces]

    def unpack(x):
        vals = dict(zip(names, x))
        amps = [vals.get(f"i0_{k}", i0[k]) for k in range(len(traces))]
        c = {n: vals.get(n, getattr(cfg0, n)) for n in ("beta_branch", "tz_zeeman", "gamma_log")}
        return amps, c

    def resid(x):
        amps, c = unpack(x)
        out = []
        for k, tr in enumerate(traces):
            t = tr.delays
            br = population_term(t, cfg0.t1_excited, c["tz_zeeman"], c["beta_branch"])
            with np.errstate(divide="ignore"):
                gam = cfg0.gamma_t0 + c["gamma_log"] * np.log10(t / t0s[k])
            gam = np.where(t == 0, cfg0.gamma_t0, np.maximum(gam, 0.0))
            with np.errstate(divide="ignore"):
                model = np.log(amps[k]) + 2.0 * np.log(br) - 4.0 * np.pi * tr.t12_fixed * gam
            out.append(wts[k] * (model - logs[k]))
        return np.concatenate(out)

    typical = {"beta_branch": 0.5, "tz_zeeman": cfg0.t1_excited, "gamma_log": 1e5}
    scale = np.array([abs(v) if v != 0 else typical.get(n, 1.0) for n, v in zip(names, x0)])
    res = minimize(resid, x0, blist, names=names, x_scale=scale, **options)
    res.fixed = {"t1_excited": cfg0.t1_excited, "gamma_t0": cfg0.gamma_t0}
    if cfg0.t0_ref is not None:
        res.fixed["t0_ref"] = cfg0.t0_ref
    for n in fixed:
        if n == "i0":
            res.fixed.update({f"i0_{k}": float(i0[k]) for k in range(len(traces))})
        else:
            res.fixed[n] = getattr(cfg0, n)
    return res
