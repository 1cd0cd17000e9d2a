"""
Forward models for photon-echo intensities.

Two-pulse decays (single exponential, or averaged over the TLS rate/energy
distribution) and three-pulse decays with Zeeman-sublevel population
dynamics and logarithmic spectral diffusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    DomainError,
    Environment,
    ModelParams,
    TLSDistribution,
    gamma_sd,
    intrinsic_linewidth,
)
from .quadrature import IntegrationPlan, integrate_tls

TWO_PULSE = "two-pulse"
THREE_PULSE = "three-pulse"

# |T_Z - T_1| / T_1 below which the population term uses its T_Z -> T_1 limit
DEGENERATE_LIFETIME_TOL = 1e-6


@dataclass
class EchoTrace:
    """Echo intensity sampled at a set of delays (t12 or t23, seconds)."""

    delays: np.ndarray
    intensities: np.ndarray
    env: Optional[Environment] = None
    kind: str = TWO_PULSE
    t12_fixed: Optional[float] = None
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
            if self.stderr.shape != self.delays.shape:
                raise ValueError("stderr must match delays in length")
        if self.delays.ndim != 1 or self.delays.shape != self.intensities.shape:
            raise ValueError("delays and intensities must be 1-D and of equal length")
        if np.any(self.delays < 0) or np.any(np.diff(self.delays) <= 0):
            raise ValueError("delays must be non-negative and strictly increasing")
        if np.any(self.intensities < 0) or not np.all(np.isfinite(self.intensities)):
            raise ValueError("intensities must be finite and non-negative")
        if self.kind not in (TWO_PULSE, THREE_PULSE):
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if self.kind == THREE_PULSE and not (self.t12_fixed and self.t12_fixed > 0):
            raise ValueError("three-pulse traces need a positive t12_fixed")

    def __len__(self):
        return len(self.delays)

    def scaled(self, factor: float) -> "EchoTrace":
        se = None if self.stderr is None else self.stderr * factor
        return EchoTrace(self.delays.copy(), self.intensities * factor, self.env,
                         self.kind, self.t12_fixed, se)


@dataclass(frozen=True)
class ThreePulseConfig:
    """
    Population and spectral-diffusion parameters of a 3PPE decay.

    t0_ref = None means t12 + min(t23) of the trace being simulated.
    """

    t1_excited: float = 11e-3
    tz_zeeman: float = 0.1
    beta_branch: float = 0.0
    gamma_t0: float = 0.0
    gamma_log: float = 0.0
    t0_ref: Optional[float] = None

    def __post_init__(self):
        if not self.t1_excited > 0:
            raise DomainError("t1_excited must be > 0")
        if not self.tz_zeeman > 0:
            raise DomainError("tz_zeeman must be > 0")
        if not 0.0 <= self.beta_branch <= 1.0:
            raise DomainError("beta_branch must lie in [0, 1]")
        if not self.gamma_t0 >= 0:
            raise DomainError("gamma_t0 must be >= 0")
        if not self.gamma_log >= 0:
            raise DomainError("gamma_log must be >= 0")
        if self.t0_ref is not None and not self.t0_ref > 0:
            raise DomainError("t0_ref must be > 0")


def simulate_2ppe_exponential(t12_list, gamma_h: float, i0: float = 1.0,
                              env: Optional[Environment] = None) -> EchoTrace:
    """I(t12) = I0 exp(-4 pi gamma_h t12)."""
    if gamma_h < 0:
        raise DomainError("gamma_h must be >= 0")
    t = np.asarray(t12_list, dtype=float)
    return EchoTrace(t, i0 * np.exp(-4.0 * np.pi * gamma_h * t), env, TWO_PULSE)


@dataclass(frozen=True)
class DiffusionChannel:
    """One additive spectral-diffusion process: Gamma_max and its TLS domain."""

    gamma_max: float
    dist: TLSDistribution = TLSDistribution()


def spectral_diffusion_factor(t12: float, channel: DiffusionChannel, temperature: float,
                              plan: IntegrationPlan = IntegrationPlan()):
    """
    Normalized average of exp(-4 pi Gamma_SD(E,T) (1 - exp(-R t12)) t12) over P(R, E).

    Returns (value, error_estimate).
    """
    if t12 == 0.0 or channel.gamma_max == 0.0:
        return 1.0, 0.0
    dist = channel.dist
    if not dist.normalize:
        dist = TLSDistribution(dist.r_min, dist.r_max_coeff, dist.e_max_factor, True)

    def f(rate, e):
        gsd = gamma_sd(e, temperature, channel.gamma_max)
        return np.exp(-4.0 * np.pi * gsd * t12 * -np.expm1(-rate * t12))

    return integrate_tls(f, dist, temperature, plan)


def simulate_2ppe_integral(t12_list, p: ModelParams, dist: TLSDistribution, env: Environment,
                           gamma_max: float, plan: IntegrationPlan = IntegrationPlan(),
                           i0: float = 1.0,
                           extra_channels: Sequence[DiffusionChannel] = ()) -> EchoTrace:
    """
    2PPE decay averaged over the TLS rate/energy distribution.

    Gamma_eff(R, E, T, t) = Gamma_0 + alpha_0 T^n + Gamma_SD(E, T)(1 - exp(-R t)).
    Independent channels in `extra_channels` multiply the decay, i.e. their
    broadenings add for each ion.
    """
    if gamma_max < 0:
        raise DomainError("gamma_max must be >= 0")
    t = np.asarray(t12_list, dtype=float)
    T = env.temperature_T
    g0 = float(intrinsic_linewidth(T, p))
    channels = [DiffusionChannel(gamma_max, dist), *extra_channels]
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        val = math.exp(-4.0 * math.pi * g0 * ti)
        for ch in channels:
            val *= spectral_diffusion_factor(float(ti), ch, T, plan)[0]
        out[i] = i0 * min(val, 1.0)
    return EchoTrace(t, out, env, TWO_PULSE)


def single_channel_decay(t12, gamma0_T: float, gamma_sd_value: float, rate: float, i0: float = 1.0):
    """I0 exp(-4 pi [Gamma_0(T) + Gamma_SD (1 - exp(-R t12))] t12) for one (R, E)."""
    t = np.asarray(t12, dtype=float)
    return i0 * np.exp(-4.0 * np.pi * (gamma0_T + gamma_sd_value * -np.expm1(-rate * t)) * t)


def population_term(t23, t1: float, tz: float, beta: float):
    """
    e^{-t/T1} + (beta/2) T_Z/(T_Z - T1) (e^{-t/T_Z} - e^{-t/T1}).

    The bracket before squaring; uses the T_Z -> T1 limit (t/T1) e^{-t/T1}
    when the lifetimes coincide to DEGENERATE_LIFETIME_TOL.
    """
    t = np.asarray(t23, dtype=float)
    decay = np.exp(-t / t1)
    if abs(tz - t1) / t1 < DEGENERATE_LIFETIME_TOL:
        zeeman = (t / t1) * decay
    else:
        # e^{-t/Tz} - e^{-t/T1} = e^{-t/T1} expm1(t (Tz - T1) / (T1 Tz))
        zeeman = tz / (tz - t1) * decay * np.expm1(t * (tz - t1) / (t1 * tz))
    return decay + 0.5 * beta * zeeman


def log_diffusion_linewidth(t23, cfg: ThreePulseConfig, t0: float):
    """Gamma(t0) + gamma log10(t23 / t0)."""
    return cfg.gamma_t0 + cfg.gamma_log * np.log10(np.asarray(t23, dtype=float) / t0)


def reference_time(t23_list, t12: float, cfg: ThreePulseConfig) -> float:
    if cfg.t0_ref is not None:
        return cfg.t0_ref
    return t12 + float(np.min(t23_list))


def simulate_3ppe(t23_list, t12: float, cfg: ThreePulseConfig, i0: float = 1.0,
                  strict: bool = False, env: Optional[Environment] = None) -> EchoTrace:
    """
    Three-pulse echo intensity vs waiting time t23 at fixed t12.

    With `strict`, waiting times below t0 raise DomainError since the log term
    would push the linewidth under Gamma(t0).
    """
    if not t12 > 0:
        raise DomainError("t12 must be > 0")
    t = np.asarray(t23_list, dtype=float)
    t0 = reference_time(t, t12, cfg)
    if strict and np.any(t < t0):
        raise DomainError(f"t23 below reference time t0 = {t0:g} s in strict mode")
    bracket = population_term(t, cfg.t1_excited, cfg.tz_zeeman, cfg.beta_branch)
    with np.errstate(divide="ignore"):
        gamma = log_diffusion_linewidth(t, cfg, t0)
    if t.size and t[0] == 0.0:
        # t23 = 0: no waiting-time diffusion, linewidth is Gamma(t0)
        gamma = np.where(t == 0.0, cfg.gamma_t0, gamma)
    # non-strict mode: t23 < t0 may lower the linewidth, but never below zero
    gamma = np.maximum(gamma, 0.0)
    intensity = i0 * bracket**2 * np.exp(-4.0 * np.pi * t12 * gamma)
    return EchoTrace(t, intensity, env, THREE_PULSE, t12_fixed=t12)
