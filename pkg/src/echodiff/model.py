"""
Closed-form linewidth physics for Er-doped glass.

Spectral-diffusion linewidth law, the TLS rate/energy distribution, the
Er spin flip-flop rate and the closed-form coherence lifetime with spectral
diffusion. All quantities are SI: Hz, T, K, J, s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# CODATA 2018
MU_B = 9.2740100783e-24  # J/T, Bohr magneton
K_B = 1.380649e-23  # J/K, Boltzmann constant (exact)

# Below this value of Gamma_SD*R / (pi*Gamma_h^2) the series form of the
# coherence time is used instead of sqrt(1+x)-1.
SERIES_THRESHOLD = 1e-8


class DomainError(ValueError):
    """Input outside the domain where a physical law is defined."""


@dataclass(frozen=True)
class Environment:
    field_B: float  # T
    temperature_T: float  # K

    def __post_init__(self):
        if not self.field_B >= 0:
            raise DomainError(f"field_B must be >= 0, got {self.field_B}")
        if not self.temperature_T > 0:
            raise DomainError(f"temperature_T must be > 0, got {self.temperature_T}")


PARAM_NAMES = ("gamma0", "alpha0", "n", "g_env", "c1", "c2", "gammaS0", "gammaS_slope")

DEFAULT_BOUNDS = {
    "gamma0": (0.0, math.inf),
    "alpha0": (0.0, math.inf),
    "n": (1.0, 1.5),
    "g_env": (0.0, 18.0),
    "c1": (0.0, math.inf),
    "c2": (0.0, math.inf),
    "gammaS0": (0.0, math.inf),
    "gammaS_slope": (0.0, math.inf),
}


@dataclass(frozen=True)
class ModelParams:
    """
    Parameters of the Gamma_eff(B, T) model.

    c1 and c2 are the products Gamma_max*alpha1 (Hz^3) and
    Gamma_max*alpha2 (Hz^2 T^-1 K^-1); the model only depends on them.
    See `from_table_ratios` for entering ratio-style values.
    """

    gamma0: float = 0.0
    alpha0: float = 1.1e6
    n: float = 1.1
    g_env: float = 14.4
    c1: float = 0.0
    c2: float = 0.0
    gammaS0: float = 1.5e9
    gammaS_slope: float = 150e9

    def __post_init__(self):
        checks = [
            (self.gamma0 >= 0, "gamma0 >= 0"),
            (self.alpha0 >= 0, "alpha0 >= 0"),
            (1.0 <= self.n <= 1.5, "1 <= n <= 1.5"),
            (0.0 <= self.g_env <= 18.0, "0 <= g_env <= 18"),
            (self.c1 >= 0, "c1 >= 0"),
            (self.c2 >= 0, "c2 >= 0"),
            (self.gammaS0 > 0, "gammaS0 > 0"),
            (self.gammaS_slope >= 0, "gammaS_slope >= 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise DomainError(f"ModelParams violates {what}: {self}")

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"unknown ModelParams fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def with_values(self, **kw) -> "ModelParams":
        return replace(self, **kw)


def from_table_ratios(
    alpha1_over_gmax: float,
    alpha2_over_gmax: float,
    gamma_max: float,
    **kw,
) -> ModelParams:
    """
    Build ModelParams from ratio-style coefficients alpha_i/Gamma_max.

    Interpretation: the tabulated ratios are read literally, so
    alpha_i = ratio_i * Gamma_max and the products consumed by the model are
    c_i = ratio_i * Gamma_max**2. Gamma_max is the one overall scale the ratios
    leave undetermined; it must be supplied (see `calibrate_gamma_max`).

    Parameters
    ----------
    alpha1_over_gmax : float
        Er-Er flip-flop ratio in Hz (e.g. 11e9).
    alpha2_over_gmax : float
        Er-TLS flip-flop ratio in (T K)^-1 (e.g. 348).
    gamma_max : float
        Maximum spectral-diffusion broadening in Hz.
    **kw
        Remaining ModelParams fields.
    """
    return ModelParams(
        c1=alpha1_over_gmax * gamma_max**2,
        c2=alpha2_over_gmax * gamma_max**2,
        **kw,
    )


# Reference central values, ratio form.
REFERENCE_VALUES = {
    "gamma0": 0.0,
    "alpha0": 1.1e6,  # Hz K^-n
    "n": 1.1,
    "g_env": 14.4,
    "alpha1_over_gmax": 11e9,  # Hz
    "alpha2_over_gmax": 348.0,  # (T K)^-1
}

REFERENCE_UNCERTAINTY = {
    "gamma0": 0.5e6,
    "alpha0": 0.5e6,
    "n": 0.4,
    "g_env": 1.6,
    "alpha1_over_gmax": 5e9,
    "alpha2_over_gmax": 42.0,
}


def reference_params(gamma_max: float | None = None) -> ModelParams:
    """Reference parameters with Gamma_max calibrated by default."""
    if gamma_max is None:
        gamma_max = calibrate_gamma_max()
    t = REFERENCE_VALUES
    return from_table_ratios(
        t["alpha1_over_gmax"],
        t["alpha2_over_gmax"],
        gamma_max,
        gamma0=t["gamma0"],
        alpha0=t["alpha0"],
        n=t["n"],
        g_env=t["g_env"],
    )


def calibrate_gamma_max(
    excess: float = 0.7e6,
    env: Environment = Environment(0.1, 0.7),
) -> float:
    """
    Gamma_max such that the Er-Er spectral-diffusion excess over the
    spin-free linewidth equals `excess` (Hz) at `env`.

    The default anchor is 0.7 MHz at 0.1 T and 0.7 K.
    """
    from scipy.optimize import brentq

    t = REFERENCE_VALUES

    def excess_at(gmax):
        p = from_table_ratios(
            t["alpha1_over_gmax"], t["alpha2_over_gmax"], gmax,
            gamma0=t["gamma0"], alpha0=t["alpha0"], n=t["n"], g_env=t["g_env"],
        )
        return effective_linewidth(env, p) - intrinsic_linewidth(env.temperature_T, p) - excess

    return brentq(excess_at, 1.0, 1e12, xtol=1e-9, rtol=1e-14)


def _sech2(x):
    # sech^2 without overflow for large |x|
    ax = np.abs(x)
    e = np.exp(-2.0 * ax)
    return 4.0 * e / (1.0 + e) ** 2


def gamma_sd(e_split, temperature, gamma_max):
    """Spectral-diffusion linewidth gamma_max * sech^2(E / 2kT), Hz."""
    if np.any(np.asarray(temperature) <= 0):
        raise DomainError("temperature must be > 0")
    if np.any(np.asarray(gamma_max) < 0):
        raise DomainError("gamma_max must be >= 0")
    return gamma_max * _sech2(np.asarray(e_split) / (2.0 * K_B * temperature))


@dataclass(frozen=True)
class TLSDistribution:
    """
    Integration domain for P(R, E) = 1 / (R sqrt(1 - R/R_max(E))).

    r_max_coeff sets R_max(E) = r_max_coeff * E^3 * coth(E/2kT). The default
    puts R_max near 1 GHz for splittings of k*1K.
    """

    r_min: float = 1.0
    r_max_coeff: float = 1e9 / (K_B * 1.0) ** 3
    e_max_factor: float = 20.0
    normalize: bool = True

    def __post_init__(self):
        if not self.r_min > 0:
            raise DomainError("r_min must be > 0")
        if not self.r_max_coeff > 0:
            raise DomainError("r_max_coeff must be > 0")
        if not self.e_max_factor >= 5:
            raise DomainError("e_max_factor must be >= 5")


def r_max(e_split, temperature, dist: TLSDistribution):
    """Upper TLS flip rate R_max(E) = c * E^3 * coth(E/2kT), Hz."""
    e = np.asarray(e_split, dtype=float)
    if np.any(e < 0):
        raise DomainError("e_split must be >= 0")
    if temperature <= 0:
        raise DomainError("temperature must be > 0")
    x = e / (2.0 * K_B * temperature)
    with np.errstate(divide="ignore", invalid="ignore"):
        # E^3 coth(x) = E^2 * 2kT * x coth(x); x coth(x) -> 1 at x = 0
        xcoth = np.where(x > 1e-8, x / np.tanh(np.where(x > 1e-8, x, 1.0)), 1.0 + x * x / 3.0)
    out = dist.r_max_coeff * e * e * (2.0 * K_B * temperature) * xcoth
    return out if out.ndim else float(out)


def tls_density(rate, e_split, dist: TLSDistribution, temperature, norm: float = 1.0):
    """
    Unnormalized P(R, E) divided by `norm`.

    Pass the domain integral as `norm` (see quadrature.tls_normalization)
    to get the normalized density when dist.normalize is set.
    """
    rate = np.asarray(rate, dtype=float)
    rmax = r_max(e_split, temperature, dist)
    if np.any(rate <= 0) or np.any(rate >= rmax):
        raise DomainError("rate must lie in (0, R_max(E))")
    val = 1.0 / (rate * np.sqrt(1.0 - rate / rmax))
    if dist.normalize:
        val = val / norm
    return val if val.ndim else float(val)


def intrinsic_linewidth(temperature, p: ModelParams):
    """Gamma_0 + alpha_0 T^n: linewidth without spin spectral diffusion."""
    return p.gamma0 + p.alpha0 * np.power(temperature, p.n)


def flip_rate(env: Environment, p: ModelParams, gamma_max: float = 1.0):
    """
    Er spin flip rate R(B, T) = alpha1/(Gs0 + gs B) sech^2(g mu_B B/2kT) + alpha2 B T.

    The coefficients are alpha_i = c_i / gamma_max. Only the product with
    Gamma_SD is fixed by ModelParams, so R in Hz needs the true Gamma_max.
    """
    B, T = env.field_B, env.temperature_T
    arg = p.g_env * MU_B * B / (2.0 * K_B * T)
    flipflop = p.c1 / (p.gammaS0 + p.gammaS_slope * B) * _sech2(arg)
    tls = p.c2 * B * T
    return float((flipflop + tls) / gamma_max)


def spectral_diffusion_product(env: Environment, p: ModelParams) -> float:
    """Gamma_SD(E = g mu_B B, T) * R(B, T) in Hz^2."""
    B, T = env.field_B, env.temperature_T
    s = _sech2(p.g_env * MU_B * B / (2.0 * K_B * T))
    return float(s * (p.c1 / (p.gammaS0 + p.gammaS_slope * B) * s + p.c2 * B * T))


def coherence_time(env: Environment, p: ModelParams) -> float:
    """
    T2 = 2 Gh/(Gsd R) * (sqrt(1 + Gsd R/(pi Gh^2)) - 1), Gh = Gamma_0 + alpha_0 T^n.
    """
    gh = float(intrinsic_linewidth(env.temperature_T, p))
    prod = spectral_diffusion_product(env, p)
    if gh <= 0 and prod <= 0:
        raise DomainError("infinite coherence time: no dephasing channel is active")
    if gh <= 0:
        # pure spectral-diffusion limit
        return 2.0 / math.sqrt(math.pi * prod)
    x = prod / (math.pi * gh * gh)
    if x < SERIES_THRESHOLD:
        return (1.0 - x / 4.0 + x * x / 8.0) / (math.pi * gh)
    # sqrt(1+x) - 1 = x / (sqrt(1+x) + 1), no cancellation
    return 2.0 / (math.pi * gh * (math.sqrt(1.0 + x) + 1.0))


def effective_linewidth(env: Environment, p: ModelParams) -> float:
    """Gamma_eff = 1/(pi T2), Hz."""
    return 1.0 / (math.pi * coherence_time(env, p))


def linewidth_grid(fields, temperatures, p: ModelParams) -> np.ndarray:
    """Gamma_eff on the outer product fields x temperatures."""
    out = np.empty((len(fields), len(temperatures)))
    for i, b in enumerate(fields):
        for j, t in enumerate(temperatures):
            out[i, j] = effective_linewidth(Environment(float(b), float(t)), p)
    return out
