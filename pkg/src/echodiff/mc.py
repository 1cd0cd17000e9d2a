"""
Sudden-jump Monte-Carlo of two-pulse echoes.

Each probe ion couples to a set of two-state perturbers that flip as a
telegraph process obeying detailed balance. The optical phase is the exact
integral of the piecewise-constant frequency shift, with its sign inverted
after the rephasing pulse. The ensemble echo intensity is |<exp(i phi)>|^2.

`telegraph_coherence` gives the exact single-perturber echo coherence via
the Feynman-Kac matrix exponential; it is the analytic reference the
simulation is checked against.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .echo import TWO_PULSE, EchoTrace
from .fitting import FitError, fit_exponential_decay
from .model import K_B, DomainError

BLOCK_SIZE = 4096
THREADS_ENV = "ECHODIFF_THREADS"


@dataclass(frozen=True)
class PerturberClass:
    flip_rate: float  # Hz, total relaxation rate k_up + k_down
    e_split: float = 0.0  # J
    shift: float = 0.0  # Hz, probe frequency change when the perturber is up
    count: int = 1

    def __post_init__(self):
        if not self.flip_rate > 0:
            raise DomainError("flip_rate must be > 0")
        if self.count < 1:
            raise DomainError("count must be >= 1")
        if not math.isfinite(self.shift):
            raise DomainError("shift must be finite")


@dataclass(frozen=True)
class MCEnsembleConfig:
    classes: tuple
    n_ions: int = 10_000
    seed: int = 0
    temperature: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise DomainError("need at least one perturber class")
        if self.n_ions < 1:
            raise DomainError("n_ions must be >= 1")
        if not self.temperature > 0:
            raise DomainError("temperature must be > 0")


def upper_occupation(e_split: float, temperature: float) -> float:
    """Thermal probability 1 / (1 + exp(E/kT)) of the upper state."""
    x = e_split / (K_B * temperature)
    if x > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(x))


def transition_rates(cls: PerturberClass, temperature: float):
    """(k_up, k_down) with k_up + k_down = R and k_up/k_down = exp(-E/kT)."""
    p = upper_occupation(cls.e_split, temperature)
    return cls.flip_rate * p, cls.flip_rate * (1.0 - p)


def simulate_telegraph(rng: np.random.Generator, n: int, horizon: float,
                       k_up: float, k_down: float, p_up: float):
    """
    Flip histories on [0, horizon] for `n` independent perturbers.

    Returns (initial_state, flip_times) where flip_times has shape (n, K),
    padded with `horizon`.
    """
    state0 = rng.random(n) < p_up
    state = state0.copy()
    t = np.zeros(n)
    flips = []
    active = np.ones(n, bool)
    while active.any():
        rate = np.where(state, k_down, k_up)
        with np.errstate(divide="ignore"):
            dt = rng.standard_exponential(n) / rate
        t = np.where(active, t + dt, t)
        active &= t < horizon
        if not active.any():
            break
        flips.append(np.where(active, t, horizon))
        state = np.where(active, ~state, state)
    if flips:
        return state0, np.stack(flips, axis=1)
    return state0, np.full((n, 0), horizon)


def up_time(state0, flip_times, x):
    """Time spent in the upper state on [0, x], per trajectory."""
    n, k = flip_times.shape
    starts = np.concatenate([np.zeros((n, 1)), flip_times], axis=1)
    ends = np.concatenate([flip_times, np.full((n, 1), np.inf)], axis=1)
    seg = np.clip(np.minimum(ends, x) - starts, 0.0, None)
    # segment j is in the initial state for even j
    parity = (np.arange(k + 1) % 2).astype(bool)
    up = state0[:, None] ^ parity[None, :]
    return np.where(up, seg, 0.0).sum(axis=1)


def _block_sums(cfg: MCEnsembleConfig, t12: np.ndarray, block: int, n_block: int):
    rng = np.random.default_rng([cfg.seed, block])
    horizon = 2.0 * float(t12.max())
    phase = np.zeros((n_block, t12.size))
    for cls in cfg.classes:
        k_up, k_down = transition_rates(cls, cfg.temperature)
        p_up = upper_occupation(cls.e_split, cfg.temperature)
        n = n_block * cls.count
        s0, ft = simulate_telegraph(rng, n, horizon, k_up, k_down, p_up)
        if cls.shift == 0.0:
            continue
        for j, t in enumerate(t12):
            before = up_time(s0, ft, t)
            after = up_time(s0, ft, 2.0 * t) - before
            dphi = 2.0 * np.pi * cls.shift * (before - after)
            phase[:, j] += dphi.reshape(n_block, cls.count).sum(axis=1)
    z = np.exp(1j * phase)
    re, im = z.real, z.imag
    return np.stack([re.sum(0), im.sum(0), (re * re).sum(0), (im * im).sum(0), (re * im).sum(0)])


def _n_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "")))
    except ValueError:
        return os.cpu_count() or 1


def mc_echo_2ppe(t12_list, cfg: MCEnsembleConfig, threads: int | None = None) -> EchoTrace:
    """
    Ensemble echo intensity |<exp(i phi)>|^2 with delta-method standard errors.

    Ions are processed in blocks of BLOCK_SIZE; block b draws from the stream
    seeded by (seed, b), so results do not depend on `threads`.
    """
    t12 = np.asarray(t12_list, dtype=float)
    if t12.size == 0 or np.any(t12 < 0):
        raise DomainError("t12 values must be non-negative")
    N = cfg.n_ions
    sizes = [min(BLOCK_SIZE, N - s) for s in range(0, N, BLOCK_SIZE)]
    horizon_t = t12 if t12.max() > 0 else t12 + 1e-300
    work = lambda b: _block_sums(cfg, horizon_t, b, sizes[b])
    threads = threads or _n_threads()
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(b) for b in range(len(sizes))]
    # fixed block order keeps the sums bit-identical
    sr, si, srr, sii, sri = np.sum(np.stack(parts), axis=0)
    mr, mi = sr / N, si / N
    # unbiased estimate of |mean|^2
    if N > 1:
        intensity = (sr * sr + si * si - (srr + sii)) / (N * (N - 1.0))
    else:
        intensity = mr * mr + mi * mi
    intensity = np.clip(intensity, 0.0, None)
    denom = max(N - 1, 1)
    crr = (srr - N * mr * mr) / denom
    cii = (sii - N * mi * mi) / denom
    cri = (sri - N * mr * mi) / denom
    quad = mr * mr * crr + 2 * mr * mi * cri + mi * mi * cii
    var = 4.0 * np.clip(quad, 0.0, None) / N + 2.0 * (crr**2 + cii**2 + 2 * cri**2) / N**2
    return EchoTrace(t12, intensity, None, TWO_PULSE, stderr=np.sqrt(var))


def telegraph_coherence(t12, cls: PerturberClass, temperature: float):
    """
    Exact echo coherence <exp(i phi)> of one perturber class (all `count` copies).

    pi^T exp((Q + iV) t) exp((Q - iV) t) 1 with Q the telegraph generator,
    V = diag(0, 2 pi shift) and pi the stationary distribution.
    """
    k_up, k_down = transition_rates(cls, temperature)
    p_up = upper_occupation(cls.e_split, temperature)
    Q = np.array([[-k_up, k_up], [k_down, -k_down]], dtype=complex)
    V = np.diag([0.0, 2.0 * np.pi * cls.shift]).astype(complex)
    pi0 = np.array([1.0 - p_up, p_up], dtype=complex)
    one = np.ones(2, dtype=complex)
    out = []
    for t in np.atleast_1d(np.asarray(t12, dtype=float)):
        c = pi0 @ expm((Q + 1j * V) * t) @ expm((Q - 1j * V) * t) @ one
        out.append(c ** cls.count)
    return np.array(out)


def exact_echo_2ppe(t12_list, cfg: MCEnsembleConfig) -> np.ndarray:
    """|prod over classes of telegraph_coherence|^2: the n_ions -> inf limit."""
    c = np.ones(len(np.atleast_1d(t12_list)), dtype=complex)
    for cls in cfg.classes:
        c = c * telegraph_coherence(t12_list, cls, cfg.temperature)
    return np.abs(c) ** 2


def mc_linewidth(t12_list, cfg: MCEnsembleConfig, first_decade_only: bool = True):
    """
    Effective linewidth from a single-exponential fit to the MC echo decay.

    Returns (gamma_eff, sigma, FitResult). Raises FitError when the decay
    never falls below 1/e inside the sampled window.
    """
    trace = mc_echo_2ppe(t12_list, cfg)
    if not np.any(trace.intensities < math.exp(-1.0)):
        raise FitError("echo does not decay below 1/e within the sampled delays")
    keep = trace.intensities > 0
    se = trace.stderr[keep]
    pos = se[se > 0]
    # exact points (t12 = 0) get the weight of the best-determined random point
    se = np.maximum(se, pos.min()) if pos.size else None
    trace = EchoTrace(trace.delays[keep], trace.intensities[keep], None, TWO_PULSE, stderr=se)
    res = fit_exponential_decay(trace, first_decade_only=first_decade_only)
    return res["gamma_eff"], res.uncertainties["gamma_eff"], res
