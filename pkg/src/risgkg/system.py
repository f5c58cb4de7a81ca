"""Pilot reception, effective noise, SER/SNR and the quadratic-form matrices.

Convention: a beamformer ``v`` holds the RIS reflection coefficients, i.e. the
reflection matrix is ``diag(v)`` and UT ``k`` sees the aggregate channel
``h_kr^H diag(v) h_ar = g_k . v`` with ``g_k = conj(h_kr) * h_ar``.  The
optimization variable of the quadratic forms is ``x = conj(v)``, so that
``x^H Sigma_ark x = |g_k . v|^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .channel import ChannelSet, complex_normal, rng_for
from .errors import ContractViolation

PRIS_TOL = 1e-9
ARIS_TOL = 1e-6
SER_CAP_DB = 300.0


@dataclass(frozen=True)
class PilotConfig:
    p_a: float  # watts
    q: int = 200

    def __post_init__(self):
        if not self.p_a > 0 or self.q < 1:
            raise ValueError(f"invalid pilot config {self}")


@dataclass(frozen=True)
class ArisBudget:
    p_r_max: float  # watts, total RIS output power
    w_max: float  # per-element amplitude gain bound
    sigma_f2: float  # amplification noise variance, watts

    def __post_init__(self):
        if not (self.p_r_max > 0 and self.w_max > 0 and self.sigma_f2 >= 0):
            raise ValueError(f"invalid ARIS budget {self}")


@dataclass(frozen=True)
class NormalizedSample:
    """Per-node normalized observations (last entry is Eve when present)."""
    signal: np.ndarray
    noise: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.signal + self.noise


def aggregate(v: np.ndarray, ch: ChannelSet, eve: bool = True) -> np.ndarray:
    """Noiseless aggregate reflected channels ``h^H diag(v) h_ar`` per node."""
    H = ch.h_nodes if eve else ch.h_kr
    return (H.conj() * ch.h_ar) @ np.asarray(v)


def _noise_scale(ch: ChannelSet, pilot: PilotConfig, eve: bool) -> np.ndarray:
    link = ch.link
    kap = link.kappa_nodes if eve else link.kappa_kr
    return pilot.p_a * pilot.q * link.kappa_ar * kap


def effective_noise_variance_pris(ch: ChannelSet, pilot: PilotConfig, eve: bool = False) -> np.ndarray:
    """``sigma_n_k^2 = sigma_k^2 / (P_a Q kappa_ar kappa_kr)`` for every node."""
    return ch.link.noise_w / _noise_scale(ch, pilot, eve)


def effective_noise_variance_aris(w: np.ndarray, ch: ChannelSet, pilot: PilotConfig,
                                  budget: ArisBudget, eve: bool = False) -> np.ndarray:
    """Post-despreading noise variance including the amplification noise."""
    link = ch.link
    kap = link.kappa_nodes if eve else link.kappa_kr
    tr = float(np.real(np.sum(np.abs(w) ** 2 * np.diag(ch.R))))
    return (budget.sigma_f2 * kap * tr + link.noise_w) / _noise_scale(ch, pilot, eve)


def alpha_f(ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget) -> float:
    return budget.sigma_f2 / (pilot.p_a * pilot.q * ch.link.kappa_ar)


def alpha_n(ch: ChannelSet, pilot: PilotConfig) -> np.ndarray:
    return effective_noise_variance_pris(ch, pilot)


def _receive(signal, var, seed) -> NormalizedSample:
    rng = rng_for(seed)
    return NormalizedSample(signal=signal, noise=complex_normal(rng, signal.shape, var))


def check_pris(v: np.ndarray, tol: float = PRIS_TOL) -> None:
    mag = np.abs(np.asarray(v))
    if np.any(mag > 1.0 + tol):
        raise ContractViolation(f"PRIS coefficient magnitude {mag.max():.6g} exceeds 1")


def aris_power(w: np.ndarray, ch: ChannelSet, pilot: PilotConfig,
               budget: ArisBudget) -> tuple[float, float]:
    """(lhs, rhs) of the total-power constraint, both scaled by 1/kappa_ar."""
    p2 = np.abs(w) ** 2
    kap = ch.link.kappa_ar
    lhs = pilot.p_a * float(np.sum(np.abs(ch.h_ar) ** 2 * p2)) + budget.sigma_f2 * float(p2.sum()) / kap
    return lhs, budget.p_r_max / kap


def aris_element_power(w: np.ndarray, ch: ChannelSet, pilot: PilotConfig,
                       budget: ArisBudget) -> np.ndarray:
    """Output power of each ARIS element (diagnostic only), watts."""
    incident = pilot.p_a * ch.link.kappa_ar * np.abs(ch.h_ar) ** 2 + budget.sigma_f2
    return np.abs(w) ** 2 * incident


def check_aris(w: np.ndarray, ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget,
               tol: float = ARIS_TOL) -> None:
    mag = np.abs(np.asarray(w))
    if np.any(mag > budget.w_max * (1.0 + tol)):
        raise ContractViolation(f"ARIS gain {mag.max():.6g} exceeds w_max={budget.w_max}")
    lhs, rhs = aris_power(w, ch, pilot, budget)
    if lhs > rhs * (1.0 + tol):
        raise ContractViolation(f"ARIS power {lhs:.6g} exceeds budget {rhs:.6g}")


def pris_receive(v, ch: ChannelSet, pilot: PilotConfig, seed) -> NormalizedSample:
    v = np.asarray(v, dtype=complex)
    check_pris(v)
    var = effective_noise_variance_pris(ch, pilot, eve=True)
    return _receive(aggregate(v, ch), var, seed)


def aris_receive(w, ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget, seed) -> NormalizedSample:
    w = np.asarray(w, dtype=complex)
    check_aris(w, ch, pilot, budget)
    var = effective_noise_variance_aris(w, ch, pilot, budget, eve=True)
    return _receive(aggregate(w, ch), var, seed)


def ser_db(v, k: int, i: int, ch: ChannelSet) -> float:
    """Signal-to-error ratio between UTs ``k`` and ``i`` in dB.

    ``inf`` when the aggregates coincide and UT ``k`` sees a nonzero signal,
    ``nan`` when both numerator and denominator vanish.
    """
    if k == i:
        raise ValueError("SER needs two distinct UTs")
    v = np.asarray(v, dtype=complex)
    gk = ch.h_kr[k].conj() * ch.h_ar
    gi = ch.h_kr[i].conj() * ch.h_ar
    num = abs(gk @ v) ** 2
    den = abs((gk - gi) @ v) ** 2
    if den == 0.0:
        return math.inf if num > 0 else math.nan
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def pairwise_ser_db(v, ch: ChannelSet) -> np.ndarray:
    """Matrix of ``ser_db(v, k, i)``; the diagonal is ``nan``."""
    a = aggregate(v, ch, eve=False)
    num = np.abs(a)[:, None] ** 2
    den = np.abs(a[:, None] - a[None, :]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(num / den)
    np.fill_diagonal(out, np.nan)
    return out


def worst_ser_db(v, ch: ChannelSet, cap: float = SER_CAP_DB) -> float:
    s = pairwise_ser_db(v, ch)
    off = s[~np.eye(len(s), dtype=bool)]
    if off.size == 0 or np.all(np.isnan(off)):
        return math.nan
    return float(min(np.nanmin(off), cap))


def snr(v, k: int, ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget | None = None) -> float:
    """Linear SNR of UT ``k``; ARIS form when ``budget`` is given."""
    return float(snr_all(v, ch, pilot, budget)[k])


def snr_all(v, ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    sig = np.abs(aggregate(v, ch, eve=False)) ** 2
    if budget is None:
        return sig / effective_noise_variance_pris(ch, pilot)
    amp = np.abs(ch.h_kr) ** 2 @ (np.abs(v) ** 2)
    return sig / (alpha_f(ch, pilot, budget) * amp + alpha_n(ch, pilot))


def min_snr(v, ch, pilot, budget=None) -> float:
    return float(np.min(snr_all(v, ch, pilot, budget)))


@dataclass(frozen=True)
class DerivedMatrices:
    """Quadratic-form data for the optimizers in ``x = conj(v)``.

    ``g[k] = Sigma_kr h_ar`` so that ``Sigma_ark = g_k g_k^H`` and
    ``D_{k,i} = (g_k - g_i)(g_k - g_i)^H``.  ``sigma_kr[k]`` holds the diagonal
    of ``Sigma_kr = diag(h_kr^H)``.
    """
    g: np.ndarray
    sigma_kr: np.ndarray
    h_ar: np.ndarray

    @property
    def n_users(self) -> int:
        return self.g.shape[0]

    @property
    def n_elements(self) -> int:
        return self.g.shape[1]

    @cached_property
    def sigma_ark(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.g, self.g.conj())

    def d_vec(self, k: int, i: int) -> np.ndarray:
        return self.g[k] - self.g[i]

    def d(self, k: int, i: int) -> np.ndarray:
        dv = self.d_vec(k, i)
        return np.outer(dv, dv.conj())

    def b(self, i: int) -> np.ndarray:
        B = np.zeros((self.n_elements, self.n_elements))
        B[i, i] = 1.0
        return B

    @property
    def pairs(self) -> list[tuple[int, int]]:
        K = self.n_users
        return [(k, i) for k in range(K) for i in range(K) if k != i]


def build_derived_matrices(ch: ChannelSet) -> DerivedMatrices:
    sig = ch.h_kr.conj()
    return DerivedMatrices(g=sig * ch.h_ar, sigma_kr=sig, h_ar=ch.h_ar.copy())
