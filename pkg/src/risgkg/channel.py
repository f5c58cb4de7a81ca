"""Spatially correlated Rayleigh channels over a planar RIS."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelError

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0

# eigenvalues below -CLIP_TOL * lambda_max are treated as a modelling error
CLIP_TOL = 1e-8


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watts(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(x_w):
    return 10.0 * np.log10(np.asarray(x_w, dtype=float)) + 30.0


def rng_for(seed, *keys) -> np.random.Generator:
    """Counter-based generator for ``(seed, *keys)``.

    Each key tuple maps to an independent Philox stream, so trial ``t`` of a
    run draws the same numbers whatever order trials are executed in.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("keys cannot be combined with an existing Generator")
        return seed
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class RisGeometry:
    n_elements: int
    element_width: float
    element_height: float
    wavelength: float

    @classmethod
    def from_carrier(cls, n_elements: int, carrier_hz: float = 1e9,
                     spacing_fraction: float = 0.25) -> "RisGeometry":
        lam = SPEED_OF_LIGHT / carrier_hz
        return cls(n_elements, spacing_fraction * lam, spacing_fraction * lam, lam)

    @property
    def element_area(self) -> float:
        return self.element_width * self.element_height

    def positions(self, square: bool = True) -> np.ndarray:
        """Element centres, shape ``(N, 2)``, row-major over the grid."""
        n = self.n_elements
        if n < 1:
            raise ConfigError(f"n_elements must be >= 1, got {n}")
        if square:
            side = math.isqrt(n)
            if side * side != n:
                raise ConfigError(f"square RIS needs a perfect-square N, got {n}")
            rows, cols = np.divmod(np.arange(n), side)
        else:
            rows, cols = np.zeros(n, dtype=int), np.arange(n)
        return np.column_stack([cols * self.element_width, rows * self.element_height])


def build_correlation_matrix(geometry: RisGeometry, square: bool = True) -> np.ndarray:
    """Isotropic-scattering correlation ``R[m, n] = sinc(2 |u_m - u_n| / wavelength)``."""
    if geometry.wavelength <= 0:
        raise ConfigError("wavelength must be positive")
    u = geometry.positions(square)
    dist = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=-1)
    R = np.sinc(2.0 * dist / geometry.wavelength)
    np.fill_diagonal(R, 1.0)
    return 0.5 * (R + R.T)


def psd_factor(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Return ``(F, clip_norm)`` with ``F @ F.conj().T`` the eigen-clipped ``R``.

    ``clip_norm`` is the Frobenius norm of the change made by clipping.
    """
    R = np.asarray(R)
    lam, U = np.linalg.eigh(R)
    scale = max(float(lam.max()), 1.0)
    if lam.min() < -CLIP_TOL * scale * R.shape[0]:
        raise ModelError(f"correlation matrix is indefinite (min eigenvalue {lam.min():.3e})")
    clipped = np.clip(lam, 0.0, None)
    clip_norm = float(np.linalg.norm(lam - clipped))
    return U * np.sqrt(clipped), clip_norm


def path_loss_variance_db(G: float, zeta: float, d: float, d0: float = 1.0,
                          sigma0_db: float = -30.0) -> float:
    """Large-scale channel variance in dB, ``G - 10 zeta log10(d/d0) + sigma0``."""
    if not d0 > 0 or d < d0:
        raise ValueError(f"need d >= d0 > 0, got d={d}, d0={d0}")
    return G - 10.0 * zeta * math.log10(d / d0) + sigma0_db


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


@dataclass(frozen=True)
class LinkBudget:
    """Large-scale link parameters; every ``kappa`` is ``sigma^2 * d_H * d_V``.

    ``noise_w`` is the receiver AWGN power (same at every node).
    """
    sigma_ar_db: float
    sigma_kr_db: tuple
    sigma_er_db: float
    element_area: float
    noise_w: float
    d_ar: float = float("nan")
    d_kr: tuple = ()
    d_er: float = float("nan")
    antenna_gain_dbi: float = 4.0
    pathloss_exponent: float = 2.0
    sigma0_db: float = -30.0

    @classmethod
    def from_distances(cls, geometry: RisGeometry, d_ar: float, d_kr, d_er: float,
                       bandwidth_hz: float = 1e6, noise_figure_db: float = 5.0,
                       antenna_gain_dbi: float = 4.0, pathloss_exponent: float = 2.0,
                       sigma0_db: float = -30.0) -> "LinkBudget":
        d_kr = tuple(float(d) for d in np.atleast_1d(d_kr))
        pl = lambda d: path_loss_variance_db(antenna_gain_dbi, pathloss_exponent, d,
                                             1.0, sigma0_db)
        return cls(
            sigma_ar_db=pl(d_ar),
            sigma_kr_db=tuple(pl(d) for d in d_kr),
            sigma_er_db=pl(d_er),
            element_area=geometry.element_area,
            noise_w=float(dbm_to_watts(noise_power_dbm(bandwidth_hz, noise_figure_db))),
            d_ar=float(d_ar), d_kr=d_kr, d_er=float(d_er),
            antenna_gain_dbi=antenna_gain_dbi, pathloss_exponent=pathloss_exponent,
            sigma0_db=sigma0_db,
        )

    @property
    def n_users(self) -> int:
        return len(self.sigma_kr_db)

    @property
    def kappa_ar(self) -> float:
        return float(db_to_linear(self.sigma_ar_db)) * self.element_area

    @property
    def kappa_kr(self) -> np.ndarray:
        return db_to_linear(self.sigma_kr_db) * self.element_area

    @property
    def kappa_er(self) -> float:
        return float(db_to_linear(self.sigma_er_db)) * self.element_area

    @property
    def kappa_nodes(self) -> np.ndarray:
        """UT kappas followed by Eve's."""
        return np.append(self.kappa_kr, self.kappa_er)


@dataclass(frozen=True)
class ChannelSet:
    """Normalized small-scale channels; ``h_kr`` has shape ``(K, N)``."""
    h_ar: np.ndarray
    h_kr: np.ndarray
    h_er: np.ndarray
    R: np.ndarray
    link: LinkBudget | None = field(default=None, compare=False)

    @property
    def n_elements(self) -> int:
        return self.h_ar.shape[0]

    @property
    def n_users(self) -> int:
        return self.h_kr.shape[0]

    @property
    def h_nodes(self) -> np.ndarray:
        """UT channels with Eve's appended as the last row."""
        return np.vstack([self.h_kr, self.h_er[None, :]])

    def replace(self, **kw) -> "ChannelSet":
        d = dict(h_ar=self.h_ar, h_kr=self.h_kr, h_er=self.h_er, R=self.R, link=self.link)
        d.update(kw)
        return ChannelSet(**d)


def complex_normal(rng: np.random.Generator, size, var=1.0) -> np.ndarray:
    """i.i.d. CN(0, var) draws."""
    z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return z * np.sqrt(np.asarray(var) / 2.0)


def sample_channels(R: np.ndarray, K: int, seed, link: LinkBudget | None = None) -> ChannelSet:
    """Draw Alice, K UTs and Eve as independent CN(0, R) vectors."""
    if K < 1:
        raise ValueError("K must be >= 1")
    F, _ = psd_factor(R)
    rng = rng_for(seed)
    n = F.shape[0]
    H = complex_normal(rng, (K + 2, n)) @ F.T
    return ChannelSet(h_ar=H[0], h_kr=H[1:K + 1], h_er=H[K + 1], R=np.asarray(R), link=link)
