"""Guard-band CDF quantization of aligned channel samples into Gray-coded key bits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .channel import rng_for
from .errors import ConfigError, DegenerateBlockError

KEY_MAGIC = b"RISGKG-KEY/1"


@dataclass(frozen=True)
class FeatureBlock:
    """One node's features: stacked ``[Re y; Im y]`` min-max mapped to ``[0, 1]``."""
    features: np.ndarray
    raw: np.ndarray
    lo: float
    hi: float

    def denormalize(self, f) -> np.ndarray:
        return self.lo + np.asarray(f) * (self.hi - self.lo)


def _block(raw: np.ndarray, lo=None, hi=None) -> FeatureBlock:
    lo = float(raw.min()) if lo is None else float(lo)
    hi = float(raw.max()) if hi is None else float(hi)
    if not hi > lo:
        raise DegenerateBlockError(f"constant feature block (min = max = {lo})")
    f = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    return FeatureBlock(f, raw, lo, hi)


def extract_features(samples, bounds=None) -> list[FeatureBlock]:
    """Per-node feature blocks from complex samples of shape ``(nodes, T)``.

    Each node uses its own block min/max unless ``bounds=(lo, hi)`` is given.
    """
    y = np.atleast_2d(np.asarray(samples))
    if y.shape[1] < 1:
        raise ValueError("need at least one sample per node")
    raw = np.concatenate([y.real, y.imag], axis=1)
    lo, hi = bounds if bounds is not None else (None, None)
    return [_block(r, lo, hi) for r in raw]


def gray_code(i):
    i = np.asarray(i)
    return i ^ (i >> 1)


def gray_bits(symbols, levels: int) -> np.ndarray:
    """Gray-coded bits, shape ``symbols.shape + (log2 L,)``, most significant bit first."""
    nb = int(math.log2(levels))
    g = gray_code(np.asarray(symbols, dtype=np.int64))
    return ((g[..., None] >> np.arange(nb - 1, -1, -1)) & 1).astype(np.uint8)


@dataclass(frozen=True)
class QuantizerParams:
    levels: int
    nu: float
    mu: float = 0.5
    sigma: float = 1.0

    def __post_init__(self):
        L = self.levels
        if L < 2 or L & (L - 1):
            raise ConfigError(f"levels must be a power of two >= 2, got {L}")
        if not 0.0 <= self.nu < 1.0:
            raise ConfigError(f"discard fraction must lie in [0, 1), got {self.nu}")
        if not self.delta < 1.0 / (2 * L):
            raise ConfigError(f"guard {self.delta:.4g} leaves no interval at L={L}")
        if not self.sigma > 0:
            raise ValueError("fitted sigma must be positive")

    @property
    def delta(self) -> float:
        return self.nu / (2 * (self.levels - 1))

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.levels))

    @classmethod
    def fit(cls, block: FeatureBlock, levels: int, nu: float) -> "QuantizerParams":
        f = block.features
        return cls(levels, nu, float(f.mean()), float(f.std()))

    def inverse_cdf(self, p) -> np.ndarray:
        """Fitted Gaussian quantile clamped to the feature range."""
        return np.clip(self.mu + self.sigma * ndtri(np.asarray(p, dtype=float)), 0.0, 1.0)

    def gaps(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper edges of the ``L - 1`` open guard gaps."""
        l = np.arange(1, self.levels) / self.levels
        return self.inverse_cdf(l - self.delta), self.inverse_cdf(l + self.delta)


def quantize_symbols(features, params: QuantizerParams) -> np.ndarray:
    """Interval index per feature, ``-1`` where it falls strictly inside a guard gap."""
    f = np.asarray(features, dtype=float)
    lo, hi = params.gaps()
    idx = np.sum(f[..., None] >= hi, axis=-1)
    dropped = np.any((f[..., None] > lo) & (f[..., None] < hi), axis=-1)
    return np.where(dropped, -1, idx)


@dataclass(frozen=True)
class KeyMaterial:
    """Quantized symbols of every node (``-1`` = dropped feature)."""
    symbols: np.ndarray  # (nodes, F)
    levels: int
    nu: float

    @property
    def n_nodes(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_features(self) -> int:
        return self.symbols.shape[1]

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.levels))

    @property
    def kept_mask(self) -> np.ndarray:
        return self.symbols >= 0

    def common_mask(self, nodes=None) -> np.ndarray:
        sel = self.kept_mask if nodes is None else self.kept_mask[list(nodes)]
        return np.all(sel, axis=0)

    def bits(self, node: int, mask=None) -> np.ndarray:
        """Bits of ``node`` over ``mask`` (default: its own kept features)."""
        m = self.kept_mask[node] if mask is None else np.asarray(mask)
        return gray_bits(self.symbols[node][m], self.levels).ravel()

    def common_bits(self, nodes=None) -> np.ndarray:
        """``(len(nodes), bits)`` array over the features every listed node kept."""
        nodes = range(self.n_nodes) if nodes is None else list(nodes)
        m = self.common_mask(nodes)
        return np.array([self.bits(k, m) for k in nodes])

    def select(self, nodes) -> "KeyMaterial":
        return KeyMaterial(self.symbols[list(nodes)], self.levels, self.nu)


def quantize(blocks, levels: int, nu: float, params=None) -> KeyMaterial:
    """Quantize one block or a list of per-node blocks.

    Each node fits its own Gaussian unless ``params`` (one per node) is given.
    """
    if isinstance(blocks, FeatureBlock):
        blocks = [blocks]
    if params is None:
        params = [QuantizerParams.fit(b, levels, nu) for b in blocks]
    elif isinstance(params, QuantizerParams):
        params = [params] * len(blocks)
    sym = np.array([quantize_symbols(b.features, p) for b, p in zip(blocks, params)])
    return KeyMaterial(sym, levels, nu)


def rotation_phases(rounds: int, seed) -> np.ndarray:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    return rng_for(seed).uniform(0.0, 2.0 * np.pi, rounds)


def expand_static(x_star, rounds: int, seed, phases=None) -> np.ndarray:
    """``(rounds, N)`` beamformers: ``x_star`` times a fresh common phase per round."""
    x = np.asarray(x_star, dtype=complex)
    phi = rotation_phases(rounds, seed) if phases is None else np.asarray(phases, dtype=float)
    if phi.ndim != 1 or phi.size < 1:
        raise ValueError("rounds must be >= 1")
    return np.exp(1j * phi)[:, None] * x[None, :]


def write_key_file(path, bits, node_id: int, trial_id: int, levels: int, nu: float) -> None:
    """Packed key bits (MSB first) after a one-line ASCII header."""
    bits = np.asarray(bits, dtype=np.uint8)
    header = (f"{KEY_MAGIC.decode()} node={node_id} trial={trial_id} L={levels} "
              f"nu={nu!r} nbits={bits.size}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(np.packbits(bits, bitorder="big").tobytes())


def read_key_file(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        payload = fh.read()
    if header[0] != KEY_MAGIC.decode():
        raise ValueError("not a key file")
    meta = dict(item.split("=", 1) for item in header[1:])
    meta = {"node": int(meta["node"]), "trial": int(meta["trial"]), "L": int(meta["L"]),
            "nu": float(meta["nu"]), "nbits": int(meta["nbits"])}
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="big")[:meta["nbits"]]
    return meta, bits
