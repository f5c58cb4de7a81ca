"""Alignment, key-agreement and leakage metrics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .quantizer import KeyMaterial

Z95 = 1.959963984540054


def nse(y_i, y_j) -> float:
    """``|y_i - y_j|^2 / |y_i|^2``; NaN when ``y_i == 0``."""
    den = abs(y_i) ** 2
    if den == 0:
        return math.nan
    return abs(y_i - y_j) ** 2 / den


def max_pairwise_nse(y) -> float:
    """Worst NSE over ordered pairs of one trial's node samples; NaN if undefined."""
    y = np.asarray(y)
    den = np.abs(y) ** 2
    if np.any(den == 0):
        return math.nan
    d = np.abs(y[:, None] - y[None, :]) ** 2 / den[:, None]
    return float(d.max())


@dataclass(frozen=True)
class NmseResult:
    mean: float
    half_width: float
    trials: int
    excluded: int = 0


def _mean_ci(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    hw = Z95 * x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else math.nan
    return float(x.mean()), float(hw)


def nmse(trials) -> NmseResult:
    """Mean over trials of the worst pairwise NSE; each trial is a ``(K,)`` sample vector."""
    vals = [max_pairwise_nse(y) for y in trials]
    good = [v for v in vals if not math.isnan(v)]
    if vals and np.asarray(trials[0]).shape[0] < 2:
        raise ValueError("NMSE needs at least two nodes")
    m, hw = _mean_ci(good)
    return NmseResult(m, hw, len(good), len(vals) - len(good))


@dataclass(frozen=True)
class KerResult:
    ker: float  # mean over unordered node pairs
    worst_pair: float
    compared_bits: int
    pairs: dict = field(default_factory=dict)  # (i, j) -> error fraction

    @property
    def defined(self) -> bool:
        return self.compared_bits > 0


def ker(materials, nodes=None) -> KerResult:
    """Key error rate over the bits every node kept.

    ``materials`` is one :class:`KeyMaterial` or a list of them (e.g. one per
    quantization block); counts are pooled before dividing.
    """
    if isinstance(materials, KeyMaterial):
        materials = [materials]
    n_nodes = materials[0].n_nodes
    nodes = list(range(n_nodes)) if nodes is None else list(nodes)
    if len(nodes) < 2:
        raise ValueError("KER needs at least two nodes")
    errors = {p: 0 for p in itertools.combinations(range(len(nodes)), 2)}
    total = 0
    for km in materials:
        bits = km.common_bits(nodes)
        total += bits.shape[1]
        for i, j in errors:
            errors[i, j] += int(np.count_nonzero(bits[i] != bits[j]))
    if total == 0:
        return KerResult(math.nan, math.nan, 0, {})
    pairs = {(nodes[i], nodes[j]): e / total for (i, j), e in errors.items()}
    vals = list(pairs.values())
    return KerResult(float(np.mean(vals)), float(max(vals)), total, pairs)


@dataclass(frozen=True)
class KgrResult:
    bits_per_feature: float
    bits_per_probe: float
    discard_fraction: float
    features: int
    common_bits: int


def kgr(materials, probe_count: int, nodes=None) -> KgrResult:
    """Common-mask key bits per channel feature and per probing round."""
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    if isinstance(materials, KeyMaterial):
        materials = [materials]
    feats = kept = bits = 0
    for km in materials:
        m = km.common_mask(nodes)
        feats += km.n_features
        kept += int(m.sum())
        bits += int(m.sum()) * km.bits_per_symbol
    return KgrResult(bits / feats, bits / probe_count, 1.0 - kept / feats, feats, bits)


@dataclass(frozen=True)
class EveDiagnostics:
    legit_max_nse: float  # mean over trials
    eve_min_nse: float  # mean over trials
    ratio: float
    correlation: float  # max |corr| between Eve and any legitimate node
    per_trial_legit: np.ndarray
    per_trial_eve: np.ndarray

    @property
    def leak(self) -> bool:
        return bool(np.any(self.per_trial_eve == 0))


def _corr(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2)))
    return abs(complex(np.sum(a * np.conj(b)))) / den if den > 0 else math.nan


def eve_alignment(legit, eve) -> EveDiagnostics:
    """Compare Eve with the legitimate nodes.

    ``legit`` has shape ``(trials, K)`` and ``eve`` shape ``(trials,)``.
    Eve's NSE uses the legitimate sample as the reference.
    """
    legit = np.atleast_2d(np.asarray(legit))
    eve = np.asarray(eve).reshape(-1)
    if legit.shape[0] != eve.shape[0]:
        raise ValueError("legit and eve need the same number of trials")
    lm = np.array([max_pairwise_nse(y) for y in legit]) if legit.shape[1] > 1 \
        else np.full(legit.shape[0], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        em = (np.abs(legit - eve[:, None]) ** 2 / np.abs(legit) ** 2).min(axis=1)
    corr = max(_corr(eve, legit[:, k]) for k in range(legit.shape[1])) if eve.size > 1 else math.nan
    l_mean, e_mean = float(np.nanmean(lm)), float(np.nanmean(em))
    ratio = e_mean / l_mean if l_mean > 0 else math.inf
    return EveDiagnostics(l_mean, e_mean, ratio, corr, lm, em)
