import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from risgkg.errors import ConfigError, DegenerateBlockError
from risgkg.metrics import max_pairwise_nse
from risgkg.quantizer import (FeatureBlock, KeyMaterial, QuantizerParams, expand_static,
                              extract_features, gray_bits, gray_code, quantize, quantize_symbols,
                              read_key_file, rotation_phases, write_key_file)


def _block(values):
    f = np.asarray(values, float)
    return FeatureBlock(f, f, 0.0, 1.0)


def test_single_sample_maps_to_endpoint():
    (blk,) = extract_features(np.array([[1 + 1j]]), bounds=(0.0, 1.0))
    assert np.array_equal(blk.features, [1.0, 1.0])


def test_unit_interval_samples_are_unchanged():
    y = np.array([[0.0 + 0.25j, 1.0 + 0.5j]])
    (blk,) = extract_features(y)
    assert np.allclose(blk.features, [0.0, 1.0, 0.25, 0.5])
    assert np.allclose(blk.denormalize(blk.features), blk.raw)


def test_gaussian_features_centre_on_half(rng):
    y = rng.normal(size=(1, 10_000)) + 1j * rng.normal(size=(1, 10_000))
    (blk,) = extract_features(y)
    assert blk.features.shape == (20_000,)
    assert blk.features.min() == 0.0 and blk.features.max() == 1.0
    # one block's mean moves with its two extremes (sd ~ 0.025), so average blocks
    means = [extract_features(rng.normal(size=(1, 10_000)) + 1j * rng.normal(size=(1, 10_000)))[0]
             .features.mean() for _ in range(100)]
    assert abs(np.mean(means) - 0.5) < 0.02 / 5


def test_each_node_uses_its_own_range():
    y = np.array([[1.0, 3.0], [10.0, 30.0]])
    a, b = extract_features(y)
    assert (a.lo, a.hi) == (0.0, 3.0) and (b.lo, b.hi) == (0.0, 30.0)


def test_constant_block_is_degenerate():
    with pytest.raises(DegenerateBlockError):
        extract_features(np.array([[2 + 2j, 2 + 2j]]))


def test_empty_block_rejected():
    with pytest.raises(ValueError):
        extract_features(np.zeros((2, 0), complex))


def test_guard_width_formula():
    assert QuantizerParams(4, 0.2).delta == pytest.approx(0.2 / 6)
    assert QuantizerParams(4, 0.2).delta == pytest.approx(0.03333, abs=1e-5)
    assert QuantizerParams(8, 0.2).bits_per_symbol == 3


@pytest.mark.parametrize("L", [3, 6, 1, 0])
def test_levels_must_be_power_of_two(L):
    with pytest.raises(ConfigError):
        QuantizerParams(L, 0.2)


@pytest.mark.parametrize("nu", [-0.1, 1.0])
def test_discard_fraction_range(nu):
    with pytest.raises(ConfigError):
        QuantizerParams(2, nu)


def test_guard_too_wide_for_intervals():
    # nu / (2 (L - 1)) must stay below 1 / (2L)
    with pytest.raises(ConfigError):
        QuantizerParams(8, 0.95)


def test_median_split_at_vanishing_guard(rng):
    f = rng.uniform(size=5000)
    p = QuantizerParams(2, 1e-12, mu=0.4, sigma=0.2)
    sym = quantize_symbols(f, p)
    assert np.all(sym >= 0)
    assert np.array_equal(sym, (f >= 0.4).astype(int))


def test_intervals_follow_the_fitted_quantiles():
    p = QuantizerParams(4, 0.2, mu=0.5, sigma=0.1)
    lo, hi = p.gaps()
    want_lo = 0.5 + 0.1 * norm.ppf(np.array([0.25, 0.5, 0.75]) - p.delta)
    want_hi = 0.5 + 0.1 * norm.ppf(np.array([0.25, 0.5, 0.75]) + p.delta)
    assert np.allclose(lo, want_lo) and np.allclose(hi, want_hi)
    assert np.array_equal(quantize_symbols(np.array([0.0, 0.45, 0.55, 1.0]), p), [0, 1, 2, 3])
    assert quantize_symbols(np.array([0.5]), p)[0] == -1


def test_quantiles_clamped_to_feature_range():
    p = QuantizerParams(8, 0.2, mu=0.5, sigma=5.0)
    lo, hi = p.gaps()
    assert lo.min() >= 0.0 and hi.max() <= 1.0


@pytest.mark.parametrize("L", [2, 4, 8])
def test_discard_fraction_matches_nu(L, rng):
    f = rng.normal(0.5, 0.1, size=1_000_000)
    km = quantize(_block(f), L, 0.2, QuantizerParams(L, 0.2, 0.5, 0.1))
    assert abs(1 - km.kept_mask.mean() - 0.2) < 0.01


@pytest.mark.parametrize("L", [2, 4, 8])
def test_gray_neighbours_differ_in_one_bit(L):
    bits = gray_bits(np.arange(L), L)
    assert len({tuple(b) for b in bits}) == L
    for i in range(L - 1):
        assert np.sum(bits[i] != bits[i + 1]) == 1


def test_gray_examples():
    assert list(gray_code(np.arange(8))) == [0, 1, 3, 2, 6, 7, 5, 4]
    assert gray_bits(np.array([2]), 4).tolist() == [[1, 1]]  # gray(2) = 0b11
    assert gray_bits(np.array([1]), 8).tolist() == [[0, 0, 1]]  # MSB first


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([2, 4, 8]), st.floats(0.0, 0.6),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(0.2, 0.8), st.floats(0.01, 0.5))
def test_quantizer_is_monotone(L, nu, f1, f2, mu, sigma):
    if nu / (2 * (L - 1)) >= 1 / (2 * L):
        return
    p = QuantizerParams(L, nu, mu, sigma)
    a, b = quantize_symbols(np.array([min(f1, f2), max(f1, f2)]), p)
    if a >= 0 and b >= 0:
        assert a <= b


def test_bit_count_is_kept_times_log2L(rng):
    blocks = [_block(rng.uniform(size=300)) for _ in range(3)]
    km = quantize(blocks, 8, 0.2)
    for k in range(3):
        assert km.bits(k).size == 3 * int(km.kept_mask[k].sum())
    cb = km.common_bits()
    assert cb.shape == (3, 3 * int(km.common_mask().sum()))


def test_common_mask_is_the_intersection():
    km = KeyMaterial(np.array([[0, -1, 1, 1], [0, 1, -1, 1]]), 2, 0.2)
    assert km.common_mask().tolist() == [True, False, False, True]
    assert km.common_bits().tolist() == [[0, 1], [0, 1]]
    assert km.select([1]).common_mask().tolist() == [True, True, False, True]


def test_rotation_by_zero_keeps_signal():
    x = np.exp(1j * np.linspace(0, 3, 5))
    out = expand_static(x, 1, 0, phases=[0.0])
    assert np.array_equal(out[0], x)


def test_rotation_by_pi_negates_signal():
    x = np.exp(1j * np.linspace(0, 3, 5))
    g = np.arange(1, 6) * (1 + 0.5j)
    out = expand_static(x, 1, 0, phases=[math.pi])
    assert np.allclose(g @ out[0], -(g @ x), atol=1e-15)


def test_rotation_needs_a_round():
    with pytest.raises(ValueError):
        expand_static(np.ones(3), 0, 0)
    with pytest.raises(ValueError):
        rotation_phases(0, 0)


def test_rotations_preserve_alignment(rng):
    x = rng.normal(size=16) + 1j * rng.normal(size=16)
    G = rng.normal(size=(4, 16)) + 1j * rng.normal(size=(4, 16))
    ref = max_pairwise_nse(G @ x)
    xs = expand_static(x, 1000, 7)
    assert xs.shape == (1000, 16)
    nses = np.array([max_pairwise_nse(G @ r) for r in xs])
    assert np.max(np.abs(nses - ref)) <= 1e-12 * max(1.0, ref)
    phases = rotation_phases(1000, 7)
    assert phases.min() >= 0 and phases.max() < 2 * math.pi
    assert np.array_equal(phases, rotation_phases(1000, 7))


def test_key_file_round_trip(tmp_path, rng):
    bits = rng.integers(0, 2, size=37).astype(np.uint8)
    p = tmp_path / "node0.key"
    write_key_file(p, bits, node_id=2, trial_id=5, levels=4, nu=0.2)
    meta, back = read_key_file(p)
    assert meta == {"node": 2, "trial": 5, "L": 4, "nu": 0.2, "nbits": 37}
    assert np.array_equal(back, bits)
    raw = p.read_bytes()
    payload = raw[raw.index(b"\n") + 1:]
    assert len(payload) == 5
    assert payload[0] == int("".join(map(str, bits[:8])), 2)  # MSB first


def test_key_file_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.key"
    p.write_bytes(b"hello world\n\x00")
    with pytest.raises(ValueError):
        read_key_file(p)


def test_identical_nodes_agree(rng):
    y = rng.normal(size=(1, 500)) + 1j * rng.normal(size=(1, 500))
    blocks = extract_features(np.vstack([y, y, y]))
    km = quantize(blocks, 4, 0.2)
    bits = km.common_bits()
    assert all(np.array_equal(bits[0], b) for b in bits)
    for i, j in itertools.combinations(range(3), 2):
        assert np.array_equal(km.kept_mask[i], km.kept_mask[j])
