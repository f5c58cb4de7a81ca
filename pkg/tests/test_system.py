import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risgkg.errors import ContractViolation
from risgkg.system import (ArisBudget, PilotConfig, aggregate, aris_receive,
                           build_derived_matrices, effective_noise_variance_aris,
                           effective_noise_variance_pris, pairwise_ser_db, pris_receive,
                           ser_db, snr, snr_all, worst_ser_db)

from conftest import hand_set, default_channels, default_pilot


def test_unit_noise_when_budget_matches():
    ch = hand_set([1], [[1]], noise_w=200.0)
    assert effective_noise_variance_pris(ch, PilotConfig(1.0, 200))[0] == pytest.approx(1.0)


def test_doubling_pilot_length_halves_noise():
    ch = default_channels()
    a = effective_noise_variance_pris(ch, PilotConfig(1.0, 100))
    b = effective_noise_variance_pris(ch, PilotConfig(1.0, 200))
    assert np.allclose(a, 2 * b)


def test_default_noise_variance():
    ch = default_channels()
    lam = 299_792_458.0 / 1e9
    area = (lam / 4) ** 2
    k_ar = 10 ** ((4 - 20 * math.log10(50) - 30) / 10) * area
    k_kr = 10 ** ((4 - 20 * math.log10(70) - 30) / 10) * area
    noise = 10 ** ((-174 + 60 + 5) / 10) * 1e-3
    p_a = 10 ** (3.6 - 3)  # 36 dBm
    want = noise / (p_a * 200 * k_ar * k_kr)
    got = effective_noise_variance_pris(ch, default_pilot(36.0))
    assert np.allclose(got, want, rtol=1e-12)
    assert want == pytest.approx(0.97293, rel=1e-4)


def test_zero_reflection_gives_zero_signal():
    ch = default_channels()
    s = pris_receive(np.zeros(16), ch, default_pilot(), 1)
    assert np.all(s.signal == 0)
    assert np.array_equal(s.value, s.signal + s.noise)


def test_identity_channel():
    ch = hand_set([1], [[1]])
    assert aggregate(np.array([1.0]), ch, eve=False)[0] == 1


def test_two_element_bilinear_form():
    ch = hand_set([1, 1], [[1, -1j]])
    assert abs(aggregate(np.array([1, 1j]), ch, eve=False)[0]) < 1e-15


def test_infeasible_pris_rejected():
    with pytest.raises(ContractViolation):
        pris_receive(np.array([1.1] + [0] * 15), default_channels(), default_pilot(), 0)


def test_aris_without_amplification_noise_matches_pris():
    ch = default_channels()
    pilot = default_pilot()
    w = np.exp(1j * np.linspace(0, 3, 16))
    budget = ArisBudget(math.inf, 1.0, 0.0)
    assert np.allclose(effective_noise_variance_aris(w, ch, pilot, budget),
                       effective_noise_variance_pris(ch, pilot), rtol=1e-15)
    a = aris_receive(w, ch, pilot, budget, 5)
    p = pris_receive(w, ch, pilot, 5)
    assert np.array_equal(a.value, p.value)


def test_aris_zero_beamformer_leaves_awgn():
    ch = default_channels()
    pilot = default_pilot()
    budget = ArisBudget(1.0, 100.0, ch.link.noise_w)
    var = effective_noise_variance_aris(np.zeros(16), ch, pilot, budget)
    assert np.allclose(var, effective_noise_variance_pris(ch, pilot))


def test_single_element_amplification_noise():
    ch = hand_set([1], [[1]], noise_w=0.0)
    pilot = PilotConfig(2.0, 10)
    var = effective_noise_variance_aris(np.array([2.0]), ch, pilot, ArisBudget(1e9, 10.0, 0.3))
    assert var[0] == pytest.approx(4 * 0.3 / (2.0 * 10))


def test_aris_power_violation():
    ch = default_channels()
    budget = ArisBudget(1e-3, 100.0, ch.link.noise_w)
    with pytest.raises(ContractViolation):
        aris_receive(np.full(16, 100.0), ch, default_pilot(), budget, 0)


def test_ser_identical_channels_is_infinite():
    ch = hand_set([1, 2], [[1, 1j], [1, 1j]])
    assert ser_db(np.ones(2), 0, 1, ch) == math.inf
    assert math.isnan(ser_db(np.zeros(2), 0, 1, ch))
    with pytest.raises(ValueError):
        ser_db(np.ones(2), 1, 1, ch)


def test_ser_hand_value():
    ch = hand_set([1, 1j], [[1, 2], [0.5j, 1]])
    v = np.array([1, -1j])
    gk = np.conj([1, 2]) * np.array([1, 1j])
    gi = np.conj([0.5j, 1]) * np.array([1, 1j])
    num = abs(gk @ v) ** 2
    den = abs((gk - gi) @ v) ** 2
    assert ser_db(v, 0, 1, ch) == pytest.approx(10 * math.log10(num / den), rel=1e-12)


def test_snr_zero_beamformer():
    assert snr(np.zeros(16), 0, default_channels(), default_pilot()) == 0.0


def test_single_element_snr():
    ch = hand_set([0.5], [[2j]], noise_w=3.0)
    pilot = PilotConfig(1.0, 6)
    # |v|^2 |h_kr|^2 |h_ar|^2 / sigma_n^2 with sigma_n^2 = 3 / 6
    assert snr(np.array([0.8]), 0, ch, pilot) == pytest.approx(0.64 * 4 * 0.25 / 0.5)


def test_snr_argmax_invariant_to_scaling():
    ch = default_channels()
    v1, v2 = np.ones(16), np.exp(1j * np.arange(16))
    a = snr_all(v1, ch, default_pilot(30)) / snr_all(v2, ch, default_pilot(30))
    b = snr_all(v1, ch, default_pilot(40)) / snr_all(v2, ch, default_pilot(40))
    assert np.allclose(a, b)


def test_derived_matrices():
    ch = hand_set([1, 2j], [[1, 1j], [1, 1j], [2, 0]])
    d = build_derived_matrices(ch)
    assert np.all(d.d(0, 1) == 0)
    S = d.sigma_ark[2]
    # entries of diag(h_kr^H) h_ar h_ar^H diag(h_kr)
    g = np.array([2 * 1, 0 * 2j])
    assert np.allclose(S, np.outer(g, g.conj()))
    assert len(d.pairs) == 6


def test_sigma_ark_rank_one():
    d = build_derived_matrices(default_channels())
    for S in d.sigma_ark:
        lam = np.linalg.eigvalsh(S)
        assert np.all(np.abs(lam[:-1]) <= 1e-10 * lam[-1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_quadratic_form_ser_matches_direct(seed):
    ch = default_channels(16, 3, trial=seed)
    v = np.exp(1j * np.random.default_rng(seed).uniform(0, 2 * np.pi, 16))
    d = build_derived_matrices(ch)
    x = v.conj()
    for k, i in d.pairs:
        num = np.real(x.conj() @ d.sigma_ark[k] @ x)
        den = np.real(x.conj() @ d.d(k, i) @ x)
        assert 10 * np.log10(num / den) == pytest.approx(ser_db(v, k, i, ch), rel=1e-8)
    assert pairwise_ser_db(v, ch)[0, 1] == pytest.approx(ser_db(v, 0, 1, ch), rel=1e-10)
    assert worst_ser_db(v, ch) <= ser_db(v, 0, 1, ch) + 1e-9


def test_noise_statistics():
    ch = default_channels()
    pilot = default_pilot()
    var = effective_noise_variance_pris(ch, pilot, eve=True)
    n = np.array([pris_receive(np.zeros(16), ch, pilot, s).noise for s in range(20_000)])
    emp = np.mean(np.abs(n) ** 2, axis=0)
    assert np.allclose(emp, var, rtol=0.03)
    c = np.abs(np.corrcoef(n.T))
    assert np.max(c[~np.eye(5, dtype=bool)]) < 0.03
