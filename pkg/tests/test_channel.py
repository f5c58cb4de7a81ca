import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risgkg.channel import (LinkBudget, RisGeometry, build_correlation_matrix, dbm_to_watts,
                            noise_power_dbm, path_loss_variance_db, psd_factor, rng_for,
                            sample_channels, watts_to_dbm)
from risgkg.errors import ConfigError, ModelError


def test_single_element_correlation():
    assert build_correlation_matrix(RisGeometry.from_carrier(1)).tolist() == [[1.0]]


def test_half_wavelength_spacing_is_uncorrelated():
    geo = RisGeometry(2, 0.15, 0.15, 0.3)
    R = build_correlation_matrix(geo, square=False)
    assert abs(R[0, 1]) < 1e-15


def test_quarter_wavelength_grid():
    R = build_correlation_matrix(RisGeometry.from_carrier(4))
    assert R[0, 1] == pytest.approx(2 / math.pi, abs=1e-12)
    # diagonal neighbour sits sqrt(2) quarter-wavelengths away
    assert R[0, 3] == pytest.approx(np.sinc(math.sqrt(2) / 2), abs=1e-12)


def test_geometry_defaults():
    geo = RisGeometry.from_carrier(16, 1e9)
    assert geo.element_width == pytest.approx(299_792_458.0 / 1e9 / 4)
    pos = geo.positions()
    assert pos.shape == (16, 2)
    assert np.allclose(np.unique(pos[:, 0]), np.arange(4) * geo.element_width)


def test_non_square_rejected():
    with pytest.raises(ConfigError):
        build_correlation_matrix(RisGeometry.from_carrier(12))


@pytest.mark.parametrize("n", [4, 16, 36, 64])
def test_correlation_structure(n):
    R = build_correlation_matrix(RisGeometry.from_carrier(n))
    assert np.array_equal(R, R.T)
    assert np.all(np.diag(R) == 1.0)
    _, clip = psd_factor(R)
    assert clip <= 1e-8


def test_indefinite_matrix_rejected():
    with pytest.raises(ModelError):
        psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("d, expected", [(1.0, -26.0), (50.0, -59.979400086720375),
                                         (70.0, -62.90196080028514)])
def test_path_loss(d, expected):
    assert path_loss_variance_db(4.0, 2.0, d, 1.0, -30.0) == pytest.approx(expected, abs=1e-9)


def test_path_loss_domain():
    with pytest.raises(ValueError):
        path_loss_variance_db(4.0, 2.0, 0.5)


@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4), st.floats(0.1, 6.0))
def test_path_loss_monotone(d1, d2, zeta):
    lo, hi = sorted((d1, d2))
    assert path_loss_variance_db(4.0, zeta, hi) <= path_loss_variance_db(4.0, zeta, lo)


@pytest.mark.parametrize("bw, nf, expected", [(1.0, 0.0, -174.0), (1e6, 5.0, -109.0),
                                              (1e6, 0.0, -114.0)])
def test_noise_floor(bw, nf, expected):
    assert noise_power_dbm(bw, nf) == pytest.approx(expected, abs=1e-12)


def test_dbm_round_trip():
    assert float(watts_to_dbm(dbm_to_watts(36.0))) == pytest.approx(36.0)
    assert float(dbm_to_watts(30.0)) == pytest.approx(1.0)


def test_kappa_is_variance_times_area():
    geo = RisGeometry.from_carrier(16)
    link = LinkBudget.from_distances(geo, 50.0, [70.0, 70.0], 70.0)
    area = geo.element_width * geo.element_height
    assert link.kappa_ar == pytest.approx(10 ** (-59.979400086720375 / 10) * area, rel=1e-12)
    assert link.kappa_kr.shape == (2,)
    assert link.noise_w == pytest.approx(10 ** (-109 / 10) * 1e-3, rel=1e-12)


def test_identity_covariance_variance():
    ch = sample_channels(np.eye(1), 100_000, 7)
    assert np.mean(np.abs(ch.h_kr) ** 2) == pytest.approx(1.0, rel=0.02)


def test_sampling_is_deterministic():
    R = build_correlation_matrix(RisGeometry.from_carrier(16))
    a, b = sample_channels(R, 4, 99), sample_channels(R, 4, 99)
    assert np.array_equal(a.h_kr, b.h_kr) and np.array_equal(a.h_er, b.h_er)
    assert not np.array_equal(a.h_ar, sample_channels(R, 4, 100).h_ar)


def test_rng_streams_are_keyed():
    x = rng_for(1, 2, 3).standard_normal(4)
    assert np.array_equal(x, rng_for(1, 2, 3).standard_normal(4))
    assert not np.array_equal(x, rng_for(1, 3, 2).standard_normal(4))


def test_empirical_covariance_matches_r():
    R = build_correlation_matrix(RisGeometry.from_carrier(16))
    ch = sample_channels(R, 100_000, 3)
    H = ch.h_kr
    C = H.T @ H.conj() / H.shape[0]
    assert np.max(np.abs(C - R)) < 0.02
    # independence across nodes
    X = H[: 50_000].T @ H[50_000:].conj() / 50_000
    assert np.max(np.abs(X)) < 0.02


def test_eve_and_alice_present():
    R = build_correlation_matrix(RisGeometry.from_carrier(4))
    ch = sample_channels(R, 3, 0)
    assert ch.h_ar.shape == (4,) and ch.h_kr.shape == (3, 4) and ch.h_er.shape == (4,)
    assert ch.h_nodes.shape == (4, 4)
    with pytest.raises(ValueError):
        sample_channels(R, 0, 0)
