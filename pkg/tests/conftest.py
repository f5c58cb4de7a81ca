import numpy as np
import pytest

from risgkg.channel import ChannelSet, LinkBudget, dbm_to_watts
from risgkg.experiment import ExperimentConfig, trial_channels
from risgkg.system import ArisBudget, PilotConfig


def default_channels(n=16, k=4, trial=0, seed=0):
    return trial_channels(ExperimentConfig(seed=seed), n, k, trial)


def default_pilot(p_dbm=36.0):
    return PilotConfig(float(dbm_to_watts(p_dbm)))


def default_budget(ch, p_r_dbm=33.0):
    return ArisBudget(float(dbm_to_watts(p_r_dbm)), 100.0, ch.link.noise_w)


def unit_link(k, noise_w=1.0):
    return LinkBudget(0.0, (0.0,) * k, 0.0, 1.0, noise_w)


def hand_set(h_ar, h_kr, h_er=None, noise_w=1.0):
    h_ar = np.asarray(h_ar, complex)
    h_kr = np.atleast_2d(np.asarray(h_kr, complex))
    h_er = np.zeros_like(h_ar) if h_er is None else np.asarray(h_er, complex)
    return ChannelSet(h_ar, h_kr, h_er, np.eye(h_ar.size), unit_link(h_kr.shape[0], noise_w))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
