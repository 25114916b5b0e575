"""Shared fixtures: seeded generators, tiny encoder configs and window builders."""

import numpy as np
import pandas as pd
import pytest

from agents.bert_pin.encoder import ModelConfig
from load_data.fleet import AlignedProfile
from load_data.windows import MaskedWindow, ProfileWindow


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """N=8, C=8, d=8, two heads, one layer, no dropout."""
    return ModelConfig(classes=8, hidden=8, heads=2, layers=1, ffn_mult=4, dropout=0.0, window_len=8)


def make_window(rng, n, hole=None, margin=0, window_id=0, low=0.2, high=0.95):
    """Random window with ``hole`` = (start, end) half-open masked."""
    total = n + 2 * margin
    load = rng.uniform(low, high, total)
    temp = rng.uniform(0.0, 1.0, total)
    window = ProfileWindow(
        window_id=window_id,
        load=load[margin:margin + n],
        temp=temp[margin:margin + n],
        left_load=load[:margin],
        left_temp=temp[:margin],
        right_load=load[margin + n:],
        right_temp=temp[margin + n:],
    )
    mask = np.ones(n, dtype=np.int8)
    if hole is not None:
        mask[hole[0]:hole[1]] = 0
    return MaskedWindow(window, mask)


def make_profile(rng, n_days, start="2020-01-01", low=0.2):
    n = n_days * 96
    return AlignedProfile(
        load_norm=rng.uniform(low, 1.0, n),
        temp_norm=rng.uniform(0.0, 1.0, n),
        p_max=1000.0,
        t_min=-5.0,
        t_max=30.0,
        start_timestamp=pd.Timestamp(start, tz="UTC"),
    )


@pytest.fixture
def window_factory():
    return make_window


@pytest.fixture
def profile_factory():
    return make_profile
