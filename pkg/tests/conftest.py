"""Shared fixtures: reference-parameter configs and seeded channel sets."""

import math

import numpy as np
import pytest

from wpmec.experiments import generate_channels
from wpmec.model import ChannelSet, SystemConfig, UserProfile, uniform_profiles
from wpmec.solvers.observability import get_metrics


@pytest.fixture(autouse=True)
def reset_metrics():
    get_metrics().reset_metrics()
    yield


@pytest.fixture
def profile():
    return UserProfile.reference_defaults()


@pytest.fixture
def make_instance():
    """Factory for (channels, profiles, cfg) with reference parameters and seeded channels."""

    def _make(K=2, N=2, seed=1, trial=0, P_max=10.0, **overrides):
        cfg = SystemConfig.reference_defaults(K=K, N=N, P_max=P_max)
        if overrides:
            values = cfg.to_dict()
            values.update(overrides)
            if "K" in overrides and "weights" not in overrides:
                values["weights"] = None
            cfg = SystemConfig(**values)
        return generate_channels(seed, trial, cfg), uniform_profiles(cfg.K), cfg

    return _make


@pytest.fixture
def reference_k1():
    """One user, one antenna, h = g = sqrt(5e-6), P_max = 10 W."""
    cfg = SystemConfig.reference_defaults(K=1, N=1, P_max=10.0)
    h = np.array([[math.sqrt(5e-6)]])
    return ChannelSet(h, h), uniform_profiles(1), cfg
