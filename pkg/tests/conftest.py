"""
Shared fixtures for the MFC Lab test suite.
"""

import numpy as np
import pytest

from mfclab.problem import ControlSet, ProblemSpec


def constant_problem(name="CONSTANT", drift=0.0, vol=1.0, running=0.0, sigma0=None, theta=None,
                     terminal=None, control_set=None, horizon=1.0):
    """Scalar problem with constant drift, volatility and running reward."""
    vol_value = float(vol)
    return ProblemSpec(
        name=name,
        n=1,
        horizon=horizon,
        control_set=control_set or ControlSet.box([-1.0], [1.0]),
        drift=lambda t, x, pi, m, u: np.full(x.shape, float(drift)),
        vol=lambda t, x, pi, m, u: np.full((x.shape[0], 1, 1), vol_value),
        running=lambda t, x, pi, m, u: np.full(x.shape[0], float(running)),
        terminal=terminal or (lambda x, pi: x[:, 0]),
        sigma0=sigma0,
        theta=theta if theta is not None else max(vol_value ** 2, 1e-3),
    )


@pytest.fixture
def make_problem():
    return constant_problem


@pytest.fixture
def workers(monkeypatch):
    """Set MFCLAB_WORKERS for the duration of a test."""
    def set_workers(count):
        monkeypatch.setenv("MFCLAB_WORKERS", str(count))
    return set_workers
