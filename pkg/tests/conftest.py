import numpy as np
import pytest

from gatemix.measure import MixingMeasure, ThetaBox


@pytest.fixture
def theta1d():
    return ThetaBox.default(1)


@pytest.fixture
def two_expert_1d():
    """Two-component d=1 measure used across density/likelihood tests."""
    return MixingMeasure(
        beta0=[0.0, 0.0],
        beta1=[[1.0], [-1.0]],
        a=[[1.0], [2.0]],
        b=[0.0, 1.0],
        sigma=[1.0, 0.5],
    )


@pytest.fixture
def separated_1d():
    """Well-separated two-component truth for estimation tests."""
    return MixingMeasure(
        beta0=[0.0, 0.0],
        beta1=[[2.0], [-2.0]],
        a=[[1.5], [0.0]],
        b=[1.0, -1.0],
        sigma=[0.3, 0.5],
    )


def random_measure(rng, k, dim=1, margin=0.5, theta=None):
    """Random interior measure; margin shrinks the box to leave slack."""
    box = theta if theta is not None else ThetaBox.default(dim)
    return box.sample_measure(k, rng, margin=margin)
