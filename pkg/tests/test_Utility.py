import numpy as np
import pytest

from FedFV.Utility import mean_and_std, ceil_fraction, floor_fraction, seeded_rng, EmptyDataError, UsageError, \
    SAMPLING_STREAM, DROPOUT_STREAM


def test_mean_and_std():
    mean, std = mean_and_std([0.2, 0.4, 0.6, 0.8])
    assert mean == pytest.approx(0.5)
    assert std == pytest.approx(np.sqrt(0.05))
    assert mean_and_std([3.0]) == (3.0, 0.0)
    with pytest.raises(EmptyDataError):
        mean_and_std([])


def test_ceil_fraction():
    assert ceil_fraction(0.05, 4) == 1
    assert ceil_fraction(0.05, 100) == 5
    assert ceil_fraction(0.1, 30) == 3
    assert ceil_fraction(0.0, 10) == 0


def test_floor_fraction():
    assert floor_fraction(0.1, 100) == 10
    assert floor_fraction(1.0 - 0.7, 10) == 3
    assert floor_fraction(0.9, 2) == 1
    assert floor_fraction(1.0, 7) == 7


def test_seeded_rng():
    assert np.array_equal(seeded_rng(1, SAMPLING_STREAM, 5).random(4), seeded_rng(1, SAMPLING_STREAM, 5).random(4))
    assert not np.array_equal(seeded_rng(1, SAMPLING_STREAM, 5).random(4),
                              seeded_rng(1, DROPOUT_STREAM, 5).random(4))
    with pytest.raises(UsageError):
        seeded_rng(-1)
