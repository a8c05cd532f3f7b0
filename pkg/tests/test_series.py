import math

import numpy as np
import pytest

from bdkit.series import CONVERGED, DIVERGENT, sum_log_series


def geometric(r):
    return lambda start, stop: np.arange(start, stop) * math.log(r)


@pytest.mark.parametrize("r", [0.1, 0.5, 0.9, 0.99])
def test_geometric_series(r):
    res = sum_log_series(geometric(r))
    assert res.status == CONVERGED
    assert res.value == pytest.approx(1.0 / (1.0 - r), rel=1e-11)


def test_divergent_geometric():
    res = sum_log_series(geometric(1.01))
    assert res.status == DIVERGENT
    assert math.isinf(res.value)


def test_power_tail_correction():
    # sum_{j>=1} j^-3 = zeta(3)
    res = sum_log_series(lambda s, e: -3.0 * np.log(np.arange(s + 1, e + 1)), tol=1e-10)
    assert res.converged
    assert res.value == pytest.approx(1.2020569031595942, rel=1e-9)


def test_huge_terms_in_log_space_do_not_overflow():
    # terms exp(-j) * exp(-800) are tiny but their logs are fine
    res = sum_log_series(lambda s, e: -800.0 - np.arange(s, e))
    assert res.converged
    assert res.value == pytest.approx(math.exp(-800.0) / (1 - math.exp(-1)), rel=1e-12)


def test_zero_terms():
    res = sum_log_series(lambda s, e: np.where(np.arange(s, e) < 3, 0.0, -np.inf))
    assert res.converged and res.value == 3.0


def test_nan_terms_raise():
    with pytest.raises(FloatingPointError):
        sum_log_series(lambda s, e: np.full(e - s, np.nan))
