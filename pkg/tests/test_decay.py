import math

import numpy as np
import pytest
from hypothesis import given

from ntbip import fixtures as fx
from ntbip.decay import (
    check_communicating,
    decay_parameter,
    forward_recurrence,
    invariant_measure,
    invariant_measure_convergence,
    invariant_vector,
    qsd_verdict,
    row_identity_residual,
)
from ntbip.errors import OutOfDomain, WrongEncoding
from ntbip.oracle import build_truncated, decay_slope

from strategies import any_model


def test_decay_parameter_values():
    assert decay_parameter(fx.fixture("M2")).lambda_z == pytest.approx(0.5, abs=1e-12)
    assert decay_parameter(fx.fixture("M3")).lambda_z == pytest.approx(1 / 3, abs=1e-12)
    # no negative zero in the output
    assert math.copysign(1.0, decay_parameter(fx.fixture("M1")).lambda_z) == 1.0


def test_m3_oracle_slope():
    d = decay_slope(build_truncated(fx.fixture("M3"), 30), (1, 0), (8.0, 16.0))
    assert d.estimate == pytest.approx(1 / 3, rel=0.15)


def test_invariant_vector_is_power_of_q():
    m = fx.fixture("M3")
    assert invariant_vector(m, (2, 1)) == pytest.approx((2 / 3) ** 3, abs=1e-12)


def test_requires_h_equal_a():
    with pytest.raises(WrongEncoding):
        decay_parameter(fx.absorbing("M2"))


def test_lambda_outside_range():
    with pytest.raises(OutOfDomain):
        invariant_measure(fx.fixture("M2"), 0.6)
    with pytest.raises(OutOfDomain):
        invariant_measure(fx.fixture("M2"), -0.1)


def test_m1_zero_measure_is_geometric():
    m = invariant_measure(fx.fixture("M1"), 0.0).array()
    np.testing.assert_allclose(m, 0.5 ** np.arange(len(m)), rtol=1e-12)


def test_recurrence_is_exact_in_mpmath():
    # M2 at lambda = 1/2: m_j = binom(2j, j) / 4^j from (1-s)^(-1/2)
    m = forward_recurrence(fx.fixture("M2"), 0.5, 30)
    for j in (0, 5, 30):
        assert float(m[j]) == pytest.approx(math.comb(2 * j, j) / 4**j, rel=1e-14)


def test_qsd_reports():
    q1 = qsd_verdict(fx.fixture("M1"))
    assert q1.exists and q1.note.startswith("stationary")
    p = [q1.distribution[(j,)] for j in range(10)]
    np.testing.assert_allclose(p, 0.5 ** (np.arange(10) + 1), atol=1e-10)
    assert not qsd_verdict(fx.fixture("M2")).exists
    assert invariant_measure_convergence(fx.fixture("M2"), 0.5).status == "Divergent"


def test_m3_measure_rows():
    meas = invariant_measure(fx.fixture("M3"), 1 / 3)
    assert meas.row_residual <= 1e-8
    assert min(meas.coefficients.values()) > 0


@given(any_model)
def test_row_identity_random(m):
    check_communicating(m)
    assert decay_parameter(m).lambda_z >= 0.0
    assert row_identity_residual(m, 4) <= 1e-10
