import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntbip import fixtures as fx
from ntbip.errors import CapTooSmall, Underflow
from ntbip.oracle import (
    build_truncated,
    decay_slope,
    distribution_from,
    enumerate_states,
    generator_row,
    propagate,
    stationary_adaptive,
    stationary_solve,
    transition_matrix,
)

from strategies import any_model


def test_enumerate_counts():
    assert len(enumerate_states(2, 20)) == 231
    assert len(enumerate_states(2, 5, "box")) == 36
    assert enumerate_states(1, 3) == [(0,), (1,), (2,), (3,)]


def test_generator_row_m1():
    # from j: death at 2j, birth at j (branching) + 1 (immigration)
    row = generator_row(fx.fixture("M1"), (3,))
    assert row == {(2,): 6.0, (4,): 4.0, (3,): -10.0}
    assert generator_row(fx.absorbing("M1"), (0,)) == {}


def test_cap_too_small():
    with pytest.raises(CapTooSmall):
        build_truncated(fx.fixture("M1"), 4)


def test_m1_transition_closed_form():
    # p_00(t) -> 1/2 and the chain is in equilibrium well before t = 30
    gen = build_truncated(fx.fixture("M1"), 60)
    p = distribution_from(gen, (0,), 30.0)
    assert p[gen.state_index((0,))] == pytest.approx(0.5, abs=1e-10)


def test_m2_absorbing_extinction_limit():
    gen = build_truncated(fx.absorbing("M2"), 120)
    p = distribution_from(gen, (1,), 50.0)
    assert p[gen.state_index((0,))] == pytest.approx(1 - 2 / np.pi, abs=1e-9)


def test_stationary_matches_geometric():
    st = stationary_solve(build_truncated(fx.fixture("M1"), 60))
    np.testing.assert_allclose(st.probabilities[:20], 0.5 ** (np.arange(20) + 1), atol=1e-14)
    assert st.leak_flux < 1e-15


def test_stationary_adaptive_grows_cap():
    st = stationary_adaptive(fx.fixture("S2"), 24)
    assert st.leak_flux <= 1e-9


def test_decay_slope_underflow():
    gen = build_truncated(fx.fixture("M2"), 20)
    with pytest.raises(Underflow):
        decay_slope(gen, (1,), (200.0, 400.0))


def test_propagate_equals_matrix_row():
    gen = build_truncated(fx.fixture("M3"), 12)
    P = transition_matrix(gen, 0.7)
    row = distribution_from(gen, (1, 1), 0.7)
    np.testing.assert_allclose(P[gen.state_index((1, 1))], row, atol=1e-13)


def test_long_horizon_chunking():
    # Lambda t far above one chunk; rows must still be stochastic
    gen = build_truncated(fx.fixture("M2"), 80)
    P = transition_matrix(gen, 40.0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert P.min() >= -1e-14


@given(any_model, st.floats(0.05, 3.0))
def test_rows_stochastic(m, t):
    gen = build_truncated(m, 14 if m.n == 1 else 10)
    assert np.all(np.abs(gen.matrix.sum(axis=1)) <= 1e-12)
    P = transition_matrix(gen, t)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert P.min() >= -1e-14


@given(any_model, st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_semigroup(m, s, t):
    gen = build_truncated(m, 14 if m.n == 1 else 10)
    lhs = transition_matrix(gen, s) @ transition_matrix(gen, t)
    np.testing.assert_allclose(lhs, transition_matrix(gen, s + t), atol=1e-10)


@given(any_model)
def test_leak_is_monotone(m):
    gen = build_truncated(m, 12 if m.n == 1 else 8)
    e1 = (1,) + (0,) * (m.n - 1)
    p0 = np.zeros(gen.size + 1)
    p0[gen.state_index(e1)] = 1.0
    leaks = [propagate(gen, p0, t)[gen.leak] for t in (0.2, 0.5, 1.0, 2.0)]
    assert all(b >= a - 1e-15 for a, b in zip(leaks, leaks[1:]))
