import csv
import io
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ntbip import fixtures as fx
from ntbip.curve import (
    CurveFlow,
    curve_csv_rows,
    default_pivot,
    minimal_root,
    solve_curve,
)
from ntbip.errors import (
    NotAlmostSurelyExtinct,
    NotApplicable,
    OutOfDomain,
    WrongEncoding,
)
from ntbip.extinction import (
    curve_pivot_invariance_check,
    extinction_probability,
    integral_J,
    mean_extinction_time,
)
from ntbip.model import make_model, perron_root
from ntbip.oracle import build_truncated, distribution_from

from strategies import one_type, two_type


def test_m4_absorbing_root_and_J(absorbing):
    m = absorbing["M4"]
    assert minimal_root(m).q[0] == 1.0
    J = integral_J(m)
    assert J.finite and J.value == pytest.approx(0.5, abs=1e-9)


def test_a2_extinction_matches_oracle(absorbing):
    m = absorbing["A2"]
    a = extinction_probability(m, (1, 0))
    gen = build_truncated(m, 40)
    p = distribution_from(gen, (1, 0), 60.0)
    # p_i0(t) increases to a_i0; the leak bounds the truncation error
    assert abs(p[gen.state_index((0, 0))] - a) <= 1e-6 + p[gen.leak]


def test_extinction_requires_absorbing(M2):
    with pytest.raises(WrongEncoding):
        extinction_probability(M2, (1,))


def test_zero_state_rejected(absorbing):
    with pytest.raises((OutOfDomain, ValueError)):
        extinction_probability(absorbing["M2"], (0,))


def test_mean_time_rejections(absorbing):
    with pytest.raises(NotAlmostSurelyExtinct):
        mean_extinction_time(absorbing["M4"], (1,))  # J finite: positive escape chance
    with pytest.raises(NotAlmostSurelyExtinct):
        mean_extinction_time(absorbing["M3"], (1, 0))


def test_J_not_applicable_when_supercritical(absorbing):
    with pytest.raises(NotApplicable):
        integral_J(absorbing["M2"])


def test_pivot_check_needs_two_types(absorbing):
    with pytest.raises(NotApplicable):
        curve_pivot_invariance_check(absorbing["M1"])


def test_critical_immigration_boundary():
    # critical binary splitting B = (1-u)^2 with immigration rate c:
    # I = c ln(1-u), so J = int (1-u)^{c-2} is infinite exactly when c <= 1
    def m(c):
        return make_model(1, {(1,): c}, [{(0,): 1.0, (2,): 1.0}], "absorbing")

    assert integral_J(m(0.5)).infinite
    assert integral_J(m(1.0)).infinite  # logarithmic divergence, the boundary case
    for c in (1.5, 2.5):
        J = integral_J(m(c))
        assert J.finite and J.value == pytest.approx(1 / (c - 1), rel=1e-8)
    assert extinction_probability(m(1.0), (1,)) == 1.0
    # a_10 = int u (1-u)^{c-2} / J = 1/c
    assert extinction_probability(m(1.5), (1,)) == pytest.approx(1 / 1.5, abs=1e-8)


def test_critical_two_type_curve():
    # symmetric and critical: along u_1 = u_2 = u, B_1 = 0.1 (1-u)^2 and
    # A = 0.6 (u-1), so e^I = (1-u)^6, J = int (1-u)^4 / 0.1 = 2 and
    # a_(1,0) = int u (1-u)^4 / 0.1 / J = 1/6.  The march is stiff here.
    m = make_model(2, {(1, 0): 0.3, (0, 1): 0.3},
                   [{(0, 0): 0.1, (1, 1): 0.1}, {(0, 0): 0.1, (1, 1): 0.1}], "absorbing")
    J = integral_J(m)
    assert J.finite and J.value == pytest.approx(2.0, rel=1e-8)
    assert extinction_probability(m, (1, 0)) == pytest.approx(1 / 6, abs=1e-8)


def test_curve_csv_rows(absorbing):
    m = absorbing["M3"]
    c = solve_curve(m, grid_size=11)
    buf = io.StringIO()
    csv.writer(buf).writerows(curve_csv_rows(m, c))
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["u1", "u2", "B1", "A"]
    assert len(rows) == 12
    assert float(rows[-1][0]) == pytest.approx(2 / 3)


@given(st.one_of(one_type("absorbing"), two_type("absorbing")))
def test_minimal_root_properties(m):
    r = minimal_root(m)
    assert np.all(r.q >= 0) and np.all(r.q <= 1)
    assert r.residual <= 1e-10
    assert perron_root(m, r.q) <= 1e-8
    # q = 1 exactly when rho(1) <= 0
    if m.perron_at_one < -1e-6:
        assert np.all(r.q == 1.0)
    if m.perron_at_one > 1e-6:
        assert np.all(r.q < 1.0)


@given(two_type("absorbing"))
def test_curve_stays_in_region(m):
    flow = CurveFlow(m, default_pivot(m))
    res = flow.march()
    for tau in np.linspace(0.0, res.tau_end, 25):
        p = res.point(tau)
        assert np.all(p.u >= -1e-12) and np.all(p.u <= flow.q + 1e-12)
        assert p.Bp >= -1e-14
    # every coordinate moves monotonically from 0 towards q
    us = np.array([res.point(t).u for t in np.linspace(0.0, res.tau_end, 25)])
    assert np.all(np.diff(us, axis=0) >= -1e-10)


@given(two_type("absorbing"))
def test_pivot_invariance_random(m):
    from ntbip.errors import PivotNotAllowed

    try:
        rep = curve_pivot_invariance_check(m)
    except PivotNotAllowed:
        assume(False)
    assert rep.discrepancy <= 1e-6


@given(one_type("absorbing"))
def test_extinction_monotone_in_initial_state(m):
    assume(m.perron_at_one > 1e-3)
    q = minimal_root(m).q[0]
    a = [extinction_probability(m, (i,)) for i in (1, 2, 3)]
    assert all(0 < x < 1 for x in a)
    assert a[0] >= a[1] >= a[2]
    for i, x in enumerate(a, start=1):
        assert x <= q**i + 1e-12


@given(one_type("absorbing"))
def test_mean_time_increasing(m):
    assume(m.perron_at_one < -1e-3)
    try:
        E1 = mean_extinction_time(m, (1,))
        E2 = mean_extinction_time(m, (2,))
    except NotAlmostSurelyExtinct:
        assume(False)
    assert 0 < E1 <= E2 or (math.isinf(E1) and math.isinf(E2))
