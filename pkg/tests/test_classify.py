import math

import numpy as np
import pytest
from hypothesis import given

from ntbip import fixtures as fx
from ntbip.classify import (
    EquilibriumCurve,
    classify,
    equilibrium_curve_value,
    equilibrium_pmf,
)
from ntbip.errors import NotErgodic, WrongEncoding
from ntbip.model import make_model
from ntbip.oracle import build_truncated, stationary_solve

from strategies import subcritical_one_type


def test_m1_equilibrium_curve():
    # pi(s) = sum 2^-(j+1) s^j = 1 / (2 - s)
    eq = EquilibriumCurve(fx.fixture("M1"))
    assert eq.pi0 == pytest.approx(0.5, abs=1e-10)
    for s in (0.0, 0.3, 0.9, 0.999):
        assert eq(s) == pytest.approx(1 / (2 - s), abs=1e-9)


def test_s2_curve_matches_truncated_pmf():
    m = fx.fixture("S2")
    eq = EquilibriumCurve(m)
    pmf = equilibrium_pmf(m)
    for s in (0.2, 0.6):
        u = eq.point(s)
        gf = sum(p * np.prod(u ** np.array(j)) for j, p in pmf.probabilities.items())
        assert gf == pytest.approx(eq(s), abs=1e-8)


def test_light_tailed_pmf_negative_binomial():
    # linear birth b, death d, immigration nu: pi_j is negative binomial with
    # p = b/d, r = nu/b, so pi_0 = (1 - p)^r and the tail falls below 1e-50;
    # float round-off in the diagonal used to turn it negative
    b, d, nu = 0.055, 1.0, 1.0
    m = make_model(1, {(1,): nu}, [{(0,): d, (2,): b}])
    p = equilibrium_pmf(m, 60).array()
    r, ratio = nu / b, b / d
    exact = [math.exp(math.lgamma(j + r) - math.lgamma(r) - math.lgamma(j + 1)) * ratio**j * (1 - ratio) ** r
             for j in range(61)]
    np.testing.assert_allclose(p, exact, rtol=1e-8, atol=1e-14)
    assert np.all(p > 0)


def test_classify_rejects_absorbing():
    with pytest.raises(WrongEncoding):
        classify(fx.absorbing("M1"))


def test_supercritical_is_transient_with_unknown_honesty():
    rep = classify(fx.fixture("M3")).as_dict()
    assert rep["recurrence"] == "Transient"
    assert rep["honest"] == "unknown"
    assert rep["unique"] is True and rep["stronglyErgodic"] is False


def test_critical_immigration_regimes():
    # B = (1-u)^2, A = H = c(u-1): J infinite iff c <= 1, and the
    # ergodicity integral int 2c/(1-u) always diverges
    def m(c):
        return make_model(1, {(1,): c}, [{(0,): 1.0, (2,): 1.0}])

    assert (classify(m(0.5)).recurrence, classify(m(0.5)).ergodicity) == ("Recurrent", "NullRecurrent")
    assert classify(m(1.0)).ergodicity == "NullRecurrent"
    assert classify(m(3.0)).recurrence == "Transient"


def test_equilibrium_needs_ergodic():
    with pytest.raises(NotErgodic):
        equilibrium_pmf(fx.fixture("M4"))
    with pytest.raises(NotErgodic):
        equilibrium_curve_value(fx.fixture("M2"), 0.5)


def test_explicit_resurrection_changes_equilibrium_only():
    # M1 branching with resurrection to 2 particles at rate 1
    m = make_model(1, {(1,): 1.0}, [{(0,): 2.0, (2,): 1.0}], {(2,): 1.0})
    rep = classify(m)
    assert rep.ergodicity == "Ergodic"
    pmf = equilibrium_pmf(m, 80).array()
    st = stationary_solve(build_truncated(m, 80))
    np.testing.assert_allclose(pmf[: len(st.probabilities)], st.probabilities, atol=1e-8)


@given(subcritical_one_type())
def test_subcritical_is_ergodic_and_pi_increasing(m):
    rep = classify(m)
    assert rep.recurrence == "Recurrent" and rep.ergodicity == "Ergodic"
    assert rep.exponentially_ergodic
    eq = EquilibriumCurve(m)
    vals = [eq(s) for s in np.linspace(0.0, 0.99, 12)]
    assert 0 < vals[0] and all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= 1 + 1e-9


@given(subcritical_one_type())
def test_pmf_nonnegative_and_normalized(m):
    pmf = equilibrium_pmf(m, 64)
    p = pmf.array()
    assert np.all(p >= 0)
    assert math.fsum(p) <= 1 + 1e-9
    assert pmf.probabilities[(0,)] == pytest.approx(EquilibriumCurve(m).pi0, rel=1e-12)
