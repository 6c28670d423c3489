import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntbip import fixtures as fx
from ntbip.errors import (
    DiagonalMismatch,
    DimensionMismatch,
    NegativeRate,
    NotPositivelyRegular,
    OutOfDomain,
    Singular,
)
from ntbip.model import (
    ABSORBING,
    Poly,
    eval_gf,
    jacobian,
    load_model,
    make_model,
    model_from_dict,
    model_to_dict,
    perron_eigenvalue,
    perron_root,
    save_model,
)

from strategies import any_model, two_type

unit_points = st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=2)


def test_gf_values_m1():
    m = fx.fixture("M1")
    for u in (0.0, 0.3, 1.0):
        assert eval_gf(m, "B1", [u]) == pytest.approx((1 - u) * (2 - u), abs=1e-15)
        assert eval_gf(m, "A", [u]) == pytest.approx(u - 1, abs=1e-15)
        assert eval_gf(m, "H", [u]) == pytest.approx(u - 1, abs=1e-15)


def test_absorbing_companion_has_zero_h():
    m = fx.absorbing("M2")
    assert m.absorbing
    assert eval_gf(m, "H", [0.4]) == 0.0


def test_perron_root_at_one_matches_mean_matrix():
    # M3 offspring mean matrix [[-2, 2.4], [2.4, -2]] has eigenvalue 0.4
    assert fx.fixture("M3").perron_at_one == pytest.approx(0.4, abs=1e-12)
    assert fx.fixture("M4").perron_at_one == pytest.approx(0.0, abs=1e-14)


def test_perron_eigenvalue_metzler():
    M = np.array([[-3.0, 1.0], [2.0, -1.0]])
    assert perron_eigenvalue(M) == pytest.approx(max(np.linalg.eigvals(M).real), abs=1e-12)


@pytest.mark.parametrize(
    "build, err",
    [
        (lambda: make_model(1, {(1,): -1.0}, [{(0,): 1.0, (2,): 1.0}]), NegativeRate),
        (lambda: make_model(1, {(1,): 1.0}, [{(1,): 1.0}]), DiagonalMismatch),
        (lambda: make_model(2, {(1, 0): 1.0}, [{(0, 1): 1.0}, {(1, 0): 1.0}]), Singular),
        (lambda: make_model(2, {(1, 0): 1.0}, [{(0, 0): 1.0, (2, 0): 1.0}, {(0, 0): 1.0, (0, 2): 1.0}]),
         NotPositivelyRegular),
        (lambda: make_model(1, {(1, 0): 1.0}, [{(0,): 1.0, (2,): 1.0}]), DimensionMismatch),
    ],
)
def test_validation_errors(build, err):
    with pytest.raises(err):
        build()


def test_eval_outside_domain():
    with pytest.raises(OutOfDomain):
        eval_gf(fx.fixture("M1"), "A", [1.5])


@pytest.mark.parametrize("name", fx.NAMES)
def test_round_trip_through_file(tmp_path, name):
    spec = fx.fixture(name).spec
    path = tmp_path / f"{name}.json"
    save_model(spec, path)
    assert model_to_dict(load_model(path)) == model_to_dict(spec)
    json.loads(path.read_text())


def test_absorbing_round_trip():
    d = model_to_dict(fx.absorbing("M2").spec)
    assert d["resurrection"] == ABSORBING
    assert model_from_dict(d).absorbing


@given(any_model, st.data())
def test_gf_equals_sparse_sum(model, data):
    n = model.n
    u = np.array(data.draw(st.lists(st.floats(-1.0, 1.0), min_size=n, max_size=n)))
    for k, dist in enumerate(model.spec.branch):
        direct = sum(r * np.prod(u ** np.array(j)) for j, r in dist.entries.items())
        direct += dist.diagonal * u[k]
        assert eval_gf(model, k, u) == pytest.approx(direct, abs=1e-12)


@given(any_model, st.data())
def test_shifted_poly_agrees(model, data):
    n = model.n
    q = np.array(data.draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n)))
    w = np.array(data.draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n)))
    for P in (model.A, *model.B):
        assert P.shifted(q)(w) == pytest.approx(P(q - w), abs=1e-11)


@given(two_type(), unit_points, unit_points)
def test_perron_root_monotone(model, u, v):
    # Jacobian entries are nondecreasing in u, so rho is too
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    assert perron_root(model, lo) <= perron_root(model, hi) + 1e-10


@given(two_type(), unit_points)
def test_jacobian_matches_finite_difference(model, u):
    u = np.clip(np.array(u), 1e-3, 1 - 1e-3)
    Jm = jacobian(model, u)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = np.array([(b(u + e) - b(u - e)) / (2 * h) for b in model.B])
        np.testing.assert_allclose(Jm[:, j], fd, atol=1e-6)


def test_poly_empty():
    assert Poly({}, 2)([0.5, 0.5]) == 0.0
