import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntbip import fixtures as fx
from ntbip.errors import DegenerateEstimate, NonConservativeModel, WrongEncoding
from ntbip.model import make_model
from ntbip.simulate import (
    SimConfig,
    _uniform,
    branching_property_check,
    empirical_distribution,
    estimate_equilibrium,
    estimate_mean_extinction_time,
    pack,
    record_paths,
    replicate_key,
    run_batch,
    simulate_path,
)


@pytest.fixture(scope="module")
def cfg():
    return SimConfig(initial=(1,), t_max=5.0, replicates=500, master_seed=99)


def test_uniforms_look_uniform():
    key = np.uint64(replicate_key(1, 2))
    u = np.array([_uniform(key, np.uint64(c)) for c in range(20000)])
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(u.var() - 1 / 12) < 0.003


def test_replicate_keys_distinct():
    keys = {replicate_key(7, r) for r in range(10000)}
    assert len(keys) == 10000
    assert replicate_key(7, 0) != replicate_key(8, 0)


def test_batches_are_order_independent(cfg):
    m = fx.fixture("M1")
    whole = run_batch(m, cfg)
    tail = run_batch(m, cfg.with_(replicates=200), first=300)
    np.testing.assert_array_equal(whole.final[300:], tail.final)
    np.testing.assert_array_equal(whole.times[300:], tail.times)
    one = simulate_path(m, cfg, 321)
    assert one.time == whole.times[321]


def test_same_seed_same_output(cfg):
    m = fx.fixture("M3")
    c = cfg.with_(initial=(1, 0))
    a, b = run_batch(m, c), run_batch(m, c)
    np.testing.assert_array_equal(a.final, b.final)
    assert not np.array_equal(a.final, run_batch(m, c.with_(master_seed=100)).final)


def test_nonconservative_rejected():
    m = make_model(1, {(1,): 1.0}, [{(0,): 1.0, (2,): 1.0}], branch_exit=[2.5])
    with pytest.raises(NonConservativeModel):
        pack(m)


def test_degenerate_mean_time():
    with pytest.raises(DegenerateEstimate):
        estimate_mean_extinction_time(fx.absorbing("M2"), SimConfig(initial=(5,), t_max=0.01, replicates=50))


def test_branching_check_needs_h_equal_a():
    with pytest.raises(WrongEncoding):
        branching_property_check(fx.absorbing("M1"), (2,), 1.0, SimConfig((1,), 1.0, 100))


def test_empirical_distribution_sums_to_one(cfg):
    freqs, lost = empirical_distribution(fx.fixture("M1"), (1,), 1.0, cfg)
    assert lost == 0
    assert sum(freqs.values()) == pytest.approx(1.0)


def test_equilibrium_estimate_m1():
    cfg = SimConfig(initial=(0,), t_max=2000.0, replicates=4, master_seed=5)
    freqs = estimate_equilibrium(fx.fixture("M1"), cfg, burn_in=10.0)
    assert freqs[(0,)] == pytest.approx(0.5, abs=0.03)


def test_record_paths_rows(cfg):
    rows = list(record_paths(fx.fixture("M1"), cfg.with_(replicates=3, t_max=1.0)))
    assert tuple(rows[0][:2]) == (0, 0.0)
    times = [r[1] for r in rows if r[0] == 0]
    assert times == sorted(times)


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_replicate_key_in_range(seed, r):
    k = replicate_key(seed, r)
    assert 0 <= k < 2**64


@given(st.integers(1, 4))
def test_branching_identity_exact_for_unit_states(k):
    # a single starting particle leaves nothing to factor: residual is 0
    m = fx.fixture("M3")
    cfg = SimConfig(initial=(1, 0), t_max=0.5, replicates=200, master_seed=k)
    rep = branching_property_check(m, (1, 0) if k % 2 else (0, 1), 0.5, cfg)
    assert rep.log_residual == 0.0
