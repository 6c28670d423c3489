"""Exact (Gillespie) simulation of the process and Monte Carlo estimators.

Rates are packed into flat arrays so that the event loop runs under numba.
Randomness is counter based: replicate ``r`` owns the key
``mix(seed, r)`` and its ``c``-th uniform is ``mix(key + c * GAMMA)``
(SplitMix64 finalizer), so every replicate is reproducible on its own and
results do not depend on the order in which replicates are run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DegenerateEstimate, NonConservativeModel, NotErgodic, WrongEncoding
from .model import ValidatedModel, as_index

ABSORBED, REACHED_TMAX, EVENT_CAP_HIT = 0, 1, 2
STATUS_NAMES = {ABSORBED: "Absorbed", REACHED_TMAX: "ReachedTMax", EVENT_CAP_HIT: "EventCapHit"}



# ---------------------------------------------------------------------------
# random numbers


@numba.njit(cache=True)
def _mix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _uniform(key, counter):
    """Uniform on (0, 1] from the ``counter``-th draw of stream ``key``."""
    x = _mix(np.uint64(key) + np.uint64(counter) * np.uint64(0x9E3779B97F4A7C15))
    return (np.float64(x >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _replicate_key(seed, replicate):
    return _mix(_mix(seed) ^ _mix(np.uint64(replicate) + np.uint64(1)))


def replicate_key(seed: int, replicate: int) -> int:
    return int(_replicate_key(np.uint64(seed % 2**64), np.uint64(replicate)))


# ---------------------------------------------------------------------------
# packed rates


@dataclass(frozen=True)
class PackedRates:
    """Offspring/immigration/resurrection tables in flat arrays.

    Distribution ``d`` (0..n-1 branching of type d, n immigration, n+1
    resurrection) owns rows ``start[d]:start[d+1]`` of ``delta`` (state
    increments) and ``cum`` (cumulative probabilities); ``rate[d]`` is its
    total rate.
    """

    n: int
    start: np.ndarray
    delta: np.ndarray
    cum: np.ndarray
    rate: np.ndarray
    absorbing: bool


def pack(model: ValidatedModel) -> PackedRates:
    spec = model.spec
    n = model.n
    dists = [(k, spec.branch[k]) for k in range(n)] + [(None, spec.immigration)]
    res = spec.resurrection_distribution
    for _, d in dists + ([(None, res)] if res is not None else []):
        if not d.conservative:
            raise NonConservativeModel(f"{d.kind} rates are not conservative; the simulator needs q-matrix rows summing to 0")
    deltas, cums, starts, rates = [], [], [0], []

    def add(k, d):
        items = sorted(d.entries.items())
        tot = math.fsum(r for _, r in items)
        c = np.cumsum([r for _, r in items]) / tot
        c[-1] = 1.0
        for j, _ in items:
            dj = np.array(j, dtype=np.int64)
            if k is not None:
                dj[k] -= 1
            deltas.append(dj)
        cums.extend(c.tolist())
        starts.append(starts[-1] + len(items))
        rates.append(-d.diagonal)

    for k, d in dists:
        add(k, d)
    if res is not None:
        add(None, res)
    else:
        starts.append(starts[-1])
        rates.append(0.0)
    return PackedRates(n, np.array(starts, dtype=np.int64), np.array(deltas, dtype=np.int64).reshape(-1, n),
                       np.array(cums), np.array(rates), res is None)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _pick(cum, lo, hi, u):
    # first index in [lo, hi) with cum >= u; cum[hi - 1] == 1 bounds the search
    hi -= 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] >= u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True)
def _step(state, n, start, delta, cum, rate, key, counter):
    """Choose and apply one jump from a nonzero-rate state.  Returns the new
    counter, or -1 if an increment would leave the lattice."""
    total = 0
    for k in range(n):
        total += state[k]
    if total == 0:
        d = n + 1
    else:
        R = rate[n]
        for k in range(n):
            R += state[k] * rate[k]
        v = _uniform(key, counter) * R
        counter += 1
        d = n
        acc = 0.0
        for k in range(n):
            acc += state[k] * rate[k]
            if v <= acc:
                d = k
                break
    row = _pick(cum, start[d], start[d + 1], _uniform(key, counter))
    counter += 1
    for k in range(n):
        state[k] += delta[row, k]
        if state[k] < 0:
            return -1
    return counter


@numba.njit(cache=True)
def _total_rate(state, n, rate):
    total = 0
    for k in range(n):
        total += state[k]
    if total == 0:
        return rate[n + 1]
    R = rate[n]
    for k in range(n):
        R += state[k] * rate[k]
    return R


@numba.njit(cache=True)
def _run(state, t_max, max_events, n, start, delta, cum, rate, key):
    """One path up to ``t_max``.  Returns (status, time, events); ``state``
    is left at the state occupied at the stopping time."""
    t = 0.0
    counter = 0
    events = 0
    while True:
        R = _total_rate(state, n, rate)
        if R == 0.0:
            return ABSORBED, t, events
        dt = -math.log(_uniform(key, counter)) / R
        counter += 1
        if t + dt > t_max:
            return REACHED_TMAX, t_max, events
        if events >= max_events:
            return EVENT_CAP_HIT, t, events
        t += dt
        counter = _step(state, n, start, delta, cum, rate, key, counter)
        if counter < 0:
            raise ValueError("state left the lattice")
        events += 1


@numba.njit(cache=True)
def _batch(initial, t_max, max_events, n, start, delta, cum, rate, seed, first, count):
    status = np.empty(count, dtype=np.int64)
    times = np.empty(count)
    events = np.empty(count, dtype=np.int64)
    final = np.empty((count, n), dtype=np.int64)
    state = np.empty(n, dtype=np.int64)
    for r in range(count):
        state[:] = initial
        key = _replicate_key(seed, np.uint64(first) + np.uint64(r))
        s, t, e = _run(state, t_max, max_events, n, start, delta, cum, rate, key)
        status[r] = s
        times[r] = t
        events[r] = e
        final[r, :] = state
    return status, times, events, final


@numba.njit(cache=True)
def _occupancy(initial, t_max, burn_in, max_events, n, start, delta, cum, rate, key, cap, occ):
    """Time spent in each state of the box [0, cap]^n after ``burn_in``
    (mixed-radix index into ``occ``).  Returns (events, ok); ok is False when
    the path left the box and the caller should retry with a larger cap."""
    state = initial.copy()
    t = 0.0
    counter = 0
    events = 0
    while t < t_max:
        R = _total_rate(state, n, rate)
        if R == 0.0:
            dt = t_max - t
        else:
            dt = -math.log(_uniform(key, counter)) / R
            counter += 1
        lo = max(t, burn_in)
        hi = min(t + dt, t_max)
        if hi > lo:
            idx = 0
            for k in range(n):
                if state[k] > cap:
                    return events, False
                idx = idx * (cap + 1) + state[k]
            occ[idx] += hi - lo
        if t + dt >= t_max or R == 0.0 or events >= max_events:
            break
        t += dt
        counter = _step(state, n, start, delta, cum, rate, key, counter)
        if counter < 0:
            raise ValueError("state left the lattice")
        events += 1
    return events, True


@numba.njit(cache=True)
def _record(initial, t_max, max_events, n, start, delta, cum, rate, key, times, states):
    """Event log of one path; returns the number of rows written."""
    state = initial.copy()
    t = 0.0
    counter = 0
    rows = 0
    times[0] = 0.0
    states[0, :] = state
    rows = 1
    while rows < times.shape[0]:
        R = _total_rate(state, n, rate)
        if R == 0.0:
            break
        dt = -math.log(_uniform(key, counter)) / R
        counter += 1
        if t + dt > t_max or rows > max_events:
            break
        t += dt
        counter = _step(state, n, start, delta, cum, rate, key, counter)
        times[rows] = t
        states[rows, :] = state
        rows += 1
    return rows


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class SimConfig:
    initial: tuple
    t_max: float
    replicates: int = 10_000
    master_seed: int = 20240101
    max_events: int = 10_000_000

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if self.replicates < 1 or self.max_events < 1:
            raise ValueError("replicates and max_events must be >= 1")

    def with_(self, **kw) -> "SimConfig":
        d = dict(initial=self.initial, t_max=self.t_max, replicates=self.replicates,
                 master_seed=self.master_seed, max_events=self.max_events)
        d.update(kw)
        return SimConfig(**d)


@dataclass(frozen=True)
class ReplicateOutcome:
    status: str
    time: float
    final_state: tuple
    event_count: int


@dataclass(frozen=True)
class Estimate:
    value: float
    standard_error: float
    replicates_used: int
    censored: int = 0

    def as_dict(self) -> dict:
        return {"value": self.value, "standard_error": self.standard_error,
                "replicates_used": self.replicates_used, "censored": self.censored}


@dataclass(frozen=True)
class BatchResult:
    status: np.ndarray
    times: np.ndarray
    events: np.ndarray
    final: np.ndarray

    def count(self, status: int) -> int:
        return int(np.count_nonzero(self.status == status))


def _seed(config: SimConfig) -> np.uint64:
    return np.uint64(config.master_seed % 2**64)


def run_batch(model: ValidatedModel, config: SimConfig, first: int = 0) -> BatchResult:
    """Replicates ``first .. first + replicates - 1`` of ``config``."""
    p = pack(model)
    init = np.array(as_index(config.initial, model.n), dtype=np.int64)
    out = _batch(init, float(config.t_max), int(config.max_events), p.n, p.start, p.delta, p.cum,
                 p.rate, _seed(config), np.uint64(first), int(config.replicates))
    return BatchResult(*out)


def simulate_path(model: ValidatedModel, config: SimConfig, replicate_index: int) -> ReplicateOutcome:
    b = run_batch(model, config.with_(replicates=1), first=replicate_index)
    return ReplicateOutcome(STATUS_NAMES[int(b.status[0])], float(b.times[0]),
                            tuple(int(x) for x in b.final[0]), int(b.events[0]))


def _require_absorbing(model: ValidatedModel) -> None:
    if not model.absorbing:
        raise WrongEncoding("estimator needs the absorptive encoding")


def estimate_extinction(model: ValidatedModel, config: SimConfig) -> Estimate:
    """Fraction absorbed by ``t_max``.  Paths still alive at ``t_max`` or at
    the event cap count as not absorbed, so the estimate is biased low by
    the probability of extinction after the horizon."""
    _require_absorbing(model)
    b = run_batch(model, config)
    N = config.replicates
    p = b.count(ABSORBED) / N
    return Estimate(p, math.sqrt(p * (1 - p) / N), N, censored=N - b.count(ABSORBED))


def estimate_mean_extinction_time(model: ValidatedModel, config: SimConfig) -> Estimate:
    """Mean absorption time over absorbed replicates; the others are reported
    as censored."""
    _require_absorbing(model)
    if not any(as_index(config.initial, model.n)):
        raise ValueError("initial state must be nonzero")
    b = run_batch(model, config)
    t = b.times[b.status == ABSORBED]
    k = t.size
    if k < 2:
        raise DegenerateEstimate("fewer than two absorbed replicates")
    return Estimate(float(t.mean()), float(t.std(ddof=1) / math.sqrt(k)), k, censored=config.replicates - k)


def empirical_distribution(model: ValidatedModel, i, t: float, config: SimConfig) -> tuple[dict, int]:
    """Frequencies of the state occupied at time ``t`` starting from ``i``
    (sum exactly 1 over observed states), and the number of replicates lost
    to the event cap (excluded)."""
    cfg = config.with_(initial=as_index(i, model.n), t_max=t) if t > 0 else config.with_(initial=as_index(i, model.n))
    N = cfg.replicates
    if t == 0:
        return {as_index(i, model.n): 1.0}, 0
    b = run_batch(model, cfg)
    ok = b.status != EVENT_CAP_HIT
    states, counts = np.unique(b.final[ok], axis=0, return_counts=True)
    used = int(ok.sum())
    freqs = {tuple(int(x) for x in s): c / used for s, c in zip(states, counts)}
    return freqs, N - used


def estimate_transition(model: ValidatedModel, i, j, t: float, config: SimConfig) -> Estimate:
    """Empirical p_ij(t)."""
    freqs, lost = empirical_distribution(model, i, t, config)
    used = config.replicates - lost
    p = freqs.get(as_index(j, model.n), 0.0)
    return Estimate(p, math.sqrt(p * (1 - p) / used), used, censored=lost)


@dataclass(frozen=True)
class BranchingReport:
    i: tuple
    t: float
    log_residual: float
    standard_error: float
    estimates: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return abs(self.log_residual) <= 3.0 * self.standard_error

    def as_dict(self) -> dict:
        return {
            "i": list(self.i), "t": self.t, "log_residual": self.log_residual,
            "standard_error": self.standard_error, "passed": self.passed,
            "estimates": [{"from": list(k), **v.as_dict()} for k, v in self.estimates.items()],
        }


def branching_property_check(model: ValidatedModel, i, t: float, config: SimConfig) -> BranchingReport:
    """Test p_i0(t) = p_00(t) prod_k (p_{e_k,0}(t)/p_00(t))^{i_k} on the log
    scale.  Each distinct starting state is estimated from its own block of
    replicates; repeated starting states share one estimate, which makes the
    identity exact for i = e_k."""
    if not model.spec.same_as_immigration:
        raise WrongEncoding("branching property check needs resurrection 'same_as_immigration'")
    n = model.n
    i = as_index(i, n)
    if sum(i) < 1:
        raise ValueError("|i| must be >= 1")
    coef: dict = {}

    def add(s, c):
        coef[s] = coef.get(s, 0) + c

    zero = (0,) * n
    add(i, 1)
    add(zero, sum(i) - 1)
    for k in range(n):
        if i[k]:
            add(tuple(int(l == k) for l in range(n)), -i[k])
    legs = sorted(s for s, c in coef.items() if c != 0)
    N = config.replicates
    estimates = {}
    resid = 0.0
    var = 0.0
    for s in legs:
        # leg blocks are keyed by the state itself so that adding legs never
        # shifts the random streams of the others
        block = _leg_block(s)
        b = run_batch(model, config.with_(initial=s, t_max=t), first=block * N)
        used = int(np.count_nonzero(b.status != EVENT_CAP_HIT))
        hits = int(np.count_nonzero((b.status != EVENT_CAP_HIT) & (b.final.sum(axis=1) == 0)))
        p = hits / used
        est = Estimate(p, math.sqrt(p * (1 - p) / used), used, censored=N - used)
        estimates[s] = est
        if p == 0.0:
            raise DegenerateEstimate(f"p_hat from {s} to 0 is zero")
        resid += coef[s] * math.log(p)
        var += coef[s] ** 2 * (1 - p) / (used * p)
    return BranchingReport(i, t, resid, math.sqrt(var), estimates)


def _leg_block(s: tuple) -> int:
    # Cantor-style pairing of the coordinates into a block number
    b = 0
    for x in s:
        b = (b + x) * (b + x + 1) // 2 + x
    return b


def estimate_equilibrium(model: ValidatedModel, config: SimConfig, burn_in: float = 0.0,
                         check_ergodic: bool = True) -> dict:
    """Time-weighted occupation frequencies of one long path (replicate 0)
    over [burn_in, t_max]."""
    if model.absorbing:
        raise WrongEncoding("equilibrium needs a resurrection distribution")
    if check_ergodic:
        from .classify import classify

        if classify(model).ergodicity != "Ergodic":
            raise NotErgodic("model is not positive recurrent")
    if not 0 <= burn_in < config.t_max:
        raise ValueError("need 0 <= burn_in < t_max")
    p = pack(model)
    n = model.n
    init = np.array(as_index(config.initial, n), dtype=np.int64)
    key = np.uint64(_replicate_key(_seed(config), np.uint64(0)))
    cap = 64 if n == 1 else 32
    while True:
        occ = np.zeros((cap + 1) ** n)
        _, ok = _occupancy(init, float(config.t_max), float(burn_in), int(config.max_events), n,
                           p.start, p.delta, p.cum, p.rate, key, cap, occ)
        if ok:
            break
        cap *= 2
    total = occ.sum()
    shape = (cap + 1,) * n
    out = {}
    for flat in np.flatnonzero(occ):
        out[tuple(int(x) for x in np.unravel_index(flat, shape))] = occ[flat] / total
    return out


def record_paths(model: ValidatedModel, config: SimConfig, max_rows: int = 100_000):
    """Yield (replicate, time, state...) rows of each replicate's event log;
    at most ``max_rows`` rows per replicate."""
    p = pack(model)
    n = model.n
    init = np.array(as_index(config.initial, n), dtype=np.int64)
    rows = min(max_rows, config.max_events + 1)
    times = np.empty(rows)
    states = np.empty((rows, n), dtype=np.int64)
    for r in range(config.replicates):
        key = np.uint64(_replicate_key(_seed(config), np.uint64(r)))
        m = _record(init, float(config.t_max), int(config.max_events), n, p.start, p.delta, p.cum,
                    p.rate, key, times, states)
        for a in range(m):
            yield (r, float(times[a]), *(int(x) for x in states[a]))
