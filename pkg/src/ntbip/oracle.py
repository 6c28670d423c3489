"""Brute-force reference computations on a truncated state space.

The generator is restricted to a finite set of states (total-degree or box
truncation).  Every transition that would leave the set is redirected to a
single absorbing *leak* state, the last row/column of the matrix, so rows sum
exactly to zero and the probability found in the leak column bounds the
truncation error of every other entry.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import poisson

from .errors import CapTooSmall, SingularSystem, Underflow
from .model import MultiIndex, ValidatedModel, as_index

POISSON_TAIL = 1e-16
# uniformization chunk size (Lambda * t) for whole-matrix exponentials
_CHUNK = 200.0


def generator_row(model: ValidatedModel, i) -> dict:
    """Sparse row ``i`` of the q-matrix: ``{j: q_ij}`` including the diagonal.

    Row 0 carries the resurrection rates (empty for the absorptive case);
    other rows combine branching of each present particle with immigration.
    """
    n = model.n
    i = as_index(i, n)
    row: dict[MultiIndex, float] = {}

    def add(j, rate):
        row[j] = row.get(j, 0.0) + rate

    if not any(i):
        res = model.spec.resurrection_distribution
        if res is None:
            return {}
        for j, r in res.entries.items():
            add(j, r)
        add(i, res.diagonal)
        return row
    for k in range(n):
        if i[k] == 0:
            continue
        dist = model.spec.branch[k]
        for j, r in dist.entries.items():
            add(tuple(i[l] - (l == k) + j[l] for l in range(n)), i[k] * r)
        add(i, i[k] * dist.diagonal)
    imm = model.spec.immigration
    for j, r in imm.entries.items():
        add(tuple(a + b for a, b in zip(i, j)), r)
    add(i, imm.diagonal)
    return row


def enumerate_states(n: int, cap: int, kind: str = "total") -> list:
    """Lattice points with |j| <= cap (``total``) or max_k j_k <= cap (``box``),
    sorted by total degree then lexicographically."""
    if kind == "box":
        states = list(itertools.product(range(cap + 1), repeat=n))
    elif kind == "total":
        states = [s for s in itertools.product(range(cap + 1), repeat=n) if sum(s) <= cap]
    else:
        raise ValueError(f"unknown truncation kind {kind!r}")
    states.sort(key=lambda s: (sum(s), s))
    return states


def _reach(model: ValidatedModel) -> int:
    dists = [model.spec.immigration, *model.spec.branch]
    res = model.spec.resurrection_distribution
    if res is not None:
        dists.append(res)
    return max(sum(j) for d in dists for j in d.entries)


@dataclass(frozen=True)
class TruncatedGenerator:
    """Dense generator on ``states`` plus a final absorbing leak state."""

    model: ValidatedModel
    cap: int
    kind: str
    states: list
    matrix: np.ndarray
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        """Number of lattice states (the leak state excluded)."""
        return len(self.states)

    @property
    def leak(self) -> int:
        return len(self.states)

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.matrix)

    def state_index(self, j) -> int:
        return self.index[as_index(j, self.model.n)]

    def leak_rates(self) -> np.ndarray:
        """Rate of escaping the truncation from each lattice state."""
        return self.matrix[: self.size, self.leak]


def build_truncated(model: ValidatedModel, cap: int, kind: str = "total") -> TruncatedGenerator:
    """Truncated generator with a leak column for mass leaving the cap."""
    need = max(_reach(model) + 1, 8)
    if cap < need:
        raise CapTooSmall(f"cap {cap} < {need} (offspring reach and minimum of 8)")
    states = enumerate_states(model.n, cap, kind)
    index = {s: k for k, s in enumerate(states)}
    N = len(states)
    Q = np.zeros((N + 1, N + 1))
    for a, i in enumerate(states):
        for j, r in generator_row(model, i).items():
            Q[a, index.get(j, N)] += r
        # nonconservative deficits (killing) also go to the leak state
        deficit = -Q[a].sum()
        if deficit > 0:
            Q[a, N] += deficit
    return TruncatedGenerator(model, cap, kind, states, Q, index)


# ---------------------------------------------------------------------------
# uniformization


def _poisson_window(mean: float) -> tuple[int, int, np.ndarray]:
    if mean == 0.0:
        return 0, 0, np.ones(1)
    lo = int(poisson.ppf(POISSON_TAIL, mean)) if mean > 50 else 0
    hi = int(poisson.isf(POISSON_TAIL, mean)) + 1
    m = np.arange(lo, hi + 1)
    w = poisson.pmf(m, mean)
    # pmf carries ~1e-13 relative error at large means; the discarded tails are
    # below POISSON_TAIL, so normalizing the window is the more accurate choice
    return lo, hi, w / w.sum()


def _uniformized(gen: TruncatedGenerator):
    Lam = float(np.max(gen.exit_rates))
    if Lam == 0.0:
        return 0.0, np.eye(gen.matrix.shape[0])
    return Lam, np.eye(gen.matrix.shape[0]) + gen.matrix / Lam


def _series(S: np.ndarray, X: np.ndarray, mean: float, left: bool = True) -> np.ndarray:
    """Sum_m pois(m; mean) X S^m (``left``) for a row block ``X``."""
    lo, hi, w = _poisson_window(mean)
    T = X.copy()
    for _ in range(lo):
        T = T @ S
    out = w[0] * T
    for k in range(1, hi - lo + 1):
        T = T @ S
        out += w[k] * T
    return out


def transition_matrix(gen: TruncatedGenerator, t: float) -> np.ndarray:
    """P(t) on lattice states plus leak, by uniformization.

    Large ``Lambda t`` is split into equal chunks whose matrices are then
    multiplied together, keeping every Poisson series short.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    Lam, S = _uniformized(gen)
    if t == 0 or Lam == 0.0:
        return np.eye(S.shape[0])
    chunks = max(1, math.ceil(Lam * t / _CHUNK))
    P = _series(S, np.eye(S.shape[0]), Lam * t / chunks)
    return np.linalg.matrix_power(P, chunks) if chunks > 1 else P


def propagate(gen: TruncatedGenerator, p0: np.ndarray, t: float) -> np.ndarray:
    """Row vector ``p0 P(t)`` (cheaper than the whole matrix)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    Lam, S = _uniformized(gen)
    if t == 0 or Lam == 0.0:
        return np.array(p0, dtype=float)
    return _series(S, np.asarray(p0, dtype=float), Lam * t)


def distribution_from(gen: TruncatedGenerator, i, t: float) -> np.ndarray:
    p0 = np.zeros(gen.size + 1)
    p0[gen.state_index(i)] = 1.0
    return propagate(gen, p0, t)


# ---------------------------------------------------------------------------
# stationary distribution


@dataclass(frozen=True)
class StationaryResult:
    probabilities: np.ndarray
    states: list
    leak_flux: float

    def as_dict(self) -> dict:
        return {s: float(p) for s, p in zip(self.states, self.probabilities)}


def stationary_solve(gen: TruncatedGenerator) -> StationaryResult:
    """Solve x Q = 0, sum x = 1 on the lattice states.

    Transitions into the leak state are discarded (the diagonal is adjusted
    so that each truncated row sums to zero).  ``leak_flux`` is the
    stationary rate at which the untruncated chain would cross the cap,
    a proxy for the truncation error.
    """
    N = gen.size
    Q = gen.matrix[:N, :N].copy()
    Q[np.diag_indices(N)] -= Q.sum(axis=1)
    M = Q.T.copy()
    M[-1, :] = 1.0
    rhs = np.zeros(N)
    rhs[-1] = 1.0
    try:
        lu = scipy.linalg.lu_factor(M, check_finite=True)
        x = scipy.linalg.lu_solve(lu, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"stationary system singular: {exc}") from exc
    if not np.all(np.isfinite(x)) or np.min(x) < -1e-10:
        raise SingularSystem("stationary solve produced invalid probabilities; raise the cap")
    x = np.maximum(x, 0.0)
    flux = float(x @ gen.leak_rates())
    return StationaryResult(x, list(gen.states), flux)


# ---------------------------------------------------------------------------
# decay rate


@dataclass(frozen=True)
class DecaySlope:
    estimate: float
    times: np.ndarray
    log_p: np.ndarray
    leak: float


def decay_slope(gen: TruncatedGenerator, i, window=(10.0, 20.0), points: int = 16) -> DecaySlope:
    """Estimate the decay parameter as minus the least-squares slope of
    ``log p_ii(t)`` over ``window``."""
    t1, t2 = map(float, window)
    if not 0 <= t1 < t2:
        raise ValueError("window must satisfy 0 <= t1 < t2")
    a = gen.state_index(i)
    times = np.linspace(t1, t2, points)
    p = np.zeros(gen.size + 1)
    p[a] = 1.0
    vals = np.empty(points)
    prev = 0.0
    for k, t in enumerate(times):
        p = propagate(gen, p, t - prev)
        prev = t
        vals[k] = p[a]
    if np.any(vals <= 1e-12):
        raise Underflow(f"p_ii(t) fell below 1e-12 inside window {window}")
    logp = np.log(vals)
    slope = float(np.polyfit(times, logp, 1)[0])
    return DecaySlope(-slope, times, logp, float(p[gen.leak]))


def stationary_adaptive(model: ValidatedModel, cap: int = 24, tol: float = 1e-9,
                        max_cap: int = 96) -> StationaryResult:
    """Stationary solve with the total-degree cap doubled until the leak flux
    drops below ``tol`` (or ``max_cap`` is reached; check ``leak_flux``)."""
    while True:
        st = stationary_solve(build_truncated(model, cap))
        if st.leak_flux <= tol or cap >= max_cap:
            return st
        cap = min(2 * cap, max_cap)
