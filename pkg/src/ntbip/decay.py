"""Decay parameter, lambda-invariant vectors and measures, and the QSD verdict.

With the resurrection rates equal to the immigration rates the state space
is a single communicating class.  Its decay parameter is ``-A(q)`` and
``j -> q^j`` is a lambda_Z-invariant vector.  A lambda-invariant measure
``m`` solves ``lambda m_j + sum_k m_k q_kj = 0``; for one type the column
equations form a forward recurrence in ``m_{j+1}``, which loses precision
quickly in floating point, so it is carried out in multiprecision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .curve import CRITICAL_TOL, CurveFlow, DivergenceVerdict, RootVector, default_pivot, minimal_root
from .errors import NonPositiveCoefficient, NotCommunicating, OutOfDomain, WrongEncoding
from .model import MultiIndex, ValidatedModel, as_index
from .oracle import enumerate_states, generator_row, stationary_adaptive

DEFAULT_DEGREE_1 = 64
DEFAULT_DEGREE_N = 24
MAX_DEGREE_N = 48
LAMBDA_TOL = 1e-10
RESIDUAL_TOL = 1e-8


def _require_h_equals_a(model: ValidatedModel) -> None:
    if not model.spec.same_as_immigration:
        raise WrongEncoding("operation needs resurrection 'same_as_immigration'")


def _dying_types(model: ValidatedModel) -> set:
    """Types whose particles can leave no descendants."""
    dead: set = set()
    changed = True
    while changed:
        changed = False
        for k, dist in enumerate(model.spec.branch):
            if k in dead:
                continue
            if any(all(c == 0 or l in dead for l, c in enumerate(j)) for j in dist.entries):
                dead.add(k)
                changed = True
    return dead


def check_communicating(model: ValidatedModel) -> None:
    """Raise ``NotCommunicating`` unless every state reaches every other.

    Two things are needed: every particle lineage can die out (so 0 is
    reachable) and immigration followed by branching reaches every type.
    """
    n = model.n
    if len(_dying_types(model)) < n:
        raise NotCommunicating("some particle type can never leave zero descendants")
    seen = {l for j in model.spec.immigration.entries for l, c in enumerate(j) if c}
    stack = list(seen)
    while stack:
        k = stack.pop()
        for j in model.spec.branch[k].entries:
            for l, c in enumerate(j):
                if c and l not in seen:
                    seen.add(l)
                    stack.append(l)
    if len(seen) < n:
        raise NotCommunicating(f"types {sorted(set(range(n)) - seen)} never appear")


@dataclass(frozen=True)
class DecayResult:
    lambda_z: float
    root: RootVector

    @property
    def q(self) -> np.ndarray:
        return self.root.q


def decay_parameter(model: ValidatedModel) -> DecayResult:
    """lambda_Z = -A(q)."""
    _require_h_equals_a(model)
    check_communicating(model)
    root = minimal_root(model)
    lam = -model.A(root.q)
    if abs(lam) < 1e-14:
        lam = 0.0  # A(1) = 0 exactly for conservative immigration; drop the signed zero
    return DecayResult(lam, root)


def invariant_vector(model: ValidatedModel, j, root: RootVector | None = None) -> float:
    """The lambda_Z-invariant vector q^j."""
    _require_h_equals_a(model)
    check_communicating(model)
    q = (root or minimal_root(model)).q
    j = as_index(j, model.n)
    return float(np.prod(q ** np.asarray(j)))


# ---------------------------------------------------------------------------
# invariant measures


@dataclass(frozen=True)
class InvariantMeasure:
    lam: float
    coefficients: dict
    method: str
    row_residual: float

    def array(self) -> np.ndarray:
        """Coefficients as a vector (n = 1 only)."""
        return np.array([self.coefficients[(j,)] for j in range(len(self.coefficients))])


def _mp_row(model: ValidatedModel, k: int) -> dict:
    """Row k of the one-type q-matrix in multiprecision.

    Conservative diagonals are rebuilt from the entries: the float diagonal
    -(sum of rates) is off by an ulp, and that phantom killing rate is enough
    to turn far tail coefficients negative once they drop below 1e-17.
    """
    row: dict = {}

    def add(j, rate):
        row[j] = row.get(j, mpmath.mpf(0)) + rate

    def diagonal(dist):
        if dist.conservative:
            return -mpmath.fsum(mpmath.mpf(r) for r in dist.entries.values())
        return mpmath.mpf(dist.diagonal)

    if k == 0:
        res = model.spec.resurrection_distribution
        if res is None:
            return row
        for (j,), r in res.entries.items():
            add(j, mpmath.mpf(r))
        add(0, diagonal(res))
        return row
    br = model.spec.branch[0]
    for (j,), r in br.entries.items():
        add(k - 1 + j, k * mpmath.mpf(r))
    add(k, k * diagonal(br))
    imm = model.spec.immigration
    for (j,), r in imm.entries.items():
        add(k + j, mpmath.mpf(r))
    add(k, diagonal(imm))
    return row


def forward_recurrence(model: ValidatedModel, lam: float, degree: int, m0=1.0) -> list:
    """Solve ``lam m_j + sum_{k <= j+1} m_k q_kj = 0`` for j = 0..degree-1
    (one type) in multiprecision; returns m_0..m_degree as mpf."""
    if model.n != 1:
        raise ValueError("forward recurrence is for one type only")
    b0 = model.spec.branch[0].entries.get((0,), 0.0)
    if b0 <= 0:
        raise NotCommunicating("b_0 = 0: the one-step recurrence is not solvable")
    with mpmath.workdps(max(50, 30 + 2 * degree)):
        lam_mp = mpmath.mpf(lam)
        # column contributions: cols[j] = lam m_j + sum_{k <= j} m_k q_kj
        cols = [mpmath.mpf(0)] * (degree + 1)
        m = [mpmath.mpf(m0)]
        for j in range(degree):
            for tgt, rate in _mp_row(model, j).items():
                if tgt <= degree:
                    cols[tgt] += m[j] * rate
            cols[j] += lam_mp * m[j]
            m.append(-cols[j] / ((j + 1) * mpmath.mpf(b0)))
        return [+x for x in m]


def _row_residuals(model: ValidatedModel, lam: float, coeffs: dict, rows) -> float:
    worst = 0.0
    acc: dict = {}
    for k, mk in coeffs.items():
        for tgt, rate in generator_row(model, k).items():
            acc[tgt] = acc.get(tgt, 0.0) + mk * rate
    for j in rows:
        r = lam * coeffs[j] + acc.get(j, 0.0)
        worst = max(worst, abs(r))
    return worst


def _lstsq_measure(model: ValidatedModel, lam: float, degree: int, reflect: bool) -> tuple[dict, float]:
    """Least squares on every truncated row with m_0 = 1.

    Transitions that leave the truncation are either dropped (the mass is
    killed) or folded back into the diagonal (``reflect``).  Residuals are
    reported on the rows with |j| < degree, which see no truncation.
    """
    states = enumerate_states(model.n, degree, "total")
    index = {s: a for a, s in enumerate(states)}
    M = np.zeros((len(states) + 1, len(states)))
    for a, k in enumerate(states):
        for tgt, rate in generator_row(model, k).items():
            r = index.get(tgt)
            if r is not None:
                M[r, a] += rate
            elif reflect:
                M[a, a] += rate
    M[np.arange(len(states)), np.arange(len(states))] += lam
    M[-1, 0] = 1.0
    rhs = np.zeros(M.shape[0])
    rhs[-1] = 1.0
    x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    coeffs = {s: float(v) for s, v in zip(states, x)}
    interior = [s for s in states if sum(s) < degree]
    return coeffs, _row_residuals(model, lam, coeffs, interior)


def invariant_measure(model: ValidatedModel, lam: float, max_degree: int | None = None) -> InvariantMeasure:
    """A lambda-invariant measure normalized by m_0 = 1.

    One type: exact forward recurrence up to ``max_degree``.  Several types:
    least squares on the truncated rows, doubling the total degree (unless
    ``max_degree`` is given) until the coefficients are positive and the
    untruncated rows hold to 1e-8.
    """
    dec = decay_parameter(model)
    if not -LAMBDA_TOL <= lam <= dec.lambda_z + LAMBDA_TOL:
        raise OutOfDomain(f"lambda = {lam} outside [0, lambda_Z = {dec.lambda_z}]")
    if model.n == 1:
        N = max_degree or DEFAULT_DEGREE_1
        m = forward_recurrence(model, lam, N)
        coeffs = {(j,): float(v) for j, v in enumerate(m)}
        bad = [j for j, v in enumerate(m) if v <= 0]
        if bad:
            raise NonPositiveCoefficient(f"m_{bad[0]} = {float(m[bad[0]]):.3g} <= 0")
        resid = _row_residuals(model, lam, coeffs, [(j,) for j in range(N)])
        return InvariantMeasure(lam, coeffs, "exact-recurrence", resid)
    # with rho(1) <= 0 mass escaping the cap is negligible and folding it
    # back is exact in the limit; otherwise the killed truncation converges
    reflect = model.perron_at_one <= CRITICAL_TOL
    N = max_degree or DEFAULT_DEGREE_N
    while True:
        coeffs, resid = _lstsq_measure(model, lam, N, reflect)
        positive = min(coeffs.values()) > 0
        if (positive and resid <= RESIDUAL_TOL) or max_degree is not None or N * 2 > MAX_DEGREE_N:
            break
        N *= 2
    if not positive:
        worst = min(coeffs, key=coeffs.get)
        raise NonPositiveCoefficient(f"coefficient at {worst} is {coeffs[worst]:.3g} with total degree {N}")
    return InvariantMeasure(lam, coeffs, "truncated-solve", resid)


def _lambda_integral(model: ValidatedModel, lam: float):
    flow = CurveFlow(model, default_pivot(model))
    return flow, flow.march({"L": lambda p: (lam + p.A) / p.Bp})


def invariant_measure_curve_value(model: ValidatedModel, lam: float, s: float) -> float:
    """Generating function of the m_0 = 1 invariant measure along the curve,
    ``exp(-int_0^s (lam + A)/B_p)`` for s below the curve endpoint."""
    flow, res = _lambda_integral(model, lam)
    return math.exp(-res.partial("L", min(flow.tau_of(s), res.tau_end)))


@dataclass(frozen=True)
class ConvergenceVerdict:
    status: str  # Convergent | Divergent | Indeterminate
    reason: str
    integral: DivergenceVerdict | None = None

    def as_dict(self) -> dict:
        return {"status": self.status, "reason": self.reason,
                "integral": self.integral.as_dict() if self.integral else None}


def invariant_measure_convergence(model: ValidatedModel, lam: float) -> ConvergenceVerdict:
    """Whether the lambda-invariant measure is summable."""
    dec = decay_parameter(model)
    if abs(lam - dec.lambda_z) > LAMBDA_TOL:
        return ConvergenceVerdict("Divergent", f"lambda != lambda_Z = {dec.lambda_z:.12g}")
    if model.perron_at_one > CRITICAL_TOL:
        return ConvergenceVerdict("Divergent", f"rho(1) = {model.perron_at_one:.6g} > 0")
    _, res = _lambda_integral(model, lam)
    v = res.verdict("L")
    if v.finite:
        return ConvergenceVerdict("Convergent", "int (lambda + A)/B_p is finite", v)
    if v.infinite:
        return ConvergenceVerdict("Divergent", "int (lambda + A)/B_p = -infinity", v)
    return ConvergenceVerdict("Indeterminate", v.diagnostics, v)


@dataclass(frozen=True)
class QSDReport:
    exists: bool
    lambda_z: float
    verdict: ConvergenceVerdict
    distribution: dict | None
    row_residual: float | None
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "exists": self.exists,
            "lambdaZ": self.lambda_z,
            "verdict": self.verdict.as_dict(),
            "note": self.note,
            "row_residual": self.row_residual,
            "distribution": None if self.distribution is None else
            [{"j": list(k), "p": v} for k, v in self.distribution.items()],
        }


def qsd_verdict(model: ValidatedModel, max_degree: int | None = None) -> QSDReport:
    """Existence of a quasi-stationary distribution and, when it exists,
    the normalized lambda_Z-invariant measure."""
    dec = decay_parameter(model)
    v = invariant_measure_convergence(model, dec.lambda_z)
    if v.status != "Convergent":
        return QSDReport(False, dec.lambda_z, v, None, None)
    note = "stationary (lambda_Z = 0)" if dec.lambda_z == 0.0 else ""
    if model.n == 1:
        meas = invariant_measure(model, dec.lambda_z, max_degree)
        total = math.exp(-v.integral.value)
        dist = {k: c / total for k, c in meas.coefficients.items()}
        return QSDReport(True, dec.lambda_z, v, dist, meas.row_residual / total, note)
    st = stationary_adaptive(model, max_degree or DEFAULT_DEGREE_N)
    return QSDReport(True, dec.lambda_z, v, st.as_dict(), st.leak_flux, note)


def row_identity_residual(model: ValidatedModel, max_total: int = 6) -> float:
    """max over |i| <= max_total of |sum_j q_ij q^j + lambda_Z q^i|."""
    dec = decay_parameter(model)
    q = dec.q
    worst = 0.0
    for i in enumerate_states(model.n, max_total, "total"):
        s = sum(rate * float(np.prod(q ** np.asarray(j))) for j, rate in generator_row(model, i).items())
        worst = max(worst, abs(s + dec.lambda_z * float(np.prod(q ** np.asarray(i)))))
    return worst
