"""Extinction probabilities and mean extinction times of the absorptive process.

All quantities are path integrals along the characteristic curve.  With
``I(y) = int_0^y A/B_p`` the weight ``exp(I(y)) / B_p`` appears throughout:

* ``J = int_0^1 exp(I) / B_p dy`` decides almost-sure extinction when
  rho(1) <= 0;
* the extinction probability from state ``i`` is a ratio of two weighted
  integrals, over [0, 1] when rho(1) <= 0 and over [0, q_p] otherwise;
* the mean extinction time is ``int (1 - u^i)/B_p exp(I(y) - I(1)) dy``,
  finite exactly when ``int (1 - prod u - A)/B_p`` is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curve import (
    CRITICAL_TOL,
    CurveFlow,
    CurveSolution,
    DivergenceVerdict,
    RootVector,
    default_pivot,
    minimal_root,
    solve_curve,
)
from .errors import (
    IndeterminateJ,
    NotAlmostSurelyExtinct,
    NotApplicable,
    PivotNotAllowed,
    QuadratureFailure,
    WrongEncoding,
)
from .model import ValidatedModel, as_index

__all__ = [
    "RootVector",
    "CurveSolution",
    "DivergenceVerdict",
    "minimal_root",
    "solve_curve",
    "curve_pivot_invariance_check",
    "integral_J",
    "extinction_probability",
    "mean_extinction_time",
    "PivotReport",
]


def _require_absorbing(model: ValidatedModel) -> None:
    if not model.absorbing:
        raise WrongEncoding("operation needs the absorptive encoding (resurrection 'absorbing'); "
                            "use model.companion('absorbing')")


def _weight(p) -> float:
    return math.exp(p.I) / p.Bp


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PivotReport:
    pivots: tuple
    discrepancy: float


def curve_pivot_invariance_check(model: ValidatedModel, pivots=(0, 1), samples: int = 101) -> PivotReport:
    """Solve the curve with two different pivots and compare them.

    The curve obtained with pivot ``b`` is sampled at ``samples`` points;
    each sample's pivot-``a`` coordinate is fed to the pivot-``a`` solution
    and the remaining coordinates are compared (sup norm over both
    directions).
    """
    if model.n == 1:
        raise NotApplicable("pivot invariance needs at least two types")
    a, b = pivots
    flows = {k: CurveFlow(model, k) for k in (a, b)}
    marches = {k: f.march() for k, f in flows.items()}
    worst = 0.0
    for src, dst in ((a, b), (b, a)):
        fs, fd = flows[src], flows[dst]
        ms, md = marches[src], marches[dst]
        for tau in np.linspace(0.0, ms.tau_end, samples):
            ps = ms.point(tau)
            yd = ps.u[dst]
            tau_d = fd.tau_of(yd)
            if tau_d > md.tau_end:
                continue
            pd = md.point(tau_d)
            # compare in distance-to-q coordinates, which keep precision near q
            worst = max(worst, float(np.max(np.abs(ps.w - pd.w))))
    return PivotReport(pivots=(a, b), discrepancy=worst)


# ---------------------------------------------------------------------------


def _flow(model: ValidatedModel, root: RootVector | None = None) -> CurveFlow:
    return CurveFlow(model, default_pivot(model), root)


def integral_J(model: ValidatedModel) -> DivergenceVerdict:
    """Classify ``J = int_0^1 exp(int_0^y A/B_p) / B_p dy``."""
    _require_absorbing(model)
    if model.perron_at_one > CRITICAL_TOL:
        raise NotApplicable(f"rho(1) = {model.perron_at_one:.6g} > 0: the curve ends at q < 1")
    res = _flow(model).march({"J": _weight})
    return res.verdict("J")


def _ratio(num: DivergenceVerdict, den: DivergenceVerdict) -> float:
    if not (num.finite and den.finite):
        raise QuadratureFailure(f"weighted integrals did not converge: numerator {num.status} "
                                f"({num.diagnostics}), denominator {den.status} ({den.diagnostics})")
    return num.value / den.value


def extinction_probability(model: ValidatedModel, i) -> float:
    """Probability of eventual absorption at 0 starting from state ``i``."""
    _require_absorbing(model)
    i = np.asarray(as_index(i, model.n))
    if not i.any():
        raise ValueError("initial state must be nonzero")
    flow = _flow(model)
    integrands = {"den": _weight, "num": lambda p: p.power(i) * _weight(p)}
    res = flow.march(integrands)
    if model.perron_at_one <= CRITICAL_TOL:
        J = res.verdict("den")
        if J.infinite:
            return 1.0
        if not J.finite:
            raise IndeterminateJ(f"J could not be classified: {J.diagnostics}")
        return _ratio(res.verdict("num"), J)
    a = _ratio(res.verdict("num"), res.verdict("den"))
    bound = float(np.prod(flow.q ** i))
    if not 0.0 < a < bound:
        raise QuadratureFailure(f"extinction probability {a} outside (0, q^i = {bound})")
    return a


def mean_extinction_time(model: ValidatedModel, i) -> float:
    """Mean time to absorption from ``i``; ``math.inf`` when it is infinite."""
    _require_absorbing(model)
    i = np.asarray(as_index(i, model.n))
    if not i.any():
        raise ValueError("mean extinction time is undefined at the zero state")
    if model.perron_at_one > CRITICAL_TOL:
        raise NotAlmostSurelyExtinct(f"rho(1) = {model.perron_at_one:.6g} > 0")
    flow = _flow(model)
    ones = np.ones(model.n, dtype=int)
    integrands = {
        "J": _weight,
        "criterion": lambda p: (p.one_minus_power(ones) - p.A) / p.Bp,
        "E": lambda p: p.one_minus_power(i) * _weight(p),
    }
    res = flow.march(integrands)
    J = res.verdict("J")
    if not J.infinite:
        if J.finite:
            raise NotAlmostSurelyExtinct(f"J = {J.value:.6g} is finite")
        raise IndeterminateJ(f"J could not be classified: {J.diagnostics}")
    crit = res.verdict("criterion")
    if crit.infinite:
        return math.inf
    if not crit.finite:
        raise QuadratureFailure(f"finiteness criterion indeterminate: {crit.diagnostics}")
    I1 = res.verdict("I")
    E = res.verdict("E")
    if not (I1.finite and E.finite):
        raise QuadratureFailure(f"mean extinction time quadrature failed: {E.diagnostics}")
    return E.value * math.exp(-I1.value)


def pivot_or_default(model: ValidatedModel, pivot: int | None) -> int:
    if pivot is None:
        return default_pivot(model)
    if model.B[pivot](np.zeros(model.n)) <= 0:
        raise PivotNotAllowed(f"B_{pivot + 1}(0) = 0")
    return pivot
