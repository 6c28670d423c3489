"""Recurrence, ergodicity and the equilibrium distribution.

For a process whose empty state is left at rate ``-h_0 > 0``:

* it is recurrent iff rho(1) <= 0 and J = +inf, where J is the absorptive
  integral (resurrection plays no part in it);
* it is positive recurrent iff rho(1) <= 0 and
  ``int_0^1 (-A - H)/B_p`` along the curve is finite;
* the equilibrium generating function along the curve is
  ``pi(s) = pi_0 [1 + exp(-I(s)) int_0^s (-H/B_p) exp(I(y)) dy]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curve import CRITICAL_TOL, CurveFlow, MarchResult, default_pivot
from .decay import forward_recurrence
from .errors import NotErgodic, TruncationResidualTooLarge, WrongEncoding
from .model import ValidatedModel
from .oracle import stationary_adaptive

PMF_TOL = 1e-9
MAX_PMF_DEGREE = 1024


@dataclass(frozen=True)
class ClassificationReport:
    honest: bool | None
    recurrence: str  # Recurrent | Transient | Indeterminate
    ergodicity: str  # Ergodic | NullRecurrent | NotApplicable
    exponentially_ergodic: bool
    evidence: dict = field(default_factory=dict)
    # the minimal process is always the only one, and never strongly ergodic
    unique: bool = True
    strongly_ergodic: bool = False

    def as_dict(self) -> dict:
        return {
            "unique": self.unique,
            "honest": "unknown" if self.honest is None else self.honest,
            "recurrence": self.recurrence,
            "ergodicity": self.ergodicity,
            "exponentiallyErgodic": self.exponentially_ergodic,
            "stronglyErgodic": self.strongly_ergodic,
            "evidence": self.evidence,
        }


def _require_resurrection(model: ValidatedModel) -> None:
    if model.absorbing:
        raise WrongEncoding("classification needs a resurrection distribution (h_0 < 0)")


def _weights(p) -> float:
    return math.exp(p.I) / p.Bp


def classify(model: ValidatedModel) -> ClassificationReport:
    _require_resurrection(model)
    rho = model.perron_at_one
    evidence: dict = {"perron_root_at_one": rho}
    if rho > CRITICAL_TOL:
        evidence["J"] = "not evaluated: curve ends at q < 1"
        evidence["ergodicity_integral"] = "not evaluated: curve ends at q < 1"
        return ClassificationReport(None, "Transient", "NotApplicable", False, evidence)
    flow = CurveFlow(model, default_pivot(model))
    res = flow.march({"J": _weights, "erg": lambda p: (-p.A - p.H) / p.Bp})
    J = res.verdict("J")
    erg = res.verdict("erg")
    evidence["J"] = J.as_dict()
    evidence["ergodicity_integral"] = erg.as_dict()
    recurrence = {"Infinite": "Recurrent", "Finite": "Transient"}.get(J.status, "Indeterminate")
    if erg.finite and recurrence != "Transient":
        ergodicity = "Ergodic"
        recurrence = "Recurrent"
    elif erg.infinite and recurrence == "Recurrent":
        ergodicity = "NullRecurrent"
    else:
        ergodicity = "NotApplicable"
    # finitely supported rates always have finite first moments
    exp_erg = ergodicity == "Ergodic" and rho < 0
    return ClassificationReport(True, recurrence, ergodicity, exp_erg, evidence)


def _require_ergodic(model: ValidatedModel) -> None:
    rep = classify(model)
    if rep.ergodicity != "Ergodic":
        raise NotErgodic(f"model is {rep.recurrence}/{rep.ergodicity}")


class EquilibriumCurve:
    """pi(s) along the curve, normalized so that pi(s) -> 1 as s -> 1."""

    def __init__(self, model: ValidatedModel):
        _require_ergodic(model)
        self.flow = CurveFlow(model, default_pivot(model))
        self.res: MarchResult = self.flow.march({"K": lambda p: -p.H / p.Bp * math.exp(p.I)})
        I1 = self.res.verdict("I")
        K1 = self.res.verdict("K")
        if not (I1.finite and K1.finite):
            raise NotErgodic(f"normalizing integrals not finite: {I1.diagnostics}; {K1.diagnostics}")
        self.pi0 = 1.0 / (1.0 + math.exp(-I1.value) * K1.value)

    def __call__(self, s: float) -> float:
        if not 0.0 <= s < 1.0:
            raise ValueError("s must lie in [0, 1)")
        tau = min(self.flow.tau_of(s), self.res.tau_end)
        I = self.res.partial("I", tau)
        K = self.res.partial("K", tau)
        return self.pi0 * (1.0 + math.exp(-I) * K)

    def point(self, s: float) -> np.ndarray:
        """The curve point (s, u_2(s), ..., u_n(s))."""
        tau = min(self.flow.tau_of(s), self.res.tau_end)
        return self.res.point(tau).u


def equilibrium_curve_value(model: ValidatedModel, s: float) -> float:
    """pi(s) = sum_j pi_j s^j1 u_2(s)^j2 ... u_n(s)^jn."""
    return EquilibriumCurve(model)(s)


@dataclass(frozen=True)
class EquilibriumPMF:
    probabilities: dict
    method: str
    residual: float

    def array(self) -> np.ndarray:
        return np.array([self.probabilities[(j,)] for j in range(len(self.probabilities))])


def equilibrium_pmf(model: ValidatedModel, max_degree: int = 64) -> EquilibriumPMF:
    """Stationary probabilities up to ``max_degree``.

    One type: forward recurrence from the balance equations started at the
    curve value pi_0; the degree is doubled until the mass beyond it is below
    1e-9 and the probabilities up to ``max_degree`` are returned.  Several
    types: truncated stationary solve with adaptive cap.  ``residual`` is
    the missing mass (one type) or the leak flux (several types).
    """
    if model.n == 1:
        eq = EquilibriumCurve(model)
        N = max_degree
        while True:
            m = forward_recurrence(model, 0.0, N, m0=eq.pi0)
            pis = np.array([float(x) for x in m])
            resid = abs(1.0 - math.fsum(pis))
            if resid <= PMF_TOL and pis.min() >= 0:
                break
            if 2 * N > MAX_PMF_DEGREE:
                raise TruncationResidualTooLarge(f"mass {resid:.3g} missing at degree {N}")
            N *= 2
        probs = {(j,): float(p) for j, p in enumerate(pis[: max_degree + 1])}
        return EquilibriumPMF(probs, "exact-recurrence", resid)
    _require_ergodic(model)
    st = stationary_adaptive(model, max(max_degree, 24), tol=PMF_TOL)
    if st.leak_flux > PMF_TOL:
        raise TruncationResidualTooLarge(f"leak flux {st.leak_flux:.3g} at the largest cap")
    probs = {s: float(p) for s, p in zip(st.states, st.probabilities) if sum(s) <= max_degree}
    return EquilibriumPMF(probs, "truncated-solve", st.leak_flux)
