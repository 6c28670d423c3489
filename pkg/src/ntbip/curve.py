"""Minimal root of B(u) = 0, the characteristic curve, and integrals along it.

The curve ``(u, u_2(u), ..., u_n(u))`` solves ``du_k/du = B_k / B_p`` from the
origin to the minimal root ``q``.  Both numerator and denominator vanish at
``q``, so the march is carried out in the log-distance variable

    tau = -log((q_p - u) / q_p),     w = q - (point on the curve),

with every generating function re-expanded around ``q``.  The state is the
deviation ``delta = w / w_p - x`` from the terminal direction ``x`` (Perron
vector of the Jacobian at ``q``), and each ``B_k`` is evaluated as
``w_p (-rho(q) x_k + (L delta)_k + higher-degree terms)``.  The linear part
therefore never cancels, which keeps ``B_p`` accurate even at a critical root
where it vanishes like ``w_p^2``, down to ``w_p = q_p 2^-40``.  Integrals ``int f dy`` along the curve
are carried as extra ODE components with ``dy = w_p dtau``; the tail of each
integrand is then inspected on the dyadic levels ``w_p = q_p 2^-m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NoConvergence, PivotNotAllowed, StiffnessFailure
from .model import Poly, ValidatedModel, perron_eigenvalue, perron_vector

# dyadic refinement levels used for tail classification
LEVELS = 40
CRITICAL_ROOT_TOL = 1e-6
# |rho(q)| below this is taken as exactly 0 (critical root)
RHO_SNAP = 1e-14
TAU_END = LEVELS * math.log(2.0)
EXPONENT_TOL = 1e-3
CONVERGED_RTOL = 1e-8
# rho(1) below this is treated as <= 0
CRITICAL_TOL = 1e-12


# ---------------------------------------------------------------------------
# minimal root


@dataclass(frozen=True)
class RootVector:
    q: np.ndarray
    iterations: int
    residual: float


def _fixed_point_map(model: ValidatedModel, u: np.ndarray) -> np.ndarray:
    """f_k(u) = u_k + B_k(u) / r_k with r_k the type-k exit rate."""
    out = np.empty_like(u)
    for k, b in enumerate(model.B):
        r = -model.spec.branch[k].diagonal
        out[k] = u[k] + b(u) / r
    return out


def minimal_root(model: ValidatedModel, tol: float = 1e-14, max_iter: int = 1_000_000) -> RootVector:
    """Smallest nonnegative solution of B_1 = ... = B_n = 0.

    Newton steps from the origin, each accepted only if it keeps the iterate
    between the previous iterate and 1 (monotone bracketing); otherwise a
    plain fixed-point step ``u <- f(u)`` is taken.
    """
    n = model.n
    u = np.zeros(n)
    for it in range(1, max_iter + 1):
        Bu = np.array([b(u) for b in model.B])
        step = None
        try:
            Jm = np.array([b.gradient(u) for b in model.B])
            cand = u - np.linalg.solve(Jm, Bu)
            if np.all(np.isfinite(cand)) and np.all(cand >= u - 1e-15) and np.all(cand <= 1.0 + 1e-12):
                step = np.minimum(np.maximum(cand, u), 1.0)
        except np.linalg.LinAlgError:
            pass
        if step is None:
            step = np.minimum(np.maximum(_fixed_point_map(model, u), u), 1.0)
        assert np.all(step >= u) and np.all(step <= 1.0)
        delta = float(np.max(step - u))
        u = step
        if delta < tol:
            break
    else:
        raise NoConvergence("minimal root iteration did not converge", last_iterate=u, bound=delta)
    if model.perron_at_one <= CRITICAL_TOL and np.max(1.0 - u) < 1e-6:
        # q = 1 exactly when rho(1) <= 0
        u = np.ones(n)
    residual = float(max(abs(b(u)) for b in model.B))
    return RootVector(q=u, iterations=it, residual=residual)


# ---------------------------------------------------------------------------
# marching along the curve


@dataclass
class CurvePoint:
    """Everything an integrand may need at one point of the curve."""

    u: np.ndarray
    w: np.ndarray
    log_u: np.ndarray
    A: float
    H: float
    B: np.ndarray
    pivot: int
    I: float = 0.0
    # (w / w_p, higher-degree part of B / w_p), used by the march itself
    scaled: tuple | None = field(default=None, repr=False)

    @property
    def y(self) -> float:
        return float(self.u[self.pivot])

    @property
    def Bp(self) -> float:
        return float(self.B[self.pivot])

    def _log_power(self, i) -> float:
        i = np.asarray(i)
        nz = i != 0  # skip 0 * log(0)
        return float(np.dot(i[nz], self.log_u[nz]))

    def power(self, i) -> float:
        """u^i (product of coordinate powers)."""
        return math.exp(self._log_power(i))

    def one_minus_power(self, i) -> float:
        """1 - u^i computed without cancellation near u = 1."""
        return -math.expm1(self._log_power(i))


Integrand = Callable[[CurvePoint], float]


def _higher_terms(P: Poly) -> tuple:
    """(coefs, exps, degree - 1) of the terms of degree >= 2."""
    deg = P.exps.sum(axis=1) if len(P.coefs) else np.zeros(0, dtype=np.int64)
    keep = deg >= 2
    return P.coefs[keep], P.exps[keep], deg[keep] - 1


def _eval_higher(h: tuple, z: np.ndarray, wp: float) -> float:
    """sum_e c_e wp^(|e|-1) z^e, i.e. the higher-degree part at w = wp z, over wp."""
    coefs, exps, powers = h
    if not len(coefs):
        return 0.0
    return float(np.sum(coefs * wp ** powers * np.prod(z ** exps, axis=1)))


@dataclass(frozen=True)
class DivergenceVerdict:
    """Outcome of an improper integral along the curve.

    ``status`` is ``"Finite"``, ``"Infinite"`` or ``"Indeterminate"``;
    ``tail_exponent`` is the fitted exponent theta of the integrand
    ~ (q_p - y)^theta near the endpoint.
    """

    status: str
    value: float | None
    tail_exponent: float
    diagnostics: str = ""
    sign: int = 1

    @property
    def finite(self) -> bool:
        return self.status == "Finite"

    @property
    def infinite(self) -> bool:
        return self.status == "Infinite"

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "value": self.value,
            "tail_exponent": self.tail_exponent,
            "sign": self.sign,
            "diagnostics": self.diagnostics,
        }


class CurveFlow:
    """ODE system for the curve plus user-supplied path integrals."""

    def __init__(self, model: ValidatedModel, pivot: int = 0, root: RootVector | None = None):
        n = model.n
        if not 0 <= pivot < n:
            raise PivotNotAllowed(f"pivot {pivot} outside 0..{n - 1}")
        if model.B[pivot](np.zeros(n)) <= 0:
            raise PivotNotAllowed(f"B_{pivot + 1}(0) = 0: type {pivot + 1} cannot die out directly")
        self.model = model
        self.pivot = pivot
        self.root = root or minimal_root(model)
        q = self.root.q
        if np.any(q <= 0):
            raise PivotNotAllowed("minimal root has a zero coordinate")
        self.q = q
        self.others = [k for k in range(n) if k != pivot]
        at_one = bool(np.all(q == 1.0))
        pin_A = at_one and model.spec.immigration.conservative
        self._A = model.A.shifted(q, drop_constant=pin_A)
        res = model.spec.resurrection_distribution
        pin_H = at_one and res is not None and res.conservative
        self._H = model.H.shifted(q, drop_constant=pin_H)
        self.log_q = np.log(q)
        jac = np.array([b.gradient(q) for b in model.B])
        rho = perron_eigenvalue(jac)
        self.rho_q = 0.0 if abs(rho) <= RHO_SNAP else rho
        x = perron_vector(jac)
        self.terminal_slope = x / x[pivot]
        # B_k(q - w) = -(J w)_k + higher-degree terms; the linear part is
        # evaluated as -rho x + L delta so that it never cancels
        self._L = -jac[:, self.others]
        self._higher = [_higher_terms(b.shifted(q, drop_constant=True)) for b in model.B]

    # -- geometry ----------------------------------------------------------

    def w_pivot(self, tau):
        return self.q[self.pivot] * np.exp(-tau)

    def tau_of(self, y: float) -> float:
        qp = self.q[self.pivot]
        if y >= qp:
            return math.inf
        return -math.log1p(-y / qp)

    def point(self, tau: float, state: np.ndarray) -> CurvePoint:
        n = self.model.n
        m = n - 1
        wp = float(self.w_pivot(tau))
        delta = state[:m]
        z = self.terminal_slope.copy()
        z[self.others] += delta
        lin = -self.rho_q * self.terminal_slope + self._L @ delta
        hi = np.array([_eval_higher(h, z, wp) for h in self._higher])
        B = wp * (lin + hi)
        w = np.minimum(np.maximum(wp * z, 0.0), self.q)
        u = self.q - w
        with np.errstate(divide="ignore"):
            log_u = self.log_q + np.log1p(-w / self.q)
        return CurvePoint(u=u, w=w, log_u=log_u, A=self._A(w), H=self._H(w), B=B,
                          pivot=self.pivot, I=float(state[m]), scaled=(z, hi))

    # -- integration -------------------------------------------------------

    def march(self, integrands: Mapping[str, Integrand] | None = None, tau_end: float = TAU_END,
              rtol: float = 1e-11, atol: float = 1e-14, dense: bool = True) -> "MarchResult":
        """Integrate the curve and ``int f dy`` for each integrand up to
        ``tau_end``.  The inner integral ``I(y) = int_0^y A/B_p`` is always
        carried and exposed to integrands as ``point.I``."""
        integrands = dict(integrands or {})
        names = list(integrands)
        funcs = [integrands[k] for k in names]
        n = self.model.n
        m = n - 1

        def rhs(tau, state):
            p = self.point(tau, state)
            wp = p.w[self.pivot]
            Bp = p.Bp
            out = np.empty_like(state)
            if m:
                # d delta_k = z_k - B_k/B_p, with the O(1) parts cancelled by hand
                z, hi = p.scaled
                delta = state[:m]
                Ld = self._L @ delta
                piv = self.pivot
                num = (-self.rho_q * delta + z[self.others] * Ld[piv] - Ld[self.others]
                       + z[self.others] * hi[piv] - hi[self.others])
                out[:m] = num / (Bp / wp)
            out[m] = wp * p.A / Bp
            for idx, f in enumerate(funcs):
                out[m + 1 + idx] = wp * f(p)
            return out

        slope_others = self.terminal_slope[self.others]
        y0 = np.zeros(m + 1 + len(funcs))
        # the march starts at the origin, w = q
        y0[:m] = self.q[self.others] / self.q[self.pivot] - slope_others
        # an error e in delta moves B / w_p by about |L| e against a linear
        # part of size |rho(q)|; at a critical root the scale is w_p instead
        atol_vec = np.full(y0.shape, atol)
        atol_vec[:m] = atol * max(abs(self.rho_q), 1e-10)
        sol = None
        # at a critical root with several types B_p vanishes quadratically
        # while the other directions relax linearly: stiffness grows like
        # 1/w_p and an explicit method crawls without ever failing
        methods = ("LSODA", "Radau") if m and self.rho_q > -CRITICAL_ROOT_TOL else ("RK45", "Radau")
        for method in methods:
            sol = solve_ivp(rhs, (0.0, tau_end), y0, method=method, rtol=rtol, atol=atol_vec,
                            dense_output=dense)
            if sol.success:
                break
        if sol is None or not sol.success:
            reached = float(sol.t[-1]) if sol is not None else 0.0
            raise StiffnessFailure(
                f"curve integration stopped at tau={reached:.3g} (w_p={self.w_pivot(reached):.3g}): "
                f"{sol.message if sol is not None else ''}"
            )
        return MarchResult(self, names, funcs, sol, tau_end)


@dataclass
class MarchResult:
    flow: CurveFlow
    names: list
    funcs: list
    sol: object
    tau_end: float
    _cache: dict = field(default_factory=dict)

    @property
    def state_end(self) -> np.ndarray:
        return self.sol.y[:, -1]

    def state(self, tau) -> np.ndarray:
        if tau == self.tau_end:
            return self.state_end
        return self.sol.sol(tau)

    def point(self, tau) -> CurvePoint:
        return self.flow.point(tau, self.state(tau))

    def _slot(self, name: str) -> int:
        m = self.flow.model.n - 1
        if name == "I":
            return m
        return m + 1 + self.names.index(name)

    def _integrand(self, name: str) -> Integrand:
        if name == "I":
            return lambda p: p.A / p.Bp
        return self.funcs[self.names.index(name)]

    def partial(self, name: str, tau=None) -> float:
        """Partial integral up to ``tau`` (default: end of the march)."""
        tau = self.tau_end if tau is None else tau
        return float(self.state(tau)[self._slot(name)])

    def integrand_value(self, name: str, tau: float) -> float:
        return float(self._integrand(name)(self.point(tau)))

    def verdict(self, name: str) -> DivergenceVerdict:
        if name not in self._cache:
            self._cache[name] = self._classify(name)
        return self._cache[name]

    def _classify(self, name: str) -> DivergenceVerdict:
        flow = self.flow
        end = self.tau_end
        taus = np.linspace(end - 2 * math.log(10.0), end, 17)
        f = np.array([self.integrand_value(name, t) for t in taus])
        S_end = self.partial(name)
        absf = np.abs(f)
        if np.all(absf < 1e-280):
            return DivergenceVerdict("Finite", S_end, -math.inf, "integrand vanishes near endpoint",
                                     sign=1 if S_end >= 0 else -1)
        sign = int(np.sign(f[np.argmax(absf)]))
        if np.any(absf == 0) or np.any(np.sign(f) != sign):
            return DivergenceVerdict("Indeterminate", None, math.nan,
                                     "integrand changes sign near the endpoint", sign=sign)
        logw = np.log(flow.w_pivot(taus))
        theta = float(np.polyfit(logw, np.log(absf), 1)[0])

        def extrapolated(level: int) -> float:
            tau = level * math.log(2.0)
            S = self.partial(name, tau)
            tail = self.integrand_value(name, tau) * flow.w_pivot(tau) / (theta + 1.0)
            return S + tail

        if theta >= -1.0 + EXPONENT_TOL:
            value = extrapolated(LEVELS)
            earlier = extrapolated(LEVELS - 4)
            diff = abs(value - earlier)
            if diff <= CONVERGED_RTOL * max(abs(value), 1e-300) or diff <= 1e-14:
                return DivergenceVerdict("Finite", value, theta,
                                         f"tail extrapolated; change over last 4 levels {diff:.2e}",
                                         sign=sign)
            return DivergenceVerdict("Indeterminate", value, theta,
                                     f"partial sums not settled (change {diff:.2e})", sign=sign)
        if theta <= -1.0 - EXPONENT_TOL:
            return DivergenceVerdict("Infinite", None, theta, "integrand decays slower than 1/(q-y)",
                                     sign=sign)
        # borderline exponent: a non-decaying dyadic increment means log divergence
        inc = [abs(self.partial(name, (m + 1) * math.log(2.0)) - self.partial(name, m * math.log(2.0)))
               for m in (LEVELS - 11, LEVELS - 1)]
        ratio = inc[1] / inc[0] if inc[0] > 0 else math.nan
        if ratio >= 0.5:
            return DivergenceVerdict("Infinite", None, theta,
                                     f"logarithmic divergence (dyadic increment ratio {ratio:.3f})",
                                     sign=sign)
        return DivergenceVerdict("Indeterminate", None, theta,
                                 f"exponent near -1 and increments decaying (ratio {ratio:.3f})",
                                 sign=sign)


# ---------------------------------------------------------------------------
# sampled curve


@dataclass(frozen=True)
class CurveSolution:
    """Samples of the curve on ``grid`` (values of the pivot coordinate).

    ``values[i]`` is the full point ``(u_1, ..., u_n)`` at ``grid[i]``; for
    n = 1 the curve carries no other coordinates and ``others`` is empty.
    """

    pivot: int
    q: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    endpoint_error: float
    terminal_slope: np.ndarray

    @property
    def others(self) -> np.ndarray:
        keep = [k for k in range(self.values.shape[1]) if k != self.pivot]
        return self.values[:, keep]


def solve_curve(model: ValidatedModel, pivot: int | None = None, grid_size: int = 201,
                root: RootVector | None = None) -> CurveSolution:
    """Solve the characteristic curve with the given (0-based) pivot type.

    The default pivot is the lowest type with B_k(0) > 0.  The last grid
    point is the known endpoint ``q``; ``endpoint_error`` measures how far the
    final integrated point lies from the straight-line closure along the
    terminal slope (the Perron vector of the Jacobian at ``q``).
    """
    if pivot is None:
        pivot = default_pivot(model)
    flow = CurveFlow(model, pivot, root)
    q = flow.q
    grid = np.linspace(0.0, q[pivot], grid_size)
    values = np.empty((grid_size, model.n))
    if model.n == 1:
        values[:, 0] = grid
        return CurveSolution(pivot, q, grid, values, 0.0, flow.terminal_slope)
    res = flow.march()
    for i, y in enumerate(grid[:-1]):
        values[i] = res.point(flow.tau_of(y)).u
    values[-1] = q
    w_end = res.point(res.tau_end).w
    err = float(np.max(np.abs(w_end - flow.terminal_slope * w_end[pivot])))
    return CurveSolution(pivot, q, grid, values, err, flow.terminal_slope)


def default_pivot(model: ValidatedModel) -> int:
    zero = np.zeros(model.n)
    for k, b in enumerate(model.B):
        if b(zero) > 0:
            return k
    raise PivotNotAllowed("no type has B_k(0) > 0: particles never die")


def curve_csv_rows(model: ValidatedModel, curve: CurveSolution):
    """Rows (u_1..u_n, B_pivot, A) for CSV export, header first."""
    n = model.n
    header = [f"u{k + 1}" for k in range(n)] + [f"B{curve.pivot + 1}", "A"]
    yield header
    for pt in curve.values:
        yield [*map(float, pt), model.B[curve.pivot](pt), model.A(pt)]
