"""q-matrix data model, validation and generating functions.

A model is described by three families of rates on Z_+^n:

* immigration ``a_j`` (jumps ``i -> i + j`` from any nonzero state),
* resurrection ``h_j`` (jumps ``0 -> j``), possibly absent (0 absorbing) or
  identical to the immigration family,
* branching ``b^(k)_j`` (a type-k particle is replaced by offspring ``j``).

Each family is stored sparsely as a :class:`RateDistribution`; its generating
function is a sparse :class:`Poly`.  Multi-indices are plain tuples of ints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    DiagonalMismatch,
    DimensionMismatch,
    ModelError,
    NegativeRate,
    NotPositivelyRegular,
    OutOfDomain,
    Singular,
)

MultiIndex = tuple

SAME_AS_IMMIGRATION = "same_as_immigration"
ABSORBING = "absorbing"

# relative slack used when comparing sums of rates
RATE_RTOL = 1e-12


def as_index(j: Sequence[int], n: int) -> MultiIndex:
    """Normalise ``j`` to a length-``n`` tuple of nonnegative ints."""
    if np.isscalar(j):
        j = (j,)
    idx = tuple(int(x) for x in j)
    if len(idx) != n:
        raise DimensionMismatch(f"multi-index {idx} has length {len(idx)}, expected {n}")
    if any(x < 0 for x in idx):
        raise OutOfDomain(f"multi-index {idx} has a negative coordinate")
    return idx


def unit(k: int, n: int) -> MultiIndex:
    return tuple(1 if m == k else 0 for m in range(n))


# ---------------------------------------------------------------------------
# sparse polynomials


class Poly:
    """Sparse multivariate polynomial ``sum_m c_m u^{e_m}``."""

    def __init__(self, terms: Mapping[MultiIndex, float], n: int):
        self.n = n
        items = [(tuple(e), float(c)) for e, c in terms.items() if c != 0.0]
        items.sort()
        self.terms = dict(items)
        if items:
            self.exps = np.array([e for e, _ in items], dtype=np.int64).reshape(-1, n)
            self.coefs = np.array([c for _, c in items])
        else:
            self.exps = np.zeros((0, n), dtype=np.int64)
            self.coefs = np.zeros(0)

    def __call__(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if not len(self.coefs):
            return 0.0
        return float(self.coefs @ np.prod(u ** self.exps, axis=1))

    def __repr__(self):
        return f"Poly({self.terms!r}, n={self.n})"

    @cached_property
    def partials(self) -> list["Poly"]:
        out = []
        for k in range(self.n):
            terms: dict = {}
            for e, c in self.terms.items():
                if e[k] > 0:
                    d = list(e)
                    d[k] -= 1
                    terms[tuple(d)] = terms.get(tuple(d), 0.0) + c * e[k]
            out.append(Poly(terms, self.n))
        return out

    def gradient(self, u) -> np.ndarray:
        return np.array([p(u) for p in self.partials])

    def shifted(self, q, drop_constant: bool = False) -> "Poly":
        """Polynomial ``w -> P(q - w)`` expanded in powers of ``w``.

        With ``drop_constant`` the constant term is set to exactly zero, which
        is how roots of the generating functions are pinned near ``q``.
        """
        q = [float(x) for x in q]
        terms: dict = {}
        for e, c in self.terms.items():
            partial = {(): c}
            for k, ek in enumerate(e):
                nxt: dict = {}
                for prefix, val in partial.items():
                    for r in range(ek + 1):
                        coef = math.comb(ek, r) * q[k] ** (ek - r) * (-1.0) ** r
                        if coef == 0.0:
                            continue
                        key = prefix + (r,)
                        nxt[key] = nxt.get(key, 0.0) + val * coef
                partial = nxt
            for key, val in partial.items():
                terms[key] = terms.get(key, 0.0) + val
        if drop_constant:
            terms.pop((0,) * self.n, None)
        return Poly(terms, self.n)


# ---------------------------------------------------------------------------
# rate families


@dataclass(frozen=True)
class RateDistribution:
    """Sparse rates plus the (negative) diagonal entry.

    ``kind`` is ``"immigration"``, ``"resurrection"`` or ``"branch"``; for
    branch distributions ``type_index`` is the 0-based type k and the
    diagonal index is ``e_k``.
    """

    kind: str
    entries: Mapping[MultiIndex, float]
    diagonal: float
    type_index: int | None = None

    @property
    def n(self) -> int:
        return len(next(iter(self.entries)))

    def diagonal_index(self, n: int) -> MultiIndex:
        if self.kind == "branch":
            return unit(self.type_index, n)
        return (0,) * n

    @property
    def total_rate(self) -> float:
        return float(sum(self.entries.values()))

    @property
    def exit_rate(self) -> float:
        return -self.diagonal

    @property
    def conservative(self) -> bool:
        return abs(self.total_rate - self.exit_rate) <= RATE_RTOL * self.exit_rate

    def gf(self, n: int) -> Poly:
        terms = dict(self.entries)
        terms[self.diagonal_index(n)] = self.diagonal
        return Poly(terms, n)


Resurrection = Union[RateDistribution, str, None]


@dataclass(frozen=True)
class ModelSpec:
    """Unvalidated model.  ``resurrection`` is a distribution, the marker
    :data:`SAME_AS_IMMIGRATION`, or ``None`` for the absorptive case."""

    n: int
    immigration: RateDistribution
    resurrection: Resurrection
    branch: tuple

    @property
    def absorbing(self) -> bool:
        return self.resurrection is None or self.resurrection == ABSORBING

    @property
    def same_as_immigration(self) -> bool:
        return isinstance(self.resurrection, str) and self.resurrection == SAME_AS_IMMIGRATION

    @property
    def resurrection_distribution(self) -> RateDistribution | None:
        if self.absorbing:
            return None
        if self.same_as_immigration:
            return self.immigration
        return self.resurrection

    def with_resurrection(self, resurrection: Resurrection) -> "ModelSpec":
        return ModelSpec(self.n, self.immigration, resurrection, self.branch)


def _check_distribution(dist: RateDistribution, n: int, label: str) -> None:
    if not dist.entries:
        raise DiagonalMismatch(f"{label}: no off-diagonal rates (need 0 < sum of rates)")
    diag_idx = dist.diagonal_index(n)
    for j, rate in dist.entries.items():
        if len(j) != n:
            raise DimensionMismatch(f"{label}: index {j} has length {len(j)}, expected {n}")
        if any(x < 0 for x in j):
            raise ModelError(f"{label}: index {j} has a negative coordinate")
        if not np.isfinite(rate) or rate < 0:
            raise NegativeRate(f"{label}: rate {rate} at index {j} is negative or not finite")
        if rate == 0:
            raise NegativeRate(f"{label}: zero rate at index {j}; omit zero rates")
        if j == diag_idx:
            raise DiagonalMismatch(f"{label}: diagonal index {j} listed among the rates")
    if not np.isfinite(dist.diagonal) or dist.diagonal >= 0:
        raise DiagonalMismatch(f"{label}: diagonal {dist.diagonal} must be negative")
    if dist.total_rate > dist.exit_rate * (1 + RATE_RTOL):
        raise DiagonalMismatch(
            f"{label}: rates sum to {dist.total_rate} > -diagonal = {dist.exit_rate}"
        )


# ---------------------------------------------------------------------------
# validated model


@dataclass(frozen=True)
class ValidatedModel:
    spec: ModelSpec
    conservative: dict
    mean_matrix: np.ndarray
    perron_at_one: float
    positively_regular: bool
    nonsingular: bool
    A: Poly = field(repr=False, compare=False)
    H: Poly = field(repr=False, compare=False)
    B: tuple = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def absorbing(self) -> bool:
        return self.spec.absorbing

    @property
    def fully_conservative(self) -> bool:
        return all(self.conservative.values())

    def gf(self, which) -> Poly:
        if which == "A":
            return self.A
        if which == "H":
            return self.H
        if isinstance(which, str) and which.startswith("B"):
            return self.B[int(which[1:]) - 1]
        return self.B[int(which)]

    def companion(self, resurrection: Resurrection) -> "ValidatedModel":
        """Same branching and immigration, different resurrection."""
        return validate(self.spec.with_resurrection(resurrection))


def _offspring_sign_matrix(spec: ModelSpec) -> np.ndarray:
    """Sign pattern of G(1): entry (i, j) true iff some type-i offspring
    (other than the trivial e_i) contains a type-j particle."""
    n = spec.n
    S = np.zeros((n, n), dtype=bool)
    for i, dist in enumerate(spec.branch):
        for j in dist.entries:
            for k in range(n):
                if j[k] > 0:
                    S[i, k] = True
    return S


def _is_irreducible(S: np.ndarray) -> bool:
    """Strong connectivity of the type graph; a single type needs a self-loop."""
    n = len(S)
    if n == 1:
        return bool(S[0, 0])
    R = (S | np.eye(n, dtype=bool)).astype(np.int64)
    P = R.copy()
    for _ in range(n):
        P = ((P @ R) > 0).astype(np.int64)
    return bool(P.all())


def _is_primitive(S: np.ndarray) -> bool:
    n = len(S)
    P = S.copy()
    for _ in range(n * n):
        if P.all():
            return True
        P = (P.astype(np.int64) @ S.astype(np.int64)) > 0
    return bool(P.all())


def validate(spec: ModelSpec) -> ValidatedModel:
    """Check the standing assumptions and fill in the derived quantities."""
    n = spec.n
    if n < 1:
        raise DimensionMismatch("dimension n must be >= 1")
    if len(spec.branch) != n:
        raise DimensionMismatch(f"expected {n} branch distributions, got {len(spec.branch)}")
    _check_distribution(spec.immigration, n, "immigration")
    res = spec.resurrection_distribution
    if res is not None and not spec.same_as_immigration:
        _check_distribution(res, n, "resurrection")
    for k, dist in enumerate(spec.branch):
        if dist.type_index != k:
            raise DimensionMismatch(f"branch distribution {k} carries type index {dist.type_index}")
        _check_distribution(dist, n, f"branch[{k}]")

    nonsingular = any(sum(j) != 1 for dist in spec.branch for j in dist.entries)
    if not nonsingular:
        raise Singular("every split yields exactly one particle (linear generating functions)")
    # M3-style models (type 1 begets only type 2 and vice versa) have a
    # periodic G(1); only irreducibility is enforced.
    positively_regular = _is_irreducible(_offspring_sign_matrix(spec))
    if not positively_regular:
        raise NotPositivelyRegular("offspring type graph is not strongly connected")

    A = spec.immigration.gf(n)
    H = res.gf(n) if res is not None else Poly({}, n)
    B = tuple(d.gf(n) for d in spec.branch)
    ones = np.ones(n)
    mean = np.array([b.gradient(ones) for b in B])
    conservative = {"immigration": spec.immigration.conservative}
    if res is not None:
        conservative["resurrection"] = res.conservative
    for k, d in enumerate(spec.branch):
        conservative[f"branch[{k}]"] = d.conservative
    return ValidatedModel(
        spec=spec,
        conservative=conservative,
        mean_matrix=mean,
        perron_at_one=perron_eigenvalue(mean),
        positively_regular=positively_regular,
        nonsingular=nonsingular,
        A=A,
        H=H,
        B=B,
    )


# ---------------------------------------------------------------------------
# generating functions


def _check_point(u, n: int, lo: float = -1.0) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (n,):
        raise DimensionMismatch(f"point has shape {u.shape}, expected ({n},)")
    if not np.all(np.isfinite(u)) or np.any(u < lo) or np.any(u > 1.0):
        raise OutOfDomain(f"point {u} outside [{lo}, 1]^{n}")
    return u


def eval_gf(model: ValidatedModel, which, u) -> float:
    """Evaluate A, H or B_k (``which`` = ``"A"``, ``"H"``, ``"B1"``.., or a
    0-based type index) at ``u`` in [-1, 1]^n."""
    u = _check_point(u, model.n)
    return model.gf(which)(u)


def jacobian(model: ValidatedModel, u) -> np.ndarray:
    """Exact matrix of partial derivatives dB_i/du_j."""
    u = _check_point(u, model.n, lo=0.0)
    return np.array([b.gradient(u) for b in model.B])


def perron_eigenvalue(M: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Maximal real eigenvalue of an essentially nonnegative matrix.

    Shifted power iteration with Collatz-Wielandt bracketing; falls back to a
    dense eigen-solve when the shifted matrix is reducible or the bracket does
    not close.
    """
    M = np.asarray(M, dtype=float)
    n = len(M)
    if n == 1:
        return float(M[0, 0])
    c = np.max(np.abs(np.diag(M))) + 1.0
    P = M + c * np.eye(n)
    x = np.ones(n)
    lo = hi = np.nan
    for _ in range(max_iter):
        y = P @ x
        if np.any(x <= 0) or np.any(y <= 0):
            break
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * max(1.0, abs(hi - c)):
            return float(0.5 * (lo + hi) - c)
        x = y / np.linalg.norm(y)
    return float(np.max(np.linalg.eigvals(M).real))


def perron_root(model: ValidatedModel, u) -> float:
    return perron_eigenvalue(jacobian(model, u))


def perron_vector(M: np.ndarray) -> np.ndarray:
    """Nonnegative eigenvector of the maximal real eigenvalue, unit 1-norm."""
    w, V = np.linalg.eig(np.asarray(M, dtype=float))
    k = int(np.argmax(w.real))
    v = np.abs(V[:, k].real)
    return v / v.sum()


# ---------------------------------------------------------------------------
# JSON model files


def _parse_distribution(obj, kind: str, n: int, type_index=None) -> RateDistribution:
    if not isinstance(obj, dict) or "entries" not in obj:
        raise ModelError(f"{kind}: expected an object with an 'entries' list")
    entries: dict = {}
    for item in obj["entries"]:
        try:
            j = tuple(int(x) for x in item["j"])
            rate = float(item["rate"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"{kind}: malformed entry {item!r}") from exc
        if len(j) != n:
            raise DimensionMismatch(f"{kind}: index {j} has length {len(j)}, expected {n}")
        if rate < 0:
            raise NegativeRate(f"{kind}: negative rate {rate} at index {j}")
        if rate == 0:
            continue
        entries[j] = entries.get(j, 0.0) + rate
    if "exit_rate" in obj and obj["exit_rate"] is not None:
        diagonal = -float(obj["exit_rate"])
    else:
        diagonal = -float(sum(entries.values()))
    return RateDistribution(kind, entries, diagonal, type_index)


def model_from_dict(d: dict) -> ModelSpec:
    try:
        n = int(d["n"])
        imm = d["immigration"]
        res = d.get("resurrection", SAME_AS_IMMIGRATION)
        branch = d["branch"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model document: {exc}") from exc
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    if not isinstance(branch, list) or len(branch) != n:
        raise DimensionMismatch(f"expected {n} branch distributions")
    immigration = _parse_distribution(imm, "immigration", n)
    if res == SAME_AS_IMMIGRATION:
        resurrection: Resurrection = SAME_AS_IMMIGRATION
    elif res in (ABSORBING, None):
        resurrection = None
    else:
        resurrection = _parse_distribution(res, "resurrection", n)
    dists = tuple(_parse_distribution(b, "branch", n, k) for k, b in enumerate(branch))
    return ModelSpec(n, immigration, resurrection, dists)


def _dist_to_dict(dist: RateDistribution) -> dict:
    return {
        "entries": [{"j": list(j), "rate": r} for j, r in sorted(dist.entries.items())],
        "exit_rate": dist.exit_rate,
    }


def model_to_dict(spec: ModelSpec) -> dict:
    if spec.absorbing:
        res = ABSORBING
    elif spec.same_as_immigration:
        res = SAME_AS_IMMIGRATION
    else:
        res = _dist_to_dict(spec.resurrection)
    return {
        "n": spec.n,
        "immigration": _dist_to_dict(spec.immigration),
        "resurrection": res,
        "branch": [_dist_to_dict(b) for b in spec.branch],
    }


def load_model(path) -> ModelSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_model(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(spec), indent=2) + "\n")


def make_model(n: int, immigration: Mapping, branch: Sequence[Mapping],
               resurrection=SAME_AS_IMMIGRATION, *, immigration_exit=None,
               branch_exit=None) -> ValidatedModel:
    """Build and validate a conservative-by-default model from plain dicts.

    ``immigration`` and each ``branch[k]`` map offspring tuples to rates; the
    diagonal entries are filled in from the row sums unless given.
    """
    def dist(rates, kind, k=None, exit_rate=None):
        entries = {as_index(j, n): float(r) for j, r in rates.items() if r != 0}
        diag = -(sum(entries.values()) if exit_rate is None else exit_rate)
        return RateDistribution(kind, entries, diag, k)

    imm = dist(immigration, "immigration", exit_rate=immigration_exit)
    if isinstance(resurrection, Mapping):
        res: Resurrection = dist(resurrection, "resurrection")
    elif resurrection in (None, ABSORBING):
        res = None
    else:
        res = resurrection
    exits = branch_exit or [None] * n
    br = tuple(dist(b, "branch", k, exits[k]) for k, b in enumerate(branch))
    return validate(ModelSpec(n, imm, res, br))


__all__ = [
    "ABSORBING",
    "SAME_AS_IMMIGRATION",
    "ModelSpec",
    "Poly",
    "RateDistribution",
    "ValidatedModel",
    "as_index",
    "eval_gf",
    "jacobian",
    "load_model",
    "make_model",
    "model_from_dict",
    "model_to_dict",
    "perron_eigenvalue",
    "perron_root",
    "perron_vector",
    "save_model",
    "unit",
    "validate",
]
