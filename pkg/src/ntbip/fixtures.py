"""Bundled reference models with closed-form answers.

M1  n=1, B(u) = (1-u)(2-u), A(u) = u - 1.  Subcritical; q = 1; the
    absorptive version has J = +inf and E_1[tau_0] = 1, E_2[tau_0] = 3/2;
    with h = a the equilibrium is geometric, pi_j = 2^-(j+1).
M2  n=1, B(u) = (1-u)(1-2u), A(u) = u - 1.  Supercritical; q = 1/2;
    a_10 = 1 - 2/pi, decay parameter 1/2.
M3  n=2 symmetric, B_1 = 0.8 - 2u_1 + 1.2u_2^2 (and 1 <-> 2),
    A = (u_1 + u_2)/2 - 1.  q = (2/3, 2/3), decay parameter 1/3.
M4  n=1 critical, B(u) = (1-u)^2, A(u) = 3(u - 1).  J = 1/2,
    a_10 = 1/3, a_20 = 1/6.
A2  n=2 asymmetric supercritical (used for pivot invariance).
S2  n=2 asymmetric subcritical (ergodic with h = a).
"""

from __future__ import annotations

from .model import ABSORBING, SAME_AS_IMMIGRATION, ValidatedModel, make_model

_DEFS = {
    "M1": dict(n=1, immigration={(1,): 1.0}, branch=[{(0,): 2.0, (2,): 1.0}]),
    "M2": dict(n=1, immigration={(1,): 1.0}, branch=[{(0,): 1.0, (2,): 2.0}]),
    "M3": dict(
        n=2,
        immigration={(1, 0): 0.5, (0, 1): 0.5},
        branch=[{(0, 0): 0.8, (0, 2): 1.2}, {(0, 0): 0.8, (2, 0): 1.2}],
    ),
    "M4": dict(n=1, immigration={(1,): 3.0}, branch=[{(0,): 1.0, (2,): 1.0}]),
    "A2": dict(
        n=2,
        immigration={(1, 0): 1.0, (0, 2): 0.5},
        branch=[
            {(0, 0): 1.0, (1, 1): 1.0, (0, 2): 1.0},
            {(0, 0): 0.5, (2, 0): 1.0, (1, 1): 0.5},
        ],
    ),
    "S2": dict(
        n=2,
        immigration={(1, 0): 1.0, (0, 1): 1.0},
        branch=[{(0, 0): 2.0, (0, 2): 1.0}, {(0, 0): 1.0, (2, 0): 1.0}],
    ),
}

NAMES = tuple(_DEFS)
PRIMARY = ("M1", "M2", "M3", "M4")


def fixture(name: str, resurrection=SAME_AS_IMMIGRATION) -> ValidatedModel:
    """Return a bundled model; ``resurrection`` may be ``"absorbing"``."""
    try:
        d = _DEFS[name.upper()]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}") from None
    res = None if resurrection in (None, ABSORBING) else resurrection
    return make_model(d["n"], d["immigration"], d["branch"], res)


def absorbing(name: str) -> ValidatedModel:
    return fixture(name, ABSORBING)
