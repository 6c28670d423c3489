"""Command-line interface.

Every command prints one JSON document ``{command, model, result,
warnings}`` on standard output; ``model`` is the SHA-256 of the canonical
model document.  Exit codes: 0 success, 1 malformed input, 2 precondition
violated, 3 a ``check`` tolerance failed, 4 numerical failure.
Set ``OUTPUT_PLAIN=1`` for compact single-line JSON.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures as fx
from .classify import EquilibriumCurve, classify, equilibrium_pmf
from .curve import CRITICAL_TOL, curve_csv_rows, minimal_root, solve_curve
from .decay import (
    decay_parameter,
    invariant_measure,
    invariant_measure_convergence,
    qsd_verdict,
    row_identity_residual,
)
from .errors import ModelError, NTBIError, PreconditionError
from .extinction import (
    curve_pivot_invariance_check,
    extinction_probability,
    integral_J,
    mean_extinction_time,
)
from .model import ABSORBING, ValidatedModel, load_model, model_to_dict, perron_root, validate
from .oracle import (
    build_truncated,
    decay_slope,
    distribution_from,
    stationary_adaptive,
)
from .simulate import (
    SimConfig,
    branching_property_check,
    estimate_equilibrium,
    estimate_extinction,
    estimate_mean_extinction_time,
    estimate_transition,
    record_paths,
)

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_CHECK, EXIT_NUMERIC = 0, 1, 2, 3, 4
ANALYTIC_TOL = 1e-6


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return x
    return x


def _dump(doc) -> str:
    doc = _jsonable(doc)
    if os.environ.get("OUTPUT_PLAIN"):
        return json.dumps(doc, separators=(",", ":"), allow_nan=False)
    return json.dumps(doc, indent=2, allow_nan=False)


def _digest(model: ValidatedModel) -> str:
    canon = json.dumps(model_to_dict(model.spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _index(text: str, n: int) -> tuple:
    try:
        idx = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ModelError(f"bad state {text!r}; expected comma-separated integers") from exc
    if len(idx) != n or min(idx) < 0:
        raise ModelError(f"state {text!r} must have {n} nonnegative coordinates")
    return idx


def _pair(text: str) -> tuple:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise ModelError(f"bad window {text!r}; expected 'a,b'") from exc
    return a, b


def _load(args) -> ValidatedModel:
    if args.fixture:
        try:
            return fx.fixture(args.fixture)
        except KeyError as exc:
            raise ModelError(str(exc)) from exc
    if not args.model:
        raise ModelError("give --model PATH or --fixture NAME")
    path = Path(args.model)
    if not path.exists():
        raise ModelError(f"{path}: no such file")
    return validate(load_model(path))


def _absorbing(model: ValidatedModel, warnings: list) -> ValidatedModel:
    if model.absorbing:
        return model
    warnings.append("resurrection ignored: computed on the absorptive companion model")
    return model.companion(ABSORBING)


def _write_csv(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)  # default dialect: RFC 4180 (CRLF, minimal quoting)
        for row in rows:
            w.writerow(row)


def _sim_config(args, n: int) -> SimConfig:
    return SimConfig(initial=_index(args.from_, n), t_max=args.t_max, replicates=args.replicates,
                     master_seed=args.seed, max_events=args.max_events)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, model, warnings):
    return {
        "n": model.n,
        "conservative": model.conservative,
        "meanMatrix": model.mean_matrix,
        "perronAtOne": model.perron_at_one,
        "positivelyRegular": model.positively_regular,
        "nonsingular": model.nonsingular,
        "resurrection": model_to_dict(model.spec)["resurrection"]
        if isinstance(model_to_dict(model.spec)["resurrection"], str) else "explicit",
    }


def cmd_classify(args, model, warnings):
    rep = classify(model).as_dict()
    for key in ("J", "ergodicity_integral"):
        ev = rep["evidence"].get(key)
        if isinstance(ev, dict) and ev["status"] == "Indeterminate":
            warnings.append(f"{key} indeterminate: {ev['diagnostics']}")
    return rep


def cmd_extinction(args, model, warnings):
    m = _absorbing(model, warnings)
    root = minimal_root(m)
    out = {"q": root.q, "root_residual": root.residual}
    if args.curve_csv:
        curve = solve_curve(m, None if args.pivot is None else args.pivot - 1, args.grid)
        _write_csv(args.curve_csv, curve_csv_rows(m, curve))
        out["curve"] = {"csv": args.curve_csv, "pivot": curve.pivot + 1, "endpointError": curve.endpoint_error}
    if args.from_ is None:
        return out
    i = _index(args.from_, m.n)
    a = extinction_probability(m, i)
    if m.perron_at_one > CRITICAL_TOL:
        method = "curve integral ratio over [0, q_1] (supercritical)"
    else:
        J = integral_J(m)
        out["J"] = J.as_dict()
        method = ("almost sure: rho(1) <= 0 and J infinite" if J.infinite
                  else "curve integral ratio over [0, 1] (J finite)")
    out.update({"from": list(i), "a_i0": a, "tolerance": ANALYTIC_TOL, "method": method})
    return out


def cmd_mean_time(args, model, warnings):
    m = _absorbing(model, warnings)
    i = _index(args.from_, m.n)
    E = mean_extinction_time(m, i)
    return {"from": list(i), "E_i": E if math.isfinite(E) else None,
            "status": "Finite" if math.isfinite(E) else "Infinite", "tolerance": ANALYTIC_TOL}


def cmd_decay(args, model, warnings):
    dec = decay_parameter(model)
    out = {"lambdaZ": dec.lambda_z, "q": dec.q, "tolerance": 1e-10,
           "rowIdentityResidual": row_identity_residual(model)}
    if args.vector:
        j = _index(args.vector, model.n)
        out["invariantVector"] = {"j": list(j), "value": float(np.prod(dec.q ** np.array(j)))}
    if args.lam is not None:
        meas = invariant_measure(model, args.lam, args.max_degree)
        conv = invariant_measure_convergence(model, args.lam)
        if meas.row_residual > 1e-8:
            warnings.append(f"invariant measure row residual {meas.row_residual:.3g} > 1e-8")
        out["invariantMeasure"] = {
            "lambda": args.lam, "method": meas.method, "rowResidual": meas.row_residual,
            "convergence": conv.as_dict(),
            "coefficients": [{"j": list(k), "m": v} for k, v in sorted(meas.coefficients.items())],
        }
    out["qsd"] = qsd_verdict(model, args.max_degree).as_dict()
    return out


def cmd_equilibrium(args, model, warnings):
    eq = EquilibriumCurve(model)
    pmf = equilibrium_pmf(model, args.max_degree)
    out = {"pi0": eq.pi0, "method": pmf.method, "residual": pmf.residual, "tolerance": 1e-9,
           "pmf": [{"j": list(k), "p": v} for k, v in sorted(pmf.probabilities.items())]}
    if args.s is not None:
        out["curve"] = {"s": args.s, "point": eq.point(args.s), "pi": eq(args.s)}
    return out


def cmd_simulate(args, model, warnings):
    cfg = _sim_config(args, model.n)
    out: dict = {"config": {"from": list(cfg.initial), "t_max": cfg.t_max, "replicates": cfg.replicates,
                            "seed": cfg.master_seed, "max_events": cfg.max_events}}
    if args.paths_csv:
        header = ["replicate", "time", *[f"x{k + 1}" for k in range(model.n)]]
        _write_csv(args.paths_csv, [header, *record_paths(model, cfg)])
        out["paths_csv"] = args.paths_csv
    est = args.estimate
    if est == "extinction":
        e = estimate_extinction(_absorbing(model, warnings), cfg)
    elif est == "mean-time":
        e = estimate_mean_extinction_time(_absorbing(model, warnings), cfg)
    elif est == "transition":
        if args.to is None:
            raise ModelError("--estimate transition needs --to")
        e = estimate_transition(model, cfg.initial, _index(args.to, model.n), cfg.t_max, cfg)
    elif est == "equilibrium":
        freqs = estimate_equilibrium(model, cfg, args.burn_in)
        out["equilibrium"] = [{"j": list(k), "frequency": v} for k, v in sorted(freqs.items())]
        return out
    else:
        return out
    if e.censored:
        warnings.append(f"{e.censored} replicates censored (horizon or event cap)")
    out[est] = e.as_dict()
    return out


def cmd_oracle(args, model, warnings):
    gen = build_truncated(model, args.cap, args.kind)
    out: dict = {"cap": args.cap, "kind": args.kind, "states": gen.size}
    if args.from_ is not None:
        i = _index(args.from_, model.n)
        if args.t is not None:
            p = distribution_from(gen, i, args.t)
            leak = float(p[gen.leak])
            if leak > 1e-6:
                warnings.append(f"leak mass {leak:.3g} at t={args.t}")
            out["transition"] = {"from": list(i), "t": args.t, "leak": leak,
                                 "probabilities": [{"j": list(s), "p": float(v), "error_bound": leak}
                                                   for s, v in zip(gen.states, p) if v > 1e-15]}
        if args.window is not None:
            ds = decay_slope(gen, i, _pair(args.window))
            out["decay_slope"] = {"from": list(i), "window": list(_pair(args.window)),
                                  "estimate": ds.estimate, "leak": ds.leak}
    if args.stationary:
        st = stationary_adaptive(model, args.cap)
        out["stationary"] = {"leak_flux": st.leak_flux,
                             "probabilities": [{"j": list(s), "p": float(v), "error_bound": st.leak_flux}
                                               for s, v in zip(st.states, st.probabilities) if v > 1e-15]}
    return out


def cmd_fixtures(args, model, warnings):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    from .model import save_model

    for name in fx.PRIMARY:
        path = out / f"{name}.json"
        save_model(fx.fixture(name).spec, path)
        written.append(str(path))
    return {"written": written}


# ---------------------------------------------------------------------------
# cross-validation suite

# per-fixture oracle settings: (cap, decay window, starting state)
_ORACLE = {
    "M1": (60, (10.0, 20.0)),
    "M2": (150, (10.0, 20.0)),
    "M3": (30, (8.0, 16.0)),
    "M4": (150, (10.0, 20.0)),
}


def _binomial_se(est, reference: float) -> float:
    """Larger of the empirical SE and the SE implied by the reference value
    (the empirical one is 0 whenever no replicate, or every one, hits)."""
    null = math.sqrt(max(reference * (1 - reference), 0.0) / max(est.replicates_used, 1))
    return max(est.standard_error, null)


def _check_item(name, value, reference, tolerance, **extra):
    ok = value is not None and reference is not None and abs(value - reference) <= tolerance
    return {"name": name, "value": value, "reference": reference, "tolerance": tolerance,
            "passed": bool(ok), **extra}


def run_check(model: ValidatedModel, name: str | None, replicates: int, seed: int, warnings: list) -> dict:
    """Analytic results against the oracle and the simulator."""
    checks = []
    n = model.n
    e1 = tuple(int(k == 0) for k in range(n))
    absm = model.companion(ABSORBING)
    cfg = SimConfig(initial=e1, t_max=50.0, replicates=replicates, master_seed=seed, max_events=2_000)

    root = minimal_root(absm)
    checks.append(_check_item("root residual", root.residual, 0.0, 1e-10))
    checks.append(_check_item("perron root at q is <= 0", max(perron_root(absm, root.q), 0.0), 0.0, 1e-10))
    if n >= 2:
        try:
            rep = curve_pivot_invariance_check(absm)
            checks.append(_check_item("pivot invariance", rep.discrepancy, 0.0, 1e-6))
        except PreconditionError as exc:
            warnings.append(f"pivot invariance skipped: {exc}")

    # extinction from e_1
    a = extinction_probability(absm, e1)
    cap, window = _ORACLE.get(name, (60 if n == 1 else 24, (5.0, 10.0)))
    critical = abs(absm.perron_at_one) <= CRITICAL_TOL
    if not critical:
        gen = build_truncated(absm, min(cap, 120) if n == 1 else 40)
        p = distribution_from(gen, e1, 50.0)
        checks.append(_check_item("extinction: analytic vs oracle p_e1,0(50)", a, float(p[gen.state_index((0,) * n)]),
                                  5e-3, leak=float(p[gen.leak])))
    est = estimate_extinction(absm, cfg)
    se = _binomial_se(est, a)
    checks.append(_check_item("extinction: analytic vs simulator", est.value, a, 3 * se,
                              standard_error=se, censored=est.censored))

    # mean extinction time when extinction is certain
    if a == 1.0:
        E = mean_extinction_time(absm, e1)
        if math.isfinite(E):
            est = estimate_mean_extinction_time(absm, cfg.with_(t_max=200.0, max_events=10_000_000))
            checks.append(_check_item("mean extinction time: analytic vs simulator", est.value, E,
                                      3 * est.standard_error, standard_error=est.standard_error,
                                      censored=est.censored))

    if model.spec.same_as_immigration:
        rep = classify(model)
        if rep.ergodicity == "Ergodic":
            st = stationary_adaptive(model, cap if n == 1 else 24)
            if n == 1:
                pmf = equilibrium_pmf(model, st.states[-1][0]).array()
                diff = float(np.max(np.abs(pmf[: len(st.probabilities)] - st.probabilities)))
                checks.append(_check_item("equilibrium: recurrence vs oracle stationary", diff, 0.0, 1e-6))
            else:
                eq = EquilibriumCurve(model)
                u = eq.point(0.5)
                gf = float(sum(p * np.prod(u ** np.array(s)) for s, p in zip(st.states, st.probabilities)))
                checks.append(_check_item("equilibrium: curve value vs oracle at s=0.5", eq(0.5), gf, 1e-6))
        dec = decay_parameter(model)
        checks.append(_check_item("invariant vector row identity", row_identity_residual(model), 0.0, 1e-12))
        gen = build_truncated(model, cap if n == 1 else _ORACLE.get(name, (24,))[0])
        # with lambda_Z = 0 the log-slope only settles when p_ii(t) has a
        # positive limit; null-recurrent or transient decay is polynomial
        if dec.lambda_z > 0 or rep.ergodicity == "Ergodic":
            ds = decay_slope(gen, e1, window)
            tol = (0.10 if n == 1 else 0.15) * dec.lambda_z if dec.lambda_z > 0 else 0.02
            checks.append(_check_item("decay parameter vs oracle log-slope", ds.estimate, dec.lambda_z, tol))
        # branching factorization at a two-particle state
        i2 = (2,) if n == 1 else (1, 1) + (0,) * (n - 2)
        br = branching_property_check(model, i2, 0.5 if n > 1 else 1.0,
                                      cfg.with_(replicates=10 * replicates, max_events=10_000_000))
        checks.append(_check_item("branching property (log residual)", br.log_residual, 0.0,
                                  3 * br.standard_error, standard_error=br.standard_error))
        # simulator vs oracle transition probabilities
        times = (0.5, 2.0) if model.perron_at_one > CRITICAL_TOL else (0.5, 2.0, 10.0)
        gen = build_truncated(model, cap if n == 1 else 30)
        for t in times:
            p = distribution_from(gen, e1, t)
            leak = float(p[gen.leak])
            for target in ((0,) * n, e1):
                est = estimate_transition(model, e1, target, t, cfg.with_(max_events=10_000_000))
                ref = float(p[gen.state_index(target)])
                se = _binomial_se(est, ref)
                checks.append(_check_item(f"p_{e1}->{target}({t}): simulator vs oracle", est.value, ref,
                                          3 * se + leak, standard_error=se, leak=leak))
    return {"fixture": name, "replicates": replicates, "seed": seed, "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def cmd_check(args, model, warnings):
    res = run_check(model, (args.fixture or "").upper() or None, args.replicates, args.seed, warnings)
    if not res["passed"]:
        raise CheckFailed(res)
    return res


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntbip", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, needs_model=True):
        sp = sub.add_parser(name, help=help_)
        if needs_model:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--model", help="model JSON file")
            g.add_argument("--fixture", help=f"bundled model ({', '.join(fx.NAMES)})")
        sp.set_defaults(func=func, needs_model=needs_model)
        return sp

    add("validate", cmd_validate, "validate a model file")
    add("classify", cmd_classify, "recurrence / ergodicity report")
    sp = add("extinction", cmd_extinction, "minimal root and extinction probability")
    sp.add_argument("--from", dest="from_", help="initial state, e.g. 1 or 1,0")
    sp.add_argument("--curve-csv", help="write the characteristic curve as CSV")
    sp.add_argument("--pivot", type=int, help="pivot type (1-based) for --curve-csv")
    sp.add_argument("--grid", type=int, default=201, help="curve grid size")
    sp = add("mean-time", cmd_mean_time, "mean extinction time")
    sp.add_argument("--from", dest="from_", required=True)
    sp = add("decay", cmd_decay, "decay parameter, invariant measures, QSD")
    sp.add_argument("--lambda", dest="lam", type=float, help="also compute a lambda-invariant measure")
    sp.add_argument("--vector", help="evaluate the invariant vector at this state")
    sp.add_argument("--max-degree", type=int, default=None)
    sp = add("equilibrium", cmd_equilibrium, "equilibrium distribution")
    sp.add_argument("--max-degree", type=int, default=64)
    sp.add_argument("--s", type=float, help="also evaluate the generating function on the curve at s")
    sp = add("simulate", cmd_simulate, "Monte Carlo estimates")
    sp.add_argument("--from", dest="from_", required=True)
    sp.add_argument("--t-max", type=float, default=50.0)
    sp.add_argument("--replicates", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--max-events", type=int, default=10_000_000)
    sp.add_argument("--estimate", choices=["extinction", "mean-time", "transition", "equilibrium"])
    sp.add_argument("--to", help="target state for --estimate transition (time = --t-max)")
    sp.add_argument("--burn-in", type=float, default=0.0)
    sp.add_argument("--paths-csv", help="dump event logs (replicate, time, state...)")
    sp = add("oracle", cmd_oracle, "truncated-generator reference values")
    sp.add_argument("--cap", type=int, default=60)
    sp.add_argument("--kind", choices=["total", "box"], default="total")
    sp.add_argument("--t", type=float)
    sp.add_argument("--from", dest="from_")
    sp.add_argument("--window", help="decay-slope window a,b")
    sp.add_argument("--stationary", action="store_true")
    sp = add("fixtures", cmd_fixtures, "write bundled model files", needs_model=False)
    sp.add_argument("--out", default=".")
    sp = add("check", cmd_check, "cross-validate analytic, simulator and oracle values")
    sp.add_argument("--replicates", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=1)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    warnings: list = []
    digest = None
    try:
        model = _load(args) if args.needs_model else None
        digest = _digest(model) if model is not None else None
        result = args.func(args, model, warnings)
    except CheckFailed as exc:
        print(_dump({"command": args.command, "model": digest, "result": exc.args[0], "warnings": warnings}))
        return EXIT_CHECK
    except ModelError as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT
    except PreconditionError as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_PRECONDITION
    except NTBIError as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    print(_dump({"command": args.command, "model": digest, "result": result, "warnings": warnings}))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
