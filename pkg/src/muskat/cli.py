"""Command-line entry point: ``muskat {simulate,verify,continuation,compare,norms}``.

Exit status is 0 when every attached verdict passes, 1 when one fails and 2
on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import identities
from .errors import ConfigError, MuskatError, RangeError
from .evolution import AdaptiveDt, FixedDt, SolverConfig, config_to_json, epsilon_continuation, run
from .grid import (
    CkGammaGamma,
    CkGammaHolder,
    DdotC,
    GridFunction,
    TildeHkGamma,
    TildeL2,
    TildeL2Mu,
    local_norm,
    parse_profile,
    sample_profile,
)
from .kernels import RhsForm, geometry_from_json
from .manifest import build_manifest
from .monitors import RunReport, Verdict, apriori_rate_check, blowup_integral, extrema_check, stability_compare

log = logging.getLogger("muskat")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MIN_CONTINUATION_SLOPE = 0.4

_REQUIRED = ("geometry", "L", "n", "t_end", "profile")
_OPTIONAL = ("gamma", "dt", "epsilons", "y_max", "form", "output_dir", "cadence", "seed")


def _number(doc, key, kind=float, positive=True):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    if kind is int and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", key)
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value!r}", key)
    return kind(value)


def config_from_dict(doc: dict) -> SolverConfig:
    """Validate a config document and fill in defaults (gamma 0.5, primary form, Y_max = L)."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    unknown = sorted(set(doc) - set(_REQUIRED) - set(_OPTIONAL))
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown}", unknown[0])
    for key in _REQUIRED:
        if key not in doc:
            raise ConfigError("required field missing", key)
    try:
        geometry = geometry_from_json(doc["geometry"])
    except ValueError as exc:
        raise ConfigError(str(exc), "geometry") from exc
    L = _number(doc, "L")
    n = _number(doc, "n", int)
    t_end = _number(doc, "t_end")
    gamma = _number(doc, "gamma") if "gamma" in doc else 0.5
    if not 0.0 < gamma <= 0.5:
        raise ConfigError(
            f"must lie in (0, 1/2], got {gamma}; any larger exponent reduces to 1/2", "gamma"
        )
    dt_doc = doc.get("dt", {"adaptive": 0.5})
    if isinstance(dt_doc, dict) and set(dt_doc) == {"fixed"}:
        dt = FixedDt(_number(dt_doc, "fixed"))
    elif isinstance(dt_doc, dict) and set(dt_doc) == {"adaptive"}:
        dt = AdaptiveDt(_number(dt_doc, "adaptive"))
    else:
        raise ConfigError('expected {"fixed": v} or {"adaptive": safety}', "dt")
    eps = doc.get("epsilons", [0.0])
    if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) for e in eps):
        raise ConfigError("expected a non-empty list of numbers", "epsilons")
    y_max = _number(doc, "y_max") if doc.get("y_max") is not None else None
    try:
        form = RhsForm(doc.get("form", "primary"))
    except ValueError as exc:
        raise ConfigError("expected 'primary' or 'alternate'", "form") from exc
    cadence = _number(doc, "cadence") if doc.get("cadence") is not None else None
    try:
        parse_profile(doc["profile"])
        cfg = SolverConfig(
            geometry=geometry, L=L, n=n, t_end=t_end, profile=doc["profile"], gamma=gamma, dt=dt,
            epsilons=tuple(float(e) for e in eps), y_max=y_max, form=form, cadence=cadence,
            output_dir=doc.get("output_dir"), seed=int(doc.get("seed", identities.DEFAULT_SEED)),
        )
        sample_profile(cfg.profile, cfg.L, cfg.n, geometry=geometry)
    except RangeError as exc:
        raise ConfigError(f"range violation: {exc}", "profile") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(path) -> SolverConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _finite_or_none(v):
    return v if v is None or math.isfinite(v) else None


def _exit_for(verdicts) -> int:
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


def _output_dir(args, cfg: SolverConfig) -> Path:
    out = args.output_dir or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --output-dir or set output_dir", "output_dir")
    return Path(out)


def _monitor(report: RunReport) -> list[Verdict]:
    bi = blowup_integral(report)
    blowup = Verdict("blowup_integral", math.isfinite(bi), fitted_constants={"integral": bi})
    return [extrema_check(report), apriori_rate_check(report), blowup]


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    out = _output_dir(args, cfg)
    verdicts = []
    for eps in cfg.epsilons:
        target = out if len(cfg.epsilons) == 1 else out / f"eps_{eps:g}"
        log.info("simulating eps=%g into %s", eps, target)
        report = run(cfg, eps=eps)
        report.to_dir(target, seed=cfg.seed)
        member = _monitor(report)
        _write_json(target / "verdicts.json", [v.to_json() for v in member])
        if report.abort:
            log.error("run aborted: %s", report.abort["message"])
            member.append(Verdict("completed", False, notes=[report.abort["message"]]))
        verdicts += member
    return _exit_for(verdicts)


def identity_suite(seed: int, draws: int) -> tuple[dict, list[Verdict], identities.ThetaTable]:
    rng = np.random.default_rng(seed)
    doc = {"seed": seed, "draws": draws, "cancellation": []}
    verdicts = []
    for which in identities.IDENTITIES:
        sweep = identities.cancellation_sweep(which, draws=draws, seed=seed)
        doc["cancellation"].append(sweep)
        verdicts.append(Verdict(f"cancellation_{which}_analytic", sweep["max_analytic"] < 1e-8, 1e-8,
                                sweep["max_analytic"]))
        verdicts.append(Verdict(f"cancellation_{which}_fd", sweep["max_finite_difference"] < 1e-5, 1e-5,
                                sweep["max_finite_difference"]))

    amps = rng.normal(scale=0.3, size=(3, 2))
    f = lambda z: 1.0 + sum(a * np.sin((k + 1) * z) + b * np.cos((k + 1) * z) for k, (a, b) in enumerate(amps))  # noqa: E731
    df = lambda z: sum((k + 1) * (a * np.cos((k + 1) * z) - b * np.sin((k + 1) * z)) for k, (a, b) in enumerate(amps))  # noqa: E731
    arct = identities.check_arctan_primitive(f, df, rng.uniform(-math.pi, math.pi, 100), rng.uniform(0.05, 3.0, 100))
    doc["arctan_primitive"] = arct
    verdicts.append(Verdict("arctan_primitive", arct < 1e-6, 1e-6, arct))

    pts = np.column_stack([rng.uniform(0.05, 3.0, 100), rng.uniform(-4.0, 4.0, 100)])
    table = identities.check_theta_sum(math.pi, pts)
    err = float(table.errors[:, -1].max())
    lo, hi = float(np.nanmin(table.exponents)), float(np.nanmax(table.exponents))
    doc["theta_sum"] = {"l": math.pi, "N": table.N.tolist(), "max_error_at_largest_N": err,
                        "exponent_range": [lo, hi]}
    verdicts.append(Verdict("theta_sum", err < 1e-4 and 0.9 <= lo and hi <= 1.1, 1e-4, err,
                            fitted_constants={"exponent_min": lo, "exponent_max": hi}))

    worst = max(p.worst for p in identities.random_nonnegative_profiles(100, seed=seed)
                for p in [identities.check_positivity_bounds(p)])
    doc["positivity_worst_ratio"] = worst
    verdicts.append(Verdict("positivity_bounds", worst <= 1 + 1e-6, 1 + 1e-6, worst))

    bump = sample_profile({"bump": {"A": 0.25, "w": 6.0, "base": 0.5}}, 8.0, 1024)
    disc = identities.check_form_equivalence(bump)
    doc["form_equivalence"] = disc
    verdicts.append(Verdict("form_equivalence", disc < 1e-5, 1e-5, disc))
    doc["verdicts"] = [v.to_json() for v in verdicts]
    return doc, verdicts, table


def cmd_verify(args) -> int:
    out = Path(args.output_dir)
    t0 = time.perf_counter()
    doc, verdicts, table = identity_suite(args.seed, args.draws)
    _write_json(out / "identities.json", doc)
    with open(out / "theta_convergence.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(table.to_csv_rows())
    manifest = build_manifest({"suite": args.suite, "draws": args.draws}, seed=args.seed,
                              timings={"verify": time.perf_counter() - t0})
    _write_json(out / "manifest.json", manifest)
    for v in verdicts:
        log.info("%-28s %s", v.check, "pass" if v.passed else "FAIL")
    return _exit_for(verdicts)


def cmd_continuation(args) -> int:
    cfg = parse_config(args.config)
    out = _output_dir(args, cfg)
    t0 = time.perf_counter()
    rep = epsilon_continuation(cfg)
    for eps, member in zip(rep.epsilons, rep.reports):
        member.to_dir(out / f"eps_{eps:g}", seed=cfg.seed)
    if rep.extrapolated is not None:
        rep.extrapolated.to_csv(out / "extrapolated.csv")
    slope_ok = rep.slope is not None and rep.slope >= MIN_CONTINUATION_SLOPE
    verdict = Verdict("continuation_rate", slope_ok and not rep.partial, MIN_CONTINUATION_SLOPE,
                      fitted_constants={"slope": rep.slope, "assumed_rate": rep.rate},
                      notes=["partial: a member run aborted"] if rep.partial else [])
    _write_json(out / "continuation.json", rep.to_json())
    _write_json(out / "verdicts.json", [verdict.to_json()])
    _write_json(out / "manifest.json", build_manifest(config_to_json(cfg), seed=cfg.seed,
                                                      timings={"continuation": time.perf_counter() - t0}))
    return _exit_for([verdict])


def cmd_compare(args) -> int:
    a = RunReport.from_dir(args.run_a)
    b = RunReport.from_dir(args.run_b)
    try:
        verdict = stability_compare(a, b, args.mu)
    except ValueError as exc:
        raise ConfigError(str(exc), "runs") from exc
    doc = verdict.to_json()
    doc["worst_violation"] = _finite_or_none(doc["worst_violation"])
    text = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return _exit_for([verdict])


def cmd_norms(args) -> int:
    g = GridFunction.from_csv(args.csv)
    gamma = args.gamma
    kinds = [
        ("tilde_l2", TildeL2()),
        (f"ddot_c_{1 - gamma:g}", DdotC(1.0 - gamma)),
        (f"tilde_h3_gamma_{gamma:g}", TildeHkGamma(3, gamma)),
        (f"c2_gamma_{gamma:g}", CkGammaHolder(2, gamma)),
        (f"c2_gamma_gamma_{gamma:g}", CkGammaGamma(2, gamma)),
        (f"tilde_l2_mu_{args.mu:g}", TildeL2Mu(args.mu)),
    ]
    w = csv.writer(sys.stdout)
    w.writerow(["norm", "value"])
    for name, kind in kinds:
        w.writerow([name, f"{local_norm(g, kind):.17g}"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="muskat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the solver and attach the monitors")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the identity suite")
    s.add_argument("--suite", choices=["identities"], default="identities")
    s.add_argument("--seed", type=int, default=identities.DEFAULT_SEED)
    s.add_argument("--draws", type=int, default=1000)
    s.add_argument("--output-dir", default=".")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("continuation", help="epsilon continuation with rate check")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_continuation)

    s = sub.add_parser("compare", help="two-run stability certificate")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("norms", help="norm table for a sampled function (CSV with header x,f)")
    s.add_argument("--csv", required=True)
    s.add_argument("--gamma", type=float, default=0.5)
    s.add_argument("--mu", type=float, default=0.0)
    s.set_defaults(func=cmd_norms)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"muskat {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MuskatError as exc:
        print(f"muskat {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
