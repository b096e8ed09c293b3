"""Command-line entry point: ``ssdcm {fit,experiment,airline,synth,validate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 fit or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .choice_data import SynthConfig, load_dataset, synth_generate, validate, write_dataset
from .errors import ChoiceDataError, ConfigError, FitError
from .experiments import (
    ALGORITHMS,
    ExperimentPlan,
    airline_accuracy,
    airline_label,
    load_itineraries,
    run_cv,
    synth_itineraries,
    value_of_time,
    write_itineraries,
)
from .mnl import AIRLINE_SGD, HOTEL_SGD, SgdConfig
from .ssl import XclConfig, fit_baseline, fit_cl, fit_em, fit_xcl1, fit_xcl2

log = logging.getLogger("ssdcm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3
PRESETS = {"hotel": HOTEL_SGD, "airline": AIRLINE_SGD}
P_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return obj


def _merged(args, config: dict, keys) -> dict:
    """Config values overridden by every flag the user actually passed."""
    out = {k: config[k] for k in keys if k in config}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _require_file(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _sgd_from(opts: dict, seed: int) -> SgdConfig:
    base = PRESETS[opts.get("preset", "hotel")]
    sgd = opts.get("sgd", {})
    fields = dict(
        step_size=opts.get("step_size", sgd.get("step_size", base.step_size)),
        sampling_rate=opts.get("sampling_rate", sgd.get("sampling_rate", base.sampling_rate)),
        max_iterations=opts.get("max_iterations", sgd.get("max_iterations", base.max_iterations)),
        tolerance=opts.get("tolerance", sgd.get("tolerance", base.tolerance)),
        min_observations=sgd.get("min_observations", base.min_observations),
    )
    return SgdConfig(seed=seed, **fields)


def _xcl_from(opts: dict, seed: int) -> XclConfig:
    xcl = dict(opts.get("xcl", {}))
    for k in ("k_max", "m"):
        if opts.get(k) is not None:
            xcl[k] = opts[k]
    xcl["seed"] = seed
    return XclConfig(**xcl)


def _add_sgd_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), help="SGD hyperparameter preset (default hotel)")
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--sampling-rate", dest="sampling_rate", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--tolerance", type=float)


SGD_KEYS = ("preset", "step_size", "sampling_rate", "max_iterations", "tolerance", "sgd")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssdcm", description="Semi-supervised discrete choice model calibration.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one algorithm and write a FitReport JSON")
    p.add_argument("--config")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--data")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--k", type=int, help="number of clusters for cl")
    p.add_argument("--beta", type=float, help="unlabeled sampling fraction for em")
    p.add_argument("--em-mode", dest="em_mode", choices=("soft", "hard"))
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--m", type=int, help="labeled-count floor for xcl1/xcl2")
    p.add_argument("--raw-scale", dest="raw_scale", action="store_true", default=None)
    _add_sgd_flags(p)

    p = sub.add_parser("experiment", help="run Label-q%% cross validation")
    p.add_argument("--config")
    p.add_argument("--data", help="fully labeled choice CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--q", dest="q_pcts", type=int, nargs="+")
    p.add_argument("--roster", nargs="+", choices=ALGORITHMS)
    p.add_argument("--folds", type=int)
    _add_sgd_flags(p)

    p = sub.add_parser("airline", help="label itinerary requests and report MF/MH accuracy")
    p.add_argument("--config")
    p.add_argument("--itineraries")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--roster", nargs="+", choices=ALGORITHMS)
    p.add_argument("--k", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--strict", action="store_true", default=None)
    _add_sgd_flags(p)

    p = sub.add_parser("synth", help="generate synthetic choice or itinerary data")
    p.add_argument("--config")
    p.add_argument("--kind", choices=("choice", "itinerary"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--planted-fraction", dest="planted_fraction", type=float)

    p = sub.add_parser("validate", help="check a choice CSV and print a summary")
    p.add_argument("--data")
    p.add_argument("--raw-scale", dest="raw_scale", action="store_true", default=None)
    return parser


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _fit_one(algo: str, d, opts: dict, seed: int):
    sgd = _sgd_from(opts, seed)
    if algo == "baseline":
        return fit_baseline(d, sgd)
    if algo == "em":
        return fit_em(d, opts.get("beta", 1.0), sgd, mode=opts.get("em_mode", "soft"))
    if algo == "cl":
        k = opts.get("k", 2)
        if not isinstance(k, int) or k < 1:
            raise ConfigError(f"invalid number of clusters K={k}; K must be a positive integer")
        return fit_cl(d, k, sgd, seed=seed)
    xcl = _xcl_from(opts, seed)
    return (fit_xcl1 if algo == "xcl1" else fit_xcl2)(d, xcl, sgd)


def cmd_fit(args) -> int:
    config = _read_config(args.config)
    opts = _merged(args, config, ("algo", "data", "out", "k", "beta", "em_mode", "k_max", "m", "raw_scale",
                                  "xcl", *SGD_KEYS))
    if "algo" not in opts:
        raise UsageError("--algo is required")
    if opts["algo"] not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {opts['algo']!r}; choose from {', '.join(ALGORITHMS)}")
    if opts.get("k") is not None and opts["k"] < 1:
        raise ConfigError(f"invalid number of clusters K={opts['k']}; K must be a positive integer")
    d = load_dataset(_require_file(opts.get("data"), "data"), standardize=not opts.get("raw_scale", False))
    report = _fit_one(opts["algo"], d, opts, args.seed)
    out = report.to_json()
    if opts.get("out"):
        Path(opts["out"]).write_text(out + "\n")
    else:
        print(out)
    log.info("%s: loglik %.6f after %d iterations", opts["algo"], report.theta.loglik, report.n_iter)
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _read_config(args.config)
    opts = _merged(args, config, ("data", "out_dir", "q_pcts", "roster", "folds", *SGD_KEYS))
    plan_fields = {k: v for k, v in config.items() if k in ExperimentPlan.__dataclass_fields__}
    for k in ("q_pcts", "roster", "folds"):
        if k in opts:
            plan_fields[k] = opts[k]
    plan_fields["seed"] = args.seed
    plan_fields.pop("sgd", None)
    plan = ExperimentPlan.from_dict(plan_fields)
    plan = replace(plan, sgd=_sgd_from(opts, args.seed))
    d = load_dataset(_require_file(opts.get("data"), "data"))
    result = run_cv(plan, d)
    summary = result.summary()
    summary["plan"] = plan.to_dict()
    out_dir = Path(opts.get("out_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(result.metrics_csv())
    (out_dir / "timings.csv").write_text(result.timings_csv())
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    n_runs = len(plan.q_pcts) * plan.folds * len(plan.roster)
    if result.failures:
        log.warning("%d of %d fold fits failed", len(result.failures), n_runs)
    if not result.rows:
        print("every fold failed", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_airline(args) -> int:
    config = _read_config(args.config)
    opts = _merged(args, config, ("itineraries", "out_dir", "roster", "k", "beta", "strict", "xcl", *SGD_KEYS))
    opts.setdefault("preset", "airline")
    requests = load_itineraries(_require_file(opts.get("itineraries"), "itineraries"))
    if opts.get("strict"):
        from .experiments import airline_quality
        for r in requests:
            for it in r.itineraries:
                airline_quality(r, it, strict=True)
    d = airline_label(requests)
    roster = tuple(opts.get("roster") or ("baseline",))
    out_dir = Path(opts.get("out_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(d, out_dir / "labeled.csv")
    summary = {"n_requests": len(d), "n_labeled": d.n, "n_unlabeled": d.m,
               "labeled_fraction": d.n / len(d), "algorithms": {}}
    rows = []
    for algo in roster:
        report = _fit_one(algo, d, opts, args.seed)
        acc = airline_accuracy(d, report.theta, P_GRID)
        summary["algorithms"][algo] = {
            "theta": report.theta.to_dict()["theta"],
            "feature_names": list(report.theta.feature_names),
            "value_of_time": value_of_time(report.theta, fare_unit=d.meta["fare_unit"]),
            "accuracy": {f"{int(round(p * 100))}%": v for p, v in acc.items()},
        }
        rows.append([algo, "MF"] + [repr(acc[p]["MF"]) for p in P_GRID])
        rows.append([algo, "MH"] + [repr(acc[p]["MH"]) for p in P_GRID])
    with open(out_dir / "accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "metric"] + [f"{int(round(p * 100))}%" for p in P_GRID])
        w.writerows(rows)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"labeled {d.n} of {len(d)} requests")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _read_config(args.config)
    opts = _merged(args, config, ("kind", "out", "n", "planted_fraction"))
    kind = opts.get("kind", "choice")
    if not opts.get("out"):
        raise UsageError("--out is required")
    if kind == "itinerary":
        reqs, planted = synth_itineraries(
            opts.get("n", 1000),
            tuple(config.get("n_itineraries", (5, 12))),
            opts.get("planted_fraction", 0.1),
            seed=args.seed,
        )
        write_itineraries(reqs, opts["out"])
        print(f"wrote {len(reqs)} requests, {int(planted.sum())} with a planted joint minimizer")
        return EXIT_OK
    fields = {k: v for k, v in config.get("synth", config).items() if k in SynthConfig.__dataclass_fields__}
    if opts.get("n") is not None:
        fields["n_requests"] = opts["n"]
    fields.setdefault("n_requests", 1000)
    fields.setdefault("alts_per_request", 4)
    fields.setdefault("isf_dim", 2)
    fields.setdefault("msf_dim", 3)
    fields.setdefault("segment_coefficients", [[1.0, -1.0, 0.5]])
    if isinstance(fields["alts_per_request"], list):
        fields["alts_per_request"] = tuple(fields["alts_per_request"])
    if "categorical_levels" in fields:
        fields["categorical_levels"] = tuple(fields["categorical_levels"])
    try:
        cfg = SynthConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    d = synth_generate(cfg, args.seed)
    write_dataset(d, opts["out"])
    print(f"wrote {len(d)} requests with {d.R} alternative features")
    return EXIT_OK


def cmd_validate(args) -> int:
    d = load_dataset(_require_file(args.data, "data"), standardize=not args.raw_scale)
    validate(d)
    sizes = [r.n_alternatives for r in d.requests]
    info = {
        "requests": len(d), "labeled": d.n, "unlabeled": d.m,
        "ranked": sum(r.rank is not None for r in d.requests),
        "isf": list(d.isf_names), "msf": list(d.msf_names),
        "alternatives": {"min": int(min(sizes)), "max": int(max(sizes)), "mean": float(np.mean(sizes))},
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "experiment": cmd_experiment, "airline": cmd_airline,
            "synth": cmd_synth, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChoiceDataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, ArithmeticError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
