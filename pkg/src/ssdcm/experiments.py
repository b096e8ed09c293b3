"""Evaluation pipelines.

Ranked-batch protocol: fully labeled data are split into 10 batches, 4 of
which lose their labels for good; each remaining batch gets its own MNL fit
whose predicted ranks become that batch's rank labels. ``Label-q%`` keeps the
first ``q/10`` ranked batches labeled. Ten folds of batch 1 serve as test
sets while the other 90% splits (plus every unlabeled request) train.

Itinerary-shopping protocol: requests are labeled only when one itinerary
has both the lowest fare and the lowest deviation from the requested times.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .choice_data import Dataset, Request
from .errors import ConfigError, FitError, SchemaError
from .metrics import (
    chosen_position,
    mean_reciprocal_rank,
    mf_mh,
    position_difference,
    rank_difference,
    relative_delta,
    rolik,
)
from .mnl import HOTEL_SGD, SgdConfig, fit_mnl, predict_rank
from .ssl import XclConfig, fit_baseline, fit_cl, fit_em, fit_xcl1, fit_xcl2

__all__ = [
    "ExperimentPlan",
    "RankedBatches",
    "make_ranked_batches",
    "build_label_experiment",
    "run_cv",
    "CvResult",
    "Itinerary",
    "TravelRequest",
    "airline_quality",
    "airline_label",
    "airline_features",
    "airline_interactions",
    "value_of_time",
    "synth_itineraries",
    "load_itineraries",
    "write_itineraries",
]

ALGORITHMS = ("baseline", "em", "cl", "xcl1", "xcl2")
METRICS = ("ROLIK", "RD", "PD", "RR")
N_BATCHES = 10
N_UNLABELED_BATCHES = 4


# --------------------------------------------------------------------------
# Ranked-batch cross validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    q_pcts: tuple[int, ...] = (10,)
    folds: int = 10
    seed: int = 0
    roster: tuple[str, ...] = ALGORITHMS
    sgd: SgdConfig = HOTEL_SGD
    xcl: XclConfig = XclConfig()
    cl_ks: tuple[int, ...] = (2, 3, 4, 5, 6)
    cl_min_labeled: int | None = None
    em_betas: tuple[float, ...] = (0.05, 0.10)
    em_tolerance: float = 0.01
    max_em_iter: int = 20
    em_mode: str = "soft"
    validation_fraction: float = 0.1
    refit_selected: bool = True

    def __post_init__(self):
        for q in self.q_pcts:
            if q not in (10, 20, 30, 40, 50, 60):
                raise ConfigError(f"q_pct must be one of 10..60 in steps of 10, got {q}")
        unknown = set(self.roster) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"unknown algorithm(s) in roster: {sorted(unknown)}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentPlan":
        obj = dict(obj)
        if "sgd" in obj:
            obj["sgd"] = SgdConfig(**obj["sgd"])
        if "xcl" in obj:
            obj["xcl"] = XclConfig(**obj["xcl"])
        for key in ("q_pcts", "roster", "cl_ks", "em_betas"):
            if key in obj:
                obj[key] = tuple(obj[key])
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown plan field(s): {sorted(extra)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RankedBatches:
    ranked: tuple[tuple[Request, ...], ...]
    unlabeled: tuple[tuple[Request, ...], ...]
    batch_ids: tuple[int, ...]
    unlabeled_ids: tuple[int, ...]
    thetas: tuple
    isf_names: tuple[str, ...] = ()
    msf_names: tuple[str, ...] = ()
    standardize: bool = True


def make_ranked_batches(d: Dataset, seed: int, sgd: SgdConfig = HOTEL_SGD) -> RankedBatches:
    """Split into 10 batches, strip 4 for good, rank the other 6 with per-batch models."""
    if d.m:
        raise SchemaError("make_ranked_batches expects a fully labeled dataset")
    rng = np.random.default_rng([seed, 21])
    order = rng.permutation(len(d))
    batches = np.array_split(order, N_BATCHES)
    hidden = set(int(b) for b in rng.choice(N_BATCHES, size=N_UNLABELED_BATCHES, replace=False))
    ranked, thetas, ranked_ids = [], [], []
    unlabeled, unlabeled_ids = [], []
    for b, idx in enumerate(batches):
        reqs = [d.requests[i] for i in idx]
        if b in hidden:
            unlabeled.append(tuple(r.unlabeled() for r in reqs))
            unlabeled_ids.append(b)
            continue
        fit = fit_mnl(reqs, cfg=sgd.with_seed(seed * 1000 + b), feature_names=d.msf_names)
        thetas.append(fit.theta)
        ranked.append(tuple(replace(r, rank=predict_rank(fit.theta, r)) for r in reqs))
        ranked_ids.append(b)
    return RankedBatches(
        tuple(ranked), tuple(unlabeled), tuple(ranked_ids), tuple(unlabeled_ids), tuple(thetas),
        d.isf_names, d.msf_names, d.standardize,
    )


def build_label_experiment(batches: RankedBatches, q_pct: int) -> Dataset:
    """Label-q%: the first ``q/10`` ranked batches keep ranks and labels."""
    if q_pct not in (10, 20, 30, 40, 50, 60) or q_pct // 10 > len(batches.ranked):
        raise ConfigError(f"invalid labeled percentage {q_pct}")
    keep = q_pct // 10
    requests, batch_of = [], []
    for b, reqs in enumerate(batches.ranked):
        requests += list(reqs) if b < keep else [r.unlabeled() for r in reqs]
        batch_of += [b] * len(reqs)
    for b, reqs in enumerate(batches.unlabeled):
        requests += list(reqs)
        batch_of += [len(batches.ranked) + b] * len(reqs)
    return Dataset(
        tuple(requests), batches.isf_names, batches.msf_names, batches.standardize,
        meta={"batch": tuple(batch_of), "q_pct": q_pct},
    )


def _fold_ids(n: int, folds: int, seed: int, batch: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 31, batch])
    ids = np.empty(n, dtype=int)
    ids[rng.permutation(n)] = np.arange(n) % folds
    return ids


def evaluate_ranks(theta, test: Sequence[Request]) -> dict:
    """Mean ROLIK, RD and PD plus MRR of a model over ranked test requests."""
    rol, rd, pd, pos = [], [], [], []
    for x in test:
        est = predict_rank(theta, x)
        rol.append(rolik(theta, x))
        rd.append(rank_difference(x.rank, est))
        pd.append(position_difference(est, x.label))
        pos.append(chosen_position(est, x.label))
    return {
        "ROLIK": float(np.mean(rol)),
        "RD": float(np.mean(rd)),
        "PD": float(np.mean(pd)),
        "RR": mean_reciprocal_rank(pos),
    }


def random_rank_difference(test: Sequence[Request], seed: int) -> float:
    rng = np.random.default_rng(seed)
    return float(np.mean([rank_difference(x.rank, tuple(rng.permutation(x.n_alternatives))) for x in test]))


def _holdout(d: Dataset, fraction: float, seed: int):
    """Split labeled requests into (fit part, validation part); unlabeled stay in the fit part."""
    lab_idx = np.flatnonzero(d.labeled_mask)
    rng = np.random.default_rng([seed, 41])
    n_val = max(1, int(round(fraction * lab_idx.size)))
    val = set(int(i) for i in rng.choice(lab_idx, size=n_val, replace=False))
    fit_part = d.subset([i for i in range(len(d)) if i not in val])
    return fit_part, [d.requests[i] for i in sorted(val)]


def _validation_score(theta, val: Sequence[Request], ranked: bool) -> float:
    if ranked:
        return float(np.mean([rolik(theta, x) for x in val]))
    from .mnl import log_likelihood

    return log_likelihood(theta, list(val)) / len(val)


def _fit_algorithm(alg: str, train: Dataset, plan: ExperimentPlan, seed: int):
    sgd = plan.sgd.with_seed(seed)
    if alg == "baseline":
        return fit_baseline(train, sgd), {}
    if alg == "xcl1":
        return fit_xcl1(train, replace(plan.xcl, seed=seed), sgd), {}
    if alg == "xcl2":
        return fit_xcl2(train, replace(plan.xcl, seed=seed), sgd), {}
    if alg == "cl":
        candidates = [("K", k) for k in plan.cl_ks]
        make = lambda ds, k: fit_cl(ds, k, sgd, seed=seed, min_labeled=plan.cl_min_labeled)
    elif alg == "em":
        candidates = [("beta", b) for b in plan.em_betas]
        make = lambda ds, b: fit_em(ds, b, sgd, plan.em_tolerance, plan.max_em_iter, plan.em_mode)
    else:
        raise ConfigError(f"unknown algorithm {alg!r}")
    if len(candidates) == 1:
        return make(train, candidates[0][1]), {candidates[0][0]: candidates[0][1]}
    # pick the hyperparameter by held-out labeled likelihood, then refit on all training data
    fit_part, val = _holdout(train, plan.validation_fraction, seed)
    ranked = all(r.rank is not None for r in train.labeled)
    best, best_score, best_report = None, -math.inf, None
    total_seconds = 0.0
    for name, value in candidates:
        try:
            rep = make(fit_part, value)
        except FitError:
            continue
        total_seconds += rep.seconds
        score = _validation_score(rep.theta, val, ranked)
        if score > best_score:
            best, best_score, best_report = value, score, rep
    if best is None:
        raise FitError(f"every {alg} candidate failed")
    report = make(train, best) if plan.refit_selected else best_report
    report.seconds += total_seconds
    return report, {candidates[0][0]: best, "validation_score": best_score}


@dataclass
class CvResult:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    random_rd: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "q_pct", "fold", "metric", "value", "baseline", "relative"])
        for r in self.rows:
            w.writerow([r["algorithm"], r["q_pct"], r["fold"], r["metric"],
                        repr(r["value"]), repr(r["baseline"]), repr(r["relative"])])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "q_pct", "fold", "seconds"])
        for r in self.timings:
            w.writerow([r["algorithm"], r["q_pct"], r["fold"], f"{r['seconds']:.6f}"])
        return buf.getvalue()

    def mean_value(self, algorithm: str, metric: str, q_pct: int | None = None) -> float:
        vals = [r["value"] for r in self.rows
                if r["algorithm"] == algorithm and r["metric"] == metric and (q_pct is None or r["q_pct"] == q_pct)]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_relative(self, algorithm: str, metric: str, q_pct: int | None = None) -> float:
        """Relative delta of the fold-mean metric against the fold-mean baseline.

        Aggregating before dividing keeps folds whose baseline metric is 0
        (a perfect RD, say) from producing infinite averages.
        """
        sel = [r for r in self.rows
               if r["algorithm"] == algorithm and r["metric"] == metric and (q_pct is None or r["q_pct"] == q_pct)]
        if not sel:
            return float("nan")
        return relative_delta(float(np.mean([r["value"] for r in sel])), float(np.mean([r["baseline"] for r in sel])))

    def summary(self) -> dict:
        out = {"metrics": {}, "failures": self.failures, "n_failures": len(self.failures), "timing": {}}
        keys = sorted({(r["q_pct"], r["algorithm"], r["metric"]) for r in self.rows})
        for q, alg, met in keys:
            sel = [r for r in self.rows if (r["q_pct"], r["algorithm"], r["metric"]) == (q, alg, met)]
            out["metrics"].setdefault(str(q), {}).setdefault(alg, {})[met] = {
                "mean": float(np.mean([r["value"] for r in sel])),
                "baseline_mean": float(np.mean([r["baseline"] for r in sel])),
                "mean_relative": self.mean_relative(alg, met, q),
                "folds": len(sel),
            }
        for r in self.timings:
            t = out["timing"].setdefault(str(r["q_pct"]), {})
            t[r["algorithm"]] = t.get(r["algorithm"], 0.0) + r["seconds"]
        if self.random_rd:
            out["random_rank_difference"] = float(np.mean(self.random_rd))
        return out


def run_cv(plan: ExperimentPlan, d: Dataset, batches: RankedBatches | None = None) -> CvResult:
    """Label-q% cross validation against the labeled-only baseline.

    Every roster algorithm is trained per fold on the 90% splits of the
    labeled batches plus all unlabeled requests, and scored on the held-out
    10% of batch 1. Relative deltas are ``(metric - baseline) / baseline * 100``.
    A failed fit marks that (fold, algorithm) as failed and the run continues.
    """
    if batches is None:
        batches = make_ranked_batches(d, plan.seed, plan.sgd)
    result = CvResult()
    fold_of = [_fold_ids(len(b), plan.folds, plan.seed, i) for i, b in enumerate(batches.ranked)]
    for q in plan.q_pcts:
        exp = build_label_experiment(batches, q)
        batch_of = np.asarray(exp.meta["batch"])
        position = np.concatenate([np.arange(len(b)) for b in batches.ranked] +
                                  [np.arange(len(b)) for b in batches.unlabeled])
        keep = q // 10
        for f in range(plan.folds):
            test, train_idx = [], []
            for i, r in enumerate(exp.requests):
                b = batch_of[i]
                in_fold = b < len(batches.ranked) and fold_of[b][position[i]] == f
                if b == 0 and in_fold:
                    test.append(r)
                elif b < keep and in_fold:
                    continue
                else:
                    train_idx.append(i)
            train = exp.subset(train_idx)
            fold_seed = int(np.random.default_rng([plan.seed, q, f]).integers(2**31))
            result.random_rd.append(random_rank_difference(test, fold_seed))
            try:
                base, _ = _fit_algorithm("baseline", train, plan, fold_seed)
            except FitError as exc:
                result.failures.append({"q_pct": q, "fold": f, "algorithm": "baseline", "error": str(exc)})
                continue
            base_metrics = evaluate_ranks(base.theta, test)
            for alg in plan.roster:
                if alg == "baseline":
                    rep, metrics = base, base_metrics
                else:
                    try:
                        rep, _ = _fit_algorithm(alg, train, plan, fold_seed)
                    except FitError as exc:
                        result.failures.append({"q_pct": q, "fold": f, "algorithm": alg, "error": str(exc)})
                        continue
                    metrics = evaluate_ranks(rep.theta, test)
                for met in METRICS:
                    result.rows.append({
                        "algorithm": alg, "q_pct": q, "fold": f, "metric": met,
                        "value": metrics[met], "baseline": base_metrics[met],
                        "relative": relative_delta(metrics[met], base_metrics[met]),
                    })
                result.timings.append({"algorithm": alg, "q_pct": q, "fold": f, "seconds": max(rep.seconds, 1e-9)})
    return result


# --------------------------------------------------------------------------
# Itinerary shopping
# --------------------------------------------------------------------------

_TIME_FIELDS = ("dep1", "dep2", "arr1", "arr2", "elapsed")


@dataclass(frozen=True)
class Itinerary:
    """Times are hours from a common day-0 epoch; ``elapsed`` is in hours."""

    fare: float
    dep1: float
    dep2: float
    arr1: float | None = None
    arr2: float | None = None
    elapsed: float | None = None

    def __post_init__(self):
        if self.fare < 0:
            raise SchemaError("fare must be non-negative")
        if self.elapsed is not None and self.elapsed < 0:
            raise SchemaError("elapsed time must be non-negative")


@dataclass(frozen=True)
class TravelRequest:
    id: str
    dep1: float
    dep2: float
    itineraries: tuple[Itinerary, ...]
    arr1: float | None = None
    arr2: float | None = None
    elapsed: float | None = None
    length_of_stay: float | None = None
    departure_dow: int | None = None
    advance_days: float | None = None
    cabin: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "itineraries", tuple(self.itineraries))
        if len(self.itineraries) < 2:
            raise SchemaError(f"request {self.id!r} needs at least 2 itineraries")


def airline_quality(req: TravelRequest, itin: Itinerary, strict: bool = False) -> float:
    """Sum of absolute deviations (hours) between requested and offered times.

    A field missing on either side contributes nothing unless ``strict``.
    """
    total = 0.0
    for name in _TIME_FIELDS:
        want, got = getattr(req, name), getattr(itin, name)
        if want is None or got is None:
            if strict:
                raise SchemaError(f"request {req.id!r}: field {name!r} missing")
            continue
        total += abs(want - got)
    return total


def airline_features(req: TravelRequest, j: int, fare_unit: float = 1.0) -> tuple[float, float, float]:
    """Fare gap to the request mean (in ``fare_unit`` currency units) and
    signed first/second departure differences in hours."""
    fares = np.array([it.fare for it in req.itineraries])
    it = req.itineraries[j]
    return float((it.fare - fares.mean()) / fare_unit), float(req.dep1 - it.dep1), float(req.dep2 - it.dep2)


STAY_LEVELS = ("stay_0_4", "stay_4_7", "stay_7p")
DOW_LEVELS = ("early_week", "late_week", "weekend")
ADVANCE_LEVELS = ("rush", "late", "medium", "early")
CABIN_LEVELS = ("business", "economy", "discounted_economy", "no_preference")


def stay_bucket(days: float) -> str:
    if days < 4:
        return "stay_0_4"
    return "stay_4_7" if days < 7 else "stay_7p"


def dow_bucket(dow: int) -> str:
    """``dow`` runs 1 (Monday) .. 7 (Sunday)."""
    if not 1 <= dow <= 7:
        raise SchemaError(f"day of week must be 1..7, got {dow}")
    if dow <= 3:
        return "early_week"
    return "late_week" if dow <= 5 else "weekend"


def advance_bucket(days: float) -> str:
    if days < 14:
        return "rush"
    if days < 28:
        return "late"
    return "medium" if days < 84 else "early"


def cabin_bucket(cabin: str | None) -> str:
    if cabin is None or cabin == "":
        return "no_preference"
    if cabin not in CABIN_LEVELS:
        raise SchemaError(f"unknown cabin {cabin!r}")
    return cabin


def interaction_names() -> tuple[str, ...]:
    """Fare-gap interaction columns; the first level of each group is the reference."""
    names = []
    for prefix, levels in (("stay", STAY_LEVELS), ("dow", DOW_LEVELS), ("adv", ADVANCE_LEVELS), ("cabin", CABIN_LEVELS)):
        names += [f"fare_gap~{lvl}" for lvl in levels[1:]]
    return tuple(names)


def airline_interactions(req: TravelRequest, fare_gap: float) -> np.ndarray:
    """One-hot trip buckets times the fare gap (reference levels dropped)."""
    if req.length_of_stay is None or req.departure_dow is None or req.advance_days is None:
        raise SchemaError(f"request {req.id!r} lacks the fields needed for interaction features")
    active = {
        stay_bucket(req.length_of_stay),
        dow_bucket(req.departure_dow),
        advance_bucket(req.advance_days),
        cabin_bucket(req.cabin),
    }
    levels = STAY_LEVELS[1:] + DOW_LEVELS[1:] + ADVANCE_LEVELS[1:] + CABIN_LEVELS[1:]
    return np.array([fare_gap if lvl in active else 0.0 for lvl in levels])


def airline_label(
    requests: Sequence[TravelRequest],
    interactions: bool | None = None,
    tol: float = 1e-9,
    fare_unit: float = 100.0,
) -> Dataset:
    """Label each request whose unique itinerary attains both the lowest fare and lowest H.

    The returned dataset uses the fare gap and signed departure differences
    (plus fare-gap interactions when every request carries the trip fields)
    as alternative features, and requested departures, stay length and
    advance purchase (when present) as individual-specific features. The
    fare gap is divided by ``fare_unit`` so SGD sees features on comparable
    scales. Fares and qualities are kept in ``meta`` for :func:`mf_mh`.
    """
    if interactions is None:
        interactions = all(
            r.length_of_stay is not None and r.departure_dow is not None and r.advance_days is not None
            for r in requests
        )
    with_trip = all(r.length_of_stay is not None and r.advance_days is not None for r in requests)
    out, fares, quality = [], {}, {}
    for req in requests:
        F = np.array([it.fare for it in req.itineraries])
        H = np.array([airline_quality(req, it) for it in req.itineraries])
        joint = np.flatnonzero((np.abs(F - F.min()) <= tol) & (np.abs(H - H.min()) <= tol))
        label = int(joint[0]) if joint.size == 1 else None
        rows = []
        for j in range(len(req.itineraries)):
            f = airline_features(req, j, fare_unit)
            row = list(f)
            if interactions:
                row += list(airline_interactions(req, f[0]))
            rows.append(row)
        isf = [req.dep1, req.dep2] + ([req.length_of_stay, req.advance_days] if with_trip else [])
        out.append(Request(id=req.id, isf=np.array(isf), msf=np.array(rows), label=label))
        fares[req.id] = F
        quality[req.id] = H
    msf_names = ("fare_gap", "dep1_diff", "dep2_diff") + (interaction_names() if interactions else ())
    isf_names = ("req_dep1", "req_dep2") + (("length_of_stay", "advance_days") if with_trip else ())
    return Dataset(tuple(out), isf_names, msf_names,
                   meta={"fares": fares, "quality": quality, "fare_unit": fare_unit})


def airline_accuracy(d: Dataset, theta, p_pcts=(0.1, 0.2, 0.3, 0.4, 0.5)) -> dict:
    """MF / MH (percent) of the argmax-utility itinerary for each p in ``p_pcts``."""
    preds = {r.id: predict_rank(theta, r)[0] for r in d.requests}
    out = {}
    for p in p_pcts:
        mf, mh, skipped = mf_mh(d.meta["fares"], d.meta["quality"], preds, p)
        out[p] = {"MF": mf, "MH": mh, "skipped": skipped}
    return out


def value_of_time(theta, feature_names=("fare_gap", "dep1_diff", "dep2_diff"), fare_unit: float = 100.0) -> dict:
    """Departure-difference coefficient over fare-gap coefficient, in currency per hour.

    ``fare_unit`` must match the one used by :func:`airline_label`.
    """
    names = list(getattr(theta, "feature_names", ()) or feature_names)
    t = np.asarray(getattr(theta, "theta", theta), dtype=float)
    fare = t[names.index("fare_gap")]
    if fare == 0:
        return {"dep1": float("nan"), "dep2": float("nan")}
    return {
        "dep1": float(fare_unit * t[names.index("dep1_diff")] / fare),
        "dep2": float(fare_unit * t[names.index("dep2_diff")] / fare),
    }


def synth_itineraries(
    n_requests: int,
    n_itineraries=(5, 12),
    planted_fraction: float = 0.1,
    seed: int = 0,
    trip_fields: bool = True,
):
    """Random itinerary sets; exactly the planted requests get a unique joint minimizer.

    Returns ``(requests, planted)`` with ``planted`` a boolean array.
    """
    rng = np.random.default_rng(seed)
    lo, hi = (n_itineraries, n_itineraries) if np.ndim(n_itineraries) == 0 else n_itineraries
    n_planted = int(round(planted_fraction * n_requests))
    planted = np.zeros(n_requests, dtype=bool)
    planted[rng.choice(n_requests, size=n_planted, replace=False)] = True
    cabins = CABIN_LEVELS[:3] + (None,)
    requests = []
    for i in range(n_requests):
        k = int(rng.integers(lo, hi + 1))
        d1 = float(rng.uniform(6, 22))
        stay = float(rng.integers(1, 15))
        d2 = d1 + 24 * stay + float(rng.uniform(-8, 8))
        fares = np.round(rng.uniform(200, 1200, size=k), 2)
        off1 = rng.normal(0, 3, size=k)
        off2 = rng.normal(0, 3, size=k)
        # keep every random itinerary at least 0.01 h away from the requested times
        off1 = np.where(np.abs(off1) < 0.01, 0.01, off1)
        its = [Itinerary(float(fares[j]), d1 + float(off1[j]), d2 + float(off2[j])) for j in range(k)]
        req = TravelRequest(
            id=f"t{i}", dep1=d1, dep2=d2, itineraries=tuple(its),
            length_of_stay=stay, departure_dow=int(rng.integers(1, 8)),
            advance_days=float(rng.integers(0, 120)), cabin=cabins[int(rng.integers(0, 4))],
        ) if trip_fields else TravelRequest(id=f"t{i}", dep1=d1, dep2=d2, itineraries=tuple(its))
        F = fares
        H = np.array([airline_quality(req, it) for it in its])
        if planted[i]:
            j = int(rng.integers(0, k))
            its[j] = Itinerary(float(F.min()) - 10.0 if F.min() > 10 else 0.0, d1, d2)
        else:
            jf = np.flatnonzero(F == F.min())
            jh = np.flatnonzero(H == H.min())
            if np.intersect1d(jf, jh).size:
                j = int(np.intersect1d(jf, jh)[0])
                its[j] = replace(its[j], fare=float(F.max()) + 10.0)
        requests.append(replace(req, itineraries=tuple(its)))
    return requests, planted


_ITIN_COLUMNS = (
    "request_id", "fare", "dep1", "dep2", "arr1", "arr2", "elapsed",
    "requested_dep1", "requested_dep2", "requested_arr1", "requested_arr2", "requested_elapsed",
    "length_of_stay", "departure_dow", "advance_days", "cabin",
)


def _opt_float(text):
    text = (text or "").strip()
    return None if text == "" else float(text)


def load_itineraries(path) -> list:
    """Read one-row-per-itinerary CSV; request-level columns repeat on every row."""
    from .errors import ParseError

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"request_id", "fare", "dep1", "dep2", "requested_dep1", "requested_dep2"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"missing column(s) {sorted(missing)}", 1)
        groups, order = {}, []
        for line_no, row in enumerate(reader, start=2):
            rid = (row.get("request_id") or "").strip()
            if not rid:
                raise ParseError("empty request_id", line_no)
            try:
                it = Itinerary(
                    float(row["fare"]), float(row["dep1"]), float(row["dep2"]),
                    _opt_float(row.get("arr1")), _opt_float(row.get("arr2")), _opt_float(row.get("elapsed")),
                )
                head = dict(
                    dep1=float(row["requested_dep1"]), dep2=float(row["requested_dep2"]),
                    arr1=_opt_float(row.get("requested_arr1")), arr2=_opt_float(row.get("requested_arr2")),
                    elapsed=_opt_float(row.get("requested_elapsed")),
                    length_of_stay=_opt_float(row.get("length_of_stay")),
                    departure_dow=None if _opt_float(row.get("departure_dow")) is None else int(float(row["departure_dow"])),
                    advance_days=_opt_float(row.get("advance_days")),
                    cabin=(row.get("cabin") or "").strip() or None,
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line_no) from None
            if rid not in groups:
                groups[rid] = (head, [])
                order.append(rid)
            groups[rid][1].append(it)
    return [TravelRequest(id=rid, itineraries=tuple(groups[rid][1]), **groups[rid][0]) for rid in order]


def write_itineraries(requests: Sequence[TravelRequest], path) -> None:
    fmt = lambda v: "" if v is None else repr(v)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ITIN_COLUMNS)
        for r in requests:
            for it in r.itineraries:
                w.writerow([
                    r.id, fmt(it.fare), fmt(it.dep1), fmt(it.dep2), fmt(it.arr1), fmt(it.arr2), fmt(it.elapsed),
                    fmt(r.dep1), fmt(r.dep2), fmt(r.arr1), fmt(r.arr2), fmt(r.elapsed),
                    fmt(r.length_of_stay), fmt(r.departure_dow), fmt(r.advance_days), r.cabin or "",
                ])
