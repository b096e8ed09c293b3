"""Evaluation metrics: rank-ordered log-likelihood, Kendall rank difference,
position difference, reciprocal rank, and the fare / quality accuracies of
the itinerary case."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .choice_data import Request
from .errors import ConfigError, SchemaError
from .mnl import utilities

__all__ = [
    "RankTriple",
    "rolik",
    "kendall_tau",
    "rank_positions",
    "rank_difference",
    "position_difference",
    "chosen_position",
    "mean_reciprocal_rank",
    "lowest_count",
    "mf_mh",
    "relative_delta",
]

_BRUTE_FORCE_MAX = 64


@dataclass(frozen=True)
class RankTriple:
    true_rank: tuple[int, ...]
    estimated_rank: tuple[int, ...]
    random_rank: tuple[int, ...]

    def __post_init__(self):
        ref = sorted(self.true_rank)
        if sorted(self.estimated_rank) != ref or sorted(self.random_rank) != ref:
            raise SchemaError("all three ranks must permute the same index set")


def rolik(theta, x: Request) -> float:
    """Log-probability of ``x.rank`` under the rank-ordered logit."""
    if x.rank is None:
        raise SchemaError(f"request {x.id!r} has no rank")
    u = utilities(theta, x)[np.asarray(x.rank)]
    total = 0.0
    for j in range(u.size - 1):
        tail = u[j:]
        mx = tail.max()
        total += u[j] - mx - math.log(np.exp(tail - mx).sum())
    return float(total)


def kendall_tau(r1, r2) -> float:
    """Kendall tau-b between two equal-length vectors.

    Pairs are enumerated directly up to length 64; longer inputs use
    :func:`scipy.stats.kendalltau`.
    """
    a = np.asarray(r1, dtype=float)
    b = np.asarray(r2, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise SchemaError(f"kendall_tau needs equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise SchemaError("kendall_tau needs at least 2 elements")
    if a.size > _BRUTE_FORCE_MAX:
        return float(stats.kendalltau(a, b).statistic)
    iu = np.triu_indices(a.size, 1)
    da = np.sign(a[iu[0]] - a[iu[1]])
    db = np.sign(b[iu[0]] - b[iu[1]])
    n0 = da.size
    denom = math.sqrt((n0 - np.count_nonzero(da == 0)) * (n0 - np.count_nonzero(db == 0)))
    if denom == 0:
        return float("nan")
    return float((da * db).sum() / denom)


def rank_positions(rank) -> np.ndarray:
    """Invert a best-first ordering into per-alternative positions (0-based)."""
    rank = np.asarray(rank, dtype=int)
    pos = np.empty_like(rank)
    pos[rank] = np.arange(rank.size)
    return pos


def rank_difference(rt, re) -> float:
    """``(1 - tau) / 2`` between the positions two orderings assign to each alternative."""
    if len(rt) != len(re):
        raise SchemaError("rank lengths differ")
    return (1.0 - kendall_tau(rank_positions(rt), rank_positions(re))) / 2.0


def chosen_position(re, chosen: int) -> int:
    """1-based position of ``chosen`` in the ordering ``re``."""
    try:
        return list(re).index(chosen) + 1
    except ValueError:
        raise SchemaError(f"alternative {chosen} is not in the ranking") from None


def position_difference(re, chosen: int) -> float:
    n = len(re)
    if n < 2:
        raise SchemaError("position_difference needs at least 2 alternatives")
    return (chosen_position(re, chosen) - 1) / (n - 1)


def mean_reciprocal_rank(positions: Sequence[int]) -> float:
    p = np.asarray(positions, dtype=float)
    if p.size == 0:
        raise ConfigError("mean_reciprocal_rank of an empty list")
    if np.any(p < 1):
        raise ConfigError("reciprocal-rank positions must be >= 1")
    return float(np.mean(1.0 / p))


def lowest_count(p_pct: float, n: int) -> int:
    """Size of a request's "lowest p%" set: ``floor(p * n)``."""
    return int(math.floor(p_pct * n + 1e-9))


def mf_mh(fares, quality, predictions, p_pct: float):
    """Mean fare and quality accuracies (in percent) of predicted itineraries.

    ``fares`` and ``quality`` map request ids (or positions) to per-itinerary
    arrays; ``predictions`` gives the predicted itinerary index for each.
    For every request, the reference set is the union of the lowest-fare and
    lowest-quality ``floor(p * |X_i|)`` itineraries, and

        MF_i = (F_pred - mean_Z F) / mean_X F

    (likewise MH_i with H). Requests whose reference set would be empty or
    whose mean is zero are skipped. Returns ``(MF, MH, n_skipped)``.
    """
    if not 0 < p_pct < 1:
        raise ConfigError(f"p_pct must lie in (0, 1), got {p_pct}")
    keys = list(fares.keys()) if isinstance(fares, Mapping) else list(range(len(fares)))
    mf, mh = [], []
    skipped = 0
    for key in keys:
        F = np.asarray(fares[key], dtype=float)
        H = np.asarray(quality[key], dtype=float)
        j = int(predictions[key])
        k = lowest_count(p_pct, F.size)
        if k < 1:
            skipped += 1
            continue
        A = np.argsort(F, kind="stable")[:k]
        B = np.argsort(H, kind="stable")[:k]
        Z = np.union1d(A, B)
        mean_f, mean_h = F.mean(), H.mean()
        if mean_f == 0 or mean_h == 0:
            skipped += 1
            continue
        mf.append((F[j] - F[Z].mean()) / mean_f)
        mh.append((H[j] - H[Z].mean()) / mean_h)
    if not mf:
        return float("nan"), float("nan"), skipped
    return 100.0 * float(np.mean(mf)), 100.0 * float(np.mean(mh)), skipped


def relative_delta(value: float, baseline: float) -> float:
    """``(value - baseline) / baseline * 100``; zero baselines give 0 or +-inf."""
    if baseline == 0:
        if value == 0:
            return 0.0
        return math.copysign(math.inf, value)
    return (value - baseline) / baseline * 100.0
