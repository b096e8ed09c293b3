"""Multinomial logit: probabilities, (weighted) log-likelihood, SGD fitting,
rank-ordered logit explosion and rank prediction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .choice_data import Dataset, Request
from .errors import ConfigError, DivergenceError, NumericError, SchemaError, UnderdeterminedModel

__all__ = [
    "Coefficients",
    "SgdConfig",
    "MnlFit",
    "ChoiceDesign",
    "HOTEL_SGD",
    "AIRLINE_SGD",
    "utilities",
    "choice_probabilities",
    "log_likelihood",
    "gradient",
    "learning_rate",
    "fit_mnl",
    "explode_rol",
    "predict_rank",
]

DIVERGENCE_NORM = 1e6
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Coefficients:
    theta: np.ndarray
    feature_names: tuple[str, ...] = ()
    loglik: float | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise NumericError("coefficients must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def R(self) -> int:
        return self.theta.size

    def __array__(self, dtype=None, copy=None):
        return self.theta if dtype is None else self.theta.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Coefficients):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and self.feature_names == other.feature_names

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "feature_names": list(self.feature_names),
            "loglik": None if self.loglik is None else float(self.loglik),
        }

    @classmethod
    def from_dict(cls, obj) -> "Coefficients":
        return cls(np.asarray(obj["theta"], dtype=float), tuple(obj.get("feature_names", ())), obj.get("loglik"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Coefficients":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SgdConfig:
    """Mini-batch gradient ascent settings.

    The learning rate at iteration ``t`` is ``step_size / sqrt(t)``; each
    iteration samples ``ceil(sampling_rate * n)`` observations without
    replacement. Fitting stops once the running mean of the iterates moves
    by less than ``tolerance`` (Euclidean norm) or after ``max_iterations``.
    ``min_observations`` defaults to ``R + 1``.
    """

    step_size: float = 40.0
    sampling_rate: float = 0.2
    max_iterations: int = 2000
    tolerance: float = 1e-4
    seed: int = 0
    min_observations: int | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if not 0 < self.sampling_rate <= 1:
            raise ConfigError(f"sampling_rate must lie in (0, 1], got {self.sampling_rate}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0")

    def floor(self, R: int) -> int:
        return R + 1 if self.min_observations is None else self.min_observations

    def with_seed(self, seed: int) -> "SgdConfig":
        return SgdConfig(
            self.step_size, self.sampling_rate, self.max_iterations, self.tolerance, int(seed), self.min_observations
        )


HOTEL_SGD = SgdConfig(step_size=40.0, sampling_rate=0.2)
AIRLINE_SGD = SgdConfig(step_size=7.0, sampling_rate=0.8)


@dataclass(frozen=True, eq=False)
class MnlFit:
    theta: Coefficients
    loglik_trace: np.ndarray
    step_sizes: np.ndarray
    n_iter: int
    converged: bool

    def __iter__(self):
        yield self.theta
        yield self.loglik_trace


class ChoiceDesign:
    """Stacked rows of many weighted MNL observations.

    Row ``r`` belongs to observation ``seg[r]``; each observation's weights
    sum to one. All likelihood computations work on these flat arrays.
    """

    def __init__(self, X, sizes, W, ids=()):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.sizes = np.asarray(sizes, dtype=np.int64)
        self.W = np.asarray(W, dtype=float)
        self.ids = tuple(ids)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)
        self.seg = np.repeat(np.arange(self.sizes.size), self.sizes)
        if self.X.shape[0] != self.W.size or self.W.size != int(self.sizes.sum()):
            raise SchemaError("design rows, weights and observation sizes disagree")

    @property
    def n_obs(self) -> int:
        return int(self.sizes.size)

    @property
    def R(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_requests(cls, requests: Iterable[Request], weights=None) -> "ChoiceDesign":
        requests = list(requests)
        if weights is None:
            weights = [None] * len(requests)
        elif len(weights) != len(requests):
            raise SchemaError("one weight entry is needed per request")
        blocks, ws, sizes, ids = [], [], [], []
        for r, w in zip(requests, weights):
            sizes.append(r.n_alternatives)
            blocks.append(r.msf)
            ws.append(_weight_row(r, w))
            ids.append(r.id)
        if not requests:
            return cls(np.empty((0, 0)), [], [], [])
        return cls(np.vstack(blocks), sizes, np.concatenate(ws), ids)

    @classmethod
    def concat(cls, designs: Sequence["ChoiceDesign"]) -> "ChoiceDesign":
        designs = [d for d in designs if d.n_obs]
        if not designs:
            return cls(np.empty((0, 0)), [], [], [])
        return cls(
            np.vstack([d.X for d in designs]),
            np.concatenate([d.sizes for d in designs]),
            np.concatenate([d.W for d in designs]),
            sum((d.ids for d in designs), ()),
        )

    def logp(self, theta) -> np.ndarray:
        """Log choice probabilities for every row."""
        u = self.X @ np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(u)):
            bad = int(self.seg[np.flatnonzero(~np.isfinite(u))[0]])
            name = self.ids[bad] if self.ids else bad
            raise NumericError(f"non-finite utility in request {name!r}")
        mx = np.maximum.reduceat(u, self.starts)
        z = u - mx[self.seg]
        s = np.add.reduceat(np.exp(z), self.starts)
        return z - np.log(s)[self.seg]

    def loglik(self, theta) -> float:
        return float(self.W @ self.logp(theta))

    def gradient(self, theta, obs_mask=None) -> np.ndarray:
        """Summed gradient ``X^T (W - P)``, optionally over a subset of observations."""
        resid = self.W - np.exp(self.logp(theta))
        if obs_mask is not None:
            resid = resid * obs_mask[self.seg]
        return self.X.T @ resid


def _weight_row(r: Request, w) -> np.ndarray:
    n_alt = r.n_alternatives
    if w is None:
        if r.label is None:
            raise SchemaError(f"request {r.id!r} carries neither a label nor weights")
        row = np.zeros(n_alt)
        row[r.label] = 1.0
        return row
    if np.ndim(w) == 0:
        row = np.zeros(n_alt)
        row[int(w)] = 1.0
        return row
    row = np.asarray(w, dtype=float)
    if row.shape != (n_alt,):
        raise SchemaError(f"request {r.id!r}: weight row has shape {row.shape}, expected ({n_alt},)")
    if abs(row.sum() - 1.0) > _WEIGHT_TOL:
        raise SchemaError(f"request {r.id!r}: weights sum to {row.sum()!r}, not 1")
    return row


def _as_design(d, weights=None) -> ChoiceDesign:
    if isinstance(d, ChoiceDesign):
        if weights is not None:
            raise ConfigError("weights cannot be combined with a prebuilt design")
        return d
    if isinstance(d, Request):
        d = [d]
    return ChoiceDesign.from_requests(d.requests if isinstance(d, Dataset) else d, weights)


def _theta(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, Coefficients) else np.asarray(theta, dtype=float)


def utilities(theta, x: Request) -> np.ndarray:
    t = _theta(theta)
    if x.msf.shape[1] != t.size:
        raise SchemaError(f"request {x.id!r} has {x.msf.shape[1]} features, coefficients have {t.size}")
    return x.msf @ t


def choice_probabilities(theta, x: Request) -> np.ndarray:
    u = utilities(theta, x)
    if not np.all(np.isfinite(u)):
        raise NumericError(f"non-finite utility in request {x.id!r}")
    e = np.exp(u - u.max())
    return e / e.sum()


def log_likelihood(theta, d, weights=None) -> float:
    """``sum_i sum_j w_ij log P_ij``; hard labels give one-hot weights."""
    return _as_design(d, weights).loglik(_theta(theta))


def gradient(theta, d, weights=None) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` with respect to theta."""
    return _as_design(d, weights).gradient(_theta(theta))


def learning_rate(step_size: float, t: int) -> float:
    return step_size / math.sqrt(t)


def fit_mnl(d, weights=None, cfg: SgdConfig = HOTEL_SGD, init=None, feature_names=()) -> MnlFit:
    """Maximise the (weighted) MNL log-likelihood by mini-batch gradient ascent.

    The gradient is averaged over the sampled observations. ``init`` defaults
    to the zero vector. The returned trace holds the full-data
    log-likelihood after every iteration.
    """
    design = _as_design(d, weights)
    if isinstance(d, Dataset) and not feature_names:
        feature_names = d.msf_names
    R = design.R if design.n_obs else (len(_theta(init)) if init is not None else len(feature_names))
    floor = cfg.floor(R)
    if design.n_obs < floor:
        raise UnderdeterminedModel(f"{design.n_obs} observations, at least {floor} needed for {R} coefficients")
    theta = np.zeros(R) if init is None else np.array(_theta(init), dtype=float)
    if theta.size != R:
        raise SchemaError(f"initial coefficients have length {theta.size}, expected {R}")

    rng = np.random.default_rng(cfg.seed)
    n = design.n_obs
    batch = math.ceil(cfg.sampling_rate * n)
    full = batch >= n
    mask = np.ones(n)
    trace = np.empty(cfg.max_iterations)
    steps = np.empty(cfg.max_iterations)
    running = np.zeros(R)
    converged = False

    logp = design.logp(theta)
    t = 0
    for t in range(1, cfg.max_iterations + 1):
        if not full:
            mask = np.zeros(n)
            mask[rng.choice(n, size=batch, replace=False)] = 1.0
            resid = (design.W - np.exp(logp)) * mask[design.seg]
        else:
            resid = design.W - np.exp(logp)
        lr = learning_rate(cfg.step_size, t)
        theta = theta + lr * (design.X.T @ resid) / batch
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_NORM:
            raise DivergenceError(f"coefficient norm exceeded {DIVERGENCE_NORM:g} at iteration {t}")
        logp = design.logp(theta)
        trace[t - 1] = design.W @ logp
        steps[t - 1] = lr
        previous = running
        running = running + (theta - running) / t
        if t > 1 and np.linalg.norm(running - previous) < cfg.tolerance:
            converged = True
            break

    coef = Coefficients(theta, feature_names, float(trace[t - 1]))
    return MnlFit(coef, trace[:t].copy(), steps[:t].copy(), t, converged)


def explode_rol(d) -> tuple[Request, ...]:
    """Turn each ranked request into ``|X_i| - 1`` successive MNL choices.

    The k-th exploded request holds the alternatives ranked k..|X_i| with the
    rank-k alternative (listed first) chosen.
    """
    requests = d.requests if isinstance(d, Dataset) else ([d] if isinstance(d, Request) else d)
    out = []
    for r in requests:
        if r.rank is None:
            raise SchemaError(f"request {r.id!r} has no rank")
        order = np.asarray(r.rank)
        for k in range(r.n_alternatives - 1):
            out.append(Request(id=f"{r.id}#{k + 1}", isf=r.isf, msf=r.msf[order[k:]], label=0))
    return tuple(out)


def predict_rank(theta, x: Request) -> tuple[int, ...]:
    """Alternatives by descending utility; ties go to the lower index."""
    u = utilities(theta, x)
    return tuple(int(j) for j in np.argsort(-u, kind="stable"))
