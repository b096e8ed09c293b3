"""Choice-set data: domain types, CSV ingestion, label masking, synthetic data.

A request stores its individual-specific features once (``isf``, shared by
all alternatives) and an ``(n_alternatives, R)`` matrix of alternative-specific
and interaction features (``msf``). Labels are alternative indices, ranks are
orderings of alternative indices with the best alternative first.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ChoiceDataError, ConfigError, ParseError, SchemaError

__all__ = [
    "Alternative",
    "Request",
    "Dataset",
    "SoftLabeledDataset",
    "SynthConfig",
    "load_dataset",
    "write_dataset",
    "dumps_dataset",
    "mask_labels",
    "synth_generate",
    "validate",
    "feature_digest",
]

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Alternative:
    isf: np.ndarray
    msf: np.ndarray


@dataclass(frozen=True, eq=False)
class Request:
    """One choice set ``X_i`` with optional label and rank.

    ``label`` is the index of the chosen alternative, ``rank`` is a tuple of
    alternative indices ordered best first.
    """

    id: str
    isf: np.ndarray
    msf: np.ndarray
    label: int | None = None
    rank: tuple[int, ...] | None = None

    def __post_init__(self):
        isf = np.asarray(self.isf, dtype=float).reshape(-1)
        msf = np.asarray(self.msf, dtype=float)
        if msf.ndim != 2:
            raise SchemaError(f"request {self.id!r}: msf must be a 2-D array")
        isf.setflags(write=False)
        msf.setflags(write=False)
        object.__setattr__(self, "isf", isf)
        object.__setattr__(self, "msf", msf)
        n_alt = msf.shape[0]
        if n_alt < 2:
            raise SchemaError(f"request {self.id!r} has {n_alt} alternative(s); at least 2 required")
        if self.label is not None:
            label = int(self.label)
            if not 0 <= label < n_alt:
                raise SchemaError(f"request {self.id!r}: label {label} out of range")
            object.__setattr__(self, "label", label)
        if self.rank is not None:
            rank = tuple(int(r) for r in self.rank)
            if sorted(rank) != list(range(n_alt)):
                raise SchemaError(f"request {self.id!r}: rank {rank} is not a permutation")
            object.__setattr__(self, "rank", rank)

    @property
    def n_alternatives(self) -> int:
        return self.msf.shape[0]

    @property
    def alternatives(self) -> tuple[Alternative, ...]:
        return tuple(Alternative(self.isf, row) for row in self.msf)

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    def unlabeled(self) -> "Request":
        """Copy with label and rank removed; features are shared."""
        return replace(self, label=None, rank=None)

    def __eq__(self, other):
        if not isinstance(other, Request):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.rank == other.rank
            and np.array_equal(self.isf, other.isf)
            and np.array_equal(self.msf, other.msf)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of labeled (``D^L``) and unlabeled (``D^U``) requests."""

    requests: tuple[Request, ...]
    isf_names: tuple[str, ...] = ()
    msf_names: tuple[str, ...] = ()
    standardize: bool = True
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        if self.requests:
            r = self.requests[0]
            if not self.isf_names:
                object.__setattr__(self, "isf_names", tuple(f"v{k}" for k in range(r.isf.size)))
            if not self.msf_names:
                object.__setattr__(self, "msf_names", tuple(f"x{k}" for k in range(r.msf.shape[1])))
        object.__setattr__(self, "isf_names", tuple(self.isf_names))
        object.__setattr__(self, "msf_names", tuple(self.msf_names))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))
        _check_dims(self.requests, len(self.isf_names), len(self.msf_names))

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def __getitem__(self, i):
        return self.requests[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.isf_names == other.isf_names
            and self.msf_names == other.msf_names
            and self.requests == other.requests
        )

    __hash__ = None

    @property
    def R(self) -> int:
        return len(self.msf_names)

    @property
    def labeled(self) -> tuple[Request, ...]:
        return tuple(r for r in self.requests if r.label is not None)

    @property
    def unlabeled(self) -> tuple[Request, ...]:
        return tuple(r for r in self.requests if r.label is None)

    @property
    def labeled_mask(self) -> np.ndarray:
        return np.array([r.label is not None for r in self.requests], dtype=bool)

    @property
    def n(self) -> int:
        return int(self.labeled_mask.sum())

    @property
    def m(self) -> int:
        return len(self.requests) - self.n

    @property
    def raw_V(self) -> np.ndarray:
        if not self.requests:
            return np.empty((0, len(self.isf_names)))
        return np.vstack([r.isf for r in self.requests])

    @property
    def V(self) -> np.ndarray:
        """Clustering vectors, z-scored per column unless ``standardize`` is off."""
        V = self.raw_V
        if not self.standardize or V.shape[0] == 0:
            return V
        mu = V.mean(axis=0)
        sd = V.std(axis=0)
        sd[sd == 0] = 1.0
        return (V - mu) / sd

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, requests=tuple(self.requests[i] for i in indices), meta={})

    def with_requests(self, requests: Sequence[Request]) -> "Dataset":
        return replace(self, requests=tuple(requests), meta={})


@dataclass(frozen=True)
class SoftLabeledDataset:
    """``base`` plus imputations for (some of) its unlabeled requests.

    ``imputed`` maps a request id to either a hard label index or a weight
    vector on the simplex over that request's alternatives.
    """

    base: Dataset
    imputed: Mapping[str, int | np.ndarray]

    def __post_init__(self):
        by_id = {r.id: r for r in self.base.requests}
        clean = {}
        for rid, value in self.imputed.items():
            if rid not in by_id:
                raise SchemaError(f"imputation for unknown request {rid!r}")
            n_alt = by_id[rid].n_alternatives
            if np.ndim(value) == 0:
                idx = int(value)
                if not 0 <= idx < n_alt:
                    raise SchemaError(f"request {rid!r}: imputed index {idx} out of range")
                clean[rid] = idx
            else:
                w = np.asarray(value, dtype=float)
                if w.shape != (n_alt,) or np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
                    raise SchemaError(f"request {rid!r}: imputed weights are not on the simplex")
                clean[rid] = w
        object.__setattr__(self, "imputed", MappingProxyType(clean))


def _check_dims(requests, isf_dim, msf_dim):
    for r in requests:
        if r.isf.size != isf_dim:
            raise SchemaError(f"request {r.id!r}: isf has {r.isf.size} entries, expected {isf_dim}")
        if r.msf.shape[1] != msf_dim:
            raise SchemaError(f"request {r.id!r}: msf has {r.msf.shape[1]} columns, expected {msf_dim}")


def validate(d: Dataset) -> None:
    """Re-check every type invariant; raise ``ChoiceDataError`` on the first failure."""
    seen = set()
    for r in d.requests:
        if r.id in seen:
            raise SchemaError(f"duplicate request id {r.id!r}")
        seen.add(r.id)
        if r.n_alternatives < 2:
            raise SchemaError(f"request {r.id!r} has fewer than 2 alternatives")
        if r.label is not None and not 0 <= r.label < r.n_alternatives:
            raise SchemaError(f"request {r.id!r}: label out of range")
        if r.rank is not None and sorted(r.rank) != list(range(r.n_alternatives)):
            raise SchemaError(f"request {r.id!r}: rank is not a permutation")
        if not (np.all(np.isfinite(r.isf)) and np.all(np.isfinite(r.msf))):
            raise SchemaError(f"request {r.id!r}: non-finite feature value")
    _check_dims(d.requests, len(d.isf_names), len(d.msf_names))


def feature_digest(d: Dataset) -> str:
    """SHA-256 over ids and feature bytes; labels and ranks are excluded."""
    h = hashlib.sha256()
    for r in d.requests:
        h.update(r.id.encode())
        h.update(np.ascontiguousarray(r.isf).tobytes())
        h.update(np.ascontiguousarray(r.msf).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

_ID_COLUMNS = ("request_id", "alt_id", "chosen")


def _parse_float(text, line, column):
    if text is None or text.strip() == "":
        raise ParseError(f"missing value in column {column!r}", line)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} in column {column!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r} in column {column!r}", line)
    return value


def load_dataset(path, schema: Mapping | None = None, standardize: bool = True) -> Dataset:
    """Read a one-row-per-alternative CSV file.

    Columns ``request_id``, ``alt_id`` and ``chosen`` are required, feature
    columns are prefixed ``isf:`` and ``msf:``. An optional ``rank`` column
    holds 1-based rank positions. ``schema`` may rename the id columns
    (``{"request_id": ..., "alt_id": ..., "chosen": ..., "rank": ...}``) and
    list feature columns explicitly (``{"isf": [...], "msf": [...]}``).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _load(fh, schema or {}, standardize)


def loads_dataset(text: str, schema: Mapping | None = None, standardize: bool = True) -> Dataset:
    return _load(io.StringIO(text), schema or {}, standardize)


def _load(fh, schema, standardize):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    header = [h.strip() for h in header]
    col = {name: i for i, name in enumerate(header)}
    rid_col = schema.get("request_id", "request_id")
    alt_col = schema.get("alt_id", "alt_id")
    if alt_col not in col and "alternative_id" in col:
        alt_col = "alternative_id"
    chosen_col = schema.get("chosen", "chosen")
    rank_col = schema.get("rank", "rank")
    for required in (rid_col, alt_col, chosen_col):
        if required not in col:
            raise ParseError(f"missing required column {required!r}", 1)
    isf_cols = list(schema.get("isf", [h for h in header if h.startswith("isf:")]))
    msf_cols = list(schema.get("msf", [h for h in header if h.startswith("msf:")]))
    for c in isf_cols + msf_cols:
        if c not in col:
            raise ParseError(f"missing feature column {c!r}", 1)
    if not msf_cols:
        raise SchemaError("no msf feature columns declared")

    groups: dict[str, list] = {}
    order: list[str] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
        rid = row[col[rid_col]].strip()
        if not rid:
            raise ParseError("empty request_id", line_no)
        chosen_text = row[col[chosen_col]].strip()
        if chosen_text == "":
            chosen = None
        elif chosen_text in ("0", "1"):
            chosen = int(chosen_text)
        else:
            raise ParseError(f"chosen must be 0, 1 or empty, got {chosen_text!r}", line_no)
        rank_pos = None
        if rank_col in col:
            rank_text = row[col[rank_col]].strip()
            if rank_text:
                try:
                    rank_pos = int(rank_text)
                except ValueError:
                    raise ParseError(f"cannot parse rank {rank_text!r}", line_no) from None
        isf = [_parse_float(row[col[c]], line_no, c) for c in isf_cols]
        msf = [_parse_float(row[col[c]], line_no, c) for c in msf_cols]
        if rid not in groups:
            groups[rid] = []
            order.append(rid)
        groups[rid].append((line_no, row[col[alt_col]].strip(), chosen, rank_pos, isf, msf))

    requests = []
    for rid in order:
        rows = groups[rid]
        if len(rows) < 2:
            raise SchemaError(f"request {rid!r} has {len(rows)} alternative(s); at least 2 required")
        isf0 = rows[0][4]
        for line_no, _, _, _, isf, _ in rows[1:]:
            if isf != isf0:
                raise SchemaError(f"request {rid!r}: individual-specific features differ (line {line_no})")
        chosen = [c for _, _, c, _, _, _ in rows]
        n_chosen = sum(1 for c in chosen if c == 1)
        if n_chosen > 1:
            raise SchemaError(f"request {rid!r} has {n_chosen} chosen alternatives")
        if n_chosen == 1 and any(c is None for c in chosen):
            raise SchemaError(f"request {rid!r} mixes empty and filled chosen cells")
        label = chosen.index(1) if n_chosen == 1 else None
        positions = [p for _, _, _, p, _, _ in rows]
        rank = None
        if any(p is not None for p in positions):
            if any(p is None for p in positions) or sorted(positions) != list(range(1, len(rows) + 1)):
                raise SchemaError(f"request {rid!r}: rank column is not a permutation of 1..{len(rows)}")
            rank = tuple(int(np.argsort(positions, kind="stable")[k]) for k in range(len(rows)))
        requests.append(
            Request(
                id=rid,
                isf=np.array(isf0, dtype=float),
                msf=np.array([r[5] for r in rows], dtype=float),
                label=label,
                rank=rank,
            )
        )
    names = lambda cols, prefix: tuple(c[len(prefix):] if c.startswith(prefix) else c for c in cols)
    return Dataset(
        requests=tuple(requests),
        isf_names=names(isf_cols, "isf:"),
        msf_names=names(msf_cols, "msf:"),
        standardize=standardize,
        meta={"alt_ids": {rid: tuple(r[1] for r in groups[rid]) for rid in order}},
    )


def dumps_dataset(d: Dataset) -> str:
    buf = io.StringIO()
    _write(d, buf)
    return buf.getvalue()


def write_dataset(d: Dataset, path) -> None:
    """Write ``d`` in the schema read by :func:`load_dataset`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write(d, fh)


def _write(d, fh):
    has_rank = any(r.rank is not None for r in d.requests)
    writer = csv.writer(fh, lineterminator="\n")
    header = list(_ID_COLUMNS)
    if has_rank:
        header.append("rank")
    header += [f"isf:{n}" for n in d.isf_names] + [f"msf:{n}" for n in d.msf_names]
    writer.writerow(header)
    alt_ids = d.meta.get("alt_ids", {})
    for r in d.requests:
        ids = alt_ids.get(r.id) or tuple(str(j) for j in range(r.n_alternatives))
        positions = None
        if r.rank is not None:
            positions = [0] * r.n_alternatives
            for pos, j in enumerate(r.rank, start=1):
                positions[j] = pos
        isf = [repr(float(v)) for v in r.isf]
        for j in range(r.n_alternatives):
            chosen = "" if r.label is None else ("1" if j == r.label else "0")
            row = [r.id, ids[j], chosen]
            if has_rank:
                row.append("" if positions is None else str(positions[j]))
            row += isf + [repr(float(v)) for v in r.msf[j]]
            writer.writerow(row)


# --------------------------------------------------------------------------
# Label masking
# --------------------------------------------------------------------------


def mask_labels(d: Dataset, keep_fraction: float, seed: int) -> Dataset:
    """Keep labels on a seeded uniform ``ceil(keep_fraction * n)``-subset."""
    if not 0 < keep_fraction <= 1:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    if d.m:
        raise ChoiceDataError("mask_labels expects a fully labeled dataset")
    n = len(d.requests)
    n_keep = math.ceil(keep_fraction * n)
    if n_keep == 0:
        raise ChoiceDataError("masking leaves zero labeled requests")
    if n_keep == n:
        return d
    rng = np.random.default_rng(seed)
    keep = np.zeros(n, dtype=bool)
    keep[rng.choice(n, size=n_keep, replace=False)] = True
    requests = tuple(r if keep[i] else r.unlabeled() for i, r in enumerate(d.requests))
    return replace(d, requests=requests)


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Generator parameters.

    ``segment_coefficients`` hold one true coefficient vector per segment;
    its length must equal ``n_coefficients`` (continuous msf columns, dummy
    columns of every categorical attribute, plus one for the intercept).
    ``alts_per_request`` is either a fixed count or an inclusive ``(lo, hi)``
    range. The intercept is an alternative-specific constant on position 0.
    """

    n_requests: int
    alts_per_request: int | tuple[int, int]
    isf_dim: int
    msf_dim: int
    segment_coefficients: Sequence[Sequence[float]]
    segment_isf_means: Sequence[Sequence[float]] | None = None
    segment_weights: Sequence[float] | None = None
    isf_sd: float = 1.0
    intercept: bool = False
    categorical_levels: tuple[int, ...] = ()

    @property
    def n_coefficients(self) -> int:
        return self.msf_dim + sum(k - 1 for k in self.categorical_levels) + int(self.intercept)


def _check_synth(cfg: SynthConfig):
    lo, hi = (cfg.alts_per_request, cfg.alts_per_request) if np.ndim(cfg.alts_per_request) == 0 else cfg.alts_per_request
    if cfg.n_requests <= 0 or cfg.isf_dim <= 0 or cfg.msf_dim < 0 or lo < 2 or hi < lo:
        raise ConfigError("dimensions and counts must be positive (at least 2 alternatives)")
    if cfg.n_coefficients <= 0:
        raise ConfigError("the model needs at least one coefficient")
    if any(k < 2 for k in cfg.categorical_levels):
        raise ConfigError("categorical attributes need at least 2 levels")
    n_seg = len(cfg.segment_coefficients)
    if n_seg == 0:
        raise ConfigError("at least one segment is required")
    for theta in cfg.segment_coefficients:
        if len(theta) != cfg.n_coefficients:
            raise ConfigError(
                f"segment coefficient length {len(theta)} != {cfg.n_coefficients} model coefficients"
            )
    if cfg.segment_isf_means is not None:
        if len(cfg.segment_isf_means) != n_seg or any(len(mu) != cfg.isf_dim for mu in cfg.segment_isf_means):
            raise ConfigError("segment_isf_means must hold one isf_dim vector per segment")
    if cfg.segment_weights is not None and (len(cfg.segment_weights) != n_seg or min(cfg.segment_weights) < 0):
        raise ConfigError("segment_weights must hold one non-negative weight per segment")
    return int(lo), int(hi)


def synth_generate(cfg: SynthConfig, seed: int) -> Dataset:
    """Draw a fully labeled dataset from a finite mixture of MNL segments.

    Each request picks a segment, draws ``isf ~ N(mean_seg, isf_sd^2)``,
    standard-normal continuous msf columns, uniform categorical levels, and
    a chosen alternative from the segment's MNL probabilities. The segment of
    each request is recorded in ``meta["segment"]``.
    """
    lo, hi = _check_synth(cfg)
    rng = np.random.default_rng(seed)
    n_seg = len(cfg.segment_coefficients)
    thetas = np.asarray(cfg.segment_coefficients, dtype=float)
    means = (
        np.zeros((n_seg, cfg.isf_dim))
        if cfg.segment_isf_means is None
        else np.asarray(cfg.segment_isf_means, dtype=float)
    )
    weights = np.ones(n_seg) if cfg.segment_weights is None else np.asarray(cfg.segment_weights, dtype=float)
    weights = weights / weights.sum()

    segments = rng.choice(n_seg, size=cfg.n_requests, p=weights)
    requests = []
    for i in range(cfg.n_requests):
        s = segments[i]
        n_alt = int(rng.integers(lo, hi + 1))
        isf = means[s] + cfg.isf_sd * rng.standard_normal(cfg.isf_dim)
        cols = [rng.standard_normal((n_alt, cfg.msf_dim))]
        for k in cfg.categorical_levels:
            level = rng.integers(0, k, size=n_alt)
            cols.append((level[:, None] == np.arange(1, k)[None, :]).astype(float))
        if cfg.intercept:
            asc = np.zeros((n_alt, 1))
            asc[0, 0] = 1.0
            cols.append(asc)
        msf = np.hstack(cols)
        u = msf @ thetas[s]
        p = np.exp(u - u.max())
        p /= p.sum()
        label = int(rng.choice(n_alt, p=p))
        requests.append(Request(id=f"r{i}", isf=isf, msf=msf, label=label))

    msf_names = [f"x{k}" for k in range(cfg.msf_dim)]
    for a, k in enumerate(cfg.categorical_levels):
        msf_names += [f"cat{a}_{lvl}" for lvl in range(1, k)]
    if cfg.intercept:
        msf_names.append("asc0")
    return Dataset(
        requests=tuple(requests),
        isf_names=tuple(f"v{k}" for k in range(cfg.isf_dim)),
        msf_names=tuple(msf_names),
        meta={"segment": tuple(int(s) for s in segments), "config": cfg, "seed": seed},
    )
