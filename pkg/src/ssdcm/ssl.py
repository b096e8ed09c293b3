"""Semi-supervised calibration of MNL / rank-ordered logit models.

Four fitters share one contract: take a :class:`~ssdcm.choice_data.Dataset`
with labeled and unlabeled requests and return a :class:`FitReport` holding a
single coefficient vector.

* :func:`fit_em`    expectation-maximization over the hidden choices
* :func:`fit_cl`    cluster-and-label with a fixed number of clusters
* :func:`fit_xcl1`  cluster-and-label that grows clusters by BIC-gated 2-means splits
* :func:`fit_xcl2`  as XCL1 plus midpoint-seeded 3-means splits of cluster pairs

When every labeled request carries a rank, the likelihood is the
rank-ordered (exploded) logit and hard imputations are full predicted ranks.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .choice_data import Dataset, Request
from .clustering import kmeans_lloyd, mean_distance, midpoint_seed, split_seeds
from .errors import ConfigError, FitError, UnderdeterminedModel
from .mnl import (
    HOTEL_SGD,
    ChoiceDesign,
    Coefficients,
    SgdConfig,
    choice_probabilities,
    explode_rol,
    fit_mnl,
    predict_rank,
)

__all__ = [
    "BicValue",
    "XclConfig",
    "ClusterNode",
    "SplitEvent",
    "ClusterTree",
    "FitReport",
    "ClusterModel",
    "bic_value",
    "bic",
    "cluster_model",
    "fit_baseline",
    "fit_em",
    "fit_cl",
    "fit_xcl1",
    "fit_xcl2",
    "split_accepted",
]


# --------------------------------------------------------------------------
# BIC
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BicValue:
    value: float
    loglik_sum: float
    penalty: float
    K: int
    N: int

    def to_dict(self):
        return {"value": self.value, "loglik_sum": self.loglik_sum, "penalty": self.penalty, "K": self.K, "N": self.N}

    @classmethod
    def from_dict(cls, obj):
        return cls(float(obj["value"]), float(obj["loglik_sum"]), float(obj["penalty"]), int(obj["K"]), int(obj["N"]))


def bic_value(logliks: Sequence[float], sizes: Sequence[int], R: int) -> BicValue:
    """``sum(logliks) - (K * R / 2) * ln(sum(sizes))`` with ``K = len(logliks)``."""
    if len(logliks) != len(sizes) or not logliks:
        raise ConfigError("one loglik and one size per cluster are required")
    K = len(logliks)
    N = int(sum(sizes))
    ll = float(math.fsum(logliks))
    penalty = K * R / 2.0 * math.log(N)
    return BicValue(ll - penalty, ll, penalty, K, N)


def split_accepted(children: BicValue, parent: BicValue, accept_if: str = "greater") -> bool:
    if accept_if == "greater":
        return children.value > parent.value
    if accept_if == "less":
        return children.value < parent.value
    raise ConfigError(f"accept_if must be 'greater' or 'less', got {accept_if!r}")


# --------------------------------------------------------------------------
# Observations and imputation
# --------------------------------------------------------------------------


def _is_ranked(d: Dataset, ranked) -> bool:
    if ranked is not None:
        return bool(ranked)
    labeled = d.labeled
    return bool(labeled) and all(r.rank is not None for r in labeled)


def _observations(requests, ranked: bool):
    return list(explode_rol(requests)) if ranked else list(requests)


def _impute(theta, requests, ranked: bool):
    """Hard imputation: argmax label, plus the predicted rank in ranked mode."""
    out = []
    for r in requests:
        rank = predict_rank(theta, r)
        out.append(replace(r, label=rank[0], rank=rank if ranked else None))
    return out


def _member_seed(root: int, members: np.ndarray, salt: int = 0) -> int:
    h = hashlib.sha256(np.asarray([root, salt], dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(members, dtype=np.int64).tobytes())
    return int.from_bytes(h.digest()[:4], "little") & 0x7FFFFFFF


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Per-cluster models of the BIC protocol.

    ``theta_init`` is fitted on the cluster's labeled requests and imputes
    the unlabeled ones; ``theta`` is refitted on labeled plus imputed data
    and ``loglik`` is its log-likelihood on that same data.
    """

    members: np.ndarray
    theta_init: Coefficients
    theta: Coefficients
    loglik: float
    n_labeled: int
    n_total: int
    imputed: tuple[Request, ...]


def cluster_model(d: Dataset, members, sgd: SgdConfig, ranked=None, min_labeled: int | None = None) -> ClusterModel:
    """Fit on ``D_k^L``, impute ``D_k^U`` by argmax, refit on both."""
    ranked = _is_ranked(d, ranked)
    members = np.asarray(members, dtype=np.int64)
    reqs = [d.requests[i] for i in members]
    lab = [r for r in reqs if r.label is not None]
    unl = [r for r in reqs if r.label is None]
    floor = d.R + 1 if min_labeled is None else min_labeled
    if len(lab) < floor:
        raise UnderdeterminedModel(f"cluster has {len(lab)} labeled requests, at least {floor} needed")
    lab_obs = _observations(lab, ranked)
    init = fit_mnl(lab_obs, cfg=sgd.with_seed(_member_seed(sgd.seed, members, 1)), feature_names=d.msf_names).theta
    imputed = tuple(_impute(init, unl, ranked))
    if imputed:
        obs = lab_obs + _observations(imputed, ranked)
        theta = fit_mnl(obs, cfg=sgd.with_seed(_member_seed(sgd.seed, members, 2)), feature_names=d.msf_names).theta
        loglik = ChoiceDesign.from_requests(obs).loglik(theta.theta)
    else:
        theta = init
        loglik = ChoiceDesign.from_requests(lab_obs).loglik(theta.theta)
    return ClusterModel(members, init, theta, float(loglik), len(lab), len(reqs), imputed)


def bic(clusters, sgd: SgdConfig = HOTEL_SGD, ranked=None, min_labeled=None) -> BicValue:
    """BIC of a clustering.

    ``clusters`` is a sequence of cluster datasets, of ``(dataset, member
    indices)`` pairs, or of already fitted :class:`ClusterModel` objects.
    """
    models = []
    R = None
    for c in clusters:
        if isinstance(c, ClusterModel):
            models.append(c)
            R = c.theta.R
            continue
        if isinstance(c, Dataset):
            d, members = c, np.arange(len(c))
        else:
            d, members = c
        models.append(cluster_model(d, members, sgd, ranked, min_labeled))
        R = d.R
    return bic_value([cm.loglik for cm in models], [cm.n_total for cm in models], R)


# --------------------------------------------------------------------------
# Reports and trees
# --------------------------------------------------------------------------


@dataclass
class ClusterNode:
    id: int
    parents: tuple[int, ...]
    members: np.ndarray
    labeled_count: int
    total_count: int
    origin: str
    children: tuple[int, ...] = ()
    status: str = "leaf"
    bic: BicValue | None = None
    theta: Coefficients | None = None
    theta_init: Coefficients | None = None
    loglik: float | None = None
    centroid: np.ndarray | None = None
    retired: bool = False

    @property
    def accepted(self) -> bool:
        return self.status != "discarded"

    def to_dict(self, include_members=True):
        out = {
            "id": self.id,
            "parents": list(self.parents),
            "children": list(self.children),
            "origin": self.origin,
            "status": self.status,
            "accepted": self.accepted,
            "labeled_count": self.labeled_count,
            "total_count": self.total_count,
            "bic": None if self.bic is None else self.bic.to_dict(),
            "loglik": self.loglik,
            "theta": None if self.theta is None else self.theta.to_dict()["theta"],
            "theta_init": None if self.theta_init is None else self.theta_init.to_dict()["theta"],
        }
        if include_members:
            out["members"] = [int(i) for i in self.members]
        return out


@dataclass
class SplitEvent:
    kind: str
    parents: tuple[int, ...]
    children: tuple[int, ...]
    accepted: bool
    reason: str = ""
    parent_bic: BicValue | None = None
    children_bic: BicValue | None = None

    def to_dict(self):
        return {
            "kind": self.kind,
            "parents": list(self.parents),
            "children": list(self.children),
            "accepted": self.accepted,
            "reason": self.reason,
            "parent_bic": None if self.parent_bic is None else self.parent_bic.to_dict(),
            "children_bic": None if self.children_bic is None else self.children_bic.to_dict(),
        }


@dataclass
class ClusterTree:
    """Development tree of an XCL run: accepted nodes plus every split decision."""

    nodes: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def add(self, node: ClusterNode) -> ClusterNode:
        self.nodes[node.id] = node
        return node

    def leaves(self) -> list:
        return [n for n in self.nodes.values() if n.status == "leaf"]

    def discarded(self) -> list:
        return [n for n in self.nodes.values() if n.status == "discarded"]

    @property
    def K(self) -> int:
        return len(self.leaves())

    def accepted_splits(self) -> list:
        return [e for e in self.events if e.accepted and e.kind != "initial"]

    def to_dict(self, include_members=True):
        return {
            "nodes": [n.to_dict(include_members) for n in self.nodes.values()],
            "events": [e.to_dict() for e in self.events],
            "K": self.K,
        }


@dataclass
class FitReport:
    algorithm: str
    theta: Coefficients
    loglik_trace: list
    n_iter: int
    converged: bool
    n_labeled: int
    n_imputed: int
    n_discarded: int
    cluster_tree: ClusterTree | None = None
    info: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self, include_members=False):
        out = {
            "algorithm": self.algorithm,
            "theta": self.theta.to_dict()["theta"],
            "feature_names": list(self.theta.feature_names),
            "loglik": self.theta.loglik,
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "n_iter": self.n_iter,
            "converged": self.converged,
            "n_labeled": self.n_labeled,
            "n_imputed": self.n_imputed,
            "n_discarded": self.n_discarded,
            "seconds": self.seconds,
            "info": _jsonable(self.info),
        }
        if self.cluster_tree is not None:
            out["cluster_tree"] = self.cluster_tree.to_dict(include_members)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (BicValue, Coefficients)):
        return obj.to_dict()
    return obj


# --------------------------------------------------------------------------
# Baseline and final global model
# --------------------------------------------------------------------------


def fit_baseline(d: Dataset, sgd: SgdConfig = HOTEL_SGD, ranked=None) -> FitReport:
    """Plain (rank-ordered) logit on the labeled requests only."""
    t0 = time.perf_counter()
    ranked = _is_ranked(d, ranked)
    lab = d.labeled
    fit = fit_mnl(_observations(lab, ranked), cfg=sgd, feature_names=d.msf_names)
    return FitReport(
        "baseline", fit.theta, list(fit.loglik_trace), fit.n_iter, fit.converged,
        len(lab), 0, d.m, info={"ranked": ranked}, seconds=time.perf_counter() - t0,
    )


def _final_fit(d: Dataset, imputed: dict, sgd: SgdConfig, ranked: bool):
    """One global model on all labeled requests plus the imputed ones (dataset order)."""
    lab = d.labeled
    imp = [imputed[i] for i in sorted(imputed)]
    obs = _observations(lab, ranked) + _observations(imp, ranked)
    return fit_mnl(obs, cfg=sgd, feature_names=d.msf_names), len(lab), len(imp)


# --------------------------------------------------------------------------
# EM
# --------------------------------------------------------------------------


def fit_em(
    d: Dataset,
    beta: float = 1.0,
    sgd: SgdConfig = HOTEL_SGD,
    em_tolerance: float = 0.01,
    max_em_iter: int = 50,
    mode: str = "soft",
    ranked=None,
) -> FitReport:
    """Expectation-maximization over the unobserved choices.

    The posterior over the hidden labels factorizes per request, so the
    E-step is each sampled unlabeled request's choice probabilities under
    the current coefficients. A fresh ``ceil(beta * m)`` sample of unlabeled
    requests is drawn every iteration. The M-step warm-starts SGD at the
    current coefficients and keeps them when the new point does not raise the
    expected complete-data log-likelihood. Iteration stops when the running
    mean of the coefficient iterates moves by less than ``em_tolerance``.

    ``mode="hard"`` imputes the argmax (full predicted rank in ranked mode)
    instead of fractional weights; ranked soft mode weights the top choice only.
    """
    if not 0 < beta <= 1:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}")
    if mode not in ("soft", "hard"):
        raise ConfigError(f"mode must be 'soft' or 'hard', got {mode!r}")
    t0 = time.perf_counter()
    ranked = _is_ranked(d, ranked)
    lab = d.labeled
    unl = d.unlabeled
    lab_design = ChoiceDesign.from_requests(_observations(lab, ranked))
    base = fit_mnl(lab_design, cfg=sgd, feature_names=d.msf_names)
    theta = base.theta
    obs_trace = [lab_design.loglik(theta.theta)]
    if not unl:
        return FitReport(
            "em", theta, obs_trace, 0, True, len(lab), 0, 0,
            info={"beta": beta, "mode": mode, "ranked": ranked, "sgd_trace": list(base.loglik_trace)},
            seconds=time.perf_counter() - t0,
        )

    rng = np.random.default_rng([sgd.seed, 7])
    m = len(unl)
    n_sample = math.ceil(beta * m)
    running = theta.theta.copy()
    count = 1
    bounds = []
    iterates = [theta.theta.copy()]
    converged = False
    it = 0
    for it in range(1, max_em_iter + 1):
        idx = np.arange(m) if n_sample >= m else np.sort(rng.choice(m, size=n_sample, replace=False))
        sample = [unl[i] for i in idx]
        if mode == "soft":
            u_design = ChoiceDesign.from_requests(sample, [choice_probabilities(theta, r) for r in sample])
        else:
            u_design = ChoiceDesign.from_requests(_observations(_impute(theta, sample, ranked), ranked))
        design = ChoiceDesign.concat([lab_design, u_design])
        fit = fit_mnl(design, cfg=sgd.with_seed(_member_seed(sgd.seed, idx, 100 + it)), init=theta,
                      feature_names=d.msf_names)
        q_old = design.loglik(theta.theta)
        q_new = design.loglik(fit.theta.theta)
        if q_new >= q_old:
            theta = fit.theta
        else:
            q_new = q_old
        if mode == "soft":
            entropy = -float(u_design.W @ np.log(np.where(u_design.W > 0, u_design.W, 1.0)))
            bounds.append({"before": q_old + entropy, "after": q_new + entropy})
        obs_trace.append(lab_design.loglik(theta.theta))
        iterates.append(theta.theta.copy())
        previous = running
        count += 1
        running = running + (theta.theta - running) / count
        if np.linalg.norm(running - previous) < em_tolerance:
            converged = True
            break

    theta = Coefficients(theta.theta, d.msf_names, obs_trace[-1])
    return FitReport(
        "em", theta, obs_trace, it, converged, len(lab), n_sample, m - n_sample,
        info={"beta": beta, "mode": mode, "ranked": ranked, "lower_bound": bounds, "theta_iterates": iterates},
        seconds=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# CL
# --------------------------------------------------------------------------


def fit_cl(
    d: Dataset,
    K: int,
    sgd: SgdConfig = HOTEL_SGD,
    seed: int = 0,
    min_labeled: int | None = None,
    ranked=None,
    kmeans_max_iter: int = 100,
) -> FitReport:
    """Cluster-and-label with ``K`` clusters on the individual-specific vectors.

    Each cluster with more than ``min_labeled`` (default ``R + 1``) labeled
    requests imputes its unlabeled members with a model fitted on its
    labeled members; other clusters' unlabeled requests are dropped. A
    single global model is then fitted on all labeled plus imputed requests.
    """
    if int(K) != K or K < 1:
        raise ConfigError(f"K must be a positive integer, got {K}")
    K = int(K)
    t0 = time.perf_counter()
    ranked = _is_ranked(d, ranked)
    m_floor = d.R + 1 if min_labeled is None else int(min_labeled)
    V = d.V
    if K > len(d):
        raise ConfigError(f"K={K} exceeds the number of requests ({len(d)})")
    rng = np.random.default_rng([seed, 11])
    if K == 1:
        init = V.mean(axis=0, keepdims=True)
    else:
        init = V[rng.choice(len(d), size=K, replace=False)]
    part = kmeans_lloyd(V, init, max_iter=kmeans_max_iter, seed=seed)
    lab_mask = d.labeled_mask
    ell = part.labeled_counts(lab_mask)

    imputed = {}
    clusters = []
    n_viable = 0
    for k in range(part.K):
        members = part.members(k)
        info = {"k": k, "size": int(members.size), "labeled": int(ell[k]), "viable": bool(ell[k] > m_floor)}
        if ell[k] > m_floor:
            n_viable += 1
            lab = [d.requests[i] for i in members if lab_mask[i]]
            theta_k = fit_mnl(
                _observations(lab, ranked),
                cfg=sgd.with_seed(_member_seed(sgd.seed, members, 1)),
                feature_names=d.msf_names,
            ).theta
            unl_idx = [int(i) for i in members if not lab_mask[i]]
            for i, r in zip(unl_idx, _impute(theta_k, [d.requests[i] for i in unl_idx], ranked)):
                imputed[i] = r
            info["theta"] = theta_k.theta
        clusters.append(info)
    if n_viable == 0:
        raise FitError(f"no cluster has more than {m_floor} labeled requests")

    fit, n_lab, n_imp = _final_fit(d, imputed, sgd, ranked)
    return FitReport(
        "cl", fit.theta, list(fit.loglik_trace), fit.n_iter, fit.converged,
        n_lab, n_imp, d.m - n_imp,
        info={"K": K, "min_labeled": m_floor, "ranked": ranked, "clusters": clusters,
              "assignments": part.assignments},
        seconds=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# XCL1 / XCL2
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class XclConfig:
    """Settings of the adaptive cluster-and-label algorithms.

    ``m`` is the minimum labeled-count floor; a cluster needs ``l(C) > m``.
    ``None`` means ``max(R + 1, 20)``. ``accept_if`` chooses whether a split
    is accepted when the children's BIC is greater (default) or less than
    the parent's.
    """

    k_max: int = 6
    iter_num_max: int = 10
    m: int | None = None
    seed: int = 0
    accept_if: str = "greater"
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.k_max < 2:
            raise ConfigError("k_max must be >= 2")
        if self.iter_num_max < 1:
            raise ConfigError("iter_num_max must be >= 1")
        if self.accept_if not in ("greater", "less"):
            raise ConfigError("accept_if must be 'greater' or 'less'")

    def floor(self, R: int) -> int:
        m = max(R + 1, 20) if self.m is None else int(self.m)
        if m < R + 1:
            raise ConfigError(f"m={m} is below the identifiability floor R + 1 = {R + 1}")
        return m


class _XclState:
    def __init__(self, d: Dataset, cfg: XclConfig, sgd: SgdConfig, ranked):
        self.d = d
        self.cfg = cfg
        self.sgd = sgd
        self.ranked = _is_ranked(d, ranked)
        self.m = cfg.floor(d.R)
        self.V = d.V
        self.lab_mask = d.labeled_mask
        self.tree = ClusterTree()
        self.next_id = 0
        self._models = {}
        self.failed_pairs = set()

    def model(self, members) -> ClusterModel:
        key = np.asarray(members, dtype=np.int64).tobytes()
        if key not in self._models:
            self._models[key] = cluster_model(self.d, members, self.sgd, self.ranked, min_labeled=self.m + 1)
        return self._models[key]

    def ell(self, members) -> int:
        return int(self.lab_mask[members].sum())

    def new_node(self, members, parents, origin, status="leaf") -> ClusterNode:
        members = np.sort(np.asarray(members, dtype=np.int64))
        node = ClusterNode(
            id=self.next_id, parents=tuple(parents), members=members,
            labeled_count=self.ell(members), total_count=int(members.size), origin=origin,
            status=status, centroid=self.V[members].mean(axis=0),
        )
        self.next_id += 1
        if status == "leaf":
            cm = self.model(members)
            node.theta, node.theta_init, node.loglik = cm.theta, cm.theta_init, cm.loglik
            node.bic = bic_value([cm.loglik], [cm.n_total], self.d.R)
        return self.tree.add(node)

    def two_means(self, node: ClusterNode):
        """Split attempts for one leaf: random-direction seeds, 2-means, labeled-count floor check."""
        rng = np.random.default_rng([self.cfg.seed, node.id])
        members = node.members
        X = self.V[members]
        u_bar = mean_distance(X, node.centroid)
        parts = None
        for _ in range(self.cfg.iter_num_max):
            s1, s2 = split_seeds(node.centroid, u_bar, rng)
            part = kmeans_lloyd(X, np.vstack([s1, s2]), max_iter=self.cfg.kmeans_max_iter)
            parts = [members[part.members(0)], members[part.members(1)]]
            if all(self.ell(p) > self.m for p in parts):
                return parts, True
        return parts, False

    def leaves(self):
        return sorted(self.tree.leaves(), key=lambda n: n.id)


def _initial_partition(st: _XclState) -> ClusterNode:
    n = len(st.d)
    root = st.new_node(np.arange(n), (), "root", status="internal")
    if root.labeled_count <= st.m:
        raise FitError(f"only {root.labeled_count} labeled requests; more than m={st.m} are needed")
    parts, _ = st.two_means(root)
    children = []
    for p in parts:
        status = "leaf" if st.ell(p) > st.m else "discarded"
        children.append(st.new_node(p, (root.id,), "initial", status=status))
    root.children = tuple(c.id for c in children)
    root.status = "internal"
    st.tree.events.append(SplitEvent("initial", (root.id,), root.children, True, "initial partition"))
    if not st.tree.leaves():
        raise FitError(f"initial partition leaves no cluster with more than m={st.m} labeled requests")
    return root


def _sweep(st: _XclState) -> bool:
    """One BIC-gated 2-means pass over the live leaves; returns whether anything split."""
    updated = False
    for node in st.leaves():
        if st.tree.K >= st.cfg.k_max:
            break
        if node.retired:
            continue
        parts, viable = st.two_means(node)
        if not viable:
            node.retired = True
            st.tree.events.append(SplitEvent("split", (node.id,), (), False, "min-labeled"))
            continue
        models = [st.model(p) for p in parts]
        children_bic = bic_value([cm.loglik for cm in models], [cm.n_total for cm in models], st.d.R)
        if split_accepted(children_bic, node.bic, st.cfg.accept_if):
            kids = [st.new_node(p, (node.id,), "split") for p in parts]
            node.children = tuple(k.id for k in kids)
            node.status = "internal"
            st.tree.events.append(
                SplitEvent("split", (node.id,), node.children, True, "bic", node.bic, children_bic)
            )
            updated = True
        else:
            node.retired = True
            st.tree.events.append(SplitEvent("split", (node.id,), (), False, "bic", node.bic, children_bic))
    return updated


def _pair_split(st: _XclState) -> bool:
    """Pair step: 3-means on the union of a cluster pair seeded at both centroids and their midpoint."""
    for a, b in itertools.combinations(st.leaves(), 2):
        if st.tree.K >= st.cfg.k_max:
            return False
        key = (a.id, b.id)
        if key in st.failed_pairs:
            continue
        union = np.concatenate([a.members, b.members])
        seeds = np.vstack([a.centroid, b.centroid, midpoint_seed(a.centroid, b.centroid)])
        part = kmeans_lloyd(st.V[union], seeds, max_iter=st.cfg.kmeans_max_iter)
        parts = [np.sort(union[part.members(k)]) for k in range(3)]
        if not all(st.ell(p) > st.m for p in parts):
            st.failed_pairs.add(key)
            st.tree.events.append(SplitEvent("pair-split", key, (), False, "min-labeled"))
            continue
        models = [st.model(p) for p in parts]
        children_bic = bic_value([cm.loglik for cm in models], [cm.n_total for cm in models], st.d.R)
        parent_bic = bic_value([a.loglik, b.loglik], [a.total_count, b.total_count], st.d.R)
        if split_accepted(children_bic, parent_bic, st.cfg.accept_if):
            kids = [st.new_node(p, key, "pair-split") for p in parts]
            for parent in (a, b):
                parent.children = tuple(k.id for k in kids)
                parent.status = "internal"
            st.tree.events.append(
                SplitEvent("pair-split", key, tuple(k.id for k in kids), True, "bic", parent_bic, children_bic)
            )
            return True
        st.failed_pairs.add(key)
        st.tree.events.append(SplitEvent("pair-split", key, (), False, "bic", parent_bic, children_bic))
    return False


def _xcl_report(st: _XclState, name: str, t0: float) -> FitReport:
    imputed = {}
    for leaf in st.leaves():
        cm = st.model(leaf.members)
        unl_idx = [int(i) for i in leaf.members if not st.lab_mask[i]]
        for i, r in zip(unl_idx, cm.imputed):
            imputed[i] = r
    fit, n_lab, n_imp = _final_fit(st.d, imputed, st.sgd, st.ranked)
    leaves = st.leaves()
    return FitReport(
        name, fit.theta, list(fit.loglik_trace), fit.n_iter, fit.converged,
        n_lab, n_imp, st.d.m - n_imp, cluster_tree=st.tree,
        info={"K": len(leaves), "m": st.m, "ranked": st.ranked, "leaf_ids": [n.id for n in leaves]},
        seconds=time.perf_counter() - t0,
    )


def fit_xcl1(d: Dataset, cfg: XclConfig = XclConfig(), sgd: SgdConfig = HOTEL_SGD, ranked=None) -> FitReport:
    """Adaptive cluster-and-label: BIC-gated 2-means splits of each leaf.

    Starts from a 2-means partition of all requests (seeded around the global
    centroid), then sweeps the leaves until no split is accepted or ``k_max``
    clusters exist. Clusters failing the labeled-count floor are discarded.
    """
    t0 = time.perf_counter()
    st = _XclState(d, cfg, sgd, ranked)
    _initial_partition(st)
    while st.tree.K < cfg.k_max and _sweep(st):
        pass
    return _xcl_report(st, "xcl1", t0)


def fit_xcl2(d: Dataset, cfg: XclConfig = XclConfig(), sgd: SgdConfig = HOTEL_SGD, ranked=None) -> FitReport:
    """XCL1 plus pair splits: whenever the 2-means sweeps stall, try to
    re-partition the union of two clusters into three and keep the first
    pair whose 3-cluster BIC beats the 2-cluster BIC."""
    t0 = time.perf_counter()
    st = _XclState(d, cfg, sgd, ranked)
    _initial_partition(st)
    while st.tree.K < cfg.k_max:
        while st.tree.K < cfg.k_max and _sweep(st):
            pass
        if st.tree.K >= cfg.k_max or not _pair_split(st):
            break
    return _xcl_report(st, "xcl2", t0)
